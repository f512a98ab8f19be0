import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from treegen.data import (
    DiscretizedDataset,
    bin_bounds,
    discretize,
    empirical_marginals,
    fit_discretizer,
    infer_schema,
    undiscretize,
)
from treegen.errors import (
    CardinalityOverflow,
    ConstantColumnWarning,
    EmptyTable,
    UnknownCategory,
)


class TestInferSchema:
    def test_mixed_table_kinds(self):
        df = pd.DataFrame({"a": [1.0, 2.0, 3.5], "b": ["x", "y", "x"]})
        schema = infer_schema(df)
        assert [f.kind for f in schema.features] == ["numeric", "categorical"]

    def test_integer_column_with_many_distinct_is_numeric(self):
        df = pd.DataFrame({"a": np.arange(300)})
        schema = infer_schema(df)
        assert schema.features[0].kind == "numeric"

    def test_empty_table_raises(self):
        with pytest.raises(EmptyTable):
            infer_schema(pd.DataFrame({"a": []}))

    def test_cardinality_overflow(self):
        df = pd.DataFrame({"a": [f"l{i}" for i in range(300)]})
        with pytest.raises(CardinalityOverflow):
            infer_schema(df)

    def test_missing_values_rejected(self):
        df = pd.DataFrame({"a": [1.0, np.nan]})
        with pytest.raises(ValueError):
            infer_schema(df)

    def test_kind_hint_overrides(self):
        df = pd.DataFrame({"a": [1, 2, 1, 2]})
        schema = infer_schema(df, kinds={"a": "categorical"})
        assert schema.features[0].kind == "categorical"

    def test_target_index(self):
        df = pd.DataFrame({"a": [1.0, 2.0], "b": [0.0, 1.0]})
        assert infer_schema(df, target="b").target_index == 1


class TestFitDiscretizer:
    def _fit(self, values, max_bins=255):
        df = pd.DataFrame({"a": values})
        return fit_discretizer(df, infer_schema(df), max_bins=max_bins)

    def test_quantile_edge_at_median(self):
        schema = self._fit([1.0, 2.0, 3.0, 4.0], max_bins=2)
        spec = schema.features[0]
        assert spec.cardinality == 2
        np.testing.assert_allclose(spec.bin_edges, [2.5])

    def test_few_distinct_one_bin_per_value(self):
        schema = self._fit([1.0, 5.0, 9.0, 5.0, 9.0])
        spec = schema.features[0]
        assert spec.cardinality == 3
        np.testing.assert_allclose(spec.bin_edges, [3.0, 7.0])

    def test_constant_column_dropped_with_warning(self):
        df = pd.DataFrame({"a": [5.0] * 4, "b": [1.0, 2.0, 3.0, 4.0]})
        with pytest.warns(ConstantColumnWarning):
            schema = fit_discretizer(df, infer_schema(df))
        assert [f.name for f in schema.features] == ["b"]

    def test_quantile_binning_keeps_distinct_count(self):
        values = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
        schema = self._fit(values)
        assert schema.features[0].cardinality == len(np.unique(values))

    def test_max_bins_validation(self):
        with pytest.raises(ValueError):
            self._fit([1.0, 2.0], max_bins=300)

    def test_heavy_skew_still_two_bins(self):
        values = np.concatenate([np.zeros(999), np.linspace(1, 2, 400)])
        schema = self._fit(values, max_bins=3)
        assert schema.features[0].cardinality >= 2


class TestDiscretize:
    @pytest.fixture
    def schema(self):
        df = pd.DataFrame({"a": [0.0, 1.0, 2.0, 3.0], "c": ["u", "v", "u", "w"]})
        return fit_discretizer(df, infer_schema(df))

    def test_below_first_edge_is_bin_zero(self, schema):
        df = pd.DataFrame({"a": [-10.0], "c": ["u"]})
        assert discretize(df, schema).values[0, 0] == 0

    def test_value_on_edge_goes_right(self, schema):
        spec = schema.features[0]
        edge = spec.bin_edges[1]
        df = pd.DataFrame({"a": [edge], "c": ["u"]})
        assert discretize(df, schema).values[0, 0] == 2

    def test_unknown_category(self, schema):
        df = pd.DataFrame({"a": [1.0], "c": ["zebra"]})
        with pytest.raises(UnknownCategory):
            discretize(df, schema)

    def test_nan_rejected(self, schema):
        df = pd.DataFrame({"a": [np.nan], "c": ["u"]})
        with pytest.raises(ValueError):
            discretize(df, schema)


class TestUndiscretize:
    @pytest.fixture
    def schema(self):
        df = pd.DataFrame({"a": np.linspace(0.0, 4.0, 64), "c": ["a", "b", "c", "d"] * 16})
        return fit_discretizer(df, infer_schema(df), max_bins=4)

    def test_categorical_roundtrip_deterministic(self, schema, rng):
        rows = np.array([[0, 2]], dtype=np.uint8)
        out = undiscretize(rows, schema, rng)
        assert out["c"].iloc[0] == "c"

    def test_numeric_stays_in_bin(self, schema, rng):
        spec = schema.features[0]
        bounds = bin_bounds(spec)
        for b in range(spec.cardinality):
            rows = np.array([[b, 0]] * 32, dtype=np.uint8)
            vals = undiscretize(rows, schema, rng)["a"].to_numpy()
            assert (vals >= bounds[b]).all() and (vals < bounds[b + 1]).all()

    def test_bin_mean_matches_midpoint(self, schema, rng):
        spec = schema.features[0]
        bounds = bin_bounds(spec)
        b = 1
        n = 100_000
        rows = np.zeros((n, 2), dtype=np.uint8)
        rows[:, 0] = b
        vals = undiscretize(rows, schema, rng)["a"].to_numpy()
        width = bounds[b + 1] - bounds[b]
        se = width / np.sqrt(12 * n)
        mid = (bounds[b] + bounds[b + 1]) / 2
        assert abs(vals.mean() - mid) < 3 * se

    def test_roundtrip_bins(self, schema, rng):
        rows = rng.integers(0, [4, 4], size=(500, 2)).astype(np.uint8)
        raw = undiscretize(rows, schema, rng)
        back = discretize(raw, schema)
        np.testing.assert_array_equal(back.values, rows)


class TestMarginals:
    def test_single_row_one_hot(self):
        data = DiscretizedDataset(
            schema=_schema22(), values=np.array([[1, 0]], dtype=np.uint8))
        marg = empirical_marginals(data)
        np.testing.assert_array_equal(marg[0], [0.0, 1.0])
        np.testing.assert_array_equal(marg[1], [1.0, 0.0])

    def test_half_half(self):
        data = DiscretizedDataset(
            schema=_schema22(), values=np.array([[0, 0], [0, 1], [1, 0], [1, 1]],
                                                dtype=np.uint8))
        marg = empirical_marginals(data)
        np.testing.assert_allclose(marg[0], [0.5, 0.5])

    def test_hand_count_three_features(self):
        from conftest import dataset_from_rows

        rows = np.array([[0, 1, 2], [0, 0, 2], [1, 1, 0], [0, 1, 1]])
        data = dataset_from_rows(rows, [2, 2, 3])
        marg = empirical_marginals(data)
        np.testing.assert_allclose(marg[0], [0.75, 0.25])
        np.testing.assert_allclose(marg[1], [0.25, 0.75])
        np.testing.assert_allclose(marg[2], [0.25, 0.25, 0.5])

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=200))
    @settings(max_examples=50, deadline=None)
    def test_marginals_sum_to_one(self, bins):
        from conftest import dataset_from_rows

        rows = np.array(bins, dtype=np.uint8).reshape(-1, 1)
        data = dataset_from_rows(rows, [6])
        marg = empirical_marginals(data)
        assert abs(marg[0].sum() - 1.0) < 1e-12
        assert (marg[0] >= 0).all()


def _schema22():
    from conftest import grid_schema

    return grid_schema([2, 2])
