"""Tabular ingestion: schema inference, quantile binning and bin-space round trips.

Everything downstream of this module works on small integer bin indices; raw
values only reappear when samples or predictions are mapped back through the
schema.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    CardinalityOverflow,
    ConstantColumnWarning,
    EmptyTable,
    UnknownCategory,
)

MAX_CATEGORIES = 256

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    """Per-column domain description after discretization.

    Numeric columns carry ``bin_edges`` (right-exclusive lower bounds of the
    bins above them) and ``value_range``, the observed training min/max used
    as finite bounds for the outermost bins. Categorical columns carry the
    ordered list of raw labels.
    """

    name: str
    kind: str
    cardinality: int = 0
    bin_edges: np.ndarray | None = None
    categories: list | None = None
    value_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown feature kind: {self.kind!r}")
        if self.cardinality and not 2 <= self.cardinality <= MAX_CATEGORIES:
            raise ValueError(
                f"{self.name}: cardinality {self.cardinality} outside [2, {MAX_CATEGORIES}]"
            )
        if self.bin_edges is not None:
            edges = np.asarray(self.bin_edges, dtype=np.float64)
            if np.any(np.diff(edges) <= 0):
                raise ValueError(f"{self.name}: bin edges must be strictly increasing")
            if self.cardinality and len(edges) != self.cardinality - 1:
                raise ValueError(f"{self.name}: need cardinality-1 edges")
            object.__setattr__(self, "bin_edges", edges)
        if self.categories is not None:
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"{self.name}: duplicate categories")
            if self.cardinality and len(self.categories) != self.cardinality:
                raise ValueError(f"{self.name}: categories must match cardinality")

    @property
    def is_fitted(self) -> bool:
        return self.cardinality >= 2


@dataclass(frozen=True)
class Schema:
    """Ordered feature specs plus an optional target column index.

    The target index is only used when selecting models in validation and
    when evaluating metrics; fitting never treats that column specially.
    """

    features: list[FeatureSpec]
    target_index: int | None = None

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if self.target_index is not None and not 0 <= self.target_index < len(self.features):
            raise ValueError("target_index out of range")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([f.cardinality for f in self.features], dtype=np.int64)

    @property
    def kinds(self) -> np.ndarray:
        """0 for numeric (ordered) features, 1 for categorical ones."""
        return np.array([0 if f.kind == NUMERIC else 1 for f in self.features], dtype=np.uint8)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class DiscretizedDataset:
    """Row-major matrix of bin indices under a fitted schema."""

    schema: Schema
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=np.uint8)
        if vals.ndim != 2 or vals.shape[1] != len(self.schema):
            raise ValueError("values must be (n_rows, n_features)")
        cards = self.schema.cardinalities
        if vals.size and np.any(vals >= cards[None, :]):
            raise ValueError("bin index exceeds feature cardinality")
        object.__setattr__(self, "values", vals)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def _is_numeric_column(col: pd.Series) -> bool:
    if pd.api.types.is_bool_dtype(col):
        return False
    return pd.api.types.is_numeric_dtype(col)


def infer_schema(
    raw_table: pd.DataFrame,
    kinds: dict[str, str] | None = None,
    target: str | None = None,
) -> Schema:
    """Classify each column as numeric or categorical.

    ``kinds`` optionally forces a classification per column name. Categorical
    columns are capped at 256 distinct labels; numeric columns of any
    distinct count are accepted (binning happens later).
    """
    if raw_table.shape[0] == 0 or raw_table.shape[1] == 0:
        raise EmptyTable("input table has no rows or no columns")
    if raw_table.isna().any().any():
        raise ValueError("missing raw values are not supported at ingestion")
    kinds = kinds or {}
    specs = []
    for name in raw_table.columns:
        col = raw_table[name]
        kind = kinds.get(name)
        if kind is None:
            kind = NUMERIC if _is_numeric_column(col) else CATEGORICAL
        if kind == CATEGORICAL:
            labels = sorted(pd.unique(col).tolist(), key=str)
            if len(labels) > MAX_CATEGORIES:
                raise CardinalityOverflow(
                    f"{name}: {len(labels)} distinct labels exceed {MAX_CATEGORIES}"
                )
            specs.append(
                FeatureSpec(
                    name=str(name),
                    kind=CATEGORICAL,
                    cardinality=max(len(labels), 2) if len(labels) >= 2 else 0,
                    categories=labels if len(labels) >= 2 else None,
                )
            )
        else:
            specs.append(FeatureSpec(name=str(name), kind=NUMERIC))
    target_index = None
    if target is not None:
        names = [s.name for s in specs]
        if target not in names:
            raise KeyError(f"target column {target!r} not in table")
        target_index = names.index(target)
    return Schema(features=specs, target_index=target_index)


def _quantile_edges(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Empirical quantile edges at levels k/max_bins, deduplicated.

    Edges equal to the column min or max are dropped: they would create
    empty outer bins with degenerate raw-space bounds.
    """
    distinct = np.unique(values)
    if distinct.size <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    levels = np.arange(1, max_bins) / max_bins
    edges = np.unique(np.quantile(values, levels))
    edges = edges[(edges > distinct[0]) & (edges < distinct[-1])]
    if edges.size == 0:
        # pathological skew: all interior quantiles collapsed onto an extreme
        edges = np.array([(distinct[0] + distinct[1]) / 2.0])
    return edges


def fit_discretizer(
    raw_table: pd.DataFrame, schema: Schema, max_bins: int = 255
) -> Schema:
    """Populate bin edges / category tables for every feature.

    Numeric columns are binned by empirical quantiles into at most
    ``max_bins`` bins; columns with fewer distinct values get one bin per
    value. Constant columns are dropped with a warning.
    """
    if not 2 <= max_bins <= MAX_CATEGORIES:
        raise ValueError("max_bins must be in [2, 256]")
    target_name = (
        schema.features[schema.target_index].name if schema.target_index is not None else None
    )
    fitted: list[FeatureSpec] = []
    for spec in schema.features:
        col = raw_table[spec.name]
        if spec.kind == CATEGORICAL:
            labels = spec.categories or sorted(pd.unique(col).tolist(), key=str)
            if len(labels) < 2:
                warnings.warn(
                    f"dropping constant column {spec.name!r}", ConstantColumnWarning
                )
                continue
            fitted.append(
                replace(spec, cardinality=len(labels), categories=labels)
            )
            continue
        values = np.asarray(col, dtype=np.float64)
        if np.unique(values).size < 2:
            warnings.warn(f"dropping constant column {spec.name!r}", ConstantColumnWarning)
            continue
        edges = _quantile_edges(values, max_bins)
        fitted.append(
            replace(
                spec,
                cardinality=len(edges) + 1,
                bin_edges=edges,
                value_range=(float(values.min()), float(values.max())),
            )
        )
    if not fitted:
        raise EmptyTable("all columns were dropped as constant")
    target_index = None
    if target_name is not None:
        names = [s.name for s in fitted]
        if target_name in names:
            target_index = names.index(target_name)
    return Schema(features=fitted, target_index=target_index)


def discretize_column(values: np.ndarray | pd.Series, spec: FeatureSpec) -> np.ndarray:
    """Map one raw column to bin indices under a fitted spec."""
    if not spec.is_fitted:
        raise ValueError(f"{spec.name}: schema not fitted")
    if spec.kind == NUMERIC:
        vals = np.asarray(values, dtype=np.float64)
        if np.isnan(vals).any():
            raise ValueError(f"{spec.name}: missing values are not supported")
        # value < edge_k puts it in bin k; a value equal to an edge falls right
        return np.searchsorted(spec.bin_edges, vals, side="right").astype(np.uint8)
    lookup = {label: i for i, label in enumerate(spec.categories)}
    out = np.empty(len(values), dtype=np.uint8)
    for i, v in enumerate(np.asarray(values, dtype=object)):
        code = lookup.get(v)
        if code is None:
            raise UnknownCategory(f"{spec.name}: unseen label {v!r}")
        out[i] = code
    return out


def discretize(raw_table: pd.DataFrame, schema: Schema) -> DiscretizedDataset:
    """Convert a raw table to bin indices under a fitted schema."""
    if raw_table.shape[0] == 0:
        raise EmptyTable("no rows to discretize")
    cols = [discretize_column(raw_table[spec.name], spec) for spec in schema.features]
    return DiscretizedDataset(schema=schema, values=np.column_stack(cols))


def bin_bounds(spec: FeatureSpec) -> np.ndarray:
    """Raw-space bounds of every bin as an array of cardinality+1 edges.

    The outermost bounds are the observed training min/max.
    """
    lo, hi = spec.value_range
    return np.concatenate([[lo], spec.bin_edges, [hi]])


def undiscretize(
    bin_rows: np.ndarray, schema: Schema, rng: np.random.Generator
) -> pd.DataFrame:
    """Map bin rows back to raw space.

    Numeric entries are drawn uniformly inside their bin; categorical entries
    map back to their labels deterministically.
    """
    rows = np.atleast_2d(np.asarray(bin_rows))
    out = {}
    for j, spec in enumerate(schema.features):
        codes = rows[:, j].astype(np.int64)
        if spec.kind == CATEGORICAL:
            out[spec.name] = [spec.categories[c] for c in codes]
        else:
            bounds = bin_bounds(spec)
            lo, hi = bounds[codes], bounds[codes + 1]
            out[spec.name] = lo + rng.random(len(codes)) * (hi - lo)
    return pd.DataFrame(out)


def empirical_marginals(data: DiscretizedDataset) -> list[np.ndarray]:
    """Per-feature empirical bin probabilities; each vector sums to one."""
    if data.n_rows < 1:
        raise EmptyTable("need at least one row")
    cards = data.schema.cardinalities
    return [
        np.bincount(data.values[:, j], minlength=cards[j]).astype(np.float64) / data.n_rows
        for j in range(len(data.schema))
    ]
