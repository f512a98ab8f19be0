import math

import numpy as np
import pytest
from scipy import stats as sps

from conftest import (
    dataset_from_rows, enumerate_rows, grid_schema, python_distribution,
    total_variation,
)
from treegen.boosting import BoostConfig, EnergyModel, InitialModel
from treegen.errors import AcceptanceStall
from treegen.sampling import (
    SamplePool, acceptance_probability, exact_sample_initial, gibbs_sweep,
    gibbs_sweeps, init_pool, refresh_pool, sample, thinned_sweep_count,
)
from treegen.tree import Tree, _TreeBuilder


def _counts_to_probs(rows, cards):
    lin = np.ravel_multi_index(tuple(rows.T.astype(np.int64)), tuple(cards))
    return np.bincount(lin, minlength=int(np.prod(cards))) / len(rows)


def one_stage_model(rng, cards=(4, 4), step=0.8, mix=1.0, splits=5):
    from conftest import random_tree

    schema = grid_schema(list(cards))
    marg = [np.full(c, 1.0 / c) for c in cards]
    model = EnergyModel(schema, InitialModel(marginals=marg, uniform_mix=mix))
    tree = random_tree(rng, list(cards), ["numeric"] * len(cards), splits)
    model.add_stage(tree, step)
    return model


class TestExactSampleInitial:
    def test_uniform_mix_one(self, rng):
        model = one_stage_model(rng, mix=1.0)
        draws = model.initial.sample(40_000, rng)
        for j in range(2):
            freq = np.bincount(draws[:, j], minlength=4) / 40_000
            se = math.sqrt(0.25 * 0.75 / 40_000)
            assert np.all(np.abs(freq - 0.25) < 4 * se)

    def test_one_hot_marginals_deterministic(self, rng):
        initial = InitialModel(
            marginals=[np.array([0.0, 1.0, 0.0]), np.array([1.0, 0.0])],
            uniform_mix=0.0)
        x = exact_sample_initial(initial, rng)
        np.testing.assert_array_equal(x, [1, 0])

    def test_mixture_marginal_frequencies(self, rng):
        marg = [np.array([0.7, 0.2, 0.1]), np.array([0.5, 0.5])]
        initial = InitialModel(marginals=marg, uniform_mix=0.3)
        n = 100_000
        draws = initial.sample(n, rng)
        for j, m in enumerate(marg):
            card = len(m)
            expect = 0.3 / card + 0.7 * m
            freq = np.bincount(draws[:, j], minlength=card) / n
            se = np.sqrt(expect * (1 - expect) / n)
            assert np.all(np.abs(freq - expect) < 4 * se + 1e-12)


class TestGibbsSweep:
    def test_no_stage_uniform_resample(self, rng):
        model = one_stage_model(rng, mix=1.0)
        model.stages.clear()
        model._packed = None
        rows = np.zeros((200_000, 2), dtype=np.uint8)
        out = gibbs_sweeps(model, rows, 1, rng)
        freq = _counts_to_probs(out, (4, 4))
        assert total_variation(freq, np.full(16, 1 / 16)) < 0.01

    def test_single_feature_sweep_is_exact(self, rng):
        model = one_stage_model(rng, cards=(8,), step=1.0, splits=4)
        exact = python_distribution(model)
        rows = np.zeros((200_000, 1), dtype=np.uint8)  # worst-case start
        out = gibbs_sweeps(model, rows, 1, rng)
        freq = np.bincount(out[:, 0], minlength=8) / len(out)
        assert total_variation(freq, exact) < 0.01

    def test_long_run_two_feature_tv(self, rng):
        model = one_stage_model(rng, cards=(4, 4), step=1.0)
        exact = python_distribution(model)
        n_chains = 1000
        starts = model.initial.sample(n_chains, rng)
        states = model.packed().run_thinned(starts, burn_in=50, thin=1,
                                            n_keep=1000, seed=7)
        rows = states.reshape(-1, 2)
        freq = _counts_to_probs(rows, (4, 4))
        assert total_variation(freq, exact.ravel()) < 0.02

    def test_detailed_balance_chi_square(self, rng):
        # one sweep applied to exact samples stays exact (stationarity)
        model = one_stage_model(rng, cards=(4, 4), step=0.7)
        exact = python_distribution(model).ravel()
        n = 1_000_000
        lin = rng.choice(16, size=n, p=exact)
        rows = np.stack([lin // 4, lin % 4], axis=1).astype(np.uint8)
        out = gibbs_sweeps(model, rows, 1, rng)
        counts = np.bincount(out[:, 0].astype(np.int64) * 4 + out[:, 1],
                             minlength=16)
        res = sps.chisquare(counts, exact * n)
        assert res.pvalue > 0.01

    def test_single_row_api(self, rng):
        model = one_stage_model(rng)
        x = np.array([0, 0], dtype=np.uint8)
        y = gibbs_sweep(model, x, rng)
        assert y.shape == (2,)
        np.testing.assert_array_equal(x, [0, 0])  # input untouched


class TestAcceptanceProbability:
    def test_max_leaf_gives_one(self, rng):
        from conftest import random_tree

        t = random_tree(rng, [4, 4], ["numeric", "numeric"], 4)
        regions = t.leaf_regions()
        best = max(regions, key=lambda rv: rv[1])
        x = np.array([np.flatnonzero(m)[0] for m in best[0].masks], dtype=np.uint8)
        assert acceptance_probability(t, 1.3, x) == 1.0

    def test_zero_step_always_one(self, rng):
        from conftest import random_tree

        t = random_tree(rng, [4, 4], ["numeric", "numeric"], 4)
        for x in enumerate_rows([4, 4]):
            assert acceptance_probability(t, 0.0, x) == 1.0

    def test_log2_below_max(self):
        b = _TreeBuilder(np.array([2]))
        root = b.add_leaf()
        l, r = b.split_numeric(root, 0, 0)
        b.set_leaf_value(l, 1.0)
        b.set_leaf_value(r, 1.0 - math.log(2.0))
        t = b.freeze()
        assert abs(acceptance_probability(t, 1.0, np.array([1])) - 0.5) < 1e-12

    def test_lower_bound_with_ratio_cap(self, rng):
        from treegen.boosting import fit_tree

        R = 2.0
        rows = rng.integers(0, [6, 5], size=(120, 2)).astype(np.uint8)
        pool = rng.integers(0, [6, 5], size=(120, 2)).astype(np.uint8)
        data = dataset_from_rows(rows, [6, 5])
        tree = fit_tree(data, pool, BoostConfig(max_leaves=6, max_ratio=R))
        alpha = 0.9
        for x in enumerate_rows([6, 5]):
            p = acceptance_probability(tree, alpha, x)
            assert math.exp(-alpha * R) - 1e-12 <= p <= 1.0


class TestInitPool:
    def test_zero_tree_accepts_everything(self, rng):
        model = one_stage_model(rng, mix=1.0)
        model.stages[0] = (Tree.single_leaf(np.array([4, 4]), 0.0), 1.0)
        model._packed = None
        pool = init_pool(model, 500, rng)
        assert pool.acceptance_rate == 1.0
        assert len(pool.rows) == 500

    def test_exact_q1_distribution(self, rng):
        model = one_stage_model(rng, cards=(2, 2), step=0.9, splits=2)
        exact = python_distribution(model).ravel()
        pool = init_pool(model, 1_000_000, rng)
        freq = _counts_to_probs(pool.rows, (2, 2))
        assert total_variation(freq, exact) < 0.02

    def test_acceptance_stall(self, rng):
        # nearly-zero-mass leaf with a huge value starves the sampler
        b = _TreeBuilder(np.array([100]))
        root = b.add_leaf()
        l, r = b.split_numeric(root, 0, 0)
        b.set_leaf_value(l, 3.0)
        b.set_leaf_value(r, 0.0)
        t = b.freeze()
        m = np.full(100, (1.0 - 1e-9) / 99)
        m[0] = 1e-9  # max-value leaf nearly unreachable under q0
        model = EnergyModel(grid_schema([100]),
                            InitialModel(marginals=[m / m.sum()], uniform_mix=0.0))
        model.add_stage(t, 10.0)  # acceptance ~ exp(-30) except bin 0
        with pytest.raises(AcceptanceStall):
            init_pool(model, 100, rng)


class TestRefreshPool:
    def test_full_refresh_regenerates_everything(self, rng):
        model = one_stage_model(rng, cards=(4, 4))
        pool = init_pool(model, 300, rng)
        newp = refresh_pool(pool, model, model.stages[0][0], model.stages[0][1],
                            p_refresh=1.0, rng=rng)
        assert newp.n_refilled == 300
        assert len(newp.rows) == 300

    def test_zero_tree_zero_refresh_is_identity(self, rng):
        model = one_stage_model(rng, cards=(4, 4))
        pool = init_pool(model, 200, rng)
        zero = Tree.single_leaf(np.array([4, 4]), 0.0)
        newp = refresh_pool(pool, model, zero, 0.5, p_refresh=0.0, rng=rng)
        np.testing.assert_array_equal(newp.rows, pool.rows)
        assert newp.n_refilled == 0

    def test_pool_size_invariant(self, rng):
        model = one_stage_model(rng, cards=(4, 4))
        pool = init_pool(model, 256, rng)
        for _ in range(3):
            pool = refresh_pool(pool, model, model.stages[0][0], 0.6, 0.3, rng)
            assert len(pool.rows) == 256

    def test_post_refresh_distribution(self, rng):
        # after refreshing against a second stage the pool should track q2
        from conftest import random_tree

        model = one_stage_model(rng, cards=(2, 2), step=0.7, splits=2)
        pool = init_pool(model, 400_000, rng)
        t2 = random_tree(rng, [2, 2], ["numeric", "numeric"], 2)
        model.add_stage(t2, 0.5)
        exact = python_distribution(model).ravel()
        pool = refresh_pool(pool, model, t2, 0.5, p_refresh=0.1, rng=rng,
                            burn_in_refill=10)
        freq = _counts_to_probs(pool.rows, (2, 2))
        assert total_variation(freq, exact) < 0.03


class TestSample:
    def test_no_stage_model_is_exact_initial(self, rng):
        model = one_stage_model(rng, mix=1.0)
        model.stages.clear()
        model._packed = None
        rows = sample(model, 50_000, burn_in=1, rng=rng)
        freq = _counts_to_probs(rows, (4, 4))
        assert total_variation(freq, np.full(16, 1 / 16)) < 0.01

    def test_independent_mode_tv(self, rng):
        model = one_stage_model(rng, cards=(4, 4), step=1.0)
        exact = python_distribution(model).ravel()
        rows = sample(model, 100_000, burn_in=50, mode="independent-chains",
                      rng=rng)
        freq = _counts_to_probs(rows, (4, 4))
        assert total_variation(freq, exact) < 0.03

    def test_thinned_mode_counts(self, rng):
        model = one_stage_model(rng, cards=(4, 4))
        rows = sample(model, 101, burn_in=5, mode="thinned-chain", thin=3,
                      n_parallel=8, rng=rng)
        assert rows.shape == (101, 2)
        assert thinned_sweep_count(101, 5, 3, 8) == 5 + 3 * 13

    def test_burn_in_validation(self, rng):
        model = one_stage_model(rng)
        with pytest.raises(ValueError):
            sample(model, 10, burn_in=0, rng=rng)


class TestSamplePool:
    def test_capacity_enforced(self):
        with pytest.raises(ValueError):
            SamplePool(capacity=4, rows=np.zeros((3, 2), dtype=np.uint8))


class TestCategoricalGibbs:
    def test_long_run_tv_with_categorical_dimension(self, rng):
        from conftest import random_model

        model = random_model(rng, [4, 5], ["numeric", "categorical"],
                             n_stages=2, uniform_mix=0.4, max_splits=4)
        exact = python_distribution(model)
        starts = model.initial.sample(500, rng)
        states = model.packed().run_thinned(starts, burn_in=100, thin=2,
                                            n_keep=1000, seed=3)
        rows = states.reshape(-1, 2)
        freq = _counts_to_probs(rows, (4, 5))
        assert total_variation(freq, exact) < 0.02
