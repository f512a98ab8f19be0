"""Gibbs sampling from energy models and the amortized sample pool.

The pool carries approximate model samples across boosting rounds: after a
round, samples are kept with the rejection probability of the multiplicative
model update (times an optional refresh factor) and the pool is refilled by
short Gibbs chains started from the initial distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boosting import EnergyModel, InitialModel
from .errors import AcceptanceStall
from .tree import Tree

DEFAULT_REFILL_BURN_IN = 5  # sweeps for pool refills, starting from q0

INDEPENDENT = "independent-chains"
THINNED = "thinned-chain"


@dataclass
class SamplePool:
    """Fixed-capacity set of approximate model samples."""

    capacity: int
    rows: np.ndarray = field(repr=False)
    acceptance_rate: float = 1.0
    n_refilled: int = 0

    def __post_init__(self) -> None:
        self.rows = np.ascontiguousarray(self.rows, dtype=np.uint8)
        if len(self.rows) != self.capacity:
            raise ValueError("pool must hold exactly `capacity` rows")


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def exact_sample_initial(initial: InitialModel, rng: np.random.Generator) -> np.ndarray:
    """One exact draw from the uniform/marginals mixture."""
    return initial.sample(1, rng)[0]


def gibbs_sweep(model: EnergyModel, x: np.ndarray, rng: np.random.Generator,
                random_scan: bool = False) -> np.ndarray:
    """Resample every coordinate once from its exact model conditional."""
    rows = np.asarray(x, dtype=np.uint8).reshape(1, -1)
    return model.packed().run_chains(rows, 1, _seed(rng), random_scan)[0]


def gibbs_sweeps(model: EnergyModel, rows: np.ndarray, n_sweeps: int,
                 rng: np.random.Generator, random_scan: bool = False) -> np.ndarray:
    """Run independent chains (one per row) for ``n_sweeps`` full sweeps."""
    return model.packed().run_chains(rows, n_sweeps, _seed(rng), random_scan)


def acceptance_probability(tree: Tree, effective_step: float, x: np.ndarray) -> float:
    """Probability of keeping a previous-model sample after one boosting update."""
    if effective_step < 0:
        raise ValueError("effective step must be nonnegative")
    return math.exp(effective_step * (tree.evaluate(x) - tree.max_leaf_value()))


def _acceptance_many(tree: Tree, effective_step: float, rows: np.ndarray) -> np.ndarray:
    return np.exp(effective_step * (tree.evaluate_many(rows) - tree.max_leaf_value()))


def expected_acceptance(model: EnergyModel, tree: Tree, effective_step: float) -> float:
    """Exact acceptance rate of rejection sampling from the pre-update model.

    Uses the closed-form region masses of the initial model, so it is exact
    only when the proposal is the initial model itself (round two).
    """
    wmax = tree.max_leaf_value()
    total = 0.0
    for region, w in tree.leaf_regions():
        total += model.initial.region_mass(region) * math.exp(effective_step * (w - wmax))
    return total


def init_pool(model: EnergyModel, capacity: int, rng: np.random.Generator) -> SamplePool:
    """Exact samples of the one-stage model by rejection from the initial model."""
    if model.n_stages != 1:
        raise ValueError("pool initialization requires exactly one stage")
    tree, step = model.stages[0]
    expected = expected_acceptance(model, tree, step)
    if expected < 1e-6:
        raise AcceptanceStall(
            f"expected acceptance {expected:.2e}; first tree is pathological")
    accepted = []
    n_acc, n_tot = 0, 0
    while n_acc < capacity:
        batch = max(1024, int((capacity - n_acc) / max(expected, 1e-6) * 1.2))
        batch = min(batch, 4 * capacity + 1024)
        draws = model.initial.sample(batch, rng)
        keep = rng.random(batch) < _acceptance_many(tree, step, draws)
        accepted.append(draws[keep])
        n_acc += int(keep.sum())
        n_tot += batch
    rows = np.concatenate(accepted, axis=0)[:capacity]
    return SamplePool(capacity=capacity, rows=rows,
                      acceptance_rate=n_acc / n_tot, n_refilled=capacity)


def refresh_pool(pool: SamplePool, model: EnergyModel, last_tree: Tree,
                 last_step: float, p_refresh: float, rng: np.random.Generator,
                 burn_in_refill: int = DEFAULT_REFILL_BURN_IN) -> SamplePool:
    """Rejection-filter the pool against the last update, then refill by Gibbs.

    Each row survives with probability ``p_accept * (1 - p_refresh)``; the
    pool is topped back up to capacity with fresh chains started from the
    initial model and burned in against the full current model.
    """
    p_acc = _acceptance_many(last_tree, last_step, pool.rows)
    keep = rng.random(pool.capacity) < p_acc * (1.0 - p_refresh)
    kept = pool.rows[keep]
    n_new = pool.capacity - len(kept)
    if n_new > 0:
        starts = model.initial.sample(n_new, rng)
        fresh = model.packed().run_chains(starts, burn_in_refill, _seed(rng))
        rows = np.concatenate([kept, fresh], axis=0)
    else:
        rows = kept
    return SamplePool(capacity=pool.capacity, rows=rows,
                      acceptance_rate=float(p_acc.mean()), n_refilled=int(n_new))


def thinned_sweep_count(n: int, burn_in: int, thin: int, n_parallel: int) -> int:
    """Sweeps each chain consumes in thinned mode: B + thin * ceil(n / chains)."""
    return burn_in + thin * math.ceil(n / n_parallel)


def sample(model: EnergyModel, n: int, burn_in: int = 100,
           mode: str = INDEPENDENT, thin: int = 10, n_parallel: int = 64,
           rng: np.random.Generator | None = None,
           random_scan: bool = False) -> np.ndarray:
    """Draw ``n`` approximate model samples as bin rows.

    ``independent-chains`` runs one fresh chain per sample (burn in, emit the
    final state). ``thinned-chain`` runs ``n_parallel`` chains and emits every
    ``thin``-th state round-robin after burn-in.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be at least 1")
    rng = rng or np.random.default_rng()
    if n == 0:
        return np.zeros((0, len(model.schema.cardinalities)), dtype=np.uint8)
    if model.n_stages == 0:
        return model.initial.sample(n, rng)
    if mode == INDEPENDENT:
        starts = model.initial.sample(n, rng)
        return model.packed().run_chains(starts, burn_in, _seed(rng), random_scan)
    if mode != THINNED:
        raise ValueError(f"unknown sampling mode {mode!r}")
    n_keep = math.ceil(n / n_parallel)
    starts = model.initial.sample(n_parallel, rng)
    states = model.packed().run_thinned(starts, burn_in, thin, n_keep,
                                        _seed(rng), random_scan)
    # interleave chains round-robin: chain 0 draw 0, chain 1 draw 0, ...
    rows = states.transpose(1, 0, 2).reshape(-1, states.shape[2])
    return rows[:n]
