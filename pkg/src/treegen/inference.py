"""Density evaluation, exact single-variable conditionals and point predictions.

The model is unnormalized; conditionals only need a softmax over one
dimension, and missing covariates are handled by exact marginalization over
their (bounded) product grid.
"""

from __future__ import annotations

import numpy as np

from .boosting import EnergyModel
from .data import FeatureSpec, bin_bounds
from .errors import DomainTooLarge, MarginalizationBudgetExceeded

MARGINALIZATION_BUDGET = 1_000_000
PARTITION_LIMIT = 10_000_000
_CHUNK = 1 << 16


def unnormalized_log_density(model: EnergyModel, x: np.ndarray) -> float:
    """log q0(x) plus the step-weighted sum of stage trees at x."""
    row = np.asarray(x, dtype=np.uint8).reshape(1, -1)
    return float(model.packed().energies(row)[0])


def log_density_many(model: EnergyModel, rows: np.ndarray) -> np.ndarray:
    return model.packed().energies(np.atleast_2d(rows))


def _softmax_rows(e: np.ndarray) -> np.ndarray:
    """Row softmax; rows whose energies are all -inf fall back to uniform."""
    m = e.max(axis=1, keepdims=True)
    dead = ~np.isfinite(m[:, 0])
    if dead.any():
        e = e.copy()
        e[dead] = 0.0
        m = e.max(axis=1, keepdims=True)
    p = np.exp(e - m)
    return p / p.sum(axis=1, keepdims=True)


def conditional(model: EnergyModel, x: np.ndarray, target: int) -> np.ndarray:
    """Exact p(x_target | all other coordinates of x); sums to 1."""
    e = model.packed().cond_energies(np.asarray(x).reshape(1, -1), target)
    return _softmax_rows(e)[0]


def conditional_many(model: EnergyModel, rows: np.ndarray, target: int) -> np.ndarray:
    return _softmax_rows(model.packed().cond_energies(rows, target))


def _missing_grid(cards: list[int]) -> np.ndarray:
    """All assignments over the given cardinalities, row-major."""
    grids = np.meshgrid(*[np.arange(c) for c in cards], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.uint8)


def conditional_with_missing(model: EnergyModel, x: np.ndarray, target: int,
                             missing: set[int] | list[int],
                             budget: int = MARGINALIZATION_BUDGET) -> np.ndarray:
    """Target conditional with some covariates marginalized out exactly.

    Sums exp(f) over the product grid of missing-feature values in log space;
    the budget bounds the grid size.
    """
    missing = sorted(set(int(m) for m in missing))
    if target in missing:
        raise ValueError("target cannot be missing")
    if not missing:
        return conditional(model, x, target)
    cards = model.schema.cardinalities
    n_cells = int(np.prod([cards[m] for m in missing], dtype=np.float64))
    if np.prod([float(cards[m]) for m in missing]) > budget:
        raise MarginalizationBudgetExceeded(
            f"{n_cells} missing-value combinations exceed budget {budget}")
    assignments = _missing_grid([int(cards[m]) for m in missing])
    card_t = int(cards[target])
    acc = np.full(card_t, -np.inf)
    base = np.asarray(x, dtype=np.uint8)
    for start in range(0, len(assignments), _CHUNK):
        chunk = assignments[start:start + _CHUNK]
        rows = np.repeat(base[None, :], len(chunk), axis=0)
        rows[:, missing] = chunk
        e = model.packed().cond_energies(rows, target)
        m = e.max()
        if m == -np.inf:
            continue
        chunk_lse = m + np.log(np.exp(e - m).sum(axis=0))
        acc = np.logaddexp(acc, chunk_lse)
    return _softmax_rows(acc.reshape(1, -1))[0]


def statistic_from_conditional(probs: np.ndarray, spec: FeatureSpec, statistic: str):
    """Map a conditional over bins to a point prediction in raw space.

    Numeric targets assume a uniform density within each bin; the mean uses
    bin midpoints and the median inverts the piecewise-linear CDF. The mode
    is the argmax bin (lowest index on ties) and maps to a label for
    categorical targets.
    """
    if statistic == "mode":
        b = int(np.argmax(probs))
        if spec.kind == "categorical":
            return spec.categories[b]
        bounds = bin_bounds(spec)
        return float((bounds[b] + bounds[b + 1]) / 2.0)
    if spec.kind != "numeric":
        raise ValueError(f"{statistic} requires a numeric target")
    bounds = bin_bounds(spec)
    if statistic == "mean":
        mids = (bounds[:-1] + bounds[1:]) / 2.0
        return float(probs @ mids)
    if statistic == "median":
        cum = np.cumsum(probs)
        b = int(np.searchsorted(cum, 0.5, side="left"))
        b = min(b, len(probs) - 1)
        before = cum[b] - probs[b]
        frac = 0.5 if probs[b] == 0 else (0.5 - before) / probs[b]
        return float(bounds[b] + frac * (bounds[b + 1] - bounds[b]))
    raise ValueError(f"unknown statistic {statistic!r}")


def predict(model: EnergyModel, x: np.ndarray, target: int, statistic: str,
            schema=None):
    """Point prediction for one variable given all others."""
    schema = schema or model.schema
    probs = conditional(model, x, target)
    return statistic_from_conditional(probs, schema.features[target], statistic)


def _domain_size(cards: np.ndarray) -> float:
    return float(np.prod(cards.astype(np.float64)))


def rows_from_linear(lin: np.ndarray, cards: np.ndarray) -> np.ndarray:
    """Decode row-major linear indices into bin rows."""
    d = len(cards)
    out = np.empty((len(lin), d), dtype=np.uint8)
    rem = np.asarray(lin, dtype=np.int64).copy()
    for j in range(d - 1, -1, -1):
        out[:, j] = rem % cards[j]
        rem //= cards[j]
    return out


def exact_log_partition(model: EnergyModel, limit: int = PARTITION_LIMIT) -> float:
    """log sum(exp f) by exhaustive enumeration; only for small domains."""
    cards = model.schema.cardinalities
    size = _domain_size(cards)
    if size > limit:
        raise DomainTooLarge(f"domain has {size:.3g} cells, limit {limit}")
    n = int(size)
    running_max = -np.inf
    running_sum = 0.0
    packed = model.packed()
    for start in range(0, n, _CHUNK):
        rows = rows_from_linear(np.arange(start, min(start + _CHUNK, n)), cards)
        e = packed.energies(rows)
        m = float(e.max())
        if m == -np.inf:
            continue
        if m > running_max:
            running_sum *= np.exp(running_max - m)
            running_max = m
        running_sum += float(np.exp(e - running_max).sum())
    if running_sum == 0.0:
        return -np.inf
    return running_max + float(np.log(running_sum))


def exact_distribution(model: EnergyModel, limit: int = PARTITION_LIMIT) -> np.ndarray:
    """Exact normalized probabilities over the whole domain, shaped by cardinality."""
    cards = model.schema.cardinalities
    size = _domain_size(cards)
    if size > limit:
        raise DomainTooLarge(f"domain has {size:.3g} cells, limit {limit}")
    n = int(size)
    rows = rows_from_linear(np.arange(n), cards)
    e = model.packed().energies(rows)
    e -= e.max()
    p = np.exp(e)
    p /= p.sum()
    return p.reshape(tuple(int(c) for c in cards))
