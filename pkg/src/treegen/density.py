"""Density estimation trees and bagged forests with exact normalized densities.

A density tree stores, per leaf, the empirical mass and the region volume;
its density is their ratio, so the tree is normalized by construction. A
forest is a uniform mixture of bootstrap-fitted trees with per-node feature
subsampling, which keeps both density evaluation and exact sampling cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._engine import PackedModel, pack_model
from .boosting import _Grower, _VolumeSide, _CHI2, _KL
from .data import DiscretizedDataset, Schema
from .tree import Region, Tree

ISE = "ise"
KL = "kl"
CRITERIA = (ISE, KL)


def det_split_gain(parent: tuple[float, float], left: tuple[float, float],
                   right: tuple[float, float], criterion: str = ISE) -> float:
    """Gain of a density-tree split from (mass, volume) pairs.

    ISE uses p^2/V terms, KL uses p*log(p/V); 0*log(0/V) = 0.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    (pp, vp), (pl, vl), (pr, vr) = parent, left, right
    if abs(pl + pr - pp) > 1e-12 or abs(vl + vr - vp) > 1e-9:
        raise ValueError("children must partition the parent")

    def term(p: float, v: float) -> float:
        if p == 0.0:
            return 0.0
        return p * p / v if criterion == ISE else p * math.log(p / v)

    return term(pl, vl) + term(pr, vr) - term(pp, vp)


@dataclass(frozen=True)
class DensityTree:
    """Piecewise-constant normalized density; leaf values are mass/volume."""

    tree: Tree
    leaf_mass: np.ndarray
    leaf_volume: np.ndarray

    def __post_init__(self) -> None:
        if abs(float(self.leaf_mass.sum()) - 1.0) > 1e-9:
            raise ValueError("leaf masses must sum to 1")

    @property
    def n_leaves(self) -> int:
        return self.tree.n_leaves

    def density(self, x: np.ndarray) -> float:
        return self.tree.evaluate(x)

    def leaf_regions(self) -> list[tuple[Region, float]]:
        return self.tree.leaf_regions()


@dataclass(frozen=True)
class DefEnsemble:
    """Uniform mixture of density trees fitted on bootstrap resamples."""

    schema: Schema
    trees: list[DensityTree]
    criterion: str
    feature_fraction: float
    _packed_cache: list = field(default_factory=list, repr=False, compare=False)

    def _packed(self) -> PackedModel:
        # pack all trees as unit-step stages over a base whose "log density"
        # is identically zero, so kernel outputs are plain sums of per-tree
        # densities rather than log-space energies
        if not self._packed_cache:
            base = pack_model(self.schema,
                              _ZeroBase(self.schema.cardinalities),
                              [(t.tree, 1.0) for t in self.trees])
            self._packed_cache.append(base)
        return self._packed_cache[0]

    def density_many(self, rows: np.ndarray) -> np.ndarray:
        """Normalized mixture density at each bin row."""
        rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.uint8)
        return self._packed().energies(rows) / len(self.trees)

    def cond_density_many(self, rows: np.ndarray, dim: int) -> np.ndarray:
        """Per-row average leaf density along one dimension (not normalized)."""
        rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.uint8)
        return self._packed().cond_energies(rows, dim) / len(self.trees)


class _ZeroBase:
    """Initial-model stand-in whose log density is identically zero.

    Flat marginals of 1 and a zero uniform mix make the packed base term
    log(1 * prod 1) = 0 at every point.
    """

    def __init__(self, cards: np.ndarray):
        self.marginals = [np.ones(c) for c in cards]
        self.uniform_mix = 0.0
        self.cards = cards


def fit_det_with_trace(data: DiscretizedDataset, max_leaves: int,
                       min_data_in_leaf: int = 1,
                       feature_subset: np.ndarray | None = None,
                       rng: np.random.Generator | None = None, *,
                       criterion: str = ISE,
                       data_idx: np.ndarray | None = None,
                       feature_fraction: float | None = None
                       ) -> tuple[DensityTree, list[float]]:
    """Best-first density tree under the ISE or KL criterion.

    ``feature_subset`` fixes the candidate features for every node;
    ``feature_fraction`` instead redraws a subset per node (forest mode).
    Also returns the realized split gains in application order.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    if data.n_rows == 0 and data_idx is None:
        raise ValueError("data must be non-empty")
    d = len(data.schema)
    sampler = None
    if feature_subset is not None:
        fixed = np.asarray(feature_subset, dtype=np.int64)
        sampler = lambda: fixed
    elif feature_fraction is not None:
        if rng is None:
            raise ValueError("feature_fraction needs an rng")
        k = max(1, math.ceil(feature_fraction * d))
        sampler = lambda: rng.choice(d, size=k, replace=False)
    grower = _Grower(
        data, _VolumeSide(data.schema.cardinalities),
        max_leaves=max_leaves, min_data=min_data_in_leaf, min_model=0,
        max_ratio=np.inf, rule=_CHI2 if criterion == ISE else _KL,
        require_q_pos=True, data_idx=data_idx, feature_sampler=sampler)
    _tree_zero, leaf_info = grower.grow()
    masses, volumes = [], []
    for nid, stats, _region in leaf_info:
        grower.builder.set_leaf_value(nid, stats.p / stats.q)  # density = mass/volume
        masses.append(stats.p)
        volumes.append(stats.q)
    tree = grower.builder.freeze()
    dtree = DensityTree(tree=tree, leaf_mass=np.array(masses),
                        leaf_volume=np.array(volumes))
    return dtree, list(grower.realized_gains)


def fit_det(data: DiscretizedDataset, max_leaves: int,
            min_data_in_leaf: int = 1, feature_subset: np.ndarray | None = None,
            rng: np.random.Generator | None = None, *, criterion: str = ISE,
            data_idx: np.ndarray | None = None,
            feature_fraction: float | None = None) -> DensityTree:
    """Best-first density tree; see ``fit_det_with_trace``."""
    dtree, _gains = fit_det_with_trace(
        data, max_leaves, min_data_in_leaf, feature_subset, rng,
        criterion=criterion, data_idx=data_idx, feature_fraction=feature_fraction)
    return dtree


def fit_def(data: DiscretizedDataset, n_trees: int, max_leaves: int,
            feature_fraction: float = 1.0, min_data_in_leaf: int = 1,
            criterion: str = ISE, rng: np.random.Generator | None = None,
            bootstrap: bool = True) -> DefEnsemble:
    """Bag density trees over bootstrap resamples with per-node feature draws."""
    if n_trees < 1:
        raise ValueError("need at least one tree")
    if not 0.0 < feature_fraction <= 1.0:
        raise ValueError("feature_fraction must be in (0, 1]")
    rng = rng or np.random.default_rng()
    n = data.n_rows
    trees = []
    for _ in range(n_trees):
        idx = rng.integers(0, n, size=n) if bootstrap else None
        frac = feature_fraction if feature_fraction < 1.0 else None
        trees.append(fit_det(data, max_leaves, min_data_in_leaf, None, rng,
                             criterion=criterion, data_idx=idx,
                             feature_fraction=frac))
    return DefEnsemble(schema=data.schema, trees=trees, criterion=criterion,
                       feature_fraction=feature_fraction)


def def_log_density(ensemble: DefEnsemble, x: np.ndarray) -> float:
    """Log of the ensemble's (normalized) density at one bin row."""
    dens = ensemble.density_many(np.asarray(x).reshape(1, -1))[0]
    with np.errstate(divide="ignore"):
        return float(np.log(dens))


def def_log_density_many(ensemble: DefEnsemble, rows: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(ensemble.density_many(rows))


def def_conditional(ensemble: DefEnsemble, x: np.ndarray, target: int) -> np.ndarray:
    """Normalized conditional of one variable under the mixture density."""
    card = int(ensemble.schema.cardinalities[target])
    acc = np.zeros(card, dtype=np.float64)
    for t in ensemble.trees:
        acc += t.tree.conditional_slice(np.asarray(x), target)
    total = acc.sum()
    if total <= 0:
        return np.full(card, 1.0 / card)
    return acc / total


def _tree_leaf_sampler(dtree: DensityTree):
    # leaf_mass is ordered by tree.leaf_ids; leaf_regions() walks the tree in
    # traversal order, so realign regions by routing a point of each region
    cum = np.cumsum(dtree.leaf_mass)
    cum /= cum[-1]
    pos = {nid: i for i, nid in enumerate(dtree.tree.leaf_ids)}
    regions: list[Region | None] = [None] * len(pos)
    for region, _v in dtree.tree.leaf_regions():
        rep = np.array([np.flatnonzero(m)[0] for m in region.masks], dtype=np.uint8)
        regions[pos[dtree.tree.route(rep)]] = region
    return cum, regions


def def_sample(ensemble: DefEnsemble, rng: np.random.Generator) -> np.ndarray:
    """One exact draw: uniform tree, mass-weighted leaf, uniform within leaf."""
    return def_sample_many(ensemble, 1, rng)[0]


def def_sample_many(ensemble: DefEnsemble, n: int, rng: np.random.Generator) -> np.ndarray:
    d = len(ensemble.schema)
    out = np.zeros((n, d), dtype=np.uint8)
    tree_ids = rng.integers(0, len(ensemble.trees), size=n)
    for t_id in range(len(ensemble.trees)):
        sel = np.flatnonzero(tree_ids == t_id)
        if sel.size == 0:
            continue
        cum, regions = _tree_leaf_sampler(ensemble.trees[t_id])
        leaf_slots = np.minimum(np.searchsorted(cum, rng.random(sel.size), side="right"),
                                len(cum) - 1)
        for slot in np.unique(leaf_slots):
            rows = sel[leaf_slots == slot]
            region = regions[slot]
            for j in range(d):
                admitted = np.flatnonzero(region.masks[j])
                out[rows, j] = admitted[rng.integers(0, admitted.size, size=rows.size)]
    return out
