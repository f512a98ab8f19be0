"""Shared fixtures and small model/data factories for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from treegen.boosting import EnergyModel, InitialModel
from treegen.data import DiscretizedDataset, FeatureSpec, Schema
from treegen.tree import Tree, _TreeBuilder, make_cat_mask


def grid_schema(cards, kinds=None, target=None) -> Schema:
    """Schema of plain numeric/categorical features with given cardinalities."""
    kinds = kinds or ["numeric"] * len(cards)
    feats = []
    for j, (c, k) in enumerate(zip(cards, kinds)):
        if k == "numeric":
            feats.append(FeatureSpec(
                name=f"f{j}", kind="numeric", cardinality=c,
                bin_edges=np.arange(1, c, dtype=np.float64),
                value_range=(0.0, float(c))))
        else:
            feats.append(FeatureSpec(
                name=f"f{j}", kind="categorical", cardinality=c,
                categories=[f"c{i}" for i in range(c)]))
    return Schema(features=feats, target_index=target)


def random_tree(rng: np.random.Generator, cards, kinds, n_splits: int) -> Tree:
    """Random valid tree: recursive region-aware splits with random values."""
    cards = np.asarray(cards)
    b = _TreeBuilder(cards)
    root = b.add_leaf(rng.normal())
    # leaf id -> per-dim admitted sorted bin arrays
    regions = {root: [np.arange(c) for c in cards]}
    for _ in range(n_splits):
        candidates = [nid for nid, masks in regions.items()
                      if any(len(m) > 1 for m in masks)]
        if not candidates:
            break
        nid = int(rng.choice(candidates))
        masks = regions.pop(nid)
        dims = [j for j, m in enumerate(masks) if len(m) > 1]
        f = int(rng.choice(dims))
        adm = masks[f]
        if kinds[f] == "numeric":
            t = int(rng.choice(adm[:-1]))
            l_id, r_id = b.split_numeric(nid, f, t)
            lmask, rmask = adm[adm <= t], adm[adm > t]
        else:
            k = int(rng.integers(1, len(adm)))
            left_cats = rng.choice(adm, size=k, replace=False)
            l_id, r_id = b.split_categorical(nid, f, make_cat_mask(left_cats))
            lmask = np.sort(left_cats)
            rmask = np.setdiff1d(adm, left_cats)
        for cid, cmask in ((l_id, lmask), (r_id, rmask)):
            cmasks = list(masks)
            cmasks[f] = cmask
            regions[cid] = cmasks
            b.set_leaf_value(cid, rng.normal())
    return b.freeze()


def random_model(rng: np.random.Generator, cards, kinds=None, n_stages=2,
                 uniform_mix=0.3, max_splits=4) -> EnergyModel:
    kinds = kinds or ["numeric"] * len(cards)
    schema = grid_schema(cards, kinds)
    marginals = []
    for c in cards:
        m = rng.random(c) + 0.1
        marginals.append(m / m.sum())
    initial = InitialModel(marginals=marginals, uniform_mix=uniform_mix)
    model = EnergyModel(schema=schema, initial=initial)
    for _ in range(n_stages):
        tree = random_tree(rng, cards, kinds, int(rng.integers(1, max_splits + 1)))
        model.add_stage(tree, float(rng.random()))
    return model


def dataset_from_rows(rows: np.ndarray, cards, kinds=None, target=None
                      ) -> DiscretizedDataset:
    return DiscretizedDataset(schema=grid_schema(cards, kinds, target),
                              values=np.asarray(rows, dtype=np.uint8))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p).ravel() - np.asarray(q).ravel()).sum())


def python_energy(model: EnergyModel, x: np.ndarray) -> float:
    """Pure-python energy evaluation, independent of the compiled kernels."""
    e = model.initial.log_density(x)
    for tree, step in model.stages:
        e += step * tree.evaluate(x)
    return e


def enumerate_rows(cards) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(c) for c in cards], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.uint8)


def python_distribution(model: EnergyModel) -> np.ndarray:
    """Exact model distribution over a small domain via python evaluation."""
    rows = enumerate_rows(model.schema.cardinalities)
    e = np.array([python_energy(model, r) for r in rows])
    e -= e.max()
    p = np.exp(e)
    return p / p.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
