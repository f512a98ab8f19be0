"""Piecewise-constant functions over the binned domain, stored as flat binary trees.

Nodes live in append-only parallel arrays; a split is either a bin threshold
(ordered features, ``x <= t`` goes left) or a bit-set over categories
(member goes left). Trees are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF = -1
_MASK_WORDS = 4  # 256 categories / 64 bits


def make_cat_mask(categories: np.ndarray | list) -> np.ndarray:
    """Pack category indices into a 4-word bitmask."""
    mask = np.zeros(_MASK_WORDS, dtype=np.uint64)
    for c in np.asarray(categories, dtype=np.int64):
        mask[c >> 6] |= np.uint64(1) << np.uint64(c & 63)
    return mask


def mask_members(mask: np.ndarray, cardinality: int) -> np.ndarray:
    """Category indices present in a bitmask."""
    out = [b for b in range(cardinality) if (int(mask[b >> 6]) >> (b & 63)) & 1]
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class Region:
    """Axis-aligned subset of the domain: one admitted-bin mask per dimension."""

    masks: list[np.ndarray]

    def __post_init__(self) -> None:
        for m in self.masks:
            if not m.any():
                raise ValueError("region has an empty dimension")

    @staticmethod
    def full(cardinalities: np.ndarray) -> "Region":
        return Region([np.ones(c, dtype=bool) for c in cardinalities])

    def volume(self) -> float:
        v = 1.0
        for m in self.masks:
            v *= float(m.sum())
        return v

    def contains(self, x: np.ndarray) -> bool:
        return all(m[int(b)] for m, b in zip(self.masks, x))

    def interval(self, dim: int) -> tuple[int, int]:
        """[lo, hi) bin range of a contiguous-mask dimension."""
        idx = np.flatnonzero(self.masks[dim])
        lo, hi = int(idx[0]), int(idx[-1]) + 1
        if hi - lo != idx.size:
            raise ValueError("dimension mask is not contiguous")
        return lo, hi


class _TreeBuilder:
    """Accumulates nodes during growth; `freeze` yields an immutable Tree."""

    def __init__(self, cardinalities: np.ndarray):
        self.cards = np.asarray(cardinalities, dtype=np.int64)
        self.feature: list[int] = []
        self.threshold: list[int] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.cat_ref: list[int] = []
        self.cat_masks: list[np.ndarray] = []

    def add_leaf(self, value: float = 0.0) -> int:
        self.feature.append(LEAF)
        self.threshold.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.cat_ref.append(-1)
        return len(self.feature) - 1

    def set_leaf_value(self, node: int, value: float) -> None:
        self.value[node] = float(value)

    def split_numeric(self, node: int, feature: int, threshold: int) -> tuple[int, int]:
        l, r = self.add_leaf(), self.add_leaf()
        self.feature[node] = feature
        self.threshold[node] = int(threshold)
        self.left[node], self.right[node] = l, r
        return l, r

    def split_categorical(self, node: int, feature: int, left_mask: np.ndarray) -> tuple[int, int]:
        l, r = self.add_leaf(), self.add_leaf()
        self.feature[node] = feature
        self.cat_ref[node] = len(self.cat_masks)
        self.cat_masks.append(np.asarray(left_mask, dtype=np.uint64))
        self.left[node], self.right[node] = l, r
        return l, r

    def freeze(self) -> "Tree":
        masks = (
            np.vstack(self.cat_masks)
            if self.cat_masks
            else np.zeros((0, _MASK_WORDS), dtype=np.uint64)
        )
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.int32),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
            cat_ref=np.array(self.cat_ref, dtype=np.int32),
            cat_masks=masks,
            cardinalities=self.cards,
        )


@dataclass(frozen=True)
class Tree:
    """Immutable flat binary tree; node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cat_ref: np.ndarray
    cat_masks: np.ndarray
    cardinalities: np.ndarray = field(repr=False)

    @staticmethod
    def single_leaf(cardinalities: np.ndarray, value: float = 0.0) -> "Tree":
        b = _TreeBuilder(cardinalities)
        b.add_leaf(value)
        return b.freeze()

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature == LEAF)

    def max_leaf_value(self) -> float:
        return float(self.value[self.feature == LEAF].max())

    def route(self, x: np.ndarray) -> int:
        """Leaf node id containing the bin row ``x``."""
        node = 0
        while self.feature[node] != LEAF:
            f = self.feature[node]
            b = int(x[f])
            if self.cat_ref[node] >= 0:
                mask = self.cat_masks[self.cat_ref[node]]
                go_left = (int(mask[b >> 6]) >> (b & 63)) & 1
            else:
                go_left = b <= self.threshold[node]
            node = self.left[node] if go_left else self.right[node]
        return node

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.value[self.route(x)])

    def route_many(self, rows: np.ndarray) -> np.ndarray:
        from ._engine import route_rows

        return route_rows(self.feature, self.threshold, self.left, self.right,
                          self.cat_ref, self.cat_masks, np.ascontiguousarray(rows, np.uint8))

    def evaluate_many(self, rows: np.ndarray) -> np.ndarray:
        return self.value[self.route_many(rows)]

    def conditional_slice(
        self, x: np.ndarray, dim: int, count_visits: bool = False
    ) -> np.ndarray | tuple[np.ndarray, int]:
        """Tree values along one dimension, all other coordinates held at ``x``.

        Entry ``b`` equals ``evaluate`` with ``x[dim] = b``. A single
        traversal descends both children only at splits on ``dim``.
        """
        card = int(self.cardinalities[dim])
        out = np.zeros(card, dtype=np.float64)
        full = np.ones(card, dtype=bool)
        visits = 0
        stack: list[tuple[int, np.ndarray]] = [(0, full)]
        while stack:
            node, admitted = stack.pop()
            visits += 1
            f = self.feature[node]
            if f == LEAF:
                out[admitted] = self.value[node]
                continue
            if f == dim:
                if self.cat_ref[node] >= 0:
                    members = np.zeros(card, dtype=bool)
                    members[mask_members(self.cat_masks[self.cat_ref[node]], card)] = True
                else:
                    members = np.zeros(card, dtype=bool)
                    members[: self.threshold[node] + 1] = True
                left_adm = admitted & members
                right_adm = admitted & ~members
                if right_adm.any():
                    stack.append((self.right[node], right_adm))
                if left_adm.any():
                    stack.append((self.left[node], left_adm))
                continue
            b = int(x[f])
            if self.cat_ref[node] >= 0:
                mask = self.cat_masks[self.cat_ref[node]]
                go_left = (int(mask[b >> 6]) >> (b & 63)) & 1
            else:
                go_left = b <= self.threshold[node]
            stack.append((self.left[node] if go_left else self.right[node], admitted))
        if count_visits:
            return out, visits
        return out

    def leaf_regions(self) -> list[tuple[Region, float]]:
        """All (region, leaf value) pairs; the regions partition the domain."""
        out: list[tuple[Region, float]] = []
        root_masks = [np.ones(c, dtype=bool) for c in self.cardinalities]
        stack: list[tuple[int, list[np.ndarray]]] = [(0, root_masks)]
        while stack:
            node, masks = stack.pop()
            f = self.feature[node]
            if f == LEAF:
                out.append((Region(masks), float(self.value[node])))
                continue
            card = int(self.cardinalities[f])
            if self.cat_ref[node] >= 0:
                members = np.zeros(card, dtype=bool)
                members[mask_members(self.cat_masks[self.cat_ref[node]], card)] = True
            else:
                members = np.zeros(card, dtype=bool)
                members[: self.threshold[node] + 1] = True
            left_masks = list(masks)
            left_masks[f] = masks[f] & members
            right_masks = list(masks)
            right_masks[f] = masks[f] & ~members
            stack.append((self.right[node], right_masks))
            stack.append((self.left[node], left_masks))
        return out
