"""Exhaustive reference implementations used to validate the fast paths.

The tree-growth oracle re-derives every quantity by direct row filtering and
linear scans over all leaves and candidates; no histograms, heaps or
cumulative sums. It shares only the contract conventions with the production
grower: candidate spaces, admissibility checks, tie-breaking order and the
relative gain-noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REL_TOL = 1e-12


def _term(p: float, q: float, rule: str) -> float:
    if p == 0.0:
        return 0.0
    return p * np.log(p / q) if rule == "kl" else p * p / q


@dataclass
class OracleLeaf:
    node_id: int
    admitted: list[np.ndarray]  # sorted admitted bins per dim
    data_idx: np.ndarray
    model_idx: np.ndarray | None
    p: float
    q: float


@dataclass
class OracleSplit:
    node_id: int
    feature: int
    is_cat: bool
    threshold: int
    left_cats: frozenset
    gain: float


@dataclass
class OracleResult:
    splits: list[OracleSplit] = field(default_factory=list)
    leaves: list[OracleLeaf] = field(default_factory=list)


def oracle_grow(data: np.ndarray, model_rows: np.ndarray | None, cards, kinds,
                *, max_leaves: int, min_data: int = 1, min_model: int = 1,
                max_ratio: float = np.inf, rule: str = "chi2",
                volume_mode: bool = False) -> OracleResult:
    """Best-first growth by brute force.

    ``model_rows`` gives count-based model masses; ``volume_mode`` replaces
    them with region volumes (density-tree criteria). ``rule`` is "chi2"
    (also the ISE analogue) or "kl".
    """
    data = np.asarray(data)
    n = len(data)
    cards = np.asarray(cards)
    if volume_mode:
        model_rows = None
        M = 0
    else:
        model_rows = np.asarray(model_rows)
        M = len(model_rows)

    def region_volume(admitted) -> float:
        v = 1.0
        for a in admitted:
            v *= float(len(a))
        return v

    root = OracleLeaf(
        node_id=0, admitted=[np.arange(c) for c in cards],
        data_idx=np.arange(n), model_idx=None if volume_mode else np.arange(M),
        p=1.0, q=region_volume([np.arange(c) for c in cards]) if volume_mode else 1.0)
    leaves: list[OracleLeaf] = [root]
    result = OracleResult()
    next_id = 1

    def leaf_masses_for(leaf: OracleLeaf, f: int, members: np.ndarray):
        lut = np.zeros(cards[f], dtype=bool)
        lut[members] = True
        d_in = lut[data[leaf.data_idx, f]]
        ndl = int(d_in.sum())
        pl = ndl / n
        if volume_mode:
            v_other = 1.0
            for j, a in enumerate(leaf.admitted):
                if j != f:
                    v_other *= float(len(a))
            ql = len(members) * v_other
            nml = -1
        else:
            m_in = lut[model_rows[leaf.model_idx, f]]
            nml = int(m_in.sum())
            ql = nml / M
        return pl, ql, ndl, nml

    def candidate_gain(leaf, pl, ql, pr, qr, ndl, ndr, nml, nmr):
        if ndl < min_data or ndr < min_data:
            return None
        if not volume_mode and (nml < min_model or nmr < min_model):
            return None
        if ql <= 0.0 or qr <= 0.0:
            return None
        if pl > max_ratio * ql or pr > max_ratio * qr:
            return None
        parent_term = _term(leaf.p, leaf.q, rule)
        gain = _term(pl, ql, rule) + _term(pr, qr, rule) - parent_term
        if gain <= REL_TOL * abs(parent_term):
            return None
        return gain

    def best_for_leaf(leaf: OracleLeaf):
        best = None
        for f in range(len(cards)):
            adm = leaf.admitted[f]
            if len(adm) < 2:
                continue
            if kinds[f] == "numeric":
                for t in adm[:-1]:
                    members = adm[adm <= t]
                    pl, ql, ndl, nml = leaf_masses_for(leaf, f, members)
                    pr = (len(leaf.data_idx) - ndl) / n
                    ndr = len(leaf.data_idx) - ndl
                    if volume_mode:
                        qr, nmr = leaf.q - ql, -1
                    else:
                        nmr = len(leaf.model_idx) - nml
                        qr = nmr / M
                    gain = candidate_gain(leaf, pl, ql, pr, qr, ndl, ndr, nml, nmr)
                    if gain is not None and (best is None or gain > best[0]):
                        best = (gain, f, False, int(t), None)
            else:
                counts_p = np.array([(data[leaf.data_idx, f] == c).sum() for c in adm])
                pcc = counts_p / n
                if volume_mode:
                    v_other = 1.0
                    for j, a in enumerate(leaf.admitted):
                        if j != f:
                            v_other *= float(len(a))
                    qcc = np.full(len(adm), v_other)
                else:
                    counts_q = np.array([(model_rows[leaf.model_idx, f] == c).sum()
                                         for c in adm])
                    qcc = counts_q / M
                ratio = np.where(qcc > 0, pcc / np.where(qcc > 0, qcc, 1.0),
                                 np.where(pcc > 0, np.inf, 0.0))
                order = np.lexsort((adm, ratio))
                sorted_cats = adm[order]
                for k in range(1, len(sorted_cats)):
                    members = sorted_cats[:k]
                    pl, ql, ndl, nml = leaf_masses_for(leaf, f, members)
                    pr = (len(leaf.data_idx) - ndl) / n
                    ndr = len(leaf.data_idx) - ndl
                    if volume_mode:
                        qr, nmr = leaf.q - ql, -1
                    else:
                        nmr = len(leaf.model_idx) - nml
                        qr = nmr / M
                    gain = candidate_gain(leaf, pl, ql, pr, qr, ndl, ndr, nml, nmr)
                    if gain is not None and (best is None or gain > best[0]):
                        best = (gain, f, True, -1, sorted_cats[:k].copy())
        return best

    while len(leaves) < max_leaves:
        chosen = None
        chosen_leaf_pos = -1
        for pos, leaf in enumerate(leaves):  # creation order
            cand = best_for_leaf(leaf)
            if cand is not None and (chosen is None or cand[0] > chosen[0]):
                chosen = cand
                chosen_leaf_pos = pos
        if chosen is None:
            break
        gain, f, is_cat, thr, left_cats = chosen
        leaf = leaves.pop(chosen_leaf_pos)
        adm = leaf.admitted[f]
        members = left_cats if is_cat else adm[adm <= thr]
        lut = np.zeros(cards[f], dtype=bool)
        lut[members] = True
        d_in = lut[data[leaf.data_idx, f]]
        pl, ql, ndl, nml = leaf_masses_for(leaf, f, members)
        l_adm = list(leaf.admitted)
        l_adm[f] = np.sort(np.asarray(members))
        r_adm = list(leaf.admitted)
        r_adm[f] = np.setdiff1d(adm, members)
        if volume_mode:
            l_model, r_model = None, None
            qr = leaf.q - ql
        else:
            m_in = lut[model_rows[leaf.model_idx, f]]
            l_model, r_model = leaf.model_idx[m_in], leaf.model_idx[~m_in]
            qr = len(r_model) / M
        left = OracleLeaf(next_id, l_adm, leaf.data_idx[d_in], l_model, pl, ql)
        right = OracleLeaf(next_id + 1, r_adm, leaf.data_idx[~d_in], r_model,
                           (len(leaf.data_idx) - ndl) / n, qr)
        next_id += 2
        result.splits.append(OracleSplit(
            node_id=leaf.node_id, feature=f, is_cat=is_cat, threshold=thr,
            left_cats=frozenset(int(c) for c in members) if is_cat else frozenset(),
            gain=gain))
        leaves.append(left)
        leaves.append(right)
    result.leaves = leaves
    return result


def splits_from_tree(tree) -> list:
    """(node_id, feature, is_cat, threshold, left-cat set) in application order.

    The grower appends two nodes per split, so split application order is
    the creation order of left children.
    """
    split_nodes = [i for i in range(tree.n_nodes) if tree.feature[i] >= 0]
    split_nodes.sort(key=lambda i: tree.left[i])
    out = []
    for i in split_nodes:
        is_cat = tree.cat_ref[i] >= 0
        if is_cat:
            card = int(tree.cardinalities[tree.feature[i]])
            mask = tree.cat_masks[tree.cat_ref[i]]
            cats = frozenset(b for b in range(card)
                             if (int(mask[b >> 6]) >> (b & 63)) & 1)
        else:
            cats = frozenset()
        out.append((i, int(tree.feature[i]), is_cat,
                    int(tree.threshold[i]) if not is_cat else -1, cats))
    return out


def oracle_split_sequence(result: OracleResult) -> list:
    return [(s.node_id, s.feature, s.is_cat, s.threshold, s.left_cats)
            for s in result.splits]
