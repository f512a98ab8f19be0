"""Energy-based boosting: second-order tree fitting, line search and the training loop.

Each round fits a piecewise-constant energy increment by maximizing a
chi-square (or KL) gain between empirical masses and current-model masses,
line-searches the step size on the exact per-round likelihood increase, and
shrinks it by a fixed factor.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._engine import PackedModel, pack_model
from .data import DiscretizedDataset, Schema, bin_bounds, empirical_marginals
from .errors import ZeroModelMass
from .tree import Region, Tree, _TreeBuilder, make_cat_mask

NRGBOOST = "nrgboost"
GREEDY_KL = "greedy_kl"
GREEDY_CHI2 = "greedy_chi2"
UPDATE_RULES = (NRGBOOST, GREEDY_KL, GREEDY_CHI2)

# relative float-noise floor for split gains; floor for log-of-zero ratios
GAIN_REL_TOL = 1e-12
EPS_RATIO = 1e-12

_CHI2 = 0
_KL = 1


@dataclass(frozen=True)
class InitialModel:
    """Mixture of a uniform distribution and the product of training marginals."""

    marginals: list[np.ndarray]
    uniform_mix: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.uniform_mix <= 1.0:
            raise ValueError("uniform_mix must be in [0, 1]")
        for m in self.marginals:
            if abs(float(m.sum()) - 1.0) > 1e-9 or (m < 0).any():
                raise ValueError("marginals must be probability vectors")

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([len(m) for m in self.marginals], dtype=np.int64)

    def log_density(self, x: np.ndarray) -> float:
        cards = self.cardinalities
        log_u = -float(np.sum(np.log(cards)))
        with np.errstate(divide="ignore"):
            log_m = float(sum(np.log(m[int(b)]) for m, b in zip(self.marginals, x)))
        mix = self.uniform_mix
        a = math.log(mix) + log_u if mix > 0 else -np.inf
        b = math.log1p(-mix) + log_m if mix < 1 else -np.inf
        return float(np.logaddexp(a, b))

    def region_mass(self, region: Region) -> float:
        """Exact probability of a region under the mixture (product measures)."""
        u_part, m_part = 1.0, 1.0
        for mask, marg in zip(region.masks, self.marginals):
            u_part *= mask.sum() / len(mask)
            m_part *= float(marg[mask].sum())
        return self.uniform_mix * u_part + (1.0 - self.uniform_mix) * m_part

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact iid draws; each row picks the uniform or marginal component."""
        cards = self.cardinalities
        rows = np.empty((n, len(cards)), dtype=np.uint8)
        from_uniform = rng.random(n) < self.uniform_mix
        for j, marg in enumerate(self.marginals):
            u = rng.random(n)
            uni = np.minimum((u * cards[j]).astype(np.int64), cards[j] - 1)
            cum = np.cumsum(marg)
            mar = np.minimum(np.searchsorted(cum, u, side="right"), cards[j] - 1)
            rows[:, j] = np.where(from_uniform, uni, mar).astype(np.uint8)
        return rows


class EnergyModel:
    """Initial log-density plus an ordered list of (tree, effective step) stages."""

    def __init__(self, schema: Schema, initial: InitialModel,
                 stages: list[tuple[Tree, float]] | None = None):
        self.schema = schema
        self.initial = initial
        self.stages: list[tuple[Tree, float]] = list(stages or [])
        self._packed: PackedModel | None = None

    def add_stage(self, tree: Tree, effective_step: float) -> None:
        self.stages.append((tree, float(effective_step)))
        self._packed = None

    def truncated(self, n_stages: int) -> "EnergyModel":
        return EnergyModel(self.schema, self.initial, self.stages[:n_stages])

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def packed(self) -> PackedModel:
        if self._packed is None:
            self._packed = pack_model(self.schema, self.initial, self.stages)
        return self._packed


def init_model(data: DiscretizedDataset, uniform_mix: float) -> EnergyModel:
    """Model with an empty stage list over the data's empirical marginals."""
    initial = InitialModel(marginals=empirical_marginals(data), uniform_mix=uniform_mix)
    return EnergyModel(schema=data.schema, initial=initial)


@dataclass(frozen=True)
class BoostConfig:
    num_rounds: int = 200
    max_leaves: int = 256
    max_ratio: float = 2.0
    shrinkage: float = 0.15
    pool_size: int = 80_000
    p_refresh: float = 0.1
    min_data_in_leaf: int = 1
    min_model_in_leaf: int = 1
    uniform_mix: float = 0.1
    update_rule: str = NRGBOOST
    line_search_grid: tuple[int, float, float] = (101, 1e-3, 10.0)
    early_stopping: tuple[int, str] = (20, "auto")

    def __post_init__(self) -> None:
        if self.num_rounds < 0 or self.max_leaves < 1 or self.pool_size < 1:
            raise ValueError("num_rounds, max_leaves and pool_size must be positive")
        if self.max_ratio <= 1.0:
            raise ValueError("max_ratio must exceed 1")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")
        if not 0.0 <= self.p_refresh <= 1.0:
            raise ValueError("p_refresh must be in [0, 1]")
        if not 0.0 <= self.uniform_mix <= 1.0:
            raise ValueError("uniform_mix must be in [0, 1]")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")
        count, lo, hi = self.line_search_grid
        if count < 1 or not 0 < lo < hi:
            raise ValueError("invalid line_search_grid")


@dataclass(frozen=True)
class LeafStats:
    """Empirical and model probability mass of one leaf."""

    p: float
    q: float
    n_data: int
    n_model: int
    volume: float


def split_gain(parent: LeafStats, left: LeafStats, right: LeafStats,
               rule: str = NRGBOOST) -> float:
    """Gain of splitting a leaf under the boosting rule's criterion.

    Conventions: 0^2/0 = 0 and 0*log(0/q) = 0.
    """
    if abs(left.p + right.p - parent.p) > 1e-12 or abs(left.q + right.q - parent.q) > 1e-12:
        raise ValueError("children must partition the parent's masses")

    def term(p: float, q: float) -> float:
        if p == 0.0:
            return 0.0
        if rule == GREEDY_KL:
            return p * math.log(p / q)
        return p * p / q

    return term(left.p, left.q) + term(right.p, right.q) - term(parent.p, parent.q)


def leaf_value(p: float, q: float, rule: str = NRGBOOST, max_ratio: float = np.inf) -> float:
    """Energy increment for a leaf with data mass p and model mass q."""
    if q <= 0.0:
        raise ZeroModelMass(f"leaf has no model mass (p={p})")
    ratio = min(p / q, max_ratio)
    if rule == NRGBOOST:
        return ratio - 1.0
    return math.log(max(ratio, EPS_RATIO))


# ---------------------------------------------------------------------------
# best-first grower, shared by the boosting rules and the density trees


@njit(cache=True)
def _count_hists(vals, maxcard):
    m, d = vals.shape
    out = np.zeros((d, maxcard), dtype=np.int64)
    for i in range(m):
        for j in range(d):
            out[j, np.int64(vals[i, j])] += 1
    return out


@njit(cache=True)
def _weighted_hists(vals, weights, maxcard):
    m, d = vals.shape
    counts = np.zeros((d, maxcard), dtype=np.int64)
    mass = np.zeros((d, maxcard), dtype=np.float64)
    for i in range(m):
        for j in range(d):
            b = np.int64(vals[i, j])
            counts[j, b] += 1
            mass[j, b] += weights[i]
    return counts, mass


@njit(cache=True)
def _scan_split(pc, qc, qm, use_counts, start, stop, n, M, pp, qp, ndp, nmp,
                min_data, min_model, max_ratio, rule, rel_tol, require_q_pos):
    """Scan cumulative split points over positions [start, stop-1).

    pc/qc/qm are per-position data counts, model counts and model masses;
    positions are bins for ordered features or ratio-sorted categories.
    Returns the first maximizer among admissible candidates whose gain
    exceeds the float-noise floor rel_tol * |parent term|.
    """
    if rule == _KL:
        parent_term = pp * np.log(pp / qp) if pp > 0.0 else 0.0
    else:
        parent_term = pp * pp / qp if pp > 0.0 else 0.0
    best_gain = rel_tol * abs(parent_term)
    found = False
    bt = -1
    bpl = bql = bpr = bqr = 0.0
    bndl = bnml = 0
    cp = np.int64(0)
    cq = np.int64(0)
    cqm = 0.0
    for t in range(start, stop - 1):
        cp += pc[t]
        if use_counts:
            cq += qc[t]
        else:
            cqm += qm[t]
        ndl = cp
        ndr = ndp - cp
        if ndl < min_data or ndr < min_data:
            continue
        pl = cp / n
        pr = ndr / n
        if use_counts:
            nml = cq
            nmr = nmp - cq
            if nml < min_model or nmr < min_model:
                continue
            ql = cq / M
            qr = nmr / M
        else:
            nml = -1
            ql = cqm
            qr = qp - cqm
            if qr < 0.0:
                qr = 0.0
        if require_q_pos and (ql <= 0.0 or qr <= 0.0):
            continue
        if (pl > 0.0 and ql <= 0.0) or (pr > 0.0 and qr <= 0.0):
            continue
        if pl > max_ratio * ql or pr > max_ratio * qr:
            continue
        if rule == _KL:
            gl = pl * np.log(pl / ql) if pl > 0.0 else 0.0
            gr = pr * np.log(pr / qr) if pr > 0.0 else 0.0
        else:
            gl = pl * pl / ql if pl > 0.0 else 0.0
            gr = pr * pr / qr if pr > 0.0 else 0.0
        gain = gl + gr - parent_term
        if gain > best_gain:
            best_gain = gain
            found = True
            bt = t
            bpl, bql, bpr, bqr = pl, ql, pr, qr
            bndl, bnml = ndl, nml
    return found, bt, best_gain, bpl, bql, bpr, bqr, bndl, bnml


class _RowsSide:
    """Model mass estimated from rows: counts / total (uniform weights)."""

    def __init__(self, values: np.ndarray):
        self.values = np.ascontiguousarray(values, dtype=np.uint8)
        self.M = len(values)
        self.use_counts = True

    def root_state(self):
        return np.arange(self.M, dtype=np.int64), 1.0, self.M

    def hists(self, idx, maxcard):
        counts = _count_hists(self.values[idx], maxcard)
        return counts, None

    def split_idx(self, idx, cond_fn):
        cond = cond_fn(self.values[idx])
        return idx[cond], idx[~cond]


class _WeightedRowsSide:
    """Model mass from arbitrarily weighted rows (e.g. exact enumerations)."""

    def __init__(self, values: np.ndarray, weights: np.ndarray):
        self.values = np.ascontiguousarray(values, dtype=np.uint8)
        self.weights = np.asarray(weights, dtype=np.float64)
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError("model-row weights must sum to 1")
        self.M = len(values)
        self.use_counts = False

    def root_state(self):
        return np.arange(self.M, dtype=np.int64), 1.0, self.M

    def hists(self, idx, maxcard):
        counts, mass = _weighted_hists(self.values[idx], self.weights[idx], maxcard)
        return counts, mass

    def split_idx(self, idx, cond_fn):
        cond = cond_fn(self.values[idx])
        return idx[cond], idx[~cond]


class _ExactQ0Side:
    """Closed-form model mass from the mixture-of-products initial model."""

    def __init__(self, initial: InitialModel):
        self.initial = initial
        self.use_counts = False

    def bin_masses(self, masks: list[np.ndarray], f: int) -> np.ndarray:
        mix = self.initial.uniform_mix
        u_other, m_other = 1.0, 1.0
        for j, (mask, marg) in enumerate(zip(masks, self.initial.marginals)):
            if j == f:
                continue
            u_other *= mask.sum() / len(mask)
            m_other *= float(marg[mask].sum())
        marg_f = self.initial.marginals[f]
        card = len(marg_f)
        out = np.zeros(card, dtype=np.float64)
        adm = masks[f]
        out[adm] = mix * u_other / card + (1.0 - mix) * m_other * marg_f[adm]
        return out


class _VolumeSide:
    """Model-mass analogue for density trees: per-bin volume (unnormalized)."""

    def __init__(self, cardinalities: np.ndarray):
        self.cards = cardinalities
        self.use_counts = False

    def bin_masses(self, masks: list[np.ndarray], f: int) -> np.ndarray:
        v_other = 1.0
        for j, mask in enumerate(masks):
            if j != f:
                v_other *= float(mask.sum())
        out = np.zeros(int(self.cards[f]), dtype=np.float64)
        out[masks[f]] = v_other
        return out


@dataclass
class _GrowNode:
    node_id: int
    masks: list[np.ndarray]
    data_idx: np.ndarray
    model_idx: np.ndarray | None
    p: float
    q: float
    n_data: int
    n_model: int


@dataclass(frozen=True)
class _Candidate:
    gain: float
    feature: int
    is_cat: bool
    threshold: int
    left_cats: np.ndarray | None
    left: tuple  # (p, q, n_data, n_model)
    right: tuple


class _Grower:
    """Best-first growth shared by boosting trees and density trees.

    Ties are broken deterministically: higher gain first, then earlier node,
    lower feature index, lower threshold / shorter category prefix.
    """

    def __init__(self, data: DiscretizedDataset, side, *, max_leaves: int,
                 min_data: int, min_model: int, max_ratio: float, rule: int,
                 require_q_pos: bool, data_idx: np.ndarray | None = None,
                 feature_sampler=None):
        self.values = data.values
        self.schema = data.schema
        self.cards = self.schema.cardinalities
        self.kinds = self.schema.kinds
        self.maxcard = int(self.cards.max())
        self.side = side
        self.max_leaves = max_leaves
        self.min_data = min_data
        self.min_model = min_model
        self.max_ratio = max_ratio
        self.rule = rule
        self.require_q_pos = require_q_pos
        self.feature_sampler = feature_sampler
        self.data_idx0 = (np.arange(len(self.values), dtype=np.int64)
                          if data_idx is None else np.asarray(data_idx, dtype=np.int64))
        self.n = len(self.data_idx0)
        self.builder = _TreeBuilder(self.cards)
        self.leaves: dict[int, _GrowNode] = {}
        self.realized_gains: list[float] = []

    def _features(self) -> np.ndarray:
        if self.feature_sampler is None:
            return np.arange(len(self.cards))
        return np.sort(np.asarray(self.feature_sampler(), dtype=np.int64))

    def _node_best(self, node: _GrowNode) -> _Candidate | None:
        dummy_i = np.zeros(0, dtype=np.int64)
        dummy_f = np.zeros(0, dtype=np.float64)
        hp = _count_hists(self.values[node.data_idx], self.maxcard)
        if isinstance(self.side, (_RowsSide, _WeightedRowsSide)):
            hq_counts, hq_mass = self.side.hists(node.model_idx, self.maxcard)
            M = self.side.M
        else:
            hq_counts, hq_mass, M = None, None, 1
        use_counts = self.side.use_counts
        best: _Candidate | None = None
        for f in self._features():
            mask = node.masks[f]
            n_adm = int(mask.sum())
            if n_adm < 2:
                continue
            pc = hp[f]
            if use_counts:
                qc, qm = hq_counts[f], dummy_f
            elif hq_mass is not None:
                qc, qm = dummy_i, hq_mass[f]
            else:
                qc, qm = dummy_i, self.side.bin_masses(node.masks, f)
            if self.kinds[f] == 0:
                idx = np.flatnonzero(mask)
                lo, hi = int(idx[0]), int(idx[-1]) + 1
                found, t, gain, pl, ql, pr, qr, ndl, nml = _scan_split(
                    pc, qc if use_counts else dummy_i, qm, use_counts, lo, hi,
                    self.n, M, node.p, node.q, node.n_data, node.n_model,
                    self.min_data, self.min_model, self.max_ratio, self.rule,
                    GAIN_REL_TOL, self.require_q_pos)
                if found and (best is None or gain > best.gain):
                    best = _Candidate(gain, int(f), False, t, None,
                                      (pl, ql, ndl, nml),
                                      (pr, qr, node.n_data - ndl,
                                       node.n_model - nml if nml >= 0 else -1))
            else:
                cats = np.flatnonzero(mask)
                pcc = pc[cats].astype(np.float64) / self.n
                if use_counts:
                    qcc = qc[cats].astype(np.float64) / M
                else:
                    qcc = qm[cats]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(qcc > 0, pcc / np.where(qcc > 0, qcc, 1.0),
                                     np.where(pcc > 0, np.inf, 0.0))
                order = np.lexsort((cats, ratio))
                sorted_cats = cats[order]
                found, k, gain, pl, ql, pr, qr, ndl, nml = _scan_split(
                    pc[sorted_cats].astype(np.int64),
                    qc[sorted_cats].astype(np.int64) if use_counts else dummy_i,
                    qm[sorted_cats] if not use_counts else dummy_f,
                    use_counts, 0, len(sorted_cats),
                    self.n, M, node.p, node.q, node.n_data, node.n_model,
                    self.min_data, self.min_model, self.max_ratio, self.rule,
                    GAIN_REL_TOL, self.require_q_pos)
                if found and (best is None or gain > best.gain):
                    best = _Candidate(gain, int(f), True, -1, sorted_cats[: k + 1],
                                      (pl, ql, ndl, nml),
                                      (pr, qr, node.n_data - ndl,
                                       node.n_model - nml if nml >= 0 else -1))
        return best

    def _apply(self, node: _GrowNode, cand: _Candidate) -> tuple[_GrowNode, _GrowNode]:
        f = cand.feature
        card = int(self.cards[f])
        if cand.is_cat:
            member = np.zeros(card, dtype=bool)
            member[cand.left_cats] = True
            cond_fn = lambda vals: member[vals[:, f]]
            l_id, r_id = self.builder.split_categorical(node.node_id, f,
                                                        make_cat_mask(cand.left_cats))
        else:
            t = cand.threshold
            member = np.zeros(card, dtype=bool)
            member[: t + 1] = True
            cond_fn = lambda vals: vals[:, f] <= t
            l_id, r_id = self.builder.split_numeric(node.node_id, f, t)

        d_cond = cond_fn(self.values[node.data_idx])
        dl, dr = node.data_idx[d_cond], node.data_idx[~d_cond]
        if node.model_idx is not None:
            ml, mr = self.side.split_idx(node.model_idx, cond_fn)
        else:
            ml = mr = None
        lmasks = list(node.masks)
        lmasks[f] = node.masks[f] & member
        rmasks = list(node.masks)
        rmasks[f] = node.masks[f] & ~member
        pl, ql, ndl, nml = cand.left
        pr, qr, ndr, nmr = cand.right
        left = _GrowNode(l_id, lmasks, dl, ml, pl, ql, ndl, nml)
        right = _GrowNode(r_id, rmasks, dr, mr, pr, qr, ndr, nmr)
        return left, right

    def grow(self) -> tuple[Tree, list[tuple[int, LeafStats, Region]]]:
        root_id = self.builder.add_leaf()
        masks = [np.ones(c, dtype=bool) for c in self.cards]
        if isinstance(self.side, (_RowsSide, _WeightedRowsSide)):
            model_idx, q0, n_model = self.side.root_state()
        else:
            model_idx, n_model = None, -1
            q0 = 1.0 if isinstance(self.side, _ExactQ0Side) else float(np.prod(self.cards, dtype=np.float64))
        root = _GrowNode(root_id, masks, self.data_idx0, model_idx, 1.0, q0,
                         self.n, n_model)
        self.leaves[root_id] = root
        heap: list[tuple[float, int, _Candidate]] = []
        cand = self._node_best(root)
        if cand is not None:
            heapq.heappush(heap, (-cand.gain, root_id, cand))
        while len(self.leaves) < self.max_leaves and heap:
            neg_gain, nid, cand = heapq.heappop(heap)
            node = self.leaves.pop(nid)
            left, right = self._apply(node, cand)
            self.realized_gains.append(-neg_gain)
            for child in (left, right):
                self.leaves[child.node_id] = child
                c = self._node_best(child)
                if c is not None:
                    heapq.heappush(heap, (-c.gain, child.node_id, c))
        tree = self.builder.freeze()
        out = []
        for nid in sorted(self.leaves):
            node = self.leaves[nid]
            region = Region(node.masks)
            out.append((nid, LeafStats(node.p, node.q, node.n_data, node.n_model,
                                       region.volume()), region))
        return tree, out


def _rule_ids(update_rule: str) -> int:
    return _KL if update_rule == GREEDY_KL else _CHI2


def _make_side(model_side, schema: Schema):
    from .sampling import SamplePool

    if isinstance(model_side, InitialModel):
        return _ExactQ0Side(model_side)
    if isinstance(model_side, SamplePool):
        return _RowsSide(model_side.rows)
    if isinstance(model_side, tuple):
        rows, weights = model_side
        return _WeightedRowsSide(rows, weights)
    return _RowsSide(np.asarray(model_side))


@dataclass(frozen=True)
class FitResult:
    """Fitted tree with per-leaf masses (in ``tree.leaf_ids`` order) and the
    realized split gains in application order."""

    tree: Tree
    leaf_stats: list[LeafStats]
    gains: list[float]


def fit_tree_with_stats(data: DiscretizedDataset, model_side,
                        config: BoostConfig) -> FitResult:
    """Fit one boosting tree; leaf values are set via ``leaf_value``."""
    side = _make_side(model_side, data.schema)
    grower = _Grower(
        data, side, max_leaves=config.max_leaves,
        min_data=config.min_data_in_leaf, min_model=config.min_model_in_leaf,
        max_ratio=config.max_ratio, rule=_rule_ids(config.update_rule),
        require_q_pos=True)
    _tree_zero, leaf_info = grower.grow()
    for nid, stats, _region in leaf_info:
        grower.builder.set_leaf_value(
            nid, leaf_value(stats.p, stats.q, config.update_rule, config.max_ratio))
    tree = grower.builder.freeze()
    stats = [s for _nid, s, _r in leaf_info]
    return FitResult(tree=tree, leaf_stats=stats, gains=list(grower.realized_gains))


def fit_tree(data: DiscretizedDataset, model_side, config: BoostConfig) -> Tree:
    """Greedy best-first tree under the second-order boosting objective."""
    return fit_tree_with_stats(data, model_side, config).tree


def line_search(tree: Tree | np.ndarray, data_masses: np.ndarray,
                model_masses: np.ndarray,
                grid: tuple[int, float, float] = (101, 1e-3, 10.0)
                ) -> tuple[float, float]:
    """Maximize the exact likelihood increase over a step-size grid.

    The objective is ``a*sum(w P) - log sum(Q exp(a w))``, normalized so that
    a = 0 scores exactly 0; a = 0 is always a candidate.
    """
    if isinstance(tree, Tree):
        w = tree.value[tree.leaf_ids]
    else:
        w = np.asarray(tree, dtype=np.float64)
    P = np.asarray(data_masses, dtype=np.float64)
    Q = np.asarray(model_masses, dtype=np.float64)
    if abs(P.sum() - 1.0) > 1e-9 or abs(Q.sum() - 1.0) > 1e-9:
        raise ValueError("leaf masses must each sum to 1")
    count, lo, hi = grid
    alphas = np.concatenate([[0.0], np.logspace(np.log10(lo), np.log10(hi), count)])
    keep = Q > 0
    logq = np.log(Q[keep])
    wk = w[keep]
    lin = float(np.dot(w, P))

    def objective(a: float) -> float:
        z = logq + a * wk
        m = z.max()
        return a * lin - (m + np.log(np.sum(np.exp(z - m))))

    base = objective(0.0)
    best_a, best_obj = 0.0, 0.0
    for a in alphas[1:]:
        obj = objective(a) - base
        if obj > best_obj:
            best_a, best_obj = float(a), float(obj)
    return best_a, best_obj


@dataclass
class RoundReport:
    round_index: int
    gain: float
    alpha: float
    objective: float
    acceptance_rate: float
    n_refilled: int
    val_metric: float = float("nan")


def boost_round(model: EnergyModel, pool, data: DiscretizedDataset,
                config: BoostConfig, round_index: int, rng: np.random.Generator):
    """One training round: obtain model masses, fit a tree, line-search, update.

    Round 1 uses exact initial-model masses (no sampling); round 2 builds the
    pool by rejection sampling against the initial model; later rounds refresh
    the existing pool.
    """
    from .sampling import init_pool, refresh_pool

    acceptance = 1.0
    refilled = 0
    if round_index <= 1:
        model_side = model.initial
    elif round_index == 2:
        pool = init_pool(model, config.pool_size, rng)
        acceptance = pool.acceptance_rate
        refilled = config.pool_size
        model_side = pool
    else:
        tree_prev, step_prev = model.stages[-1]
        pool = refresh_pool(pool, model, tree_prev, step_prev, config.p_refresh, rng)
        acceptance = pool.acceptance_rate
        refilled = pool.n_refilled
        model_side = pool

    fit = fit_tree_with_stats(data, model_side, config)
    tree, stats = fit.tree, fit.leaf_stats
    P = np.array([s.p for s in stats])
    Q = np.array([s.q for s in stats])
    if config.update_rule == GREEDY_KL:
        gain = float(np.sum(P[P > 0] * np.log(P[P > 0] / Q[P > 0])))
    else:
        gain = float(np.sum(P[P > 0] ** 2 / Q[P > 0]) - 1.0)
    alpha, objective = line_search(tree, P, Q, config.line_search_grid)
    model.add_stage(tree, config.shrinkage * alpha)
    report = RoundReport(round_index, gain, alpha, objective, acceptance, refilled)
    return model, pool, report


def _predict_target_scores(model: EnergyModel, rows: np.ndarray, target: int) -> np.ndarray:
    energies = model.packed().cond_energies(rows, target)
    m = energies.max(axis=1, keepdims=True)
    p = np.exp(energies - m)
    return p / p.sum(axis=1, keepdims=True)


def _validation_score(model: EnergyModel, val_data: DiscretizedDataset,
                      target: int, metric: str,
                      raw_targets: np.ndarray | None = None) -> float:
    """Discriminative quality of the target conditional on validation rows."""
    from . import metrics as _metrics

    spec = model.schema.features[target]
    probs = _predict_target_scores(model, val_data.values, target)
    truth_bins = val_data.values[:, target].astype(np.int64)
    if metric == "auto":
        if spec.kind == "numeric":
            metric = "r2"
        elif spec.cardinality == 2:
            metric = "auc"
        else:
            metric = "accuracy"
    if metric == "r2":
        bounds = bin_bounds(spec)
        mids = (bounds[:-1] + bounds[1:]) / 2.0
        preds = probs @ mids
        truth = raw_targets if raw_targets is not None else mids[truth_bins]
        return _metrics.r2(preds, truth)
    if metric == "auc":
        return _metrics.auc(probs[:, 1], truth_bins)
    if metric == "accuracy":
        return _metrics.accuracy(np.argmax(probs, axis=1), truth_bins)
    raise ValueError(f"unknown validation metric {metric!r}")


def train(data: DiscretizedDataset, val_data: DiscretizedDataset | None,
          config: BoostConfig, rng: np.random.Generator,
          val_raw_targets: np.ndarray | None = None,
          on_round=None) -> tuple[EnergyModel, list[RoundReport]]:
    """Run up to ``num_rounds`` boosting rounds with optional early stopping.

    With validation data and a target column, training stops once the
    validation metric has not improved for ``patience`` rounds and the model
    is truncated back to its best round. ``on_round`` is called with each
    RoundReport as it completes.
    """
    model = init_model(data, config.uniform_mix)
    pool = None
    history: list[RoundReport] = []
    patience, metric = config.early_stopping
    monitor = val_data is not None and data.schema.target_index is not None
    best_metric = -np.inf
    best_round = 0
    since_best = 0
    for t in range(1, config.num_rounds + 1):
        model, pool, report = boost_round(model, pool, data, config, t, rng)
        if monitor:
            score = _validation_score(model, val_data, data.schema.target_index,
                                      metric, val_raw_targets)
            report.val_metric = score
            if score > best_metric:
                best_metric, best_round, since_best = score, t, 0
            else:
                since_best += 1
        history.append(report)
        if on_round is not None:
            on_round(report)
        if monitor and since_best >= patience:
            break
    if monitor:
        model = model.truncated(best_round)
    return model, history
