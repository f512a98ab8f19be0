"""Compiled kernels: tree routing, per-dimension energy slices and Gibbs chains.

All kernels work on a flattened model: every stage tree's node arrays are
concatenated (child indices rebased), and the initial distribution is a
(log-marginals, uniform-mix) pair. Chains use an inline splitmix64 generator
seeded per chain, so parallel execution is bit-reproducible regardless of
thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _rand(state):
    state[0] = state[0] + _GAMMA
    return (_mix64(state[0]) >> U64(11)) * _INV53


@njit(cache=True, inline="always")
def _chain_seed(seed, i):
    return _mix64(seed + _GAMMA * U64(i + 1))


@njit(cache=True, inline="always")
def _lse2(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = a if a > b else b
    return m + np.log(np.exp(a - m) + np.exp(b - m))


@njit(cache=True, parallel=True)
def route_rows(tf, tt, tl, tr, tc, masks, rows):
    n = rows.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in prange(n):
        node = 0
        while tf[node] >= 0:
            f = tf[node]
            b = np.int64(rows[i, f])
            if tc[node] >= 0:
                w = masks[tc[node], b >> 6]
                go_left = (w >> U64(b & 63)) & U64(1)
            else:
                go_left = b <= tt[node]
            if go_left:
                node = tl[node]
            else:
                node = tr[node]
        out[i] = node
    return out


@njit(cache=True)
def _slice_ordered(tf, tt, tl, tr, tv, tc, masks, root, x, dim, card, scale,
                   diff, stk_node, stk_lo, stk_hi):
    """Add scale*w over each leaf's bin interval on `dim` into a diff array."""
    stk_node[0] = root
    stk_lo[0] = 0
    stk_hi[0] = card
    top = 1
    visits = 0
    while top > 0:
        top -= 1
        node = stk_node[top]
        lo = stk_lo[top]
        hi = stk_hi[top]
        while True:
            visits += 1
            f = tf[node]
            if f < 0:
                v = scale * tv[node]
                diff[lo] += v
                diff[hi] -= v
                break
            if f == dim:
                m = np.int64(tt[node]) + 1
                if m <= lo:
                    node = tr[node]
                elif m >= hi:
                    node = tl[node]
                else:
                    stk_node[top] = tr[node]
                    stk_lo[top] = m
                    stk_hi[top] = hi
                    top += 1
                    node = tl[node]
                    hi = m
                continue
            b = np.int64(x[f])
            if tc[node] >= 0:
                w = masks[tc[node], b >> 6]
                go_left = (w >> U64(b & 63)) & U64(1)
            else:
                go_left = b <= tt[node]
            if go_left:
                node = tl[node]
            else:
                node = tr[node]
    return visits


@njit(cache=True)
def _slice_cat(tf, tt, tl, tr, tv, tc, masks, root, x, dim, card, scale,
               e, stk_node, stk_mask):
    """Add scale*w at each admitted category of `dim` directly into `e`."""
    stk_node[0] = root
    for w in range(4):
        stk_mask[0, w] = ~U64(0)
    top = 1
    visits = 0
    while top > 0:
        top -= 1
        node = stk_node[top]
        m0 = stk_mask[top, 0]
        m1 = stk_mask[top, 1]
        m2 = stk_mask[top, 2]
        m3 = stk_mask[top, 3]
        while True:
            visits += 1
            f = tf[node]
            if f < 0:
                v = scale * tv[node]
                for b in range(card):
                    if b < 64:
                        w = m0
                    elif b < 128:
                        w = m1
                    elif b < 192:
                        w = m2
                    else:
                        w = m3
                    if (w >> U64(b & 63)) & U64(1):
                        e[b] += v
                break
            if f == dim:
                cm = tc[node]
                l0 = m0 & masks[cm, 0]
                l1 = m1 & masks[cm, 1]
                l2 = m2 & masks[cm, 2]
                l3 = m3 & masks[cm, 3]
                r0 = m0 & ~masks[cm, 0]
                r1 = m1 & ~masks[cm, 1]
                r2 = m2 & ~masks[cm, 2]
                r3 = m3 & ~masks[cm, 3]
                if r0 | r1 | r2 | r3:
                    stk_node[top] = tr[node]
                    stk_mask[top, 0] = r0
                    stk_mask[top, 1] = r1
                    stk_mask[top, 2] = r2
                    stk_mask[top, 3] = r3
                    top += 1
                if l0 | l1 | l2 | l3:
                    node = tl[node]
                    m0, m1, m2, m3 = l0, l1, l2, l3
                    continue
                break
            b = np.int64(x[f])
            if tc[node] >= 0:
                w = masks[tc[node], b >> 6]
                go_left = (w >> U64(b & 63)) & U64(1)
            else:
                go_left = b <= tt[node]
            if go_left:
                node = tl[node]
            else:
                node = tr[node]
    return visits


@njit(cache=True)
def _dim_energy(x, dim, tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
                kinds, cards, log_marg, log_mix_u, log_mix_m, log_unif,
                ework, diff, stk_node, stk_lo, stk_hi, stk_mask):
    """Fill ework[0:card(dim)] with unnormalized log density along `dim`."""
    d = cards.shape[0]
    card = cards[dim]
    lm = 0.0
    for j in range(d):
        if j != dim:
            lm += log_marg[j, np.int64(x[j])]
    ua = log_mix_u + log_unif
    for b in range(card):
        ework[b] = _lse2(ua, log_mix_m + lm + log_marg[dim, b])
    n_stages = stage_root.shape[0]
    if kinds[dim] == 0:
        for b in range(card + 1):
            diff[b] = 0.0
        for s in range(n_stages):
            _slice_ordered(tf, tt, tl, tr, tv, tc, masks, stage_root[s], x, dim,
                           card, stage_step[s], diff, stk_node, stk_lo, stk_hi)
        acc = 0.0
        for b in range(card):
            acc += diff[b]
            ework[b] += acc
    else:
        for s in range(n_stages):
            _slice_cat(tf, tt, tl, tr, tv, tc, masks, stage_root[s], x, dim,
                       card, stage_step[s], ework, stk_node, stk_mask)


@njit(cache=True)
def _sweep(x, state, order, tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
           kinds, cards, log_marg, log_mix_u, log_mix_m, log_unif,
           ework, diff, stk_node, stk_lo, stk_hi, stk_mask):
    d = cards.shape[0]
    for oi in range(d):
        dim = order[oi]
        card = cards[dim]
        _dim_energy(x, dim, tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
                    kinds, cards, log_marg, log_mix_u, log_mix_m, log_unif,
                    ework, diff, stk_node, stk_lo, stk_hi, stk_mask)
        m = -np.inf
        for b in range(card):
            if ework[b] > m:
                m = ework[b]
        if m == -np.inf:
            continue
        tot = 0.0
        for b in range(card):
            p = np.exp(ework[b] - m)
            ework[b] = p
            tot += p
        u = _rand(state) * tot
        acc = 0.0
        nb = -1
        for b in range(card):
            acc += ework[b]
            if u < acc:
                nb = b
                break
        if nb < 0:
            for b in range(card - 1, -1, -1):
                if ework[b] > 0.0:
                    nb = b
                    break
        x[dim] = np.uint8(nb)


@njit(cache=True, inline="always")
def _shuffle(order, state):
    for k in range(order.shape[0] - 1, 0, -1):
        j = np.int64(_rand(state) * (k + 1))
        tmp = order[k]
        order[k] = order[j]
        order[j] = tmp


@njit(cache=True, parallel=True)
def gibbs_chains(rows, n_sweeps, seed, random_scan, tf, tt, tl, tr, tv, tc, masks,
                 stage_root, stage_step, kinds, cards, log_marg,
                 log_mix_u, log_mix_m, log_unif, max_nodes):
    n, d = rows.shape
    maxcard = log_marg.shape[1]
    stk = max_nodes + 2
    for i in prange(n):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _chain_seed(seed, i)
        ework = np.empty(maxcard, dtype=np.float64)
        diff = np.empty(maxcard + 1, dtype=np.float64)
        stk_node = np.empty(stk, dtype=np.int64)
        stk_lo = np.empty(stk, dtype=np.int64)
        stk_hi = np.empty(stk, dtype=np.int64)
        stk_mask = np.empty((stk, 4), dtype=np.uint64)
        order = np.empty(d, dtype=np.int64)
        for j in range(d):
            order[j] = j
        for s in range(n_sweeps):
            if random_scan:
                _shuffle(order, state)
            _sweep(rows[i], state, order, tf, tt, tl, tr, tv, tc, masks,
                   stage_root, stage_step, kinds, cards, log_marg,
                   log_mix_u, log_mix_m, log_unif,
                   ework, diff, stk_node, stk_lo, stk_hi, stk_mask)


@njit(cache=True, parallel=True)
def gibbs_thinned(rows, burn_in, thin, n_keep, seed, random_scan,
                  tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
                  kinds, cards, log_marg, log_mix_u, log_mix_m, log_unif, max_nodes):
    n, d = rows.shape
    maxcard = log_marg.shape[1]
    stk = max_nodes + 2
    out = np.empty((n, n_keep, d), dtype=np.uint8)
    for i in prange(n):
        state = np.empty(1, dtype=np.uint64)
        state[0] = _chain_seed(seed, i)
        ework = np.empty(maxcard, dtype=np.float64)
        diff = np.empty(maxcard + 1, dtype=np.float64)
        stk_node = np.empty(stk, dtype=np.int64)
        stk_lo = np.empty(stk, dtype=np.int64)
        stk_hi = np.empty(stk, dtype=np.int64)
        stk_mask = np.empty((stk, 4), dtype=np.uint64)
        order = np.empty(d, dtype=np.int64)
        for j in range(d):
            order[j] = j
        for s in range(burn_in):
            if random_scan:
                _shuffle(order, state)
            _sweep(rows[i], state, order, tf, tt, tl, tr, tv, tc, masks,
                   stage_root, stage_step, kinds, cards, log_marg,
                   log_mix_u, log_mix_m, log_unif,
                   ework, diff, stk_node, stk_lo, stk_hi, stk_mask)
        for k in range(n_keep):
            for s in range(thin):
                if random_scan:
                    _shuffle(order, state)
                _sweep(rows[i], state, order, tf, tt, tl, tr, tv, tc, masks,
                       stage_root, stage_step, kinds, cards, log_marg,
                       log_mix_u, log_mix_m, log_unif,
                       ework, diff, stk_node, stk_lo, stk_hi, stk_mask)
            for j in range(d):
                out[i, k, j] = rows[i, j]
    return out


@njit(cache=True, inline="always")
def _point_energy(x, tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
                  cards, log_marg, log_mix_u, log_mix_m, log_unif):
    d = cards.shape[0]
    lm = 0.0
    for j in range(d):
        lm += log_marg[j, np.int64(x[j])]
    e = _lse2(log_mix_u + log_unif, log_mix_m + lm)
    for s in range(stage_root.shape[0]):
        node = stage_root[s]
        while tf[node] >= 0:
            f = tf[node]
            b = np.int64(x[f])
            if tc[node] >= 0:
                w = masks[tc[node], b >> 6]
                go_left = (w >> U64(b & 63)) & U64(1)
            else:
                go_left = b <= tt[node]
            if go_left:
                node = tl[node]
            else:
                node = tr[node]
        e += stage_step[s] * tv[node]
    return e


@njit(cache=True, parallel=True)
def point_energies(rows, tf, tt, tl, tr, tv, tc, masks, stage_root, stage_step,
                   cards, log_marg, log_mix_u, log_mix_m, log_unif):
    n = rows.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in prange(n):
        out[i] = _point_energy(rows[i], tf, tt, tl, tr, tv, tc, masks,
                               stage_root, stage_step, cards, log_marg,
                               log_mix_u, log_mix_m, log_unif)
    return out


@njit(cache=True, parallel=True)
def cond_energy_rows(rows, dim, tf, tt, tl, tr, tv, tc, masks, stage_root,
                     stage_step, kinds, cards, log_marg, log_mix_u, log_mix_m,
                     log_unif, max_nodes):
    n = rows.shape[0]
    maxcard = log_marg.shape[1]
    card = cards[dim]
    stk = max_nodes + 2
    out = np.empty((n, card), dtype=np.float64)
    for i in prange(n):
        ework = np.empty(maxcard, dtype=np.float64)
        diff = np.empty(maxcard + 1, dtype=np.float64)
        stk_node = np.empty(stk, dtype=np.int64)
        stk_lo = np.empty(stk, dtype=np.int64)
        stk_hi = np.empty(stk, dtype=np.int64)
        stk_mask = np.empty((stk, 4), dtype=np.uint64)
        _dim_energy(rows[i], dim, tf, tt, tl, tr, tv, tc, masks, stage_root,
                    stage_step, kinds, cards, log_marg, log_mix_u, log_mix_m,
                    log_unif, ework, diff, stk_node, stk_lo, stk_hi, stk_mask)
        for b in range(card):
            out[i, b] = ework[b]
    return out


@dataclass(frozen=True)
class PackedModel:
    """Flattened ensemble + initial distribution, ready for the kernels."""

    tf: np.ndarray
    tt: np.ndarray
    tl: np.ndarray
    tr: np.ndarray
    tv: np.ndarray
    tc: np.ndarray
    masks: np.ndarray
    stage_root: np.ndarray
    stage_step: np.ndarray
    kinds: np.ndarray
    cards: np.ndarray
    log_marg: np.ndarray
    log_mix_u: float
    log_mix_m: float
    log_unif: float
    max_nodes: int

    def _tree_args(self):
        return (self.tf, self.tt, self.tl, self.tr, self.tv, self.tc, self.masks,
                self.stage_root, self.stage_step)

    def _q0_args(self):
        return (self.cards, self.log_marg, self.log_mix_u, self.log_mix_m, self.log_unif)

    def energies(self, rows: np.ndarray) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        return point_energies(rows, *self._tree_args(), *self._q0_args())

    def cond_energies(self, rows: np.ndarray, dim: int) -> np.ndarray:
        rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.uint8)
        return cond_energy_rows(rows, dim, *self._tree_args()[:7],
                                self.stage_root, self.stage_step,
                                self.kinds, self.cards, self.log_marg,
                                self.log_mix_u, self.log_mix_m, self.log_unif,
                                self.max_nodes)

    def run_chains(self, rows: np.ndarray, n_sweeps: int, seed: int,
                   random_scan: bool = False) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.uint8).copy()
        if rows.size and n_sweeps > 0:
            gibbs_chains(rows, n_sweeps, U64(seed), random_scan,
                         *self._tree_args()[:7], self.stage_root, self.stage_step,
                         self.kinds, self.cards, self.log_marg,
                         self.log_mix_u, self.log_mix_m, self.log_unif,
                         self.max_nodes)
        return rows

    def run_thinned(self, rows: np.ndarray, burn_in: int, thin: int, n_keep: int,
                    seed: int, random_scan: bool = False) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.uint8).copy()
        return gibbs_thinned(rows, burn_in, thin, n_keep, U64(seed), random_scan,
                             *self._tree_args()[:7], self.stage_root, self.stage_step,
                             self.kinds, self.cards, self.log_marg,
                             self.log_mix_u, self.log_mix_m, self.log_unif,
                             self.max_nodes)


def pack_model(schema, initial, stages) -> PackedModel:
    """Flatten stage trees and the initial distribution into kernel arrays."""
    cards = schema.cardinalities
    kinds = schema.kinds
    maxcard = int(cards.max())
    d = len(cards)

    tfs, tts, tls, trs, tvs, tcs, mask_rows, roots, steps = [], [], [], [], [], [], [], [], []
    node_off = 0
    mask_off = 0
    max_nodes = 1
    for tree, step in stages:
        n = tree.n_nodes
        max_nodes = max(max_nodes, n)
        tfs.append(tree.feature)
        tts.append(tree.threshold)
        tls.append(np.where(tree.left >= 0, tree.left + node_off, -1).astype(np.int32))
        trs.append(np.where(tree.right >= 0, tree.right + node_off, -1).astype(np.int32))
        tvs.append(tree.value)
        tcs.append(np.where(tree.cat_ref >= 0, tree.cat_ref + mask_off, -1).astype(np.int32))
        mask_rows.append(tree.cat_masks)
        roots.append(node_off)
        steps.append(step)
        node_off += n
        mask_off += tree.cat_masks.shape[0]

    def _cat(parts, dtype):
        return (np.concatenate(parts).astype(dtype)
                if parts else np.zeros(0, dtype=dtype))

    masks = (np.vstack(mask_rows) if mask_rows and mask_off
             else np.zeros((0, 4), dtype=np.uint64))

    log_marg = np.full((d, maxcard), -np.inf, dtype=np.float64)
    for j, m in enumerate(initial.marginals):
        with np.errstate(divide="ignore"):
            log_marg[j, : len(m)] = np.log(m)

    mix = initial.uniform_mix
    log_mix_u = math.log(mix) if mix > 0 else -np.inf
    log_mix_m = math.log1p(-mix) if mix < 1 else -np.inf
    log_unif = -float(np.sum(np.log(cards.astype(np.float64))))

    return PackedModel(
        tf=_cat(tfs, np.int32), tt=_cat(tts, np.int32), tl=_cat(tls, np.int32),
        tr=_cat(trs, np.int32), tv=_cat(tvs, np.float64), tc=_cat(tcs, np.int32),
        masks=masks,
        stage_root=np.array(roots, dtype=np.int64),
        stage_step=np.array(steps, dtype=np.float64),
        kinds=kinds.astype(np.uint8), cards=cards.astype(np.int64),
        log_marg=log_marg, log_mix_u=log_mix_u, log_mix_m=log_mix_m,
        log_unif=log_unif, max_nodes=max_nodes,
    )
