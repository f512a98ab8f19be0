"""Two-dimensional benchmark data: eight Gaussians around a circle.

The generator draws from a mixture of eight isotropic Gaussians (sigma 1)
centered on a circle of radius 8, truncated to the square [-11, 11]^2, which
is discretized into 100 equal-width bins per axis. The exact cell-integrated
density is available as a test oracle.
"""

from __future__ import annotations

import math

import numpy as np

from .data import FeatureSpec, Schema

N_BINS = 100
LO, HI = -11.0, 11.0
RADIUS = 8.0
SIGMA = 1.0
N_MODES = 8


def mode_centers() -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(N_MODES) / N_MODES
    return np.column_stack([RADIUS * np.cos(angles), RADIUS * np.sin(angles)])


def toy_schema() -> Schema:
    """Equal-width 100-bin schema on [-11, 11] for both axes."""
    edges = np.linspace(LO, HI, N_BINS + 1)[1:-1]
    feats = [
        FeatureSpec(name=n, kind="numeric", cardinality=N_BINS,
                    bin_edges=edges.copy(), value_range=(LO, HI))
        for n in ("x", "y")
    ]
    return Schema(features=feats)


def sample_raw(n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw mixture draws, rejecting the tiny mass outside the square."""
    out = np.empty((n, 2), dtype=np.float64)
    centers = mode_centers()
    filled = 0
    while filled < n:
        m = int((n - filled) * 1.05) + 16
        modes = rng.integers(0, N_MODES, size=m)
        xy = centers[modes] + SIGMA * rng.standard_normal((m, 2))
        ok = (xy >= LO).all(axis=1) & (xy <= HI).all(axis=1)
        kept = xy[ok]
        take = min(len(kept), n - filled)
        out[filled:filled + take] = kept[:take]
        filled += take
    return out


def sample_bins(n: int, rng: np.random.Generator) -> np.ndarray:
    """Discretized mixture draws on the 100x100 grid."""
    raw = sample_raw(n, rng)
    edges = np.linspace(LO, HI, N_BINS + 1)[1:-1]
    return np.searchsorted(edges, raw, side="right").astype(np.uint8)


def exact_grid() -> np.ndarray:
    """Cell-integrated mixture density on the grid, normalized over the square."""
    bounds = np.linspace(LO, HI, N_BINS + 1)
    inv = 1.0 / (SIGMA * math.sqrt(2.0))
    grid = np.zeros((N_BINS, N_BINS), dtype=np.float64)
    for cx, cy in mode_centers():
        phix = np.array([0.5 * (1.0 + math.erf((b - cx) * inv)) for b in bounds])
        phiy = np.array([0.5 * (1.0 + math.erf((b - cy) * inv)) for b in bounds])
        grid += np.outer(np.diff(phix), np.diff(phiy))
    grid /= grid.sum()
    return grid
