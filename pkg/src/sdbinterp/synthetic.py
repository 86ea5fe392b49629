"""Seeded synthetic fields for experiments and acceptance runs."""

from __future__ import annotations

import numpy as np

from .observations import ObservationSet


def porosity_field(n: int = 50, seed: int = 0, lo: float = 0.05, hi: float = 0.35) -> np.ndarray:
    """An n x n porosity-like field (row index = y, column index = x).

    Three anisotropic Gaussian bumps on a flat background plus a low-value
    channel along the main diagonal, linearly rescaled to [lo, hi].
    """
    rng = np.random.default_rng(seed)
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c)
    field = np.zeros((n, n))
    for _ in range(3):
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        sx, sy = rng.uniform(0.08, 0.25, size=2)
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(0.6, 1.0)
        dx, dy = X - cx, Y - cy
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        field += amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))
    # channel along y = x, width ~0.06 of the domain
    dist = np.abs(Y - X) / np.sqrt(2.0)
    field -= 0.8 * np.exp(-0.5 * (dist / 0.06) ** 2)
    field = (field - field.min()) / (field.max() - field.min())
    return lo + (hi - lo) * field


def cell_centers(n: int, size: float | None = None) -> np.ndarray:
    """(n*n, 2) cell centres in row-major order for the domain [0, size]^2."""
    size = float(n) if size is None else size
    c = (np.arange(n) + 0.5) * size / n
    X, Y = np.meshgrid(c, c)
    return np.column_stack([X.ravel(), Y.ravel()])


def sample_field(field: np.ndarray, n_samples: int = 100, seed: int = 0) -> ObservationSet:
    """Observations at ``n_samples`` distinct random cells of ``field``."""
    n = field.shape[0]
    rng = np.random.default_rng(seed)
    cells = rng.choice(field.size, size=n_samples, replace=False)
    xy = cell_centers(n)[cells]
    return ObservationSet(xy, field.ravel()[cells])
