"""Shared helpers for small dense symmetric matrices."""

from __future__ import annotations

import numpy as np

# Eigenvalues down to -PSD_TOL * max|eig| are treated as rounding noise and
# clipped to zero; anything below that is a genuine indefiniteness.
PSD_TOL = 1e-10

# Relative asymmetry accepted before a matrix is rejected as non-symmetric.
SYM_TOL = 1e-12


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def is_symmetric(m: np.ndarray, tol: float = SYM_TOL) -> bool:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
    return float(np.max(np.abs(m - m.T))) <= tol * scale if m.size else True


def min_max_eig(m: np.ndarray) -> tuple[float, float]:
    w = np.linalg.eigvalsh(symmetrize(m))
    return float(w[0]), float(w[-1])


def is_psd(m: np.ndarray, tol: float = PSD_TOL) -> bool:
    if not is_symmetric(m):
        return False
    lo, hi = min_max_eig(m)
    return lo >= -tol * max(1.0, abs(hi))


def is_pd(m: np.ndarray) -> bool:
    if not is_symmetric(m):
        return False
    lo, _ = min_max_eig(m)
    return lo > 0.0


def clip_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    w, v = np.linalg.eigh(symmetrize(m))
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root; negative eigenvalues are clipped first."""
    w, v = np.linalg.eigh(symmetrize(m))
    w = np.clip(w, 0.0, None)
    return symmetrize((v * np.sqrt(w)) @ v.T)
