"""Worst-case conditional value-at-risk over moment ambiguity sets.

All distributions sharing a mean mu and covariance Sigma form the ambiguity
set; the worst-case CVaR at level epsilon of a quadratic loss
L(xi) = xi^T P xi + 2 q^T xi + r over that set equals

    inf_beta  beta + (1/epsilon) * min{ Tr(Omega N) : N >= 0, N >= M(beta) }

with Omega the second-moment matrix [[Sigma + mu mu^T, mu], [mu^T, 1]] and
M(beta) = [[P, q], [q^T, r - beta]].  The inner semidefinite minimum has the
closed form Tr((Omega^{1/2} M(beta) Omega^{1/2})_+), where (.)_+ keeps the
positive eigenvalues, so the whole computation reduces to a one-dimensional
convex minimization in beta solved by golden-section search.

For zero-mean linear losses q^T xi the value collapses to
sqrt((1-eps)/eps) * sqrt(q^T Sigma q); `wc_cvar_linear` uses that closed form
and the test suite checks it against the beta-grid oracle below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg

# Golden-section tolerance on beta. The subgradient of the objective is
# bounded by max(1, 1/epsilon - 1) because the corner entry of Omega is
# exactly 1, so the value error is at most that bound times this tolerance.
BETA_TOL = 1e-9

# Geometric bracket expansions allowed before the search gives up. The
# objective diverges as |beta| grows whenever epsilon < 1, so running out of
# budget indicates a malformed input.
MAX_BRACKET_STEPS = 200

_INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MomentAmbiguitySet:
    """All distributions with the given mean and covariance."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "sigma", np.atleast_2d(np.asarray(self.sigma, dtype=float)))
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ValueError(f"sigma must be {d}x{d}, got {self.sigma.shape}")
        if not linalg.is_symmetric(self.sigma):
            raise ValueError("sigma must be symmetric")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class QuadraticLoss:
    """L(xi) = xi^T P xi + 2 q^T xi + r; P is symmetrized on construction."""

    P: np.ndarray
    q: np.ndarray
    r: float

    def __post_init__(self):
        p = linalg.symmetrize(np.atleast_2d(np.asarray(self.P, dtype=float)))
        object.__setattr__(self, "P", p)
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "r", float(self.r))
        d = self.q.shape[0]
        if self.P.shape != (d, d):
            raise ValueError(f"P must be {d}x{d}, got {self.P.shape}")

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def mean_value(self, amb: MomentAmbiguitySet) -> float:
        """E[L(xi)] under any member of the ambiguity set."""
        return float(np.trace(self.P @ amb.sigma) + amb.mu @ self.P @ amb.mu
                     + 2.0 * self.q @ amb.mu + self.r)


@dataclass(frozen=True)
class SecondMomentMatrix:
    """Omega = [[Sigma + mu mu^T, mu], [mu^T, 1]]."""

    omega: np.ndarray

    def __post_init__(self):
        om = np.atleast_2d(np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "omega", om)
        if not linalg.is_symmetric(om):
            raise ValueError("omega must be symmetric")
        if om[-1, -1] != 1.0:
            raise ValueError("omega bottom-right entry must be exactly 1")

    @classmethod
    def from_moments(cls, amb: MomentAmbiguitySet) -> "SecondMomentMatrix":
        d = amb.dim
        om = np.empty((d + 1, d + 1))
        om[:d, :d] = amb.sigma + np.outer(amb.mu, amb.mu)
        om[:d, d] = amb.mu
        om[d, :d] = amb.mu
        om[d, d] = 1.0
        return cls(omega=om)


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return epsilon


def _require_zero_mean(amb: MomentAmbiguitySet):
    if np.any(amb.mu != 0.0):
        raise ValueError("this operation requires a zero-mean ambiguity set")


def wc_cvar_linear(amb: MomentAmbiguitySet, q: np.ndarray, epsilon: float) -> float:
    """Worst-case CVaR of q^T xi for zero-mean xi: sqrt((1-eps)/eps) * ||q||_Sigma."""
    epsilon = _check_epsilon(epsilon)
    _require_zero_mean(amb)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape[0] != amb.dim:
        raise ValueError(f"q has length {q.shape[0]}, expected {amb.dim}")
    variance = max(float(q @ amb.sigma @ q), 0.0)
    return float(np.sqrt((1.0 - epsilon) / epsilon) * np.sqrt(variance))


def wc_cvar_elementwise(amb: MomentAmbiguitySet, G: np.ndarray, epsilon: float) -> np.ndarray:
    """Column-wise worst-case CVaR of G^T xi; component i uses column i of G."""
    epsilon = _check_epsilon(epsilon)
    _require_zero_mean(amb)
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    if G.shape[0] != amb.dim:
        raise ValueError(f"G has {G.shape[0]} rows, expected {amb.dim}")
    variances = np.clip(np.einsum("ij,ik,kj->j", G, amb.sigma, G), 0.0, None)
    return np.sqrt((1.0 - epsilon) / epsilon) * np.sqrt(variances)


def linear_bound(amb: MomentAmbiguitySet, q: np.ndarray, epsilon: float) -> float:
    """Upper bound |q|^T wc_cvar_elementwise(I); never below wc_cvar_linear(q)."""
    epsilon = _check_epsilon(epsilon)
    _require_zero_mean(amb)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape[0] != amb.dim:
        raise ValueError(f"q has length {q.shape[0]}, expected {amb.dim}")
    per_axis = wc_cvar_elementwise(amb, np.eye(amb.dim), epsilon)
    return float(np.abs(q) @ per_axis)


def _dual_objective_factory(amb: MomentAmbiguitySet, loss: QuadraticLoss, epsilon: float):
    """Return g(beta) = beta + (1/eps) Tr((W M(beta) W)_+) with W = Omega^{1/2}."""
    d = amb.dim
    omega = SecondMomentMatrix.from_moments(amb).omega
    w_half = linalg.psd_sqrt(omega)
    m0 = np.empty((d + 1, d + 1))
    m0[:d, :d] = loss.P
    m0[:d, d] = loss.q
    m0[d, :d] = loss.q
    m0[d, d] = loss.r
    t0 = w_half @ m0 @ w_half
    # M(beta) = M0 - beta * e e^T, so W M(beta) W = T0 - beta * s s^T.
    s = w_half[:, d]
    rank1 = np.outer(s, s)

    def g(beta: float) -> float:
        eigs = np.linalg.eigvalsh(linalg.symmetrize(t0 - beta * rank1))
        return beta + float(np.sum(eigs[eigs > 0.0])) / epsilon

    def g_batch(betas: np.ndarray) -> np.ndarray:
        stack = t0[None, :, :] - betas[:, None, None] * rank1[None, :, :]
        eigs = np.linalg.eigvalsh(stack)
        return betas + np.sum(np.clip(eigs, 0.0, None), axis=1) / epsilon

    return g, g_batch


def _bracket_minimum(g, beta0: float) -> tuple[float, float]:
    """Expand geometrically around beta0 until a convex valley is bracketed."""
    step = max(1.0, 0.1 * abs(beta0))
    lo, mid, hi = beta0 - step, beta0, beta0 + step
    g_lo, g_mid, g_hi = g(lo), g(mid), g(hi)
    for _ in range(MAX_BRACKET_STEPS):
        if g_mid <= g_lo and g_mid <= g_hi:
            return lo, hi
        step *= 2.0
        if g_lo < g_mid:
            hi, g_hi = mid, g_mid
            mid, g_mid = lo, g_lo
            lo = mid - step
            g_lo = g(lo)
        else:
            lo, g_lo = mid, g_mid
            mid, g_mid = hi, g_hi
            hi = mid + step
            g_hi = g(hi)
    raise RuntimeError("failed to bracket the CVaR dual minimizer within budget; "
                       "the ambiguity set or loss is likely malformed")


def _golden_section(g, lo: float, hi: float, tol: float) -> float:
    """Minimize convex g on [lo, hi]; returns the best value seen."""
    a, b = lo, hi
    x1 = b - _INV_GOLDEN * (b - a)
    x2 = a + _INV_GOLDEN * (b - a)
    f1, f2 = g(x1), g(x2)
    best = min(f1, f2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_GOLDEN * (b - a)
            f1 = g(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_GOLDEN * (b - a)
            f2 = g(x2)
        best = min(best, f1, f2)
    return best


def wc_cvar_quadratic(amb: MomentAmbiguitySet, loss: QuadraticLoss, epsilon: float) -> float:
    """Worst-case CVaR of a quadratic loss over the moment ambiguity set."""
    epsilon = _check_epsilon(epsilon)
    if loss.dim != amb.dim:
        raise ValueError(f"loss dimension {loss.dim} does not match ambiguity dimension {amb.dim}")
    g, _ = _dual_objective_factory(amb, loss, epsilon)
    beta0 = loss.mean_value(amb)
    lo, hi = _bracket_minimum(g, beta0)
    return _golden_section(g, lo, hi, BETA_TOL)


def oracle_wc_cvar_quadratic(amb: MomentAmbiguitySet, loss: QuadraticLoss, epsilon: float,
                             beta_lo: float, beta_hi: float, beta_step: float) -> float:
    """Brute-force grid evaluation of the dual objective; test oracle only.

    Evaluates g(beta) by full eigendecomposition at every grid point in
    [beta_lo, beta_hi] and returns the minimum. The caller must supply a
    bracket that covers the minimizer.
    """
    epsilon = _check_epsilon(epsilon)
    if loss.dim != amb.dim:
        raise ValueError(f"loss dimension {loss.dim} does not match ambiguity dimension {amb.dim}")
    if not beta_hi > beta_lo or not beta_step > 0.0:
        raise ValueError("need beta_hi > beta_lo and beta_step > 0")
    _, g_batch = _dual_objective_factory(amb, loss, epsilon)
    betas = np.arange(beta_lo, beta_hi + beta_step, beta_step)
    # Chunked so wide brackets do not allocate huge eigendecomposition stacks.
    best = np.inf
    for start in range(0, betas.shape[0], 20000):
        best = min(best, float(np.min(g_batch(betas[start:start + 20000]))))
    return best
