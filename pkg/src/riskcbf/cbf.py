"""Risk-aware CBF constraints in solver-ready form.

The one-step safety requirement asks for an input u such that the worst-case
CVaR of the loss  -h(next state) + alpha * h(current state)  is nonpositive,
where both states are known only through the filtered mean xbar, covariance
P, and the disturbance moments. The relevant joint uncertainty is the
zero-mean vector xi = [x - xbar; w] with covariance blockdiag(P, Q).

Three constructions are provided:

* half-space h(x) = q^T x + r: the requirement is exactly equivalent to one
  linear inequality  -q^T B u <= rhs  (``halfspace_constraint``);
* ellipsoid h(x) = -(x-c)^T E (x-c) + r: for a given u the requirement can be
  checked exactly through one quadratic worst-case CVaR evaluation
  (``ellipsoid_exact_check``), but the set of admissible u has no tractable
  exact description;
* ellipsoid, sufficient form: bounding the u-dependent CVaR terms column-wise
  yields a convex quadratic constraint in the stacked variable [u; v] with
  sign-coupling rows enforcing |u| <= v (``ellipsoid_sufficient_constraint``).
  Any pair satisfying it also passes the exact check.

``expected_value_constraint`` builds the same shapes with every worst-case
CVaR replaced by the plain expectation; it is the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .model import BeliefState, EllipsoidSafeSet, HalfSpaceSafeSet, RiskParams, SafeSet, SystemModel
from .wc_cvar import MomentAmbiguitySet, QuadraticLoss, wc_cvar_elementwise, wc_cvar_linear, wc_cvar_quadratic


@dataclass(frozen=True)
class LinearCbfConstraint:
    """One linear inequality on the input: coeff . u <= rhs."""

    coeff: np.ndarray
    rhs: float

    def __post_init__(self):
        object.__setattr__(self, "coeff", np.atleast_1d(np.asarray(self.coeff, dtype=float)))
        object.__setattr__(self, "rhs", float(self.rhs))

    def violation(self, u: np.ndarray) -> float:
        return float(self.coeff @ np.atleast_1d(u) - self.rhs)


@dataclass(frozen=True)
class QuadraticCbfConstraint:
    """Quadratic inequality on ubar = [u; v] plus sign-coupling rows.

    The constraint reads  ubar^T P ubar + 2 q^T ubar + r <= 0  together with
    A_aux ubar <= 0, where A_aux = [[I, -I], [-I, -I]] encodes |u| <= v.
    """

    P: np.ndarray
    q: np.ndarray
    r: float
    A_aux: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", linalg.symmetrize(np.atleast_2d(np.asarray(self.P, dtype=float))))
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "A_aux", np.atleast_2d(np.asarray(self.A_aux, dtype=float)))

    @property
    def input_dim(self) -> int:
        return self.q.shape[0] // 2

    def quad_value(self, ubar: np.ndarray) -> float:
        ubar = np.atleast_1d(ubar)
        return float(ubar @ self.P @ ubar + 2.0 * self.q @ ubar + self.r)

    def satisfied(self, ubar: np.ndarray, tol: float = 0.0) -> bool:
        ubar = np.atleast_1d(ubar)
        return (self.quad_value(ubar) <= tol
                and bool(np.all(self.A_aux @ ubar <= tol)))


def sign_coupling_rows(m: int) -> np.ndarray:
    """Rows A with A [u; v] <= 0 equivalent to |u| <= v element-wise."""
    eye = np.eye(m)
    return np.block([[eye, -eye], [-eye, -eye]])


def joint_ambiguity(belief: BeliefState, model: SystemModel) -> MomentAmbiguitySet:
    """Zero-mean ambiguity set of [estimation error; disturbance]."""
    if belief.mean.shape[0] != model.n:
        raise ValueError(f"belief has dimension {belief.mean.shape[0]}, model expects {model.n}")
    n = model.n
    sigma = np.zeros((2 * n, 2 * n))
    sigma[:n, :n] = belief.cov
    sigma[n:, n:] = model.Q
    return MomentAmbiguitySet(mu=np.zeros(2 * n), sigma=sigma)


def _halfspace_rhs(safe_set: HalfSpaceSafeSet, belief: BeliefState, model: SystemModel,
                   risk: RiskParams, amb: MomentAmbiguitySet) -> float:
    a_shift = model.A - risk.alpha * np.eye(model.n)
    g = -np.concatenate([a_shift.T @ safe_set.q, safe_set.q])
    tail = wc_cvar_linear(amb, g, risk.epsilon)
    return float(-tail + safe_set.q @ a_shift @ belief.mean + (1.0 - risk.alpha) * safe_set.r)


def halfspace_constraint(safe_set: HalfSpaceSafeSet, belief: BeliefState,
                         model: SystemModel, risk: RiskParams) -> LinearCbfConstraint:
    """Exact linear reformulation of the safety requirement for half-spaces.

    The returned inequality -q^T B u <= rhs holds if and only if the
    worst-case CVaR condition on the propagated state does.
    """
    if safe_set.q.shape[0] != model.n:
        raise ValueError(f"safe set has dimension {safe_set.q.shape[0]}, model expects {model.n}")
    amb = joint_ambiguity(belief, model)
    rhs = _halfspace_rhs(safe_set, belief, model, risk, amb)
    if not np.isfinite(rhs):
        # Degenerate covariance can poison the variance form; clip and retry
        # once, then fail loudly rather than emit an unsafe constraint.
        try:
            amb = MomentAmbiguitySet(mu=amb.mu, sigma=linalg.clip_psd(amb.sigma))
            rhs = _halfspace_rhs(safe_set, belief, model, risk, amb)
        except (ValueError, np.linalg.LinAlgError):
            rhs = np.nan
        if not np.isfinite(rhs):
            raise FloatingPointError("half-space constraint evaluation produced NaN")
    return LinearCbfConstraint(coeff=-(model.B.T @ safe_set.q), rhs=rhs)


def _ellipsoid_terms(safe_set: EllipsoidSafeSet, belief: BeliefState, model: SystemModel,
                     risk: RiskParams):
    """Shared pieces of the quadratic loss in xi = [x - xbar; w]."""
    a, e = model.A, safe_set.E
    alpha = risk.alpha
    drift = a @ belief.mean - safe_set.center          # A xbar - c
    offset = belief.mean - safe_set.center             # xbar - c
    p_bar = np.block([[a.T @ e @ a - alpha * e, a.T @ e], [e @ a, e]])
    q1 = np.concatenate([a.T @ e @ drift - alpha * e @ offset, e @ drift])
    decay = float(drift @ e @ drift - alpha * offset @ e @ offset
                  - (1.0 - alpha) * safe_set.r)
    return p_bar, q1, drift, offset, decay


def ellipsoid_exact_check(safe_set: EllipsoidSafeSet, belief: BeliefState,
                          model: SystemModel, risk: RiskParams, u: np.ndarray) -> float:
    """Worst-case CVaR of the safety loss for a candidate input.

    Nonpositive return value is exactly equivalent to the risk-aware safety
    requirement at this belief and input.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape[0] != model.m:
        raise ValueError(f"u has length {u.shape[0]}, expected {model.m}")
    amb = joint_ambiguity(belief, model)
    p_bar, q1, drift, offset, _ = _ellipsoid_terms(safe_set, belief, model, risk)
    e, a = safe_set.E, model.A
    bu = model.B @ u
    q2 = np.concatenate([a.T @ e @ bu, e @ bu])
    shifted = drift + bu                                # A xbar + B u - c
    r_bar = float(shifted @ e @ shifted - risk.alpha * offset @ e @ offset
                  - (1.0 - risk.alpha) * safe_set.r)
    loss = QuadraticLoss(P=p_bar, q=q1 + q2, r=r_bar)
    return wc_cvar_quadratic(amb, loss, risk.epsilon)


def ellipsoid_sufficient_constraint(safe_set: EllipsoidSafeSet, belief: BeliefState,
                                    model: SystemModel, risk: RiskParams) -> QuadraticCbfConstraint:
    """Convex inner approximation of the admissible-input set.

    Splitting the loss and bounding the u-dependent linear CVaR column-wise
    gives a quadratic constraint in [u; v]; any satisfying pair also passes
    ellipsoid_exact_check (the converse can fail, the bound is conservative).
    """
    amb = joint_ambiguity(belief, model)
    p_bar, q1, drift, _, decay = _ellipsoid_terms(safe_set, belief, model, risk)
    e, a, b = safe_set.E, model.A, model.B
    m = model.m
    p_tilde = np.zeros((2 * m, 2 * m))
    p_tilde[:m, :m] = b.T @ e @ b
    gains = np.vstack([a.T @ e @ b, e @ b])             # 2n x m, columns per input
    cvar_vec = wc_cvar_elementwise(amb, gains, risk.epsilon)
    q_tilde = np.concatenate([b.T @ e @ drift, cvar_vec])
    tail = wc_cvar_quadratic(amb, QuadraticLoss(P=p_bar, q=q1, r=0.0), risk.epsilon)
    return QuadraticCbfConstraint(P=p_tilde, q=q_tilde, r=tail + decay,
                                  A_aux=sign_coupling_rows(m))


def expected_value_constraint(safe_set: SafeSet, belief: BeliefState, model: SystemModel,
                              risk: RiskParams):
    """Baseline constraint with expectations in place of worst-case CVaR.

    Linear zero-mean terms drop out entirely; the quadratic term becomes
    Tr(P_bar Sigma). Returns the same constraint type as the risk-aware
    builder for the given safe set.
    """
    if isinstance(safe_set, HalfSpaceSafeSet):
        a_shift = model.A - risk.alpha * np.eye(model.n)
        rhs = float(safe_set.q @ a_shift @ belief.mean + (1.0 - risk.alpha) * safe_set.r)
        return LinearCbfConstraint(coeff=-(model.B.T @ safe_set.q), rhs=rhs)
    if isinstance(safe_set, EllipsoidSafeSet):
        amb = joint_ambiguity(belief, model)
        p_bar, _, drift, _, decay = _ellipsoid_terms(safe_set, belief, model, risk)
        e, b = safe_set.E, model.B
        m = model.m
        p_tilde = np.zeros((2 * m, 2 * m))
        p_tilde[:m, :m] = b.T @ e @ b
        q_tilde = np.concatenate([b.T @ e @ drift, np.zeros(m)])
        mean_tail = float(np.trace(p_bar @ amb.sigma))
        return QuadraticCbfConstraint(P=p_tilde, q=q_tilde, r=mean_tail + decay,
                                      A_aux=sign_coupling_rows(m))
    raise TypeError(f"unsupported safe set type {type(safe_set)!r}")


def belief_risk(safe_set: SafeSet, belief: BeliefState, risk: RiskParams) -> float:
    """Worst-case CVaR of -h at the current belief (diagnostic, logged per step)."""
    if isinstance(safe_set, HalfSpaceSafeSet):
        amb = MomentAmbiguitySet(mu=np.zeros(belief.mean.shape[0]), sigma=belief.cov)
        tail = wc_cvar_linear(amb, -safe_set.q, risk.epsilon)
        return float(tail - safe_set.q @ belief.mean - safe_set.r)
    if isinstance(safe_set, EllipsoidSafeSet):
        amb = MomentAmbiguitySet(mu=np.zeros(belief.mean.shape[0]), sigma=belief.cov)
        offset = belief.mean - safe_set.center
        loss = QuadraticLoss(P=safe_set.E, q=safe_set.E @ offset,
                             r=float(offset @ safe_set.E @ offset - safe_set.r))
        return wc_cvar_quadratic(amb, loss, risk.epsilon)
    raise TypeError(f"unsupported safe set type {type(safe_set)!r}")
