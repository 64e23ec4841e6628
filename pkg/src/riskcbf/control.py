"""Optimization-based controllers built on the CBF constraints.

Method 1 minimally modifies a nominal state-feedback input: it solves
argmin ||u - u_nom||^2 subject to the safety constraint, and if that program
is infeasible it re-solves with a penalized slack delta on the safety row.

Method 2 couples a quadratic control Lyapunov function V(x) = x^T Phi x with
the safety constraint: it minimizes 1/2 [u; delta]^T Theta [u; delta] +
eta^T [u; delta] subject to the CLF decrease condition relaxed by delta and
the hard (unrelaxed) safety constraint.

Two baselines mirror the comparison study: `baseline_ignore_constraint`
drops the safety constraint entirely, and `baseline_expected_value` swaps
the worst-case CVaR terms for plain expectations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import linalg
from .cbf import (LinearCbfConstraint, QuadraticCbfConstraint, ellipsoid_sufficient_constraint,
                  expected_value_constraint, halfspace_constraint)
from .model import (BeliefState, ControllerConfig, EllipsoidSafeSet, HalfSpaceSafeSet,
                    RiskParams, SafeSet, ScenarioConfig, SystemModel)
from .solver import ConvexProgram, Solution, solve


class ControllerError(RuntimeError):
    """Raised when a controller program cannot be solved."""


@dataclass(frozen=True)
class NominalController:
    """Linear state feedback u_nom(xbar) = gain . xbar (m = 1 output)."""

    gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gain", np.atleast_1d(np.asarray(self.gain, dtype=float)))

    def __call__(self, mean: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self.gain @ np.atleast_1d(mean))


@dataclass(frozen=True)
class Method1Params:
    nominal: NominalController
    rho: float = 1e4

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ValueError("rho must be positive")


@dataclass(frozen=True)
class ClfParams:
    """Quadratic CLF data: V(x) = x^T Phi x with decrease margin c3.

    c1 and c2 are the smallest/largest singular values of Phi, so that
    c1 ||x||^2 <= V(x) <= c2 ||x||^2 holds by construction.
    """

    Phi: np.ndarray
    c3: float
    Theta: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        phi = linalg.symmetrize(np.atleast_2d(np.asarray(self.Phi, dtype=float)))
        object.__setattr__(self, "Phi", phi)
        object.__setattr__(self, "c3", float(self.c3))
        object.__setattr__(self, "Theta", linalg.symmetrize(np.atleast_2d(np.asarray(self.Theta, dtype=float))))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))
        if not linalg.is_pd(phi):
            raise ValueError("Phi must be positive definite")
        if not self.c3 > 0.0:
            raise ValueError("c3 must be positive")
        if not linalg.is_psd(self.Theta):
            raise ValueError("Theta must be positive semidefinite")

    @property
    def c1(self) -> float:
        return float(np.min(np.linalg.svd(self.Phi, compute_uv=False)))

    @property
    def c2(self) -> float:
        return float(np.max(np.linalg.svd(self.Phi, compute_uv=False)))


CbfConstraint = Union[LinearCbfConstraint, QuadraticCbfConstraint]


def _build_cbf(safe_set: SafeSet, belief: BeliefState, model: SystemModel,
               risk: RiskParams, expected_value: bool) -> CbfConstraint:
    if expected_value:
        return expected_value_constraint(safe_set, belief, model, risk)
    if isinstance(safe_set, HalfSpaceSafeSet):
        return halfspace_constraint(safe_set, belief, model, risk)
    if isinstance(safe_set, EllipsoidSafeSet):
        return ellipsoid_sufficient_constraint(safe_set, belief, model, risk)
    raise TypeError(f"unsupported safe set type {type(safe_set)!r}")


def _require(sol: Solution, context: str) -> Solution:
    if sol.status == "max_iter":
        raise ControllerError(f"{context}: solver exhausted its iteration budget")
    return sol


def _strict_aux_candidate(constraint: QuadraticCbfConstraint) -> Optional[np.ndarray]:
    """A strictly feasible [u; v] for the quadratic constraint, if one is easy."""
    m = constraint.input_dim
    for scale in (1e-3, 1.0):
        cand = np.concatenate([np.zeros(m), np.full(m, scale)])
        if constraint.quad_value(cand) < 0.0:
            return cand
    return None


def _method1_from_constraint(constraint: CbfConstraint, belief: BeliefState, model: SystemModel,
                             params: Method1Params) -> tuple[np.ndarray, bool, float]:
    m = model.m
    u_nom = params.nominal(belief.mean)
    if isinstance(constraint, LinearCbfConstraint):
        prog = ConvexProgram(Hobj=2.0 * np.eye(m), fobj=-2.0 * u_nom,
                             affine_ineqs=[(constraint.coeff, constraint.rhs)])
        sol = _require(solve(prog), "method 1")
        if sol.status == "optimal":
            return sol.z, False, 0.0
        # Relax: coeff.u - delta <= rhs with delta >= 0 penalized by rho.
        h = np.zeros((m + 1, m + 1))
        h[:m, :m] = 2.0 * np.eye(m)
        f = np.concatenate([-2.0 * u_nom, [params.rho]])
        rows = [(np.concatenate([constraint.coeff, [-1.0]]), constraint.rhs),
                (np.concatenate([np.zeros(m), [-1.0]]), 0.0)]
        start = np.concatenate([u_nom, [max(constraint.violation(u_nom), 0.0) + 1.0]])
        relaxed = _require(solve(ConvexProgram(Hobj=h, fobj=f, affine_ineqs=rows), start=start),
                           "method 1 relaxation")
        if relaxed.status != "optimal":
            raise ControllerError("method 1 relaxation infeasible")
        return relaxed.z[:m], True, float(relaxed.z[m])

    # Ellipsoidal safe set: decision vector is [u; v] with |u| <= v.
    dim = 2 * m
    h = np.zeros((dim, dim))
    h[:m, :m] = 2.0 * np.eye(m)
    f = np.concatenate([-2.0 * u_nom, np.zeros(m)])
    rows = [(constraint.A_aux[i], 0.0) for i in range(constraint.A_aux.shape[0])]
    prog = ConvexProgram(Hobj=h, fobj=f, affine_ineqs=rows,
                         quad_ineqs=[(constraint.P, constraint.q, constraint.r)])
    sol = _require(solve(prog, start=_strict_aux_candidate(constraint)), "method 1")
    if sol.status == "optimal":
        return sol.z[:m], False, 0.0
    h = np.zeros((dim + 1, dim + 1))
    h[:m, :m] = 2.0 * np.eye(m)
    f = np.concatenate([-2.0 * u_nom, np.zeros(m), [params.rho]])
    p = np.zeros((dim + 1, dim + 1))
    p[:dim, :dim] = constraint.P
    q = np.concatenate([constraint.q, [-0.5]])
    rows = [(np.concatenate([constraint.A_aux[i], [0.0]]), 0.0)
            for i in range(constraint.A_aux.shape[0])]
    rows.append((np.concatenate([np.zeros(dim), [-1.0]]), 0.0))
    ubar0 = np.concatenate([u_nom, np.abs(u_nom) + 1.0])
    start = np.concatenate([ubar0, [max(constraint.quad_value(ubar0), 0.0) + 1.0]])
    relaxed = _require(solve(ConvexProgram(Hobj=h, fobj=f, affine_ineqs=rows,
                                           quad_ineqs=[(p, q, constraint.r)]), start=start),
                       "method 1 relaxation")
    if relaxed.status != "optimal":
        raise ControllerError("method 1 relaxation infeasible")
    return relaxed.z[:m], True, float(relaxed.z[dim])


def method1_input(belief: BeliefState, model: SystemModel, safe_set: SafeSet,
                  risk: RiskParams, params: Method1Params,
                  expected_value: bool = False) -> tuple[np.ndarray, bool, float]:
    """Safety filter: project the nominal input onto the admissible set.

    Returns (u, relaxed, delta); relaxed is True when the hard program was
    infeasible and the penalized slack formulation was solved instead.
    """
    constraint = _build_cbf(safe_set, belief, model, risk, expected_value)
    return _method1_from_constraint(constraint, belief, model, params)


def _clf_pieces(belief: BeliefState, model: SystemModel, params: ClfParams):
    """Quadratic data of V(A xbar + B u) - V(xbar) + c3 ||xbar||^2."""
    phi, a, b = params.Phi, model.A, model.B
    p_u = b.T @ phi @ b
    lin_u = b.T @ phi @ (a @ belief.mean)
    const = float(belief.mean @ (a.T @ phi @ a - phi
                                 + params.c3 * np.eye(model.n)) @ belief.mean)
    return p_u, lin_u, const


def _method2_program(belief: BeliefState, model: SystemModel, params: ClfParams,
                     constraint: Optional[CbfConstraint]) -> tuple[ConvexProgram, int, Optional[np.ndarray]]:
    """Assemble the CLF-CBF program; returns (program, dimension, warm start)."""
    m = model.m
    p_u, lin_u, const = _clf_pieces(belief, model, params)

    def clf_value(u: np.ndarray) -> float:
        return float(u @ p_u @ u + 2.0 * lin_u @ u + const)

    if constraint is None or isinstance(constraint, LinearCbfConstraint):
        dim = m + 1  # [u; delta]
        h = np.zeros((dim, dim))
        h[:, :] = params.Theta
        f = params.eta.copy()
        clf_p = np.zeros((dim, dim))
        clf_p[:m, :m] = p_u
        clf_q = np.concatenate([lin_u, [-0.5]])
        rows = []
        u0: Optional[np.ndarray] = np.zeros(m)
        if constraint is not None:
            rows.append((np.concatenate([constraint.coeff, [0.0]]), constraint.rhs))
            norm_sq = float(constraint.coeff @ constraint.coeff)
            if norm_sq > 0.0:
                # Strictly inside the safety row, one unit behind it.
                u0 = constraint.coeff * (constraint.rhs - 1.0) / norm_sq
            elif constraint.rhs <= 0.0:
                u0 = None
        start = None
        if u0 is not None:
            start = np.concatenate([u0, [clf_value(u0) + 1.0]])
        return ConvexProgram(Hobj=h, fobj=f, affine_ineqs=rows,
                             quad_ineqs=[(clf_p, clf_q, const)]), dim, start
    # Ellipsoidal safety constraint: decision vector [u; v; delta].
    dim = 2 * m + 1
    u_idx = np.arange(m)
    d_idx = dim - 1
    h = np.zeros((dim, dim))
    h[np.ix_(u_idx, u_idx)] = params.Theta[:m, :m]
    h[u_idx, d_idx] = params.Theta[:m, m]
    h[d_idx, u_idx] = params.Theta[m, :m]
    h[d_idx, d_idx] = params.Theta[m, m]
    f = np.zeros(dim)
    f[u_idx] = params.eta[:m]
    f[d_idx] = params.eta[m]
    clf_p = np.zeros((dim, dim))
    clf_p[:m, :m] = p_u
    clf_q = np.zeros(dim)
    clf_q[:m] = lin_u
    clf_q[d_idx] = -0.5
    cbf_p = np.zeros((dim, dim))
    cbf_p[:2 * m, :2 * m] = constraint.P
    cbf_q = np.concatenate([constraint.q, [0.0]])
    rows = [(np.concatenate([constraint.A_aux[i], [0.0]]), 0.0)
            for i in range(constraint.A_aux.shape[0])]
    start = None
    ubar0 = _strict_aux_candidate(constraint)
    if ubar0 is not None:
        start = np.concatenate([ubar0, [clf_value(ubar0[:m]) + 1.0]])
    return ConvexProgram(Hobj=h, fobj=f, affine_ineqs=rows,
                         quad_ineqs=[(clf_p, clf_q, const),
                                     (cbf_p, cbf_q, constraint.r)]), dim, start


def _method2_from_constraint(belief: BeliefState, model: SystemModel, params: ClfParams,
                             constraint: Optional[CbfConstraint]) -> tuple[np.ndarray, float]:
    prog, dim, start = _method2_program(belief, model, params, constraint)
    sol = _require(solve(prog, start=start), "method 2")
    if sol.status != "optimal":
        raise ControllerError("method 2 program infeasible: the hard safety "
                              "constraint admits no input at this belief")
    m = model.m
    return sol.z[:m], float(sol.z[dim - 1])


def method2_input(belief: BeliefState, model: SystemModel, safe_set: SafeSet,
                  risk: RiskParams, params: ClfParams,
                  expected_value: bool = False) -> tuple[np.ndarray, float]:
    """CLF-CBF controller. Returns (u, delta) with delta the CLF slack.

    The safety constraint is hard; only the CLF decrease row carries the
    relaxation variable. Infeasibility of the safety constraint raises.
    """
    constraint = _build_cbf(safe_set, belief, model, risk, expected_value)
    return _method2_from_constraint(belief, model, params, constraint)


def baseline_ignore_constraint(belief: BeliefState, params: NominalController) -> np.ndarray:
    """Nominal input with no safety constraint."""
    return params(belief.mean)


def ignore_constraint_clf_input(belief: BeliefState, model: SystemModel,
                                params: ClfParams) -> tuple[np.ndarray, float]:
    """CLF-only flavor of the unconstrained baseline."""
    return _method2_from_constraint(belief, model, params, constraint=None)


def baseline_expected_value(belief: BeliefState, model: SystemModel, safe_set: SafeSet,
                            risk: RiskParams,
                            params: Union[Method1Params, ClfParams]) -> np.ndarray:
    """Risk-neutral baseline: same program, expectation-based constraint."""
    if isinstance(params, Method1Params):
        u, _, _ = method1_input(belief, model, safe_set, risk, params, expected_value=True)
        return u
    u, _ = method2_input(belief, model, safe_set, risk, params, expected_value=True)
    return u


# ---------------------------------------------------------------------------
# Wiring for the simulation loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    relaxed: bool
    delta: float


def _m1_params(cfg: ControllerConfig) -> Method1Params:
    if cfg.nominal_gain is None:
        raise ValueError("controller requires nominal_gain")
    return Method1Params(nominal=NominalController(gain=cfg.nominal_gain), rho=cfg.rho)


def _m2_params(cfg: ControllerConfig) -> ClfParams:
    if cfg.phi is None or cfg.theta is None or cfg.eta is None or cfg.c3 is None:
        raise ValueError("controller requires phi, theta, eta, and c3")
    return ClfParams(Phi=cfg.phi, c3=cfg.c3, Theta=cfg.theta, eta=cfg.eta)


def build_controller(config: ScenarioConfig):
    """Return a callable (belief) -> ControlDecision for the configured method."""
    cfg = config.controller
    model, safe_set, risk = config.system, config.safe_set, config.risk
    method = cfg.method

    if method == "proposed_m1" or (method == "expected_value" and cfg.flavor == "m1"):
        params1 = _m1_params(cfg)
        ev = method == "expected_value"

        def controller(belief: BeliefState) -> ControlDecision:
            u, relaxed, delta = method1_input(belief, model, safe_set, risk, params1,
                                              expected_value=ev)
            return ControlDecision(u=u, relaxed=relaxed, delta=delta)

    elif method == "proposed_m2" or (method == "expected_value" and cfg.flavor == "m2"):
        params2 = _m2_params(cfg)
        ev = method == "expected_value"

        def controller(belief: BeliefState) -> ControlDecision:
            u, delta = method2_input(belief, model, safe_set, risk, params2,
                                     expected_value=ev)
            return ControlDecision(u=u, relaxed=False, delta=delta)

    elif method == "ignore" and cfg.flavor == "m1":
        nominal = NominalController(gain=cfg.nominal_gain)

        def controller(belief: BeliefState) -> ControlDecision:
            return ControlDecision(u=baseline_ignore_constraint(belief, nominal),
                                   relaxed=False, delta=0.0)

    elif method == "ignore" and cfg.flavor == "m2":
        params2 = _m2_params(cfg)

        def controller(belief: BeliefState) -> ControlDecision:
            u, delta = ignore_constraint_clf_input(belief, model, params2)
            return ControlDecision(u=u, relaxed=False, delta=delta)

    else:
        raise ValueError(f"unknown controller method {method!r} with flavor {cfg.flavor!r}")

    return controller
