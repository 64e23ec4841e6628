"""System description, safe sets, and scenario configuration.

A scenario bundles the linear stochastic plant

    x_{t+1} = A x_t + B u_t + w_t,    z_t = H x_t + v_t,

with E[w w^T] = Q, E[v v^T] = R, a safe set given either as a half-space
h(x) = q^T x + r >= 0 or as an ellipsoid interior
h(x) = -(x - c)^T E (x - c) + r >= 0, the risk parameters (epsilon, alpha),
the filter initialization, and the simulation/controller settings.

Scenarios loaded through :func:`load_scenario` are fully validated; every
invariant violation is reported with the dotted config field that caused it.
Direct dataclass construction only checks dimensional consistency so that
tests can build degenerate plants (for example noise-free ones).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import linalg


class ScenarioError(Exception):
    """Base class for scenario loading problems."""


class ScenarioParseError(ScenarioError):
    """The file could not be read as a config document."""


class ScenarioValidationError(ScenarioError):
    """A config value violates an invariant. `field` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _set(obj, name, value):
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class SystemModel:
    """Constant matrices of the plant and the noise second moments."""

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        _set(self, "A", _readonly(np.atleast_2d(self.A)))
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        _set(self, "B", _readonly(b))
        h = np.asarray(self.H, dtype=float)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        _set(self, "H", _readonly(h))
        _set(self, "Q", _readonly(np.atleast_2d(self.Q)))
        _set(self, "R", _readonly(np.atleast_2d(self.R)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {self.B.shape}")
        if self.H.shape[1] != n:
            raise ValueError(f"H must have {n} columns, got {self.H.shape}")
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be {n}x{n}, got {self.Q.shape}")
        n_y = self.H.shape[0]
        if self.R.shape != (n_y, n_y):
            raise ValueError(f"R must be {n_y}x{n_y}, got {self.R.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class BeliefState:
    """Filtered mean and covariance; the filter's sufficient statistics.

    The covariance is symmetrized and eigenvalue-clipped to PSD on
    construction so downstream risk evaluations never see an indefinite
    matrix.
    """

    mean: np.ndarray
    cov: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        _set(self, "mean", _readonly(np.atleast_1d(self.mean)))
        _set(self, "cov", _readonly(linalg.clip_psd(np.atleast_2d(self.cov))))
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(f"cov must be {n}x{n}, got {self.cov.shape}")
        if self.time_index < 0:
            raise ValueError("time_index must be nonnegative")


@dataclass(frozen=True)
class HalfSpaceSafeSet:
    """Safe set {x : q^T x + r >= 0}."""

    q: np.ndarray
    r: float

    def __post_init__(self):
        _set(self, "q", _readonly(np.atleast_1d(self.q)))
        _set(self, "r", float(self.r))


@dataclass(frozen=True)
class EllipsoidSafeSet:
    """Safe set {x : -(x - center)^T E (x - center) + r >= 0}."""

    E: np.ndarray
    center: np.ndarray
    r: float

    def __post_init__(self):
        _set(self, "E", _readonly(np.atleast_2d(self.E)))
        _set(self, "center", _readonly(np.atleast_1d(self.center)))
        _set(self, "r", float(self.r))
        n = self.center.shape[0]
        if self.E.shape != (n, n):
            raise ValueError(f"E must be {n}x{n}, got {self.E.shape}")


SafeSet = Union[HalfSpaceSafeSet, EllipsoidSafeSet]


@dataclass(frozen=True)
class RiskParams:
    """CVaR level epsilon in (0,1) and barrier decay rate alpha in [0,1)."""

    epsilon: float
    alpha: float

    def __post_init__(self):
        _set(self, "epsilon", float(self.epsilon))
        _set(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class ControllerConfig:
    """Controller selector plus the parameters its method needs.

    method is one of proposed_m1, proposed_m2, ignore, expected_value.
    For the two baselines, `flavor` picks which proposed method they shadow
    (safety-filter style "m1" or CLF-CBF style "m2"; default "m1").
    """

    method: str
    flavor: str = "m1"
    nominal_gain: Optional[np.ndarray] = None
    rho: float = 1e4
    phi: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    c3: Optional[float] = None

    def __post_init__(self):
        if self.nominal_gain is not None:
            _set(self, "nominal_gain", _readonly(np.atleast_1d(self.nominal_gain)))
        if self.phi is not None:
            _set(self, "phi", _readonly(np.atleast_2d(self.phi)))
        if self.theta is not None:
            _set(self, "theta", _readonly(np.atleast_2d(self.theta)))
        if self.eta is not None:
            _set(self, "eta", _readonly(np.atleast_1d(self.eta)))
        if self.c3 is not None:
            _set(self, "c3", float(self.c3))


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated bundle of everything one Monte Carlo experiment needs."""

    system: SystemModel
    safe_set: SafeSet
    risk: RiskParams
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    horizon_steps: int
    num_runs: int
    rng_seed: int
    controller: ControllerConfig
    disturbance_model: str = "gaussian"

    def __post_init__(self):
        _set(self, "initial_mean", _readonly(np.atleast_1d(self.initial_mean)))
        _set(self, "initial_cov", _readonly(np.atleast_2d(self.initial_cov)))


def h_value(safe_set: SafeSet, x: np.ndarray) -> float:
    """Barrier value h(x); membership in the safe set is h(x) >= 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(safe_set, HalfSpaceSafeSet):
        if x.shape != safe_set.q.shape:
            raise ValueError(f"x has length {x.shape[0]}, expected {safe_set.q.shape[0]}")
        return float(safe_set.q @ x + safe_set.r)
    if isinstance(safe_set, EllipsoidSafeSet):
        if x.shape != safe_set.center.shape:
            raise ValueError(f"x has length {x.shape[0]}, expected {safe_set.center.shape[0]}")
        d = x - safe_set.center
        return float(-(d @ safe_set.E @ d) + safe_set.r)
    raise TypeError(f"unsupported safe set type {type(safe_set)!r}")


# ---------------------------------------------------------------------------
# Config document handling
# ---------------------------------------------------------------------------

CONTROLLER_METHODS = ("proposed_m1", "proposed_m2", "ignore", "expected_value")
DISTURBANCE_MODELS = ("gaussian", "uniform")


def _fail(field_name: str, message: str):
    raise ScenarioValidationError(field_name, message)


def _get(tree: dict, path: str):
    node = tree
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            _fail(path, "missing required key")
        node = node[part]
    return node


def _matrix(value, field_name: str, rows: Optional[int] = None, cols: Optional[int] = None,
            allow_scalar: bool = False, vector_as: Optional[str] = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(field_name, "not a numeric array")
    if arr.ndim == 0:
        if not allow_scalar:
            _fail(field_name, "expected a matrix, got a scalar")
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if vector_as == "col":
            arr = arr.reshape(-1, 1)
        elif vector_as == "row":
            arr = arr.reshape(1, -1)
        else:
            _fail(field_name, "expected a matrix (list of rows)")
    elif arr.ndim != 2:
        _fail(field_name, f"expected a matrix, got {arr.ndim} dimensions")
    if rows is not None and arr.shape[0] != rows:
        _fail(field_name, f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        _fail(field_name, f"expected {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        _fail(field_name, "contains non-finite entries")
    return arr


def _vector(value, field_name: str, length: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        _fail(field_name, "not a numeric vector")
    if arr.ndim != 1:
        _fail(field_name, "expected a flat vector")
    if length is not None and arr.shape[0] != length:
        _fail(field_name, f"expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        _fail(field_name, "contains non-finite entries")
    return arr


def _check_sym(m: np.ndarray, field_name: str):
    if not linalg.is_symmetric(m):
        _fail(field_name, "must be symmetric")


def _check_psd(m: np.ndarray, field_name: str):
    _check_sym(m, field_name)
    if not linalg.is_psd(m):
        _fail(field_name, "must be positive semidefinite")


def _check_pd(m: np.ndarray, field_name: str):
    _check_sym(m, field_name)
    if not linalg.is_pd(m):
        _fail(field_name, "must be positive definite")


def scenario_from_dict(tree: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from a parsed config tree."""
    if not isinstance(tree, dict):
        raise ScenarioParseError("config root must be a key/value tree")

    A = _matrix(_get(tree, "system.A"), "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        _fail("system.A", f"must be square, got {A.shape}")
    B = _matrix(_get(tree, "system.B"), "system.B", rows=n, vector_as="col")
    H = _matrix(_get(tree, "system.H"), "system.H", cols=n, vector_as="row", allow_scalar=n == 1)
    n_y = H.shape[0]
    Q = _matrix(_get(tree, "system.Q"), "system.Q", rows=n, cols=n, allow_scalar=n == 1)
    R = _matrix(_get(tree, "system.R"), "system.R", rows=n_y, cols=n_y, allow_scalar=True)
    _check_psd(Q, "system.Q")
    _check_pd(R, "system.R")
    system = SystemModel(A=A, B=B, H=H, Q=Q, R=R)

    ss = _get(tree, "safe_set")
    kind = ss.get("type") if isinstance(ss, dict) else None
    if kind == "half_space":
        q = _vector(_get(tree, "safe_set.q"), "safe_set.q", length=n)
        if not np.any(q != 0.0):
            _fail("safe_set.q", "must not be the zero vector")
        safe_set: SafeSet = HalfSpaceSafeSet(q=q, r=float(_get(tree, "safe_set.r")))
    elif kind == "ellipsoid":
        E = _matrix(_get(tree, "safe_set.E"), "safe_set.E", rows=n, cols=n, allow_scalar=n == 1)
        _check_pd(E, "safe_set.E")
        center = _vector(_get(tree, "safe_set.center"), "safe_set.center", length=n)
        r = float(_get(tree, "safe_set.r"))
        if not r > 0.0:
            _fail("safe_set.r", "must be positive (the set is otherwise empty or a point)")
        safe_set = EllipsoidSafeSet(E=E, center=center, r=r)
    else:
        _fail("safe_set.type", "must be 'half_space' or 'ellipsoid'")

    epsilon = float(_get(tree, "risk.epsilon"))
    if not 0.0 < epsilon < 1.0:
        _fail("risk.epsilon", f"must lie in (0, 1), got {epsilon}")
    alpha = float(_get(tree, "risk.alpha"))
    if not 0.0 <= alpha < 1.0:
        _fail("risk.alpha", f"must lie in [0, 1), got {alpha}")
    risk = RiskParams(epsilon=epsilon, alpha=alpha)

    mean0 = _vector(_get(tree, "init.mean"), "init.mean", length=n)
    cov0 = _matrix(_get(tree, "init.cov"), "init.cov", rows=n, cols=n, allow_scalar=n == 1)
    _check_psd(cov0, "init.cov")

    horizon = _get(tree, "sim.horizon_steps")
    if not isinstance(horizon, int) or horizon < 1:
        _fail("sim.horizon_steps", "must be an integer >= 1")
    num_runs = _get(tree, "sim.num_runs")
    if not isinstance(num_runs, int) or num_runs < 1:
        _fail("sim.num_runs", "must be an integer >= 1")
    seed = _get(tree, "sim.seed")
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        _fail("sim.seed", "must be an unsigned 64-bit integer")

    method = _get(tree, "controller.method")
    if method not in CONTROLLER_METHODS:
        _fail("controller.method", f"unknown controller {method!r}; "
              f"expected one of {', '.join(CONTROLLER_METHODS)}")
    ctrl_tree = _get(tree, "controller")
    flavor = ctrl_tree.get("flavor", "m1")
    if flavor not in ("m1", "m2"):
        _fail("controller.flavor", "must be 'm1' or 'm2'")
    needs_m1 = method == "proposed_m1" or (method in ("ignore", "expected_value") and flavor == "m1")
    needs_m2 = method == "proposed_m2" or (method in ("ignore", "expected_value") and flavor == "m2")

    nominal_gain = rho = phi = theta = eta = c3 = None
    if "nominal_gain" in ctrl_tree:
        nominal_gain = _vector(ctrl_tree["nominal_gain"], "controller.nominal_gain", length=n)
    if needs_m1 and nominal_gain is None:
        _fail("controller.nominal_gain", f"required for method {method!r}")
    rho = float(ctrl_tree.get("rho", 1e4))
    if not rho > 0.0:
        _fail("controller.rho", "must be positive")
    if "phi" in ctrl_tree:
        phi = _matrix(ctrl_tree["phi"], "controller.phi", rows=n, cols=n, allow_scalar=n == 1)
        _check_pd(phi, "controller.phi")
    if "theta" in ctrl_tree:
        theta = _matrix(ctrl_tree["theta"], "controller.theta",
                        rows=system.m + 1, cols=system.m + 1)
        _check_psd(theta, "controller.theta")
    if "eta" in ctrl_tree:
        eta = _vector(ctrl_tree["eta"], "controller.eta", length=system.m + 1)
    if "c3" in ctrl_tree:
        c3 = float(ctrl_tree["c3"])
        if not c3 > 0.0:
            _fail("controller.c3", "must be positive")
    if needs_m2:
        for name, value in (("phi", phi), ("theta", theta), ("eta", eta), ("c3", c3)):
            if value is None:
                _fail(f"controller.{name}", f"required for method {method!r} (flavor {flavor!r})")

    controller = ControllerConfig(method=method, flavor=flavor, nominal_gain=nominal_gain,
                                  rho=rho, phi=phi, theta=theta, eta=eta, c3=c3)

    disturbance = _get(tree, "disturbance_model")
    if disturbance not in DISTURBANCE_MODELS:
        _fail("disturbance_model", f"must be one of {', '.join(DISTURBANCE_MODELS)}")

    return ScenarioConfig(system=system, safe_set=safe_set, risk=risk,
                          initial_mean=mean0, initial_cov=cov0,
                          horizon_steps=horizon, num_runs=num_runs, rng_seed=seed,
                          controller=controller, disturbance_model=disturbance)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Inverse of scenario_from_dict; round-trips exactly through JSON."""
    ss: dict
    if isinstance(config.safe_set, HalfSpaceSafeSet):
        ss = {"type": "half_space", "q": config.safe_set.q.tolist(), "r": config.safe_set.r}
    else:
        ss = {"type": "ellipsoid", "E": config.safe_set.E.tolist(),
              "center": config.safe_set.center.tolist(), "r": config.safe_set.r}
    ctrl: dict = {"method": config.controller.method, "flavor": config.controller.flavor,
                  "rho": config.controller.rho}
    if config.controller.nominal_gain is not None:
        ctrl["nominal_gain"] = config.controller.nominal_gain.tolist()
    if config.controller.phi is not None:
        ctrl["phi"] = config.controller.phi.tolist()
    if config.controller.theta is not None:
        ctrl["theta"] = config.controller.theta.tolist()
    if config.controller.eta is not None:
        ctrl["eta"] = config.controller.eta.tolist()
    if config.controller.c3 is not None:
        ctrl["c3"] = config.controller.c3
    return {
        "system": {"A": config.system.A.tolist(), "B": config.system.B.tolist(),
                   "H": config.system.H.tolist(), "Q": config.system.Q.tolist(),
                   "R": config.system.R.tolist()},
        "safe_set": ss,
        "risk": {"epsilon": config.risk.epsilon, "alpha": config.risk.alpha},
        "init": {"mean": config.initial_mean.tolist(), "cov": config.initial_cov.tolist()},
        "sim": {"horizon_steps": config.horizon_steps, "num_runs": config.num_runs,
                "seed": config.rng_seed},
        "controller": ctrl,
        "disturbance_model": config.disturbance_model,
    }


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Load and validate a scenario config file (JSON key/value tree)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return scenario_from_dict(tree)
