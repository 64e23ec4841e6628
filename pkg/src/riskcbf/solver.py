"""Small dense convex solver for the controller programs.

Two program shapes are handled:

(i)  minimize 1/2 z^T H z + f^T z over affine inequalities a_i^T z <= b_i
     with strictly convex H. Solved exactly by enumerating candidate active
     sets and checking the KKT system of each; at the sizes this package
     produces (dimension <= ~6, fewer than ten rows) that is a few hundred
     tiny linear solves and has no iterative failure modes.

(ii) the same objective with one or more convex quadratic inequalities
     z^T P z + 2 q^T z + r <= 0, or a merely semidefinite H. Solved on a
     logarithmic-barrier central path: the barrier parameter drops one
     decade at a time with at most ten damped Newton centering steps per
     decade. Strict feasibility is established first by minimizing the
     common slack variable s over {g_i(z) <= s}.

The reported kkt_residual is the stationarity residual normalized by the
data scale max(1, |H z|_inf, |f|_inf); feasibility and complementarity are
absolute. Identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from . import linalg

FEAS_TOL = 1e-7
KKT_TOL = 1e-6
DEFAULT_ITER_BUDGET = 500

# Terminal barrier weight: complementarity products equal the weight on the
# central path, and active slacks of weight/multiplier size must stay above
# the float64 cancellation floor of the constraint evaluations.
_MU_FINAL = 1e-7
_NEWTON_PER_DECADE = 10
# Tiny quadratic regularization added inside barrier centering only; it
# bounds recession directions the objective is flat along (such as the
# auxiliary |u| <= v variable when its linear weight vanishes) and perturbs
# stationarity well below KKT_TOL.
_BARRIER_REG = 1e-10


@dataclass(frozen=True)
class ConvexProgram:
    """minimize 1/2 z^T Hobj z + fobj^T z subject to
    a^T z <= b for (a, b) in affine_ineqs and
    z^T P z + 2 q^T z + r <= 0 for (P, q, r) in quad_ineqs."""

    Hobj: np.ndarray
    fobj: np.ndarray
    affine_ineqs: Sequence[tuple[np.ndarray, float]] = field(default_factory=tuple)
    quad_ineqs: Sequence[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=tuple)

    def __post_init__(self):
        h = linalg.symmetrize(np.atleast_2d(np.asarray(self.Hobj, dtype=float)))
        f = np.atleast_1d(np.asarray(self.fobj, dtype=float))
        n = f.shape[0]
        if h.shape != (n, n):
            raise ValueError(f"Hobj must be {n}x{n}, got {h.shape}")
        if not linalg.is_psd(h):
            raise ValueError("Hobj must be positive semidefinite")
        object.__setattr__(self, "Hobj", h)
        object.__setattr__(self, "fobj", f)
        aff = []
        for a, b in self.affine_ineqs:
            a = np.atleast_1d(np.asarray(a, dtype=float))
            if a.shape[0] != n:
                raise ValueError(f"affine row has length {a.shape[0]}, expected {n}")
            aff.append((a, float(b)))
        object.__setattr__(self, "affine_ineqs", tuple(aff))
        quads = []
        for p, q, r in self.quad_ineqs:
            p = linalg.symmetrize(np.atleast_2d(np.asarray(p, dtype=float)))
            q = np.atleast_1d(np.asarray(q, dtype=float))
            if p.shape != (n, n) or q.shape[0] != n:
                raise ValueError("quadratic constraint dimensions do not match the program")
            if not linalg.is_psd(p):
                raise ValueError("quadratic constraint matrix must be positive semidefinite")
            quads.append((p, q, float(r)))
        object.__setattr__(self, "quad_ineqs", tuple(quads))

    @property
    def dim(self) -> int:
        return self.fobj.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.Hobj @ z + self.fobj @ z)

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        """All g_i(z); the program is feasible at z iff every entry <= 0."""
        vals = [a @ z - b for a, b in self.affine_ineqs]
        vals += [float(z @ p @ z + 2.0 * q @ z + r) for p, q, r in self.quad_ineqs]
        return np.asarray(vals) if vals else np.empty(0)


@dataclass(frozen=True)
class Solution:
    z: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iter"
    kkt_residual: float
    ineq_multipliers: Optional[np.ndarray] = None  # affine rows then quadratic rows


def _data_scale(prog: ConvexProgram) -> float:
    pieces = [1.0, float(np.max(np.abs(prog.fobj))) if prog.fobj.size else 0.0,
              float(np.max(np.abs(prog.Hobj))) if prog.Hobj.size else 0.0]
    return max(pieces)


def _constraint_gradients(prog: ConvexProgram, z: np.ndarray) -> np.ndarray:
    rows = [a for a, _ in prog.affine_ineqs]
    rows += [2.0 * (p @ z + q) for p, q, _ in prog.quad_ineqs]
    return np.array(rows).reshape(len(rows), prog.dim) if rows else np.empty((0, prog.dim))


def _stationarity(prog: ConvexProgram, z: np.ndarray, lam: np.ndarray) -> float:
    grad = prog.Hobj @ z + prog.fobj
    if lam.size:
        grad = grad + _constraint_gradients(prog, z).T @ lam
    denom = max(1.0, float(np.max(np.abs(prog.Hobj @ z))), float(np.max(np.abs(prog.fobj))))
    return float(np.max(np.abs(grad))) / denom


def _best_multipliers(prog: ConvexProgram, z: np.ndarray) -> np.ndarray:
    """Nonnegative multipliers minimizing the stationarity residual at z.

    Support is restricted to near-active constraints so the certificate
    cannot hide a stationarity gap behind a slack constraint (which would
    violate complementarity).
    """
    g = prog.constraint_values(z)
    if not g.shape[0]:
        return np.empty(0)
    scales = np.array([1.0 + abs(b) for _, b in prog.affine_ineqs]
                      + [1.0 + abs(r) for _, _, r in prog.quad_ineqs])
    active = -g <= 1e-4 * scales
    lam = np.zeros(g.shape[0])
    if np.any(active):
        from scipy.optimize import nnls

        jac = _constraint_gradients(prog, z)
        lam_act, _ = nnls(jac[active].T, -(prog.Hobj @ z + prog.fobj))
        lam[active] = lam_act
    return lam


# ---------------------------------------------------------------------------
# Exact path: active-set enumeration for strictly convex affine-only programs
# ---------------------------------------------------------------------------

def _solve_affine_enumeration(prog: ConvexProgram) -> Optional[Solution]:
    n = prog.dim
    m = len(prog.affine_ineqs)
    rows = np.array([a for a, _ in prog.affine_ineqs]).reshape(m, n) if m else np.empty((0, n))
    rhs = np.array([b for _, b in prog.affine_ineqs])
    scale = max(1.0, float(np.max(np.abs(rhs))) if m else 0.0,
                float(np.max(np.abs(rows))) if m else 0.0)

    best: Optional[tuple[float, np.ndarray, np.ndarray]] = None
    for size in range(0, min(n, m) + 1):
        for subset in combinations(range(m), size):
            idx = list(subset)
            a_s = rows[idx]
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = prog.Hobj
            kkt[:n, n:] = a_s.T
            kkt[n:, :n] = a_s
            vec = np.concatenate([-prog.fobj, rhs[idx]])
            try:
                sol = np.linalg.solve(kkt, vec)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)):
                continue
            # Guard against near-singular working sets.
            if np.max(np.abs(kkt @ sol - vec)) > 1e-8 * scale:
                continue
            z = sol[:n]
            lam_s = sol[n:]
            if size and np.min(lam_s) < -1e-9 * scale:
                continue
            if m and np.max(rows @ z - rhs) > 1e-9 * scale:
                continue
            obj = prog.objective(z)
            if best is None or obj < best[0]:
                lam = np.zeros(m)
                lam[idx] = np.clip(lam_s, 0.0, None)
                best = (obj, z, lam)
    if best is None:
        return None
    _, z, lam = best
    return Solution(z=z, status="optimal", kkt_residual=_stationarity(prog, z, lam),
                    ineq_multipliers=lam)


# ---------------------------------------------------------------------------
# Barrier path
# ---------------------------------------------------------------------------

class _Constraints:
    """Evaluates g, gradients, and Hessian pieces for one program.

    Affine data is packed into one matrix so evaluations are single gemv
    calls; only quadratic rows are recomputed per point.
    """

    def __init__(self, prog: ConvexProgram, lifted_slack: bool):
        # With lifted_slack the variable vector is [z; s] and every
        # constraint becomes g_i(z) - s <= 0 (the feasibility phase).
        self.lifted = lifted_slack
        self.n = prog.dim
        self.quads = prog.quad_ineqs
        self.n_aff = len(prog.affine_ineqs)
        self.count = self.n_aff + len(self.quads)
        dim = self.n + (1 if lifted_slack else 0)
        self.aff_a = np.zeros((self.n_aff, dim))
        self.aff_b = np.zeros(self.n_aff)
        for k, (a, b) in enumerate(prog.affine_ineqs):
            self.aff_a[k, :self.n] = a
            self.aff_b[k] = b
        if lifted_slack:
            self.aff_a[:, -1] = -1.0

    def values(self, y: np.ndarray) -> np.ndarray:
        z, shift = (y[:-1], y[-1]) if self.lifted else (y, 0.0)
        vals = np.empty(self.count)
        vals[:self.n_aff] = self.aff_a @ y - self.aff_b
        for j, (p, q, r) in enumerate(self.quads):
            vals[self.n_aff + j] = z @ p @ z + 2.0 * q @ z + r - shift
        return vals

    def gradients(self, y: np.ndarray) -> np.ndarray:
        z = y[:-1] if self.lifted else y
        grads = np.zeros((self.count, y.shape[0]))
        grads[:self.n_aff] = self.aff_a
        for j, (p, q, _) in enumerate(self.quads):
            grads[self.n_aff + j, :self.n] = 2.0 * (p @ z + q)
            if self.lifted:
                grads[self.n_aff + j, -1] = -1.0
        return grads

    def curvatures(self) -> list[Optional[np.ndarray]]:
        """Constraint Hessians (2P for quadratics, None for affine rows)."""
        out: list[Optional[np.ndarray]] = [None] * self.n_aff
        out += [2.0 * p for p, _, _ in self.quads]
        return out


def _center(obj_h: np.ndarray, obj_f: np.ndarray, cons: _Constraints, y: np.ndarray,
            mu: float, reg: float, max_steps: int, budget: list[int],
            early_exit: Optional[Callable[[np.ndarray], bool]] = None,
            tol: float = 1e-9) -> np.ndarray:
    """Damped Newton on 1/2 y^T H y + f^T y + reg ||y||^2 - mu sum log(-g).

    Stops once half the squared Newton decrement (an estimate of the
    remaining objective gap) falls below tol times the objective scale.
    """
    dim = y.shape[0]
    curv = cons.curvatures()
    eye = np.eye(dim)

    def eval_f(yy: np.ndarray) -> float:
        g = cons.values(yy)
        if np.any(g >= 0.0):
            return np.inf
        return (0.5 * yy @ obj_h @ yy + obj_f @ yy + reg * (yy @ yy)
                - mu * float(np.sum(np.log(-g))))

    for _ in range(max_steps):
        if budget[0] <= 0:
            break
        budget[0] -= 1
        g = cons.values(y)
        grads = cons.gradients(y)
        inv_slack = 1.0 / (-g)
        grad = obj_h @ y + obj_f + 2.0 * reg * y + mu * (grads.T @ inv_slack)
        hess = obj_h + 2.0 * reg * eye
        hess = hess + mu * (grads.T * inv_slack**2) @ grads
        for ci, c in enumerate(curv):
            if c is not None:
                block = hess[:c.shape[0], :c.shape[0]]
                block += mu * inv_slack[ci] * c
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.solve(hess + 1e-12 * np.trace(hess) * eye, grad)
        slope = float(grad @ step)
        if -0.5 * slope <= tol * max(1.0, abs(float(obj_f @ y))):
            break
        t = 1.0
        f0 = eval_f(y)
        for _ in range(60):
            if np.all(cons.values(y + t * step) < 0.0):
                break
            t *= 0.5
        else:
            break
        # Stay a fraction off the boundary so the next Hessian stays sane.
        if not np.all(cons.values(y + min(1.0, t / 0.95) * step) < 0.0):
            t *= 0.95
        for _ in range(60):
            if eval_f(y + t * step) <= f0 + 0.25 * t * slope:
                break
            t *= 0.5
        y = y + t * step
        if early_exit is not None and early_exit(y):
            return y
    return y


def _find_strictly_feasible(prog: ConvexProgram, scale: float,
                            budget: list[int]) -> Optional[np.ndarray]:
    n = prog.dim
    cons = _Constraints(prog, lifted_slack=False)
    margin = 1e-9 * scale
    candidates = [np.zeros(n)]
    try:
        candidates.append(np.linalg.solve(prog.Hobj + 2.0 * _BARRIER_REG * np.eye(n),
                                          -prog.fobj))
    except np.linalg.LinAlgError:
        pass
    for z in candidates:
        if np.all(np.isfinite(z)) and np.all(cons.values(z) < -margin):
            return z

    # Feasibility phase: minimize the shared slack s over g_i(z) <= s.
    lifted = _Constraints(prog, lifted_slack=True)
    z0 = candidates[0]
    s0 = float(np.max(cons.values(z0))) if cons.count else 0.0
    s0 += max(1.0, 0.1 * abs(s0))
    y = np.concatenate([z0, [s0]])
    obj_h = np.zeros((n + 1, n + 1))
    obj_f = np.zeros(n + 1)
    obj_f[-1] = 1.0

    def interior(yy: np.ndarray) -> bool:
        return bool(np.all(cons.values(yy[:-1]) < -margin))

    mu = max(1.0, abs(s0))
    while mu > 1e-7 and budget[0] > 0:
        y = _center(obj_h, obj_f, lifted, y, mu, _BARRIER_REG,
                    max_steps=_NEWTON_PER_DECADE, budget=budget, early_exit=interior)
        if interior(y):
            return y[:-1]
        mu *= 0.1
    return y[:-1] if interior(y) else None


def _solve_barrier(prog: ConvexProgram, budget: list[int],
                   start: Optional[np.ndarray] = None) -> Solution:
    scale = _data_scale(prog)
    cons = _Constraints(prog, lifted_slack=False)
    z = None
    if start is not None:
        start = np.asarray(start, dtype=float)
        if start.shape == (prog.dim,) and np.all(cons.values(start) < -1e-12 * scale):
            z = start
    if z is None:
        z = _find_strictly_feasible(prog, scale, budget)
    if z is None:
        return Solution(z=np.zeros(prog.dim), status="infeasible", kkt_residual=np.inf)

    # Large initial weight keeps early iterates well interior; dropping it a
    # decade at a time then tracks the central path without jamming against
    # a constraint. The initial centering is not a decade step and may need a
    # long damped-Newton march along curved constraint walls, so it gets a
    # much larger share of the budget.
    mu = 0.01 * (1.0 + abs(prog.objective(z)))
    z = _center(prog.Hobj, prog.fobj, cons, z, mu, _BARRIER_REG,
                20 * _NEWTON_PER_DECADE, budget, tol=1e-9)
    mu *= 0.1
    while mu > _MU_FINAL:
        z = _center(prog.Hobj, prog.fobj, cons, z, mu, _BARRIER_REG,
                    _NEWTON_PER_DECADE, budget, tol=1e-9)
        mu *= 0.1
        if budget[0] <= 0:
            break
    # Final polish at the terminal barrier weight.
    z = _center(prog.Hobj, prog.fobj, cons, z, _MU_FINAL, _BARRIER_REG,
                2 * _NEWTON_PER_DECADE, budget, tol=1e-13)

    lam = _best_multipliers(prog, z)
    residual = _stationarity(prog, z, lam)
    g = cons.values(z)
    feasible = not cons.count or float(np.max(g)) <= FEAS_TOL
    complementary = not cons.count or float(np.max(lam * np.maximum(-g, 0.0))) <= 1e-5
    status = "optimal" if (feasible and complementary and residual <= KKT_TOL) else "max_iter"
    return Solution(z=z, status=status, kkt_residual=residual, ineq_multipliers=lam)


def solve(prog: ConvexProgram, max_iter: int = DEFAULT_ITER_BUDGET,
          start: Optional[np.ndarray] = None) -> Solution:
    """Solve the program; see the module docstring for the method split.

    `start`, when given and strictly feasible, seeds the barrier path and
    skips its feasibility phase; it never changes the reported solution
    beyond the stated tolerances.
    """
    budget = [int(max_iter)]
    n = prog.dim

    if not prog.affine_ineqs and not prog.quad_ineqs:
        try:
            z = np.linalg.solve(prog.Hobj, -prog.fobj)
        except np.linalg.LinAlgError:
            z, *_ = np.linalg.lstsq(prog.Hobj, -prog.fobj, rcond=None)
        residual = _stationarity(prog, z, np.empty(0))
        status = "optimal" if residual <= KKT_TOL else "max_iter"
        return Solution(z=z, status=status, kkt_residual=residual,
                        ineq_multipliers=np.empty(0))

    eigs = np.linalg.eigvalsh(prog.Hobj)
    strictly_convex = eigs[0] > 1e-10 * max(1.0, eigs[-1])
    if strictly_convex and not prog.quad_ineqs:
        result = _solve_affine_enumeration(prog)
        if result is not None:
            return result
        # No KKT point over any candidate active set: the constraints are
        # mutually exclusive. Certify by checking that even the minimal
        # shared slack stays positive.
        z = _find_strictly_feasible(prog, _data_scale(prog), budget)
        if z is None:
            return Solution(z=np.zeros(n), status="infeasible", kkt_residual=np.inf)
        return _solve_barrier(prog, budget, start=z)

    return _solve_barrier(prog, budget, start=start)
