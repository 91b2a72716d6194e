"""Augmented-Lagrangian solver for smooth constrained nonlinear programs.

Problem form::

    min f(x)  s.t.  c(x) = 0,  g(x) <= 0,  lower <= x <= upper

The outer loop updates multipliers and the penalty parameter; each inner
problem (augmented Lagrangian over the box) is minimized by a projected
limited-memory BFGS method.  Constraints provide values and
transposed-Jacobian products, which is all the augmented Lagrangian
gradient needs.

Constraints may also expose a sparse Jacobian, and the problem a sparse
positive semidefinite model of the objective curvature.  When present,
they form a Gauss-Newton matrix ``B + rho J^T J + sigma I`` whose inverse
seeds the quasi-Newton recursion.  Long chains of coupled equality
constraints (multiple shooting) make the penalty term badly conditioned,
and this is what keeps the inner iteration counts small there.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

__all__ = [
    "Constraint",
    "NLPProblem",
    "SolveReport",
    "SolverOptions",
    "check_gradient",
    "solve",
]

log = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], np.ndarray]
SparseFn = Callable[[np.ndarray], scipy.sparse.spmatrix]


@dataclass
class Constraint:
    """Vector constraint; ``evaluate(x)`` returns ``(values, vjp)`` with ``vjp(w) = J(x)^T w``.

    ``jacobian(x)``, when given, returns ``J(x)`` as a sparse matrix.  It is
    only used to precondition the solver, never for gradients.
    """

    evaluate: Callable[[np.ndarray], tuple[np.ndarray, Vjp]]
    size: int
    name: str = ""
    jacobian: SparseFn | None = None

    @classmethod
    def linear(cls, A, b=None, name: str = "") -> "Constraint":
        """``A x - b`` for a dense or sparse matrix ``A``."""
        A = scipy.sparse.csr_matrix(A)
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
        AT = A.T.tocsr()

        def evaluate(x):
            return A @ x - b, lambda w: AT @ w

        return cls(evaluate, A.shape[0], name, jacobian=lambda x: A)

    def values(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[0]

    def vjp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[1](w)


@dataclass
class NLPProblem:
    n_vars: int
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]]
    eq_constraints: list[Constraint] = field(default_factory=list)
    ineq_constraints: list[Constraint] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    # sparse PSD model of the objective Hessian, for preconditioning only
    curvature: SparseFn | None = None

    def __post_init__(self):
        self.lower = np.full(self.n_vars, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(self.n_vars, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (self.n_vars,) or self.upper.shape != (self.n_vars,):
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_eq(self) -> int:
        return sum(c.size for c in self.eq_constraints)

    @property
    def n_ineq(self) -> int:
        return sum(c.size for c in self.ineq_constraints)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def constraint_values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        eq = [c.values(x) for c in self.eq_constraints]
        ineq = [c.values(x) for c in self.ineq_constraints]
        return (np.concatenate(eq) if eq else np.zeros(0)), (np.concatenate(ineq) if ineq else np.zeros(0))

    def max_violation(self, x: np.ndarray) -> float:
        c, g = self.constraint_values(x)
        v = 0.0
        if c.size:
            v = max(v, float(np.abs(c).max()))
        if g.size:
            v = max(v, float(np.maximum(g, 0.0).max()))
        box = np.maximum(self.lower - x, 0.0).max(initial=0.0)
        box = max(box, np.maximum(x - self.upper, 0.0).max(initial=0.0))
        return max(v, float(box))


@dataclass
class SolverOptions:
    tol_opt: float = 1e-6
    tol_feas: float = 1e-6
    max_outer: int = 40
    max_inner: int = 3000
    penalty0: float = 1.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    multiplier_bound: float = 1e8
    # required fractional decrease of infeasibility between outer iterations
    feas_decrease: float = 0.25
    inner_tol0: float = 1e-2
    memory: int = 20
    # sigma in the preconditioner B + rho J^T J + sigma I, relative to max(1, rho)
    precond_shift: float = 1e-6
    # inner iterations between preconditioner refreshes
    precond_refresh: int = 25
    record_iterates: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**known)


@dataclass
class SolveReport:
    status: str
    x: np.ndarray
    objective: float
    max_violation: float
    kkt_residual: float
    n_outer: int
    n_inner: int
    objective_history: list[float] = field(default_factory=list)
    violation_history: list[float] = field(default_factory=list)
    iterate_snapshots: list[np.ndarray] = field(default_factory=list)
    # (merit at start of inner solve, merit at end, penalty) per outer iteration
    outer_history: list[tuple[float, float, float]] = field(default_factory=list)
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class _NonFinite(Exception):
    pass


class _Evaluator:
    """Augmented Lagrangian value/gradient with a one-point cache."""

    def __init__(self, p: NLPProblem):
        self.p = p
        self.lam = np.zeros(p.n_eq)
        self.mu = np.zeros(p.n_ineq)
        self.rho = 1.0
        self._key = None
        self._cache = None

    def raw(self, x):
        key = x.tobytes()
        if key == self._key:
            return self._cache
        f, gf = self.p.objective(x)
        cs, cvjps = [], []
        for con in self.p.eq_constraints:
            v, vjp = con.evaluate(x)
            cs.append(np.asarray(v, float))
            cvjps.append(vjp)
        gs, gvjps = [], []
        for con in self.p.ineq_constraints:
            v, vjp = con.evaluate(x)
            gs.append(np.asarray(v, float))
            gvjps.append(vjp)
        c = np.concatenate(cs) if cs else np.zeros(0)
        g = np.concatenate(gs) if gs else np.zeros(0)
        finite = np.isfinite(f) and np.all(np.isfinite(gf)) and np.all(np.isfinite(c)) and np.all(np.isfinite(g))
        self._key = key
        self._cache = (float(f), np.asarray(gf, float), c, cvjps, g, gvjps, bool(finite))
        return self._cache

    def _apply(self, vjps, sizes, w):
        out = np.zeros(self.p.n_vars)
        start = 0
        for vjp, n in zip(vjps, sizes):
            if n:
                out += vjp(w[start : start + n])
            start += n
        return out

    def lagrangian_parts(self, x):
        f, gf, c, cvjps, g, gvjps, finite = self.raw(x)
        lam_eff = self.lam + self.rho * c
        mu_eff = np.maximum(0.0, self.mu + self.rho * g)
        grad = gf.copy()
        if c.size:
            grad += self._apply(cvjps, [k.size for k in self.p.eq_constraints], lam_eff)
        if g.size:
            grad += self._apply(gvjps, [k.size for k in self.p.ineq_constraints], mu_eff)
        val = f + self.lam @ c + 0.5 * self.rho * (c @ c)
        val += (0.5 / self.rho) * float(np.sum(mu_eff**2 - self.mu**2))
        return val, grad, finite

    def __call__(self, x):
        val, grad, finite = self.lagrangian_parts(x)
        if not finite or not np.isfinite(val):
            raise _NonFinite
        return val, grad


def _projected_gradient_norm(x, grad, lower, upper) -> float:
    step = np.clip(x - grad, lower, upper) - x
    return float(np.abs(step).max()) if step.size else 0.0


def _gauss_newton(p: NLPProblem, ev: _Evaluator, x: np.ndarray, shift: float) -> scipy.sparse.csc_matrix:
    """``B + rho J_a^T J_a + sigma I`` over equalities and active inequalities."""
    n = p.n_vars
    M = shift * max(1.0, ev.rho) * scipy.sparse.identity(n, format="csc")
    if p.curvature is not None:
        M = M + p.curvature(x)
    for con in p.eq_constraints:
        if con.jacobian is not None:
            J = scipy.sparse.csr_matrix(con.jacobian(x))
            M = M + ev.rho * (J.T @ J)
    g = ev.raw(x)[4]
    start = 0
    for con in p.ineq_constraints:
        rows = np.flatnonzero(ev.mu[start : start + con.size] + ev.rho * g[start : start + con.size] > 0)
        if con.jacobian is not None and rows.size:
            J = scipy.sparse.csr_matrix(con.jacobian(x))[rows]
            M = M + ev.rho * (J.T @ J)
        start += con.size
    return scipy.sparse.csc_matrix(M)


class _InnerResult:
    def __init__(self, x, n_iter, message):
        self.x = x
        self.n_iter = n_iter
        self.message = message


def _minimize_box(fun, x0, lower, upper, tol, max_iter, memory, precond=None, refresh=25, callback=None):
    """Projected L-BFGS over ``lower <= x <= upper``.

    The active set is the epsilon-active set of Bertsekas' projected Newton
    method; the quasi-Newton step acts on the free variables only.
    ``precond(x)`` returns a sparse SPD matrix whose inverse, restricted to
    the free variables, is the initial inverse Hessian.  Non-finite trial
    points are treated as failed line-search steps.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    solve_M = None
    free_prev = None
    age = 0
    it = 0
    stuck = 0
    message = "iteration limit"
    while it < max_iter:
        pg = _projected_gradient_norm(x, g, lower, upper)
        if pg <= tol:
            message = "projected gradient below tolerance"
            break
        width = min(1e-3, pg)
        active = ((x - lower <= width) & (g > 0)) | ((upper - x <= width) & (g < 0))
        free = ~active
        if precond is not None and (solve_M is None or age >= refresh or not np.array_equal(free, free_prev)):
            M = precond(x)[free][:, free]
            solve_M = scipy.sparse.linalg.factorized(scipy.sparse.csc_matrix(M))
            free_prev = free
            age = 0

        def h0(v):
            out = np.zeros_like(v)
            out[free] = solve_M(v[free]) if solve_M is not None else v[free]
            return out

        q = np.where(free, g, 0.0)
        alphas = []
        pairs = []
        for s_i, y_i in zip(reversed(S), reversed(Y)):
            sf, yf = s_i * free, y_i * free
            sy = sf @ yf
            if sy <= 1e-16 * np.linalg.norm(sf) * np.linalg.norm(yf):
                continue
            a = (sf @ q) / sy
            q -= a * yf
            alphas.append(a)
            pairs.append((sf, yf, sy))
        r = h0(q)
        if pairs:
            sf, yf, sy = pairs[0]
            r *= sy / max(yf @ h0(yf), 1e-300)
        for (sf, yf, sy), a in zip(reversed(pairs), reversed(alphas)):
            b = (yf @ r) / sy
            r += (a - b) * sf
        d = -r
        d[active] = -g[active]
        if g[free] @ d[free] >= 0:
            S.clear()
            Y.clear()
            d = -h0(np.where(free, g, 0.0))
            d[active] = -g[active]

        alpha = 1.0
        x_scale = 1.0 + np.abs(x).max()
        f_noise = 1e-13 * max(1.0, abs(f))
        while True:
            xn = np.clip(x + alpha * d, lower, upper)
            step = xn - x
            if np.abs(step).max() <= 1e-15 * x_scale:
                fn = None
                break
            try:
                fn, gn = fun(xn)
                slope = g @ step
                ok = fn <= f + 1e-4 * slope and fn <= f
                # approximate Wolfe test (Hager-Zhang) once the decrease is
                # below rounding: accept if the directional slope shrank
                if not ok and fn <= f + f_noise:
                    ok = 0.9 * slope <= gn @ step <= -0.9 * slope
            except _NonFinite:
                ok = False
            if ok:
                break
            alpha *= 0.5
        it += 1
        age += 1
        if fn is None:
            if S:
                S.clear()
                Y.clear()
                solve_M = None
                continue
            message = "line search failed"
            break
        # neither the value nor the projected gradient improves measurably
        flat = f - fn <= 1e-15 * max(1.0, abs(f))
        stuck = stuck + 1 if flat and _projected_gradient_norm(xn, gn, lower, upper) >= 0.999 * pg else 0
        if stuck >= 5:
            x, f, g = xn, fn, gn
            message = "no measurable decrease"
            break
        s_new, y_new = xn - x, gn - g
        if s_new @ y_new > 1e-12 * (s_new @ s_new):
            S.append(s_new)
            Y.append(y_new)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, f, g = xn, fn, gn
        if callback is not None:
            callback(x)
    return _InnerResult(x, it, message)


def solve(p: NLPProblem, x0: np.ndarray, opts: SolverOptions | None = None) -> SolveReport:
    """Minimize ``p`` from ``x0``; see :class:`SolveReport` for the outcome."""
    opts = opts or SolverOptions()
    x = p.project(np.asarray(x0, dtype=float).copy())
    ev = _Evaluator(p)
    ev.rho = opts.penalty0
    has_structure = p.curvature is not None or any(
        c.jacobian is not None for c in (*p.eq_constraints, *p.ineq_constraints)
    )
    precond = (lambda z: _gauss_newton(p, ev, z, opts.precond_shift)) if has_structure else None

    obj_hist: list[float] = []
    viol_hist: list[float] = []
    snaps: list[np.ndarray] = []
    outer_hist: list[tuple[float, float, float]] = []

    def record(xk):
        f, _, c, _, g, _, _ = ev.raw(xk)
        obj_hist.append(f)
        v = max(np.abs(c).max(initial=0.0), np.maximum(g, 0.0).max(initial=0.0))
        viol_hist.append(float(v))
        if opts.record_iterates:
            snaps.append(xk.copy())

    def finish(status, message, kkt):
        f, _, c, _, g, _, _ = ev.raw(x)
        return SolveReport(
            status=status,
            x=x.copy(),
            objective=f,
            max_violation=p.max_violation(x),
            kkt_residual=kkt,
            n_outer=len(outer_hist),
            n_inner=len(obj_hist) - 1,
            objective_history=obj_hist,
            violation_history=viol_hist,
            iterate_snapshots=snaps,
            outer_history=outer_hist,
            eq_multipliers=ev.lam.copy(),
            ineq_multipliers=ev.mu.copy(),
            message=message,
        )

    if not ev.raw(x)[-1]:
        return finish("stalled", "non-finite objective or constraint at the initial point", np.inf)
    record(x)

    prev_infeas = np.inf
    inner_tol = opts.inner_tol0
    kkt = np.inf
    for outer in range(opts.max_outer):
        merit_start = ev(x)[0]
        try:
            res = _minimize_box(
                ev,
                x,
                p.lower,
                p.upper,
                inner_tol,
                opts.max_inner,
                opts.memory,
                precond=precond,
                refresh=opts.precond_refresh,
                callback=record,
            )
            x_new = res.x
        except _NonFinite:
            return finish("stalled", f"non-finite values during outer iteration {outer}", kkt)
        merit_end = ev(x_new)[0]
        if merit_end > merit_start + 1e-12 * max(1.0, abs(merit_start)):
            x_new = x
            merit_end = merit_start
        x = x_new
        outer_hist.append((merit_start, merit_end, ev.rho))

        f, _, c, _, g, _, _ = ev.raw(x)
        _, grad, _ = ev.lagrangian_parts(x)
        kkt = _projected_gradient_norm(x, grad, p.lower, p.upper)
        infeas = max(np.abs(c).max(initial=0.0), np.maximum(g, 0.0).max(initial=0.0))
        compl = np.abs(np.maximum(g, -ev.mu / ev.rho)).max(initial=0.0)
        ev.lam = np.clip(ev.lam + ev.rho * c, -opts.multiplier_bound, opts.multiplier_bound)
        ev.mu = np.clip(np.maximum(0.0, ev.mu + ev.rho * g), 0.0, opts.multiplier_bound)
        log.debug(
            "outer %d: f=%.6e infeas=%.2e kkt=%.2e rho=%.1e inner=%d (%s)",
            outer, f, infeas, kkt, ev.rho, res.n_iter, res.message,
        )

        if infeas < opts.tol_feas and kkt < opts.tol_opt:
            return finish("converged", f"converged after {outer + 1} outer iterations", kkt)
        progress = max(infeas, compl)
        if progress > opts.tol_feas and progress > opts.feas_decrease * prev_infeas:
            if ev.rho >= opts.penalty_max:
                status = "infeasible" if infeas >= opts.tol_feas else "stalled"
                return finish(status, "penalty parameter reached its maximum", kkt)
            ev.rho = min(ev.rho * opts.penalty_growth, opts.penalty_max)
        prev_infeas = progress
        inner_tol = max(0.1 * inner_tol, 0.1 * opts.tol_opt)

    return finish("max_iter", f"no convergence within {opts.max_outer} outer iterations", kkt)


def check_gradient(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    h: float = 1e-6,
    indices: Sequence[int] | None = None,
) -> float:
    """Max discrepancy between ``f``'s gradient and central differences.

    The step is ``h * max(1, |x_i|)``.  The discrepancy is the largest
    absolute component error divided by the larger infinity norm of the two
    gradients, so components near zero do not dominate.  ``indices``
    restricts the check to a subset of components.
    """
    x = np.asarray(x, dtype=float)
    _, g = f(x)
    g = np.asarray(g, dtype=float)
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    fd = np.empty(idx.size)
    for n, i in enumerate(idx):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fd[n] = (f(xp)[0] - f(xm)[0]) / (2 * step)
    ga = g[idx]
    scale = max(np.abs(ga).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-300)
    return float(np.abs(fd - ga).max(initial=0.0) / scale)
