"""Augmented-Lagrangian solver for the shooting NLPs.

Equality constraints are handled by a classical first-order augmented
Lagrangian outer loop (multiplier update ``lam <- lam + rho * c`` after
every inner solve; penalty grown tenfold whenever the constraint norm
fails to shrink by 4x while still infeasible).  Each inner subproblem is
bound-constrained and is minimized by a damped projected Gauss-Newton
iteration: the model Hessian ``H_f + rho * J^T J`` captures the penalty
curvature exactly, which keeps the inner iteration count small where
first-order methods crawl.  A projected L-BFGS-B inner solver is kept as
a cross-checking fallback (``inner_method="lbfgs"``).

A problem object must provide::

    dim, lower, upper           decision dimension and box bounds
    scale                       optional per-variable magnitudes
    cost(z) -> float
    residual(z) -> c            equality residual vector
    eval(z) -> EvalPoint        fused cost/residual/Jacobian evaluation

:class:`~gcio.transcribe.ShootingProblem` implements this interface;
:func:`solve` wraps the generic core and extracts a
:class:`~gcio.transcribe.Trajectory`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .transcribe import EvalPoint, ShootingProblem, Trajectory, initial_guess

__all__ = ["SolverOptions", "NlpResult", "KktReport", "solve", "solve_nlp", "check_kkt"]


@dataclass(frozen=True)
class SolverOptions:
    eq_tol: float = 1e-6  # |c|_inf at convergence
    grad_tol: float = 1e-6  # scaled projected-gradient norm at convergence
    bound_tol: float = 1e-9  # allowed box violation
    rho0: float = 10.0  # initial quadratic penalty
    rho_growth: float = 10.0  # penalty factor when progress stalls
    c_reduction: float = 0.25  # required |c| shrink factor per outer iteration
    max_outer: int = 30
    max_inner: int = 400  # inner iterations per subproblem
    lbfgs_mem: int = 20  # memory of the L-BFGS fallback
    inner_method: str = "gauss-newton"  # or "lbfgs"

    def __post_init__(self):
        if min(self.eq_tol, self.grad_tol, self.bound_tol) <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.rho_growth <= 1.0:
            raise ValueError("penalty growth must exceed 1")
        if self.inner_method not in ("gauss-newton", "lbfgs"):
            raise ValueError(f"unknown inner method {self.inner_method!r}")

    @classmethod
    def from_config(cls, config: dict | None) -> "SolverOptions":
        if not config:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(config) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**config)


@dataclass
class NlpResult:
    z: np.ndarray
    multipliers: np.ndarray
    status: str  # "converged" | "max-iter" | "infeasible"
    iterations: int
    outer_trace: tuple  # ((|c|_inf, rho), ...)
    solve_time_ms: float


@dataclass(frozen=True)
class KktReport:
    eq_norm: float
    stationarity: float
    bound_violation: float


class _NonFiniteError(FloatingPointError):
    pass


def _pg_norm(y, g_y, lo_y, hi_y) -> float:
    """Infinity norm of the projected gradient step."""
    return float(np.max(np.abs(np.clip(y - g_y, lo_y, hi_y) - y)))


def _al_value(point: EvalPoint, lam: np.ndarray, rho: float, w: float = 1.0) -> float:
    return float(w * point.f + point.c @ (lam + (0.5 * rho) * point.c))


def _al_grad(point: EvalPoint, lam: np.ndarray, rho: float, w: float = 1.0) -> np.ndarray:
    return w * point.grad_f + point.jt(lam + rho * point.c)


def _al_value_only(problem, z, lam, rho, w: float = 1.0) -> float:
    c = problem.residual(z)
    return float(w * problem.cost(z) + c @ (lam + (0.5 * rho) * c))


def _newton_step(H, g, frozen, mu, d_floor, lo, hi, z):
    """Damped Newton step on the free set, expanding the frozen set until
    no at-bound variable is pushed further outward."""
    frozen = frozen.copy()
    at_lo = z <= lo
    at_hi = z >= hi
    for _ in range(8):
        free = ~frozen
        if not np.any(free):
            return None, frozen, mu
        while True:
            Hff = H[np.ix_(free, free)]
            Hff[np.diag_indices_from(Hff)] += mu * d_floor[free]
            try:
                chol = scipy.linalg.cho_factor(Hff, lower=True, check_finite=False)
                step_f = scipy.linalg.cho_solve(chol, -g[free], check_finite=False)
            except scipy.linalg.LinAlgError:
                mu *= 10.0
                if mu > 1e16:
                    return None, frozen, mu
                continue
            if np.all(np.isfinite(step_f)):
                break
            mu *= 10.0
            if mu > 1e16:
                return None, frozen, mu
        step = np.zeros_like(z)
        step[free] = step_f
        pushing_out = (at_lo & (step < 0.0)) | (at_hi & (step > 0.0))
        pushing_out &= free
        if not np.any(pushing_out):
            return step, frozen, mu
        frozen |= pushing_out
    return step, frozen, mu


def _inner_gauss_newton(problem, z, lam, rho, gtol, max_iter, scale, lo, hi,
                        cost_weight: float = 1.0, stop_on_cn: float = 0.0):
    """Minimize the AL subproblem over the box by projected Gauss-Newton
    with active-set expansion and a projected-gradient fallback.

    ``cost_weight=0`` turns the subproblem into pure constraint
    least-squares (the feasibility-restoration phase); ``stop_on_cn``
    ends the iteration early once the residual norm falls below it.
    Returns (z, point, iterations).  Raises ``_NonFiniteError`` on a
    non-finite evaluation.
    """
    lo_y, hi_y = lo / scale, hi / scale
    point = problem.eval(z)
    if not np.isfinite(point.f) or not np.all(np.isfinite(point.c)):
        raise _NonFiniteError
    phi = _al_value(point, lam, rho, cost_weight)
    if not np.isfinite(phi):
        raise _NonFiniteError
    mu = 1e-8
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        g = _al_grad(point, lam, rho, cost_weight)
        if not np.all(np.isfinite(g)):
            raise _NonFiniteError
        if _pg_norm(z / scale, g * scale, lo_y, hi_y) <= gtol:
            n_iter -= 1
            break
        if stop_on_cn and float(np.max(np.abs(point.c))) <= stop_on_cn:
            n_iter -= 1
            break

        frozen = ((z <= lo) & (g > 0.0)) | ((z >= hi) & (g < 0.0))
        H = point.gn_hessian(rho, cost_weight)
        d_floor = np.maximum(np.diag(H), 1e-8 * max(np.max(np.diag(H)), 1.0))
        step, frozen, mu = _newton_step(H, g, frozen, mu, d_floor, lo, hi, z)

        z_new = phi_new = None
        if step is not None:
            alpha = 1.0
            for _ in range(25):
                cand = np.clip(z + alpha * step, lo, hi)
                gd = float(g @ (cand - z))
                val = _al_value_only(problem, cand, lam, rho, cost_weight)
                if np.isfinite(val) and val <= phi + 1e-4 * min(gd, 0.0) and val < phi:
                    z_new, phi_new = cand, val
                    break
                alpha *= 0.5
            if z_new is not None:
                mu = max(mu * 0.25, 1e-12) if alpha == 1.0 else min(mu * 4.0, 1e14)

        if z_new is None:
            # Projected-gradient fallback keeps the iteration globally
            # convergent when the Newton model is untrustworthy.
            mu = min(mu * 10.0, 1e14)
            t = 1.0 / max(1.0, float(np.max(np.abs(g * scale * scale))))
            for _ in range(40):
                cand = np.clip(z - t * (scale * scale) * g, lo, hi)
                gd = float(g @ (cand - z))
                if gd >= 0.0:
                    t *= 0.25
                    continue
                val = _al_value_only(problem, cand, lam, rho, cost_weight)
                if np.isfinite(val) and val <= phi + 1e-4 * gd:
                    z_new, phi_new = cand, val
                    break
                t *= 0.25
            if z_new is None:
                break  # no descent found: numerically stationary

        z, phi = z_new, phi_new
        point = problem.eval(z)
    return z, point, n_iter


def _inner_lbfgs(problem, z, lam, rho, gtol, max_iter, scale, lo, hi, mem):
    """L-BFGS-B fallback operating in scaled variables."""
    lo_y, hi_y = lo / scale, hi / scale

    def fused(y):
        point = problem.eval(y * scale)
        val = _al_value(point, lam, rho)
        grad = _al_grad(point, lam, rho) * scale
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            raise _NonFiniteError
        return val, grad

    res = minimize(
        fused,
        z / scale,
        jac=True,
        method="L-BFGS-B",
        bounds=np.stack([lo_y, hi_y], axis=1),
        options=dict(maxiter=max_iter, maxcor=mem, gtol=gtol, ftol=1e-16, maxls=60),
    )
    z = np.clip(res.x * scale, lo, hi)
    return z, problem.eval(z), int(res.nit)


def solve_nlp(problem, guess: np.ndarray, opts: SolverOptions | None = None) -> NlpResult:
    """Minimize ``problem`` starting from ``guess``.

    Deterministic: identical inputs produce bit-identical results.  On
    failure the best iterate found is returned with a non-converged
    status.
    """
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    lo, hi = problem.lower, problem.upper
    scale = getattr(problem, "scale", None)
    if scale is None:
        scale = np.ones(problem.dim)
    lo_y, hi_y = lo / scale, hi / scale

    guess = np.asarray(guess, dtype=np.float64)
    if guess.shape != (problem.dim,):
        raise ValueError(f"guess has shape {guess.shape}, problem dimension is {problem.dim}")
    z = np.clip(guess, lo, hi)

    c = problem.residual(z)
    if not np.all(np.isfinite(c)):
        return NlpResult(z, np.zeros_like(c), "infeasible", 0, (),
                         (time.perf_counter() - t_start) * 1e3)
    lam = np.zeros(c.size)
    rho = opts.rho0
    omega = max(opts.grad_tol, 1e-3)
    cn_prev = float(np.max(np.abs(c))) if c.size else 0.0
    trace = []
    total_inner = 0
    status = "max-iter"

    for _ in range(opts.max_outer):
        try:
            if opts.inner_method == "gauss-newton":
                z, point, nit = _inner_gauss_newton(
                    problem, z, lam, rho, omega, opts.max_inner, scale, lo, hi
                )
            else:
                z, point, nit = _inner_lbfgs(
                    problem, z, lam, rho, omega, opts.max_inner, scale, lo, hi,
                    opts.lbfgs_mem,
                )
        except _NonFiniteError:
            status = "infeasible"
            break
        total_inner += nit

        c = point.c
        if not np.all(np.isfinite(c)) or not np.isfinite(point.f):
            status = "infeasible"
            break
        cn = float(np.max(np.abs(c))) if c.size else 0.0
        trace.append((cn, rho))
        lam = lam + rho * c
        # The AL gradient at the pre-update multipliers equals the
        # Lagrangian gradient at the updated ones, so it doubles as the
        # KKT stationarity measure.
        g_y = (point.grad_f + point.jt(lam)) * scale
        pg = _pg_norm(z / scale, g_y, lo_y, hi_y)

        if cn <= opts.eq_tol and pg <= opts.grad_tol:
            status = "converged"
            break
        # Penalty growth targets feasibility; once inside the equality
        # tolerance only the stationarity polish remains and growing rho
        # would just ruin the inner problem's conditioning.
        if cn > opts.eq_tol and cn > opts.c_reduction * cn_prev:
            rho *= opts.rho_growth
        omega = max(opts.grad_tol, min(0.2 * omega, 0.1 * cn))
        cn_prev = cn

    ms = (time.perf_counter() - t_start) * 1e3
    return NlpResult(z, lam, status, total_inner, tuple(trace), ms)


def solve(problem: ShootingProblem, guess: np.ndarray | None = None,
          opts: SolverOptions | None = None) -> Trajectory:
    """Solve a shooting problem and unpack the grid solution.

    Unconverged results carry the best iterate but are flagged so the
    dataset layer never emits them.
    """
    if guess is None:
        guess = initial_guess(problem)
    res = solve_nlp(problem, guess, opts)
    xs, us, t_f = problem.split(res.z)
    return Trajectory(
        states=xs.copy(),
        controls=us.copy(),
        t_f=t_f,
        cost=problem.cost(res.z),
        status=res.status,
        iterations=res.iterations,
        solve_time_ms=res.solve_time_ms,
        outer_trace=res.outer_trace,
    )


def check_kkt(problem, z: np.ndarray, multipliers: np.ndarray) -> KktReport:
    """First-order optimality report at ``z`` for given multipliers."""
    scale = getattr(problem, "scale", None)
    if scale is None:
        scale = np.ones(problem.dim)
    point = problem.eval(z)
    g_y = (point.grad_f + point.jt(multipliers)) * scale
    pg = _pg_norm(z / scale, g_y, problem.lower / scale, problem.upper / scale)
    viol = float(
        np.max(np.maximum(0.0, np.maximum(problem.lower - z, z - problem.upper)))
    )
    return KktReport(
        eq_norm=float(np.max(np.abs(point.c))) if point.c.size else 0.0,
        stationarity=pg,
        bound_violation=viol,
    )
