"""Direct multiple-shooting transcription of goal-reaching OCPs.

A :class:`ShootingProblem` packs the decision vector
``z = [x_0 .. x_N, u_0 .. u_{N-1}, t_f]``, equality residuals (initial
state pin, RK4 gap-closing, terminal goal) and box bounds.  The free
final time enters through the uniform step ``h = t_f / N``, so ``t_f``
is an ordinary decision scalar.

Residual values are evaluated with plain batched numpy; their Jacobians
come from one batched forward-mode sweep per evaluation point
(:mod:`gcio.dualdiff`), block-sparse by shooting stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dualdiff as dd
from . import systems

__all__ = [
    "Trajectory",
    "ShootingProblem",
    "rk4_step",
    "stage_cost_quadrature",
    "build",
    "initial_guess",
]


@dataclass
class EvalPoint:
    """Fused evaluation of an NLP at one point.

    ``jt`` applies the transposed equality Jacobian to a vector;
    ``gn_hessian(rho)`` returns the dense Gauss-Newton model Hessian
    ``H_f + rho * J^T J`` used by the solver's inner iterations.
    """

    f: float
    grad_f: np.ndarray
    c: np.ndarray
    jt: object  # callable (n_c,) -> (dim,)
    gn_hessian: object  # callable (rho, cost_weight=1.0) -> (dim, dim)


@dataclass
class Trajectory:
    """One optimized trajectory on the shooting grid."""

    states: np.ndarray  # (N+1, n_x)
    controls: np.ndarray  # (N, n_u)
    t_f: float
    cost: float
    status: str  # "converged" | "max-iter" | "infeasible"
    iterations: int = 0
    solve_time_ms: float = 0.0
    outer_trace: tuple = ()  # ((|c|_inf, rho) per outer iteration)

    @property
    def grid_size(self) -> int:
        return len(self.controls)


def rk4_step(f, x, u, h):
    """One classical Runge-Kutta step with ``u`` held constant.

    Works on batches and on Dual arguments, so the same code produces
    shooting-map values and their stage Jacobians.
    """
    k1 = f(x, u)
    k2 = f(x + (0.5 * h) * k1, u)
    k3 = f(x + (0.5 * h) * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def stage_cost_quadrature(u, h, alpha: float):
    """RK4 quadrature of the control-effort integrand over one interval.

    With piecewise-constant controls the integrand is constant, so the
    quadrature is exact: ``alpha * |u|^2 * h``.
    """
    u = np.asarray(u, dtype=np.float64)
    return alpha * h * np.sum(u * u, axis=-1)


class ShootingProblem:
    """Multiple-shooting NLP for one task; immutable after construction."""

    def __init__(self, sys: systems.SystemModel, task: systems.Task, N: int,
                 n_substeps: int = 1, enforce_state_bounds: bool = True):
        if N < 2:
            raise ValueError("need at least two grid points")
        if n_substeps < 1:
            raise ValueError("need at least one integration sub-step")
        x0 = np.asarray(task.x0, dtype=np.float64)
        g = np.asarray(task.g, dtype=np.float64)
        if x0.shape != (sys.n_x,):
            raise ValueError(f"task x0 has shape {x0.shape}, system expects ({sys.n_x},)")
        if g.shape != (sys.n_g,):
            raise ValueError(f"task goal has shape {g.shape}, system expects ({sys.n_g},)")
        g_check = np.asarray(systems.state_to_goal(sys, np.asarray(task.xf, dtype=np.float64)))
        if not np.allclose(g_check, g, atol=1e-9):
            raise ValueError("task goal does not match state_to_goal(task.xf)")

        self.sys = sys
        self.task = task
        self.N = int(N)
        self.n_substeps = int(n_substeps)
        n_x, n_u = sys.n_x, sys.n_u
        self.dim = (N + 1) * n_x + N * n_u + 1
        self.n_c = (N + 1) * n_x + sys.n_g
        self._i_u = (N + 1) * n_x  # offset of the control block

        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        if enforce_state_bounds and sys.x_lo is not None:
            lower[: self._i_u] = np.tile(sys.x_lo, N + 1)
            upper[: self._i_u] = np.tile(sys.x_hi, N + 1)
        lower[self._i_u : -1] = np.tile(sys.u_lo, N)
        upper[self._i_u : -1] = np.tile(sys.u_hi, N)
        lower[-1] = sys.t_min
        upper[-1] = sys.t_max
        self.lower, self.upper = lower, upper

        # Per-variable magnitudes used by the solver's diagonal scaling.
        if sys.x_lo is not None:
            x_scale = np.maximum(0.1, np.maximum(np.abs(sys.x_lo), np.abs(sys.x_hi)))
        elif sys.sample_lo is not None and sys.sample_lo.size == n_x:
            x_scale = np.maximum(
                0.1, np.maximum(np.abs(sys.sample_lo), np.abs(sys.sample_hi))
            )
        else:
            x_scale = np.ones(n_x)
        u_scale = np.maximum(1e-3, (sys.u_hi - sys.u_lo) / 2.0)
        scale = np.empty(self.dim)
        scale[: self._i_u] = np.tile(x_scale, N + 1)
        scale[self._i_u : -1] = np.tile(u_scale, N)
        scale[-1] = 0.5 * (sys.t_min + sys.t_max)
        self.scale = scale

        # Constant seed blocks for the batched stage sweep.
        m = n_x + n_u + 1
        self._m = m
        jac_x = np.zeros((N, n_x, m))
        jac_x[:, np.arange(n_x), np.arange(n_x)] = 1.0
        jac_u = np.zeros((N, n_u, m))
        jac_u[:, np.arange(n_u), n_x + np.arange(n_u)] = 1.0
        jac_h = np.zeros((N, 1, m))
        jac_h[:, 0, m - 1] = 1.0 / (N * n_substeps)
        self._jac_x, self._jac_u, self._jac_h = jac_x, jac_u, jac_h

        # Flat decision indices per stage, ordered (x_i, u_i, t_f); the
        # x/u blocks are disjoint across stages, so Gauss-Newton scatter
        # needs accumulation only on the shared t_f entries.
        xs_idx = np.arange(N)[:, None] * n_x + np.arange(n_x)
        us_idx = self._i_u + np.arange(N)[:, None] * n_u + np.arange(n_u)
        self._stage_idx = np.concatenate(
            [xs_idx, us_idx, np.full((N, 1), self.dim - 1)], axis=1
        )  # (N, m)

    # -- decision-vector layout ---------------------------------------

    def split(self, z: np.ndarray):
        n_x, n_u, N = self.sys.n_x, self.sys.n_u, self.N
        xs = z[: self._i_u].reshape(N + 1, n_x)
        us = z[self._i_u : -1].reshape(N, n_u)
        return xs, us, float(z[-1])

    def pack(self, xs: np.ndarray, us: np.ndarray, t_f: float) -> np.ndarray:
        return np.concatenate([np.ravel(xs), np.ravel(us), [t_f]])

    # -- evaluation ----------------------------------------------------

    def _rhs(self, x, u):
        return systems.dynamics(self.sys, x, u)

    def shoot(self, xs, us, t_f):
        """Apply the shooting map to every interval at once."""
        h = t_f / (self.N * self.n_substeps)
        state = xs
        for _ in range(self.n_substeps):
            state = rk4_step(self._rhs, state, us, h)
        return state

    def residual(self, z: np.ndarray) -> np.ndarray:
        xs, us, t_f = self.split(z)
        F = self.shoot(xs[:-1], us, t_f)
        goal = systems.state_to_goal(self.sys, xs[-1])
        return np.concatenate(
            [xs[0] - self.task.x0, np.ravel(xs[1:] - F), goal - self.task.g]
        )

    def cost(self, z: np.ndarray) -> float:
        xs, us, t_f = self.split(z)
        h = t_f / self.N
        effort = float(np.sum(stage_cost_quadrature(us, h, self.sys.alpha)))
        return effort + (1.0 - self.sys.alpha) * t_f

    def cost_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        xs, us, t_f = self.split(z)
        alpha = self.sys.alpha
        h = t_f / self.N
        sq = float(np.sum(us * us))
        f = alpha * h * sq + (1.0 - alpha) * t_f
        grad = np.zeros(self.dim)
        grad[self._i_u : -1] = (2.0 * alpha * h) * np.ravel(us)
        grad[-1] = alpha * sq / self.N + (1.0 - alpha)
        return f, grad

    def eval(self, z: np.ndarray) -> EvalPoint:
        """Fused evaluation of cost, residual and Jacobian structure."""
        sys = self.sys
        n_x, n_u, N = sys.n_x, sys.n_u, self.N
        xs, us, t_f = self.split(z)

        Xd = dd.Dual(xs[:-1], self._jac_x)
        Ud = dd.Dual(us, self._jac_u)
        Hd = dd.Dual(
            np.full((N, 1), t_f / (N * self.n_substeps)), self._jac_h
        )
        Sd = Xd
        for _ in range(self.n_substeps):
            Sd = rk4_step(self._rhs, Sd, Ud, Hd)
        F_val, F_jac = Sd.val, Sd.jac  # (N, n_x), (N, n_x, m)

        if sys.id == "arm6":
            goal_d = systems.state_to_goal(sys, dd.seed(xs[-1]))
            goal_val, G = goal_d.val, goal_d.jac
        else:
            goal_val, G = xs[-1], None

        c = np.concatenate(
            [xs[0] - self.task.x0, np.ravel(xs[1:] - F_val), goal_val - self.task.g]
        )
        f, grad_f = self.cost_grad(z)

        def jt_apply(w: np.ndarray) -> np.ndarray:
            w_pin = w[:n_x]
            w_gap = w[n_x : n_x + N * n_x].reshape(N, n_x)
            w_goal = w[n_x + N * n_x :]
            gx = np.zeros((N + 1, n_x))
            gx[0] = w_pin
            gx[1:] += w_gap
            v = np.einsum("nij,ni->nj", F_jac, w_gap)  # (N, m)
            gx[:-1] -= v[:, :n_x]
            gu = -v[:, n_x : n_x + n_u]
            gt = -float(v[:, -1].sum())
            if G is None:
                gx[N] += w_goal
            else:
                gx[N] += G.T @ w_goal
            out = np.empty(self.dim)
            out[: self._i_u] = gx.ravel()
            out[self._i_u : -1] = gu.ravel()
            out[-1] = gt
            return out

        def gn_hessian(rho: float, cost_weight: float = 1.0) -> np.ndarray:
            H = np.zeros((self.dim, self.dim))
            alpha = cost_weight * sys.alpha
            # Exact Hessian of the cost (the goal/gap residuals carry
            # the rest of the model through their Gauss-Newton term).
            iu = self._i_u
            H[np.arange(iu, self.dim - 1), np.arange(iu, self.dim - 1)] = (
                2.0 * alpha * t_f / N
            )
            H[iu : self.dim - 1, -1] = (2.0 * alpha / N) * np.ravel(us)
            H[-1, iu : self.dim - 1] = H[iu : self.dim - 1, -1]

            idx = self._stage_idx  # (N, m)
            M = rho * np.einsum("nij,nik->njk", F_jac, F_jac)  # (N, m, m)
            # (x_i, u_i) x (x_i, u_i) entries are disjoint across stages.
            sub = idx[:, : self._m - 1]
            H[sub[:, :, None], sub[:, None, :]] += M[:, :-1, :-1]
            # Shared t_f entries accumulate.
            flat = sub.ravel()
            H[flat, -1] += M[:, :-1, -1].ravel()
            H[-1, flat] += M[:, -1, :-1].ravel()
            H[-1, -1] += M[:, -1, -1].sum()
            # Gap cross-terms with the +I block on x_{i+1}.
            xi1 = np.arange(1, N + 1)[:, None] * n_x + np.arange(n_x)  # (N, n_x)
            C = -rho * F_jac  # (N, n_x, m): d gap_i / d(x_i,u_i,t) is -F_jac
            H[xi1[:, :, None], sub[:, None, :]] += C[:, :, :-1]
            H[sub[:, :, None], xi1[:, None, :]] += np.swapaxes(C[:, :, :-1], 1, 2)
            H[xi1.ravel(), -1] += C[:, :, -1].ravel()
            H[-1, xi1.ravel()] += C[:, :, -1].ravel()
            # Identity blocks: pin on x_0 and +I of each gap row.
            diag = np.arange(0, (N + 1) * n_x)
            H[diag, diag] += rho
            if G is None:
                dN = np.arange(N * n_x, (N + 1) * n_x)
                H[dN, dN] += rho
            else:
                sl = slice(N * n_x, (N + 1) * n_x)
                H[sl, sl] += rho * (G.T @ G)
            return H

        return EvalPoint(f=f, grad_f=grad_f, c=c, jt=jt_apply, gn_hessian=gn_hessian)

    def residual_jacobian(self, z: np.ndarray) -> np.ndarray:
        """Dense residual Jacobian (test/diagnostic use)."""
        point = self.eval(z)
        rows = np.eye(self.n_c)
        return np.stack([point.jt(rows[i]) for i in range(self.n_c)], axis=0)


def build(sys: systems.SystemModel, task: systems.Task, N: int,
          n_substeps: int = 1, enforce_state_bounds: bool = True) -> ShootingProblem:
    """Transcribe a task into its multiple-shooting NLP."""
    return ShootingProblem(sys, task, N, n_substeps, enforce_state_bounds)


def initial_guess(problem: ShootingProblem) -> np.ndarray:
    """Zero controls, linearly interpolated states, midpoint duration."""
    sys = problem.sys
    x0 = np.asarray(problem.task.x0, dtype=np.float64)
    xf = np.asarray(problem.task.xf, dtype=np.float64)
    w = np.linspace(0.0, 1.0, problem.N + 1)[:, None]
    xs = (1.0 - w) * x0 + w * xf
    us = np.zeros((problem.N, sys.n_u))
    t_f = 0.5 * (sys.t_min + sys.t_max)
    return problem.pack(xs, us, t_f)
