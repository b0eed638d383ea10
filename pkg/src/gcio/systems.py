"""The four benchmark control systems and their task distributions.

Each system bundles smooth dynamics, a state-to-goal map, a task
(initial state / goal state) distribution, per-component goal tolerances
and a feature encoding for policy inputs.  All operations are pure and
vectorized: states may have arbitrary leading batch axes, and dynamics
accept :class:`~gcio.dualdiff.Dual` arguments so Jacobians come out of
the same code path.

Model conventions (documented once here):

* ``cartpole`` -- state ``[x, xdot, theta, thetadot]``; classical
  frictionless cart-pole with ``theta = 0`` upright and ``l`` the
  effective half-length of a uniform pole (moment factor 4/3).
* ``quad2d`` -- state ``[x, xdot, z, zdot, theta, thetadot]``; flat-plate
  planar quadrotor, two edge thrusters with moment arm ``arm``.
* ``quad3d`` -- state ``[x, xdot, y, ydot, z, zdot, phi, theta, psi, p,
  q, r]``; ZYX Euler angles with standard Euler-rate kinematics, diagonal
  inertia, X-configuration mixing (roll/pitch arm ``arm/sqrt(2)``, yaw
  torque ``yaw_coef`` per unit thrust), four motor thrusts as controls.
* ``arm6`` -- state = six joint angles of the bundled serial chain,
  controls = joint velocities (``xdot = u``), goal = end-effector
  position from forward kinematics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import dualdiff as dd
from . import kinparse

__all__ = [
    "SYSTEM_IDS",
    "SystemModel",
    "Task",
    "make_system",
    "system_from_config",
    "load_system_config",
    "dynamics",
    "state_to_goal",
    "sample_task",
    "goal_reached",
    "encode_features",
    "feature_length",
    "wrap_angle",
]

SYSTEM_IDS = ("cartpole", "quad2d", "quad3d", "arm6")

#: Multiple-shooting grid density used for dataset generation per system.
DEFAULT_GRID = {"cartpole": 35, "quad2d": 40, "quad3d": 40, "arm6": 35}


def wrap_angle(a):
    """Wrap angles to the interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


@dataclass(frozen=True)
class SystemModel:
    """Immutable bundle describing one dynamical system."""

    id: str
    n_x: int
    n_u: int
    n_g: int
    params: dict
    u_lo: np.ndarray
    u_hi: np.ndarray
    t_min: float
    t_max: float
    alpha: float
    tolerances: dict
    x_lo: np.ndarray | None = None  # hard state bounds for the NLP, if any
    x_hi: np.ndarray | None = None
    sample_lo: np.ndarray = field(default=None)  # task-distribution box
    sample_hi: np.ndarray = field(default=None)
    chain: kinparse.KinematicChain | None = None

    def __post_init__(self):
        if self.id not in SYSTEM_IDS:
            raise ValueError(f"unknown system id {self.id!r}")
        if self.n_g > self.n_x:
            raise ValueError("goal dimension exceeds state dimension")
        if self.id == "arm6":
            if not (self.n_x == self.n_u == 6 and self.n_g == 3):
                raise ValueError("arm6 requires n_x = n_u = 6, n_g = 3")
        elif self.n_g != self.n_x:
            raise ValueError(f"{self.id} requires n_g = n_x")
        if not np.all(self.u_lo < self.u_hi):
            raise ValueError("control bounds must satisfy u_lo < u_hi")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.t_min <= self.t_max:
            raise ValueError("duration bounds must satisfy 0 < t_min <= t_max")


@dataclass(frozen=True)
class Task:
    """One initial state and the goal derived from a goal-defining state."""

    x0: np.ndarray
    xf: np.ndarray
    g: np.ndarray


_CARTPOLE_INIT_LO = np.array([-3.0, -1.0, 0.0, -1.0])
_CARTPOLE_INIT_HI = np.array([3.0, 1.0, 2.0 * np.pi, 1.0])

_DEFAULTS = {
    "cartpole": dict(
        n_x=4,
        n_u=1,
        n_g=4,
        params={"m_cart": 1.0, "m_pole": 1.0, "l": 0.5, "g": 9.81},
        u_lo=[-10.0],
        u_hi=[10.0],
        t_min=1.0,
        t_max=8.0,
        alpha=0.05,
        tolerances={"pos": 0.05, "vel": 0.1, "ang": 0.1, "ang_vel": 0.1},
        sample_lo=_CARTPOLE_INIT_LO,
        sample_hi=_CARTPOLE_INIT_HI,
    ),
    "quad2d": dict(
        n_x=6,
        n_u=2,
        n_g=6,
        params={"m": 0.027, "g": 9.81, "I_yy": 1.4e-5, "arm": 0.0397},
        u_lo=[0.0, 0.0],
        u_hi=[0.15, 0.15],
        t_min=1.0,
        t_max=10.0,
        alpha=1.0,
        tolerances={"pos": 0.05, "vel": 0.05, "ang": 0.1, "ang_vel": 0.1},
        x_lo=[-5.0, -5.0, -5.0, -5.0, -np.pi, -1.0],
        x_hi=[5.0, 5.0, 5.0, 5.0, np.pi, 1.0],
        sample_lo=[-5.0, -5.0],
        sample_hi=[5.0, 5.0],
    ),
    "quad3d": dict(
        n_x=12,
        n_u=4,
        n_g=12,
        params={
            "m": 0.027,
            "g": 9.81,
            "I_xx": 1.4e-5,
            "I_yy": 1.4e-5,
            "I_zz": 2.17e-5,
            "arm": 0.0397,
            "yaw_coef": 0.025,
        },
        u_lo=[0.0] * 4,
        u_hi=[0.15] * 4,
        t_min=1.0,
        t_max=10.0,
        alpha=1.0,
        tolerances={"pos": 0.05, "vel": 0.05, "ang": 0.1, "ang_vel": 0.1},
        sample_lo=[-2.0, -2.0, -2.0],
        sample_hi=[2.0, 2.0, 2.0],
    ),
    "arm6": dict(
        n_x=6,
        n_u=6,
        n_g=3,
        params={},
        t_min=0.5,
        t_max=10.0,
        alpha=0.1,
        tolerances={"ee": 0.02},
    ),
}


def make_system(system_id: str, **overrides) -> SystemModel:
    """Build a system with its defaults, optionally overridden.

    For ``arm6`` the joints, limits and velocity bounds come from the
    bundled chain description unless ``chain`` or ``chain_file`` is given.
    """
    if system_id not in SYSTEM_IDS:
        raise ValueError(f"unknown system id {system_id!r}")
    cfg = {k: v for k, v in _DEFAULTS[system_id].items()}
    params = dict(cfg.pop("params"))
    params.update(overrides.pop("params", {}))
    tolerances = dict(cfg.pop("tolerances"))
    tolerances.update(overrides.pop("tolerances", {}))
    chain = overrides.pop("chain", None)
    chain_file = overrides.pop("chain_file", None)
    if system_id == "arm6":
        if chain is None:
            chain = (
                kinparse.parse_chain_file(chain_file)
                if chain_file is not None
                else kinparse.bundled_chain()
            )
        if chain.n_joints != 6:
            raise ValueError(f"arm6 needs a 6-joint chain, got {chain.n_joints}")
        vel = chain.velocity_limits
        cfg.setdefault("u_lo", -vel)
        cfg.setdefault("u_hi", vel)
        cfg.setdefault("x_lo", chain.lower)
        cfg.setdefault("x_hi", chain.upper)
        cfg.setdefault("sample_lo", chain.lower)
        cfg.setdefault("sample_hi", chain.upper)
    cfg.update(overrides)
    arrays = {}
    for key in ("u_lo", "u_hi", "x_lo", "x_hi", "sample_lo", "sample_hi"):
        v = cfg.pop(key, None)
        arrays[key] = None if v is None else np.asarray(v, dtype=np.float64)
    return SystemModel(
        id=system_id,
        params=params,
        tolerances=tolerances,
        chain=chain,
        **arrays,
        **cfg,
    )


def system_from_config(config: dict) -> SystemModel:
    """Build a system from a JSON-style config document.

    Recognized keys: ``system`` (required), ``params``, ``u_lo``, ``u_hi``,
    ``x_lo``, ``x_hi``, ``t_min``, ``t_max``, ``alpha``, ``tolerances``,
    ``sample_lo``, ``sample_hi``, ``chain_file``.
    """
    config = dict(config)
    system_id = config.pop("system", None)
    if system_id is None:
        raise ValueError("config lacks required key 'system'")
    config.pop("solver", None)  # consumed by the solver layer
    allowed = {
        "params",
        "u_lo",
        "u_hi",
        "x_lo",
        "x_hi",
        "t_min",
        "t_max",
        "alpha",
        "tolerances",
        "sample_lo",
        "sample_hi",
        "chain_file",
    }
    unknown = set(config) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return make_system(system_id, **config)


def load_system_config(path) -> SystemModel:
    with open(path, encoding="utf-8") as fh:
        return system_from_config(json.load(fh))


def with_alpha(sys: SystemModel, alpha: float) -> SystemModel:
    return replace(sys, alpha=alpha)


# -- dynamics ----------------------------------------------------------


def _check_dims(sys: SystemModel, x, u) -> None:
    if dd.value(x).shape[-1] != sys.n_x:
        raise ValueError(
            f"state has {dd.value(x).shape[-1]} components, {sys.id} has {sys.n_x}"
        )
    if dd.value(u).shape[-1] != sys.n_u:
        raise ValueError(
            f"control has {dd.value(u).shape[-1]} components, {sys.id} has {sys.n_u}"
        )


def _cartpole_rhs(params: dict, x, u):
    m_c, m_p, l, grav = params["m_cart"], params["m_pole"], params["l"], params["g"]
    m_t = m_c + m_p
    xdot = x[..., 1]
    th = x[..., 2]
    om = x[..., 3]
    f = u[..., 0]
    s = dd.sin(th)
    c = dd.cos(th)
    tmp = (f + m_p * l * om * om * s) / m_t
    th_dd = (grav * s - c * tmp) / (l * (4.0 / 3.0 - m_p * c * c / m_t))
    x_dd = tmp - m_p * l * th_dd * c / m_t
    return dd.stack([xdot, x_dd, om, th_dd], axis=-1)


def _quad2d_rhs(params: dict, x, u):
    m, grav, iyy, arm = params["m"], params["g"], params["I_yy"], params["arm"]
    xdot = x[..., 1]
    zdot = x[..., 3]
    th = x[..., 4]
    thdot = x[..., 5]
    t1 = u[..., 0]
    t2 = u[..., 1]
    total = t1 + t2
    s = dd.sin(th)
    c = dd.cos(th)
    x_dd = total * s / m
    z_dd = total * c / m - grav
    th_dd = (t2 - t1) * (arm / iyy)
    return dd.stack([xdot, x_dd, zdot, z_dd, thdot, th_dd], axis=-1)


def _quad3d_rhs(params: dict, x, u):
    m, grav = params["m"], params["g"]
    ixx, iyy, izz = params["I_xx"], params["I_yy"], params["I_zz"]
    d = params["arm"] / np.sqrt(2.0)
    gam = params["yaw_coef"]
    xd, yd, zd = x[..., 1], x[..., 3], x[..., 5]
    phi, th, psi = x[..., 6], x[..., 7], x[..., 8]
    p, q, r = x[..., 9], x[..., 10], x[..., 11]
    u1, u2, u3, u4 = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    thrust = u1 + u2 + u3 + u4
    sphi, cphi = dd.sin(phi), dd.cos(phi)
    sth, cth = dd.sin(th), dd.cos(th)
    spsi, cpsi = dd.sin(psi), dd.cos(psi)
    acc = thrust / m
    x_dd = acc * (cpsi * sth * cphi + spsi * sphi)
    y_dd = acc * (spsi * sth * cphi - cpsi * sphi)
    z_dd = acc * (cth * cphi) - grav
    qs_rc = q * sphi + r * cphi
    phi_d = p + qs_rc * (sth / cth)
    th_d = q * cphi - r * sphi
    psi_d = qs_rc / cth
    tau_x = d * (u1 + u2 - u3 - u4)
    tau_y = d * (-u1 + u2 + u3 - u4)
    tau_z = gam * (-u1 + u2 - u3 + u4)
    p_d = (tau_x - (izz - iyy) * q * r) / ixx
    q_d = (tau_y - (ixx - izz) * p * r) / iyy
    r_d = (tau_z - (iyy - ixx) * p * q) / izz
    return dd.stack(
        [xd, x_dd, yd, y_dd, zd, z_dd, phi_d, th_d, psi_d, p_d, q_d, r_d], axis=-1
    )


def dynamics(sys: SystemModel, x, u):
    """State derivative ``f(x, u)``; accepts batches and Dual arguments."""
    _check_dims(sys, x, u)
    if sys.id == "cartpole":
        return _cartpole_rhs(sys.params, x, u)
    if sys.id == "quad2d":
        return _quad2d_rhs(sys.params, x, u)
    if sys.id == "quad3d":
        return _quad3d_rhs(sys.params, x, u)
    return u  # arm6: pure kinematic control


# -- goals -------------------------------------------------------------


def state_to_goal(sys: SystemModel, x):
    """Map states to the goals they achieve (identity or end-effector)."""
    if sys.id == "arm6":
        return kinparse.forward_kinematics(sys.chain, x)
    return x


def goal_jacobian(sys: SystemModel, x: np.ndarray) -> np.ndarray:
    """Jacobian of :func:`state_to_goal` at a single state."""
    if sys.id == "arm6":
        return kinparse.forward_kinematics(sys.chain, dd.seed(x)).jac
    return np.eye(sys.n_x)


def goal_reached(sys: SystemModel, x, g):
    """Tolerance test of Goal achievement; broadcasts over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    tol = sys.tolerances
    if sys.id == "arm6":
        err = kinparse.forward_kinematics(sys.chain, x) - g
        return np.linalg.norm(err, axis=-1) <= tol["ee"]
    e = x - g
    if sys.id == "cartpole":
        ok = np.abs(e[..., 0]) <= tol["pos"]
        ok &= np.abs(e[..., 1]) <= tol["vel"]
        ok &= np.abs(wrap_angle(e[..., 2])) <= tol["ang"]
        ok &= np.abs(e[..., 3]) <= tol["ang_vel"]
        return ok
    if sys.id == "quad2d":
        ok = np.abs(e[..., 0]) <= tol["pos"]
        ok &= np.abs(e[..., 2]) <= tol["pos"]
        ok &= np.abs(e[..., 1]) <= tol["vel"]
        ok &= np.abs(e[..., 3]) <= tol["vel"]
        ok &= np.abs(wrap_angle(e[..., 4])) <= tol["ang"]
        ok &= np.abs(e[..., 5]) <= tol["ang_vel"]
        return ok
    # quad3d
    ok = np.ones(e.shape[:-1], dtype=bool)
    for i in (0, 2, 4):
        ok &= np.abs(e[..., i]) <= tol["pos"]
    for i in (1, 3, 5):
        ok &= np.abs(e[..., i]) <= tol["vel"]
    for i in (6, 7, 8):
        ok &= np.abs(wrap_angle(e[..., i])) <= tol["ang"]
    for i in (9, 10, 11):
        ok &= np.abs(e[..., i]) <= tol["ang_vel"]
    return ok


# -- task distributions ------------------------------------------------


def sample_task(sys: SystemModel, rng: np.random.Generator) -> Task:
    """Draw one (initial state, goal state) pair from the task distribution."""
    if sys.id == "cartpole":
        x0 = rng.uniform(sys.sample_lo, sys.sample_hi)
        xf = np.zeros(4)
        xf[0] = rng.uniform(-3.0, 3.0)
        xf[2] = np.pi * rng.integers(0, 2)
        g = xf.copy()
    elif sys.id == "quad2d":
        x0 = np.zeros(6)
        x0[[0, 2]] = rng.uniform(sys.sample_lo, sys.sample_hi)
        xf = np.zeros(6)
        xf[[0, 2]] = rng.uniform(sys.sample_lo, sys.sample_hi)
        g = xf.copy()
    elif sys.id == "quad3d":
        x0 = np.zeros(12)
        x0[[0, 2, 4]] = rng.uniform(sys.sample_lo, sys.sample_hi)
        xf = np.zeros(12)
        xf[[0, 2, 4]] = rng.uniform(sys.sample_lo, sys.sample_hi)
        g = xf.copy()
    else:  # arm6
        x0 = rng.uniform(sys.sample_lo, sys.sample_hi)
        xf = rng.uniform(sys.sample_lo, sys.sample_hi)
        g = np.asarray(kinparse.forward_kinematics(sys.chain, xf))
    return Task(x0=x0, xf=xf, g=g)


# -- policy features ---------------------------------------------------

_FEATURE_LENGTHS = {"cartpole": 9, "quad2d": 12, "quad3d": 27, "arm6": 15}


def feature_length(sys: SystemModel) -> int:
    return _FEATURE_LENGTHS[sys.id]


def encode_features(sys: SystemModel, x, g) -> np.ndarray:
    """Encode a (state, goal) pair as a policy input vector.

    Angles become sine-cosine pairs; for position-invariant coordinates
    only the goal-minus-state difference is kept.  Batched over leading
    axes; the output length per system is fixed (see
    :func:`feature_length`).
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if sys.id == "cartpole":
        parts = [
            x[..., 1],
            np.sin(x[..., 2]),
            np.cos(x[..., 2]),
            x[..., 3],
            g[..., 0] - x[..., 0],
            g[..., 1],
            np.sin(g[..., 2]),
            np.cos(g[..., 2]),
            g[..., 3],
        ]
    elif sys.id == "quad2d":
        parts = [
            x[..., 1],
            x[..., 3],
            np.sin(x[..., 4]),
            np.cos(x[..., 4]),
            x[..., 5],
            g[..., 0] - x[..., 0],
            g[..., 2] - x[..., 2],
            g[..., 1],
            g[..., 3],
            np.sin(g[..., 4]),
            np.cos(g[..., 4]),
            g[..., 5],
        ]
    elif sys.id == "quad3d":
        parts = [x[..., 1], x[..., 3], x[..., 5]]
        for i in (6, 7, 8):
            parts += [np.sin(x[..., i]), np.cos(x[..., i])]
        parts += [x[..., 9], x[..., 10], x[..., 11]]
        parts += [g[..., i] - x[..., i] for i in (0, 2, 4)]
        parts += [g[..., 1], g[..., 3], g[..., 5]]
        for i in (6, 7, 8):
            parts += [np.sin(g[..., i]), np.cos(g[..., i])]
        parts += [g[..., 9], g[..., 10], g[..., 11]]
    else:  # arm6: sine-cosine joint encoding plus end-effector error
        parts = []
        for i in range(6):
            parts += [np.sin(x[..., i]), np.cos(x[..., i])]
        ee = kinparse.forward_kinematics(sys.chain, x)
        parts += [g[..., i] - ee[..., i] for i in range(3)]
    feats = np.stack(np.broadcast_arrays(*parts), axis=-1)
    return feats
