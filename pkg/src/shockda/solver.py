"""Uniform-grid solver for the 1D shallow-water system and depth transport.

Spatial discretization is fifth-order finite-difference WENO (Jiang-Shu
smoothness indicators, epsilon = 1e-6) with global Lax-Friedrichs flux
splitting; time integration is the three-stage TVD Runge-Kutta scheme.
Two right-hand sides are provided: the coupled conservative system

    h_t + (hu)_x = 0,    (hu)_t + (hu^2 + g h^2 / 2)_x = 0,

and the scalar transport of depth by a prescribed velocity history,

    h_t + (h u)_x = 0,   u read from a stored coupled run.

All kernels operate on the trailing axis, so an ensemble of states can be
advanced in one vectorized call by stacking members along a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

GRAVITY = 9.81

WENO_EPS = 1e-6

# ghost points per side needed by the five-point interface stencils
_NGHOST = 3


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of n points spanning [x_min, x_max] inclusive."""

    n: int
    x_min: float = -1.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.n < 11:
            raise ConfigError(f"grid needs at least 11 points, got n={self.n}")
        if not self.x_max > self.x_min:
            raise ConfigError("grid requires x_max > x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)


@dataclass
class SWEState:
    """Depth and momentum on a grid, with the gravity constant."""

    h: np.ndarray
    hu: np.ndarray
    g: float = GRAVITY

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.hu = np.asarray(self.hu, dtype=float)
        if self.h.shape != self.hu.shape:
            raise ConfigError("h and hu must have identical shapes")
        if not (np.isfinite(self.h).all() and np.isfinite(self.hu).all()):
            raise NumericalError("state contains non-finite entries")
        if np.any(self.h <= 0.0):
            i = int(np.argmax(self.h <= 0.0))
            raise NumericalError(f"non-positive depth at index {i} (vacuum not supported)")

    @property
    def u(self) -> np.ndarray:
        return self.hu / self.h


@dataclass
class VelocityField:
    """Velocity history u(x, t_step) recorded at every solver step.

    Row s of ``u_history`` is the grid velocity at time t0 + s*dt.  The
    transport model looks these rows up by step index, so the history must
    cover the whole assimilation window with no gaps.
    """

    u_history: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        self.u_history = np.asarray(self.u_history, dtype=float)
        if self.u_history.ndim != 2:
            raise ConfigError("u_history must be a (steps, n) array")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.u_history.shape[0]

    def at(self, step_index: int) -> np.ndarray:
        if not 0 <= step_index < self.n_steps:
            raise ConfigError(
                f"step index {step_index} outside stored velocity history "
                f"[0, {self.n_steps - 1}]"
            )
        return self.u_history[step_index]


@dataclass(frozen=True)
class SolverConfig:
    """Time-step rule and physical constant for the WENO/RK3 solver.

    dt = cfl * dx at every step.  The Lax-Friedrichs splitting parameter is
    always max(|u| + sqrt(g h)) over the grid, evaluated on the current
    state; boundaries are closed with three constant-extrapolation ghost
    points per side and frozen end values.
    """

    cfl: float = 0.1
    g: float = GRAVITY

    def __post_init__(self):
        if not 0.0 < self.cfl < 1.0:
            raise ConfigError(f"cfl must lie in (0, 1), got {self.cfl}")
        if self.g <= 0.0:
            raise ConfigError("g must be positive")


def lax_friedrichs_lambda(u, h, g: float = GRAVITY):
    """max(|u| + sqrt(g h)) over the grid, per leading row if batched.

    Negative depths yield NaN here without warning; the step routines
    turn the resulting non-finite state into a NumericalError with
    context, which is more useful than a RuntimeWarning at this level.
    """
    with np.errstate(invalid="ignore"):
        speed = np.abs(u) + np.sqrt(g * np.asarray(h))
    return np.max(speed, axis=-1, keepdims=True)


def _weno5_face(a, b, c, d, e):
    """Left-biased fifth-order WENO value at the interface right of c.

    Arguments are the five stencil values f[i-2..i+2]; mirroring the
    argument order gives the right-biased reconstruction at the same
    interface.
    """
    beta0 = 13.0 / 12.0 * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2
    beta1 = 13.0 / 12.0 * (b - 2.0 * c + d) ** 2 + 0.25 * (b - d) ** 2
    beta2 = 13.0 / 12.0 * (c - 2.0 * d + e) ** 2 + 0.25 * (3.0 * c - 4.0 * d + e) ** 2

    alpha0 = 0.1 / (WENO_EPS + beta0) ** 2
    alpha1 = 0.6 / (WENO_EPS + beta1) ** 2
    alpha2 = 0.3 / (WENO_EPS + beta2) ** 2
    total = alpha0 + alpha1 + alpha2

    q0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0
    q1 = (-b + 5.0 * c + 2.0 * d) / 6.0
    q2 = (2.0 * c + 5.0 * d - e) / 6.0
    return (alpha0 * q0 + alpha1 * q1 + alpha2 * q2) / total


def _first_bad_index(arr) -> int:
    flat_bad = ~np.isfinite(np.asarray(arr)).reshape(-1)
    return int(np.argmax(flat_bad))


def weno5_derivative(field, flux, lam, dx: float, boundary: str = "extrapolate"):
    """-d(flux)/dx by WENO5 with Lax-Friedrichs splitting, trailing axis.

    ``lam`` is the splitting parameter (scalar, or shaped to broadcast
    against ``field`` with a trailing size-1 axis for batched input); it
    must dominate the characteristic speeds.  ``boundary`` selects the
    ghost-point fill: "extrapolate" repeats end values, "periodic" wraps.
    """
    field = np.asarray(field, dtype=float)
    flux = np.asarray(flux, dtype=float)
    if field.shape != flux.shape:
        raise ConfigError("field and flux must have identical shapes")
    if not np.isfinite(field).all():
        raise NumericalError(f"non-finite field value at flat index {_first_bad_index(field)}")
    if not np.isfinite(flux).all():
        raise NumericalError(f"non-finite flux value at flat index {_first_bad_index(flux)}")

    if boundary == "extrapolate":
        mode = "edge"
    elif boundary == "periodic":
        mode = "wrap"
    else:
        raise ConfigError(f"unknown boundary closure '{boundary}'")

    pad = [(0, 0)] * (field.ndim - 1) + [(_NGHOST, _NGHOST)]
    fp = 0.5 * (np.pad(flux, pad, mode=mode) + lam * np.pad(field, pad, mode=mode))
    fm = 0.5 * (np.pad(flux, pad, mode=mode) - lam * np.pad(field, pad, mode=mode))

    n = field.shape[-1]
    m = n + 1  # interfaces i-1/2 for i = 0..n
    # plus flux: left-biased stencil f[i-2..i+2] about interface i+1/2
    fhat = _weno5_face(
        fp[..., 0:m], fp[..., 1 : m + 1], fp[..., 2 : m + 2], fp[..., 3 : m + 3], fp[..., 4 : m + 4]
    )
    # minus flux: mirrored stencil f[i+3..i-1]
    fhat += _weno5_face(
        fm[..., 5 : m + 5], fm[..., 4 : m + 4], fm[..., 3 : m + 3], fm[..., 2 : m + 2], fm[..., 1 : m + 1]
    )
    return -np.diff(fhat, axis=-1) / dx


def tvdrk3_step(state, rhs_evaluator, dt: float, step_index: int | None = None):
    """One step of the three-stage TVD Runge-Kutta scheme.

    Written in increment form (algebraically the usual convex
    combinations) so a zero right-hand side returns the state bit-for-bit.
    Aborts with stage and step information if any stage goes non-finite.
    """

    def check(stage_state, stage_no):
        if not np.isfinite(stage_state).all():
            where = f" at step {step_index}" if step_index is not None else ""
            raise NumericalError(f"non-finite state in RK stage {stage_no}{where} (CFL violation or blowup)")

    state = np.asarray(state, dtype=float)
    s1 = state + dt * rhs_evaluator(state)
    check(s1, 1)
    s2 = state + 0.25 * ((s1 - state) + dt * rhs_evaluator(s1))
    check(s2, 2)
    s3 = state + (2.0 / 3.0) * ((s2 - state) + dt * rhs_evaluator(s2))
    check(s3, 3)
    return s3


def _swe_rhs(stacked, g: float, dx: float):
    """Semi-discrete RHS for the coupled system on a (..., 2, n) stack."""
    h = stacked[..., 0, :]
    hu = stacked[..., 1, :]
    u = hu / h
    lam = lax_friedrichs_lambda(u, h, g)[..., None, :]
    flux = np.stack([hu, hu * u + 0.5 * g * h * h], axis=-2)
    out = weno5_derivative(stacked, flux, lam, dx)
    # frozen end values realize the non-reflecting Dirichlet closure
    out[..., 0] = 0.0
    out[..., -1] = 0.0
    return out


@dataclass
class CoupledRun:
    """Result of a coupled shallow-water integration.

    ``recorded_steps`` lists the step indices (0 = initial data) whose
    states are stored in ``h`` / ``hu`` row by row.  ``velocity`` is None
    when recording was disabled to bound memory on very fine grids.
    """

    grid: Grid1D
    dt: float
    n_steps: int
    recorded_steps: np.ndarray
    h: np.ndarray
    hu: np.ndarray
    g: float = GRAVITY
    velocity: VelocityField | None = None

    def state_at(self, step: int) -> SWEState:
        hits = np.nonzero(self.recorded_steps == step)[0]
        if hits.size == 0:
            raise ConfigError(f"step {step} was not recorded")
        r = int(hits[0])
        return SWEState(self.h[r].copy(), self.hu[r].copy(), self.g)

    @property
    def final_state(self) -> SWEState:
        return self.state_at(self.n_steps)

    @property
    def states(self) -> list[SWEState]:
        return [self.state_at(int(s)) for s in self.recorded_steps]


def _resolve_steps(t_end: float, dt: float) -> int:
    steps = int(round(t_end / dt))
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ConfigError(f"t_end={t_end} is not a positive integer multiple of dt={dt}")
    return steps


def solve_coupled_swe(
    initial: SWEState,
    grid: Grid1D,
    config: SolverConfig,
    t_end: float,
    record="all",
    store_velocity: bool = True,
) -> CoupledRun:
    """Integrate the coupled system to t_end with dt = cfl * dx.

    ``record`` chooses which states are kept: "all", "ends" (initial and
    final only), or an explicit iterable of step indices.  The velocity
    u = hu/h is stored at every step unless ``store_velocity`` is False
    (useful for fine reference runs where the history would not fit).
    """
    if initial.h.ndim != 1 or initial.h.shape[-1] != grid.n:
        raise ConfigError("initial state does not match the grid")
    if t_end <= 0.0:
        raise ConfigError("t_end must be positive")
    dt = config.cfl * grid.dx
    n_steps = _resolve_steps(t_end, dt)

    if isinstance(record, str):
        if record == "all":
            keep = np.arange(n_steps + 1)
        elif record == "ends":
            keep = np.array([0, n_steps])
        else:
            raise ConfigError(f"unknown record mode '{record}'")
    else:
        keep = np.unique(np.asarray(list(record), dtype=int))
        if keep.size and (keep[0] < 0 or keep[-1] > n_steps):
            raise ConfigError("recorded step indices outside the run")
    keep_set = {int(s): r for r, s in enumerate(keep)}

    h_rec = np.empty((keep.size, grid.n))
    hu_rec = np.empty((keep.size, grid.n))
    u_hist = np.empty((n_steps + 1, grid.n)) if store_velocity else None

    state = np.stack([initial.h, initial.hu])
    if 0 in keep_set:
        h_rec[keep_set[0]] = state[0]
        hu_rec[keep_set[0]] = state[1]
    if store_velocity:
        u_hist[0] = state[1] / state[0]

    for step in range(1, n_steps + 1):
        state = tvdrk3_step(state, lambda s: _swe_rhs(s, config.g, grid.dx), dt, step_index=step)
        if np.any(state[0] <= 0.0):
            i = int(np.argmax(state[0] <= 0.0))
            raise NumericalError(f"vacuum: depth <= 0 at index {i}, step {step}")
        if store_velocity:
            u_hist[step] = state[1] / state[0]
        r = keep_set.get(step)
        if r is not None:
            h_rec[r] = state[0]
            hu_rec[r] = state[1]

    velocity = VelocityField(u_hist, dt) if store_velocity else None
    return CoupledRun(grid, dt, n_steps, keep, h_rec, hu_rec, config.g, velocity)


def transport_step(h, velocity: VelocityField, step_index: int, grid: Grid1D, config: SolverConfig):
    """Advance depth by one step of h_t + (h u)_x = 0 with stored u.

    ``h`` may be a single profile (n,) or a member stack (K, n); the
    velocity row at ``step_index`` is used for all three RK stages.
    """
    u = velocity.at(step_index)
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != grid.n or u.shape[-1] != grid.n:
        raise ConfigError("depth/velocity length does not match the grid")
    dt = config.cfl * grid.dx

    def rhs(hc):
        lam = lax_friedrichs_lambda(u, hc, config.g)
        out = weno5_derivative(hc, hc * u, lam, grid.dx)
        out[..., 0] = 0.0
        out[..., -1] = 0.0
        return out

    return tvdrk3_step(h, rhs, dt, step_index=step_index)
