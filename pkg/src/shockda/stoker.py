"""Analytic wet-bed dam-break solution and synthetic observations.

The classical Stoker solution for a step of depth h0 into quiescent water
of depth h1 < h0: a left-running rarefaction fan, a constant intermediate
state (h_m, u_m), and a right-running shock of speed s.  The intermediate
depth solves the compatibility equation that equates the velocity obtained
from the rarefaction Riemann invariant with the velocity from the shock
jump conditions.

Also provides point-selection observation operators and Gaussian synthetic
observation streams drawn from a seeded generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError
from .solver import GRAVITY, Grid1D
from ._csvio import fmt17, write_csv


@dataclass(frozen=True)
class DamBreakParams:
    """Left/right depths, gravity, and the dam location."""

    h0: float = 1.0
    h1: float = 0.8
    g: float = GRAVITY
    x_dam: float = 0.0

    def __post_init__(self):
        # h0 == h1 is allowed and yields the degenerate no-wave solution
        if not (self.h0 >= self.h1 > 0.0):
            raise ConfigError(f"dam break requires h0 >= h1 > 0, got h0={self.h0}, h1={self.h1}")
        if self.g <= 0.0:
            raise ConfigError("g must be positive")


@dataclass(frozen=True)
class StokerIntermediate:
    """Constant state between the rarefaction foot and the shock."""

    h_m: float
    u_m: float
    s: float


def _compat(h_m: float, p: DamBreakParams) -> float:
    """Rarefaction-invariant velocity minus shock-jump velocity at h_m."""
    rare = 2.0 * (np.sqrt(p.g * p.h0) - np.sqrt(p.g * h_m))
    shock = (h_m - p.h1) * np.sqrt(0.5 * p.g * (1.0 / p.h1 + 1.0 / h_m))
    return rare - shock


def _compat_prime(h_m: float, p: DamBreakParams) -> float:
    phi = np.sqrt(0.5 * p.g * (1.0 / p.h1 + 1.0 / h_m))
    return -np.sqrt(p.g / h_m) - phi + p.g * (h_m - p.h1) / (4.0 * phi * h_m * h_m)


def stoker_solve(params: DamBreakParams, tol: float = 1e-14, max_iter: int = 100) -> StokerIntermediate:
    """Find the intermediate state by safeguarded Newton on (h1, h0).

    The compatibility residual is positive at h1 and negative at h0, so a
    bisection bracket is maintained and used whenever a Newton step leaves
    it.  Tolerance is on the residual magnitude.
    """
    if params.h0 == params.h1:
        return StokerIntermediate(h_m=params.h0, u_m=0.0, s=0.0)

    lo, hi = params.h1, params.h0
    x = 0.5 * (lo + hi)
    fx = _compat(x, params)
    for _ in range(max_iter):
        if abs(fx) < tol:
            break
        if fx > 0.0:
            lo = x
        else:
            hi = x
        step = fx / _compat_prime(x, params)
        x_new = x - step
        if not (lo < x_new < hi) or not np.isfinite(x_new):
            x_new = 0.5 * (lo + hi)
        x = x_new
        fx = _compat(x, params)
    else:
        raise ConvergenceError(
            f"dam-break compatibility root did not converge in {max_iter} iterations "
            f"(last residual {fx:.3e})",
            residual=float(fx),
        )

    h_m = float(x)
    u_m = 2.0 * (np.sqrt(params.g * params.h0) - np.sqrt(params.g * h_m))
    s = h_m * u_m / (h_m - params.h1)
    return StokerIntermediate(h_m=h_m, u_m=float(u_m), s=float(s))


def rankine_hugoniot_residual(params: DamBreakParams, inter: StokerIntermediate) -> float:
    """Momentum jump condition residual across the shock (mass holds by construction of s)."""
    left_flux = inter.h_m * inter.u_m**2 + 0.5 * params.g * inter.h_m**2
    right_flux = 0.5 * params.g * params.h1**2
    return float(inter.s * (inter.h_m * inter.u_m - 0.0) - (left_flux - right_flux))


def rarefaction_invariant_residual(params: DamBreakParams, inter: StokerIntermediate) -> float:
    return float(inter.u_m + 2.0 * np.sqrt(params.g * inter.h_m) - 2.0 * np.sqrt(params.g * params.h0))


def stoker_evaluate(params: DamBreakParams, inter: StokerIntermediate, x, t: float):
    """Evaluate (h, u) at position(s) x and time t >= 0.

    Piecewise in the similarity variable (x - x_dam)/t: undisturbed left
    state, rarefaction fan, intermediate state, undisturbed right state.
    At t = 0 this returns the initial step.  Scalar x in gives scalar out.
    """
    if t < 0.0:
        raise ConfigError("t must be nonnegative")
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)

    if t == 0.0:
        h = np.where(x_arr < params.x_dam, params.h0, params.h1)
        u = np.zeros_like(h)
    else:
        xi = (x_arr - params.x_dam) / t
        c0 = np.sqrt(params.g * params.h0)
        foot = inter.u_m - np.sqrt(params.g * inter.h_m)
        fan_h = (2.0 * c0 - xi) ** 2 / (9.0 * params.g)
        fan_u = 2.0 * (xi + c0) / 3.0
        conds = [xi <= -c0, xi < foot, xi < inter.s]
        h = np.select(conds, [params.h0, fan_h, inter.h_m], default=params.h1)
        u = np.select(conds, [0.0, fan_u, inter.u_m], default=0.0)

    if scalar:
        return float(h[0]), float(u[0])
    return h, u


@dataclass(frozen=True)
class ObservationOperator:
    """0/1 point-selection operator: y = v[indices]."""

    indices: np.ndarray
    n_state: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1:
            raise ConfigError("indices must be one-dimensional")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.n_state:
                raise ConfigError("observation indices out of range")
            if np.any(np.diff(idx) <= 0):
                raise ConfigError("observation indices must be strictly increasing")

    @classmethod
    def dense(cls, n: int) -> "ObservationOperator":
        return cls(np.arange(n), n)

    @classmethod
    def every_other(cls, n: int) -> "ObservationOperator":
        """Every second grid point starting from the first (both ends seen when n is odd)."""
        return cls(np.arange(0, n, 2), n)

    @property
    def m(self) -> int:
        return self.indices.size

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.indices]

    def scatter(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros(w.shape[:-1] + (self.n_state,))
        out[..., self.indices] = w
        return out

    def matrix(self) -> np.ndarray:
        H = np.zeros((self.m, self.n_state))
        H[np.arange(self.m), self.indices] = 1.0
        return H


@dataclass
class ObservationStream:
    """Observation instants, operator, noise level, and the drawn values."""

    times: np.ndarray
    operator: ObservationOperator
    gamma: float
    values: np.ndarray
    seed: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size, self.operator.m):
            raise ConfigError("observation values must have shape (times, m)")

    @property
    def gamma_sq(self) -> float:
        """Scalar variance of the diagonal noise covariance gamma^2 I."""
        return self.gamma**2


def synthesize_observations(truth_fn, grid: Grid1D, times, H: ObservationOperator, gamma: float, seed: int) -> ObservationStream:
    """Draw y_j = H truth(t_j) + eta_j, eta_j ~ N(0, gamma^2 I), seeded.

    Noise is drawn in one row-major block over (time, observation index),
    so a stream regenerates bit-identically from its seed.
    """
    if gamma <= 0.0:
        raise ConfigError("gamma must be positive")
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    noise = gamma * rng.standard_normal((times.size, H.m))
    clean = np.stack([H.apply(np.asarray(truth_fn(float(t)))) for t in times]) if times.size else np.zeros((0, H.m))
    return ObservationStream(times, H, gamma, clean + noise, seed)


def observations_to_csv(stream: ObservationStream, grid: Grid1D, path) -> None:
    x = grid.points
    rows = (
        (fmt17(t), str(int(j)), fmt17(x[j]), fmt17(stream.values[r, c]))
        for r, t in enumerate(stream.times)
        for c, j in enumerate(stream.operator.indices)
    )
    write_csv(path, ("t", "obs_index", "x", "y"), rows)


def observations_from_csv(path):
    """Read back (times, indices, values) from an observation CSV."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["t", "obs_index", "x", "y"]:
            raise ConfigError(f"unexpected observation CSV header {header!r}")
        t_list, j_list, y_list = [], [], []
        for row in reader:
            t_list.append(float(row[0]))
            j_list.append(int(row[1]))
            y_list.append(float(row[3]))
    times = np.unique(np.asarray(t_list))
    indices = np.unique(np.asarray(j_list))
    values = np.asarray(y_list).reshape(times.size, indices.size)
    return times, indices, values


def truth_to_csv(times, grid: Grid1D, h_rows, u_rows, path) -> None:
    x = grid.points
    rows = (
        (fmt17(t), fmt17(x[i]), fmt17(h_rows[r][i]), fmt17(u_rows[r][i]))
        for r, t in enumerate(times)
        for i in range(grid.n)
    )
    write_csv(path, ("t", "x", "h", "u"), rows)
