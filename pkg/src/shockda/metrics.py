"""Error metrics against the truth: pointwise absolute and relative L1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from ._csvio import fmt17, write_csv

# slack for closed-interval window membership at the endpoints
_WINDOW_TOL = 1e-12


def pointwise_error(estimate, truth) -> np.ndarray:
    """Entrywise |estimate - truth|."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ConfigError(f"length mismatch: estimate {estimate.shape} vs truth {truth.shape}")
    return np.abs(estimate - truth)


def relative_error(estimate, truth, window=None, x=None) -> float:
    """Sum|estimate - truth| / Sum|truth|, optionally over a spatial window.

    ``window`` is a closed interval (a, b); grid coordinates ``x`` are
    required with it and membership allows 1e-12 slack at the endpoints.
    """
    err = pointwise_error(estimate, truth)
    truth = np.asarray(truth, dtype=float)
    if window is not None:
        if x is None:
            raise ConfigError("a spatial window needs the grid coordinates x")
        x = np.asarray(x, dtype=float)
        if x.shape != truth.shape:
            raise ConfigError("x must match the state length")
        a, b = window
        mask = (x >= a - _WINDOW_TOL) & (x <= b + _WINDOW_TOL)
        if not mask.any():
            raise ConfigError(f"window [{a}, {b}] does not intersect the grid")
        err = err[mask]
        truth = truth[mask]
    denom = np.sum(np.abs(truth))
    if denom == 0.0:
        raise ConfigError("relative error undefined: truth is identically zero on the window")
    return float(np.sum(err) / denom)


@dataclass
class ErrorSeries:
    """A labeled error curve over time, optionally window-restricted."""

    times: np.ndarray
    values: np.ndarray
    label: str
    spatial_window: tuple | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ConfigError("times and values must have matching lengths")
        if self.values.size and self.values.min() < 0.0:
            raise ConfigError("error values must be nonnegative")

    def mean_over(self, t_lo: float, t_hi: float) -> float:
        mask = (self.times >= t_lo - _WINDOW_TOL) & (self.times <= t_hi + _WINDOW_TOL)
        if not mask.any():
            raise ConfigError(f"no error samples inside [{t_lo}, {t_hi}]")
        return float(self.values[mask].mean())


def error_series_to_csv(series: list[ErrorSeries], path) -> None:
    def rows():
        for s in series:
            lo, hi = ("", "") if s.spatial_window is None else (fmt17(s.spatial_window[0]), fmt17(s.spatial_window[1]))
            for t, v in zip(s.times, s.values):
                yield (fmt17(t), fmt17(v), s.label, lo, hi)

    write_csv(path, ("t", "value", "label", "window_lo", "window_hi"), rows())
