"""Small fitting helpers: log-log slopes, inverse-power extrapolation, exponential tails."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailed, InsufficientSamples

SLOPE_R2_FLAG = 0.9


@dataclass(frozen=True)
class ScalingFit:
    """Power-law fit ``y = exp(intercept) * x**slope`` in log-log coordinates."""

    abscissa: str
    x: tuple
    y: tuple
    slope: float
    intercept: float
    r2: float
    extra: dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        return self.r2 >= SLOPE_R2_FLAG

    def to_dict(self) -> dict:
        return {
            "abscissa": self.abscissa,
            "x": list(map(float, self.x)),
            "y": list(map(float, self.y)),
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "reliable": self.reliable,
            **self.extra,
        }


def r_squared(y, yfit) -> float:
    y = np.asarray(y, float)
    ss_res = float(np.sum((y - yfit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def loglog_fit(x, y, abscissa: str = "x") -> ScalingFit:
    """Least-squares line through ``(log x, log |y|)``."""
    x = np.asarray(x, float)
    y = np.abs(np.asarray(y, float))
    if len(x) < 2:
        raise InsufficientSamples("log-log fit needs at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitFailed("log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    return ScalingFit(abscissa, tuple(x), tuple(y), float(slope), float(intercept),
                      r_squared(ly, slope * lx + intercept))


def top_half(L) -> np.ndarray:
    """Indices of samples in the upper half of the ``L`` window, at least 3."""
    L = np.asarray(L, float)
    idx = np.nonzero(L >= 0.5 * (L.min() + L.max()))[0]
    if len(idx) < 3:
        idx = np.argsort(L)[-3:]
    return np.sort(idx)


def extrapolate_inverse(L, values, window: str = "top") -> tuple[float, np.ndarray]:
    """Fit ``a + b/L + c/L**2`` and return ``a`` and the coefficients.

    ``window='top'`` uses the upper half of the ``L`` range.
    """
    L = np.asarray(L, float)
    v = np.asarray(values)
    idx = top_half(L) if window == "top" else np.arange(len(L))
    if len(idx) < 3:
        raise InsufficientSamples("extrapolation needs at least 3 samples")
    X = np.stack([np.ones(len(idx)), 1 / L[idx], 1 / L[idx] ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(X, v[idx], rcond=None)
    return coef[0], coef


@dataclass(frozen=True)
class ExpFit:
    """``y(L) = limit + amp * exp(-rate * L)``."""

    limit: float
    amp: float
    rate: float
    r2: float
    r2_log: float


def exp_tail_fit(L, y) -> ExpFit:
    """Fit an exponentially converging sequence.

    The starting guess comes from Aitken extrapolation of the last three
    points; the final parameters from nonlinear least squares. ``r2`` is the
    coefficient of determination of ``y``; ``r2_log`` that of the straight
    line ``log|y - limit|`` against ``L``.
    """
    L = np.asarray(L, float)
    y = np.asarray(y, float)
    if len(L) < 4:
        raise InsufficientSamples("exponential fit needs at least 4 samples")
    d1, d2 = y[-2] - y[-3], y[-1] - y[-2]
    if d1 == 0 or d2 == 0 or d2 / d1 <= 0 or d2 / d1 >= 1:
        raise FitFailed("sequence is not monotonically converging")
    q = d2 / d1
    step = L[-1] - L[-2]
    rate0 = -np.log(q) / step
    lim0 = y[-1] + d2 * q / (1 - q)
    amp0 = (y[-1] - lim0) * np.exp(rate0 * L[-1])

    scale = max(np.ptp(y), 1e-300)

    def resid(p):
        return (p[0] + p[1] * np.exp(-p[2] * L) - y) / scale

    sol = least_squares(resid, [lim0, amp0, rate0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    lim, amp, rate = sol.x
    if not sol.success or rate <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitFailed("exponential fit did not converge")
    r2 = r_squared(y, lim + amp * np.exp(-rate * L))
    dev = np.abs(y - lim)
    if np.any(dev == 0):
        r2_log = 0.0
    else:
        s, c = np.polyfit(L, np.log(dev), 1)
        r2_log = r_squared(np.log(dev), s * L + c)
    return ExpFit(float(lim), float(amp), float(rate), r2, r2_log)
