"""Bernstein polynomial approximants of test functions on a working interval.

The interval ``[x_l, x_r]`` is mapped affinely onto ``[upsilon, 1 - upsilon]``
by ``y = L x + c`` and the polynomial is

    f_m(x) = sum_k C(m, k) y^k (1 - y)^(m - k) f((k/m - c) / L).

Coefficients are the raw samples ``f((k/m - c)/L)``; evaluation uses the de
Casteljau recurrence, in complex arithmetic when needed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import BernsteinOverflow, EvalFailure, InvalidArgument, MissingDerivative
from .functions import TestFunction

MAX_DEGREE = 10**6
# above this degree the O(m^2) recurrence is replaced by log-space binomial weights
CASTELJAU_MAX_DEGREE = 512
DEFAULT_UPSILON = 0.1
DEFAULT_EPS0 = 0.05
DEFAULT_KAPPA = 0.05


def interval_map(x_l: float, x_r: float, upsilon: float) -> tuple[float, float]:
    """Return ``(L, c)`` with ``L x_l + c = upsilon`` and ``L x_r + c = 1 - upsilon``."""
    if not x_l < x_r:
        raise InvalidArgument(f"interval must be nondegenerate, got [{x_l}, {x_r}]")
    if not 0.0 < upsilon < 0.5:
        raise InvalidArgument("upsilon must lie in (0, 1/2)")
    width = x_r - x_l
    return (1.0 - 2.0 * upsilon) / width, ((x_l + x_r) * upsilon - x_l) / width


@dataclass(frozen=True, eq=False)
class BernsteinApproximant:
    m: int
    interval: tuple[float, float]
    upsilon: float
    L: float
    c: float
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64)
        if coeffs.shape != (self.m + 1,):
            raise InvalidArgument("need m + 1 coefficients")
        if not np.all(np.isfinite(coeffs)):
            raise EvalFailure("Bernstein coefficients must be finite")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    def to_unit(self, x):
        return self.L * np.asarray(x) + self.c

    def __call__(self, x):
        return self.eval_complex(x) if np.iscomplexobj(x) else self.eval_real(x)

    def eval_real(self, x):
        out = _evaluate(self.coeffs, np.asarray(self.to_unit(x), dtype=np.float64))
        return float(out) if np.ndim(x) == 0 else out

    def eval_complex(self, z, v0: float | None = None):
        """Evaluate at complex ``z``; warns when ``z`` leaves the working box."""
        y = np.asarray(self.to_unit(z), dtype=np.complex128)
        if v0 is not None:
            lo, hi = self.interval
            zz = np.asarray(z)
            outside = (np.abs(zz.imag) > v0) | (zz.real < lo) | (zz.real > hi)
            if np.any(outside):
                warnings.warn("evaluating Bernstein approximant outside its working box", stacklevel=2)
        out = _evaluate(self.coeffs.astype(np.complex128), y)
        return complex(out) if np.ndim(z) == 0 else out

    def derivative(self) -> BernsteinApproximant:
        """Exact derivative in x: degree m - 1, coefficients ``L m (b_{k+1} - b_k)``."""
        if self.m < 1:
            return BernsteinApproximant(0, self.interval, self.upsilon, self.L, self.c, np.zeros(1))
        coeffs = self.L * self.m * np.diff(self.coeffs)
        return BernsteinApproximant(self.m - 1, self.interval, self.upsilon, self.L, self.c, coeffs)


def _evaluate(coeffs: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = coeffs.size - 1
    if m > MAX_DEGREE:
        raise BernsteinOverflow(f"degree {m} exceeds {MAX_DEGREE}")
    shape = np.shape(y)
    y = np.ravel(y)
    if m <= CASTELJAU_MAX_DEGREE:
        return _de_casteljau(coeffs, y).reshape(shape)
    return _binomial_weights(coeffs, y).reshape(shape)


def _de_casteljau(coeffs: np.ndarray, y: np.ndarray) -> np.ndarray:
    b = np.broadcast_to(coeffs, (y.size, coeffs.size)).astype(np.result_type(coeffs, y))
    yy = y[:, None]
    for r in range(coeffs.size - 1, 0, -1):
        b = (1.0 - yy) * b[:, :r] + yy * b[:, 1 : r + 1]
    return b[:, 0]


def _binomial_weights(coeffs: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = coeffs.size - 1
    k = np.arange(m + 1)
    log_binom = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    out = np.empty(y.size, dtype=np.result_type(coeffs, y))
    complex_mode = np.iscomplexobj(y)
    for i, yi in enumerate(y):
        if not complex_mode and (yi <= 0.0 or yi >= 1.0):
            # endpoints and extrapolation: fall back to complex logs
            yi = complex(yi)
        if isinstance(yi, complex) or complex_mode:
            logs = log_binom + k * np.log(complex(yi)) + (m - k) * np.log(complex(1.0 - yi))
            val = np.sum(np.exp(logs) * coeffs)
            out[i] = val if complex_mode else val.real
        else:
            logs = log_binom + k * math.log(yi) + (m - k) * math.log1p(-yi)
            out[i] = np.sum(np.exp(logs) * coeffs)
    return out


def fit(f: TestFunction, interval: tuple[float, float], upsilon: float = DEFAULT_UPSILON, m: int = 64) -> BernsteinApproximant:
    """Degree-``m`` Bernstein approximant of ``f`` on ``interval``.

    The samples ``f((k/m - c)/L)`` reach slightly beyond ``interval``
    (to where ``y`` hits 0 and 1), so ``f`` must be finite there too.
    """
    if int(m) != m or m < 1:
        raise InvalidArgument("degree m must be a positive integer")
    if m > MAX_DEGREE:
        raise BernsteinOverflow(f"degree {m} exceeds {MAX_DEGREE}")
    x_l, x_r = map(float, interval)
    L, c = interval_map(x_l, x_r, upsilon)
    x_nodes = (np.arange(m + 1) / m - c) / L
    with np.errstate(all="ignore"):
        values = np.asarray(f.eval(x_nodes), dtype=np.float64)
    if values.shape != x_nodes.shape or not np.all(np.isfinite(values)):
        raise EvalFailure(f"{getattr(f, 'name', 'f')} is not finite at every Bernstein node")
    return BernsteinApproximant(int(m), (x_l, x_r), float(upsilon), L, c, values)


def correction_hm(f: TestFunction, interval: tuple[float, float], upsilon: float = DEFAULT_UPSILON, m: int = 64) -> BernsteinApproximant:
    """Bernstein fit of ``y (1 - y) f~''(y)`` where ``f~(y) = f((y - c)/L)``.

    ``f_m - h_m / (2m)`` approximates ``f`` to second order in ``1/m``.
    """
    if f.deriv2 is None:
        raise MissingDerivative(f"{getattr(f, 'name', 'f')} has no registered second derivative")
    x_l, x_r = map(float, interval)
    L, c = interval_map(x_l, x_r, upsilon)
    if int(m) != m or m < 1:
        raise InvalidArgument("degree m must be a positive integer")
    y = np.arange(m + 1) / m
    x_nodes = (y - c) / L
    with np.errstate(all="ignore"):
        f2 = np.asarray(f.deriv2(x_nodes), dtype=np.float64)
    # y(1-y) vanishes at the end nodes; f'' may not be finite there
    weight = y * (1.0 - y)
    values = np.where(weight == 0.0, 0.0, weight * f2 / L**2)
    if not np.all(np.isfinite(values)):
        raise EvalFailure(f"second derivative of {getattr(f, 'name', 'f')} is not finite at a node")
    return BernsteinApproximant(int(m), (x_l, x_r), float(upsilon), L, c, values)


def sup_error(
    approx: BernsteinApproximant,
    f: TestFunction,
    grid_size: int = 1001,
    hm: BernsteinApproximant | None = None,
) -> float:
    """``max |f_m - f|`` on a uniform grid over the working interval.

    With ``hm`` the corrected approximant ``f_m - h_m/(2m)`` is measured.
    """
    if grid_size < 2:
        raise InvalidArgument("grid_size must be at least 2")
    x = np.linspace(*approx.interval, grid_size)
    approx_vals = approx.eval_real(x)
    if hm is not None:
        approx_vals = approx_vals - hm.eval_real(x) / (2.0 * approx.m)
    return float(np.max(np.abs(approx_vals - np.asarray(f.eval(x), dtype=np.float64))))


def log_growth(approx: BernsteinApproximant, x_l: float, x_r: float, height: float) -> float:
    """``log max |sum_k C(m,k) y^k (1-y)^(m-k)|``-type bound on a box.

    The basis sums to ``(|y| + |1 - y|)^m`` in modulus, which is 1 on the
    real segment and grows off it; evaluating the polynomial on the box
    ``[x_l, x_r] x [-height, height]`` loses about this many nats of precision.
    """
    y_re = approx.to_unit(np.linspace(x_l, x_r, 257))
    b = approx.L * height
    growth = np.hypot(y_re, b) + np.hypot(1.0 - y_re, b)
    return float(approx.m * np.log(growth.max()))


def safe_height(
    approx: BernsteinApproximant, x_l: float, x_r: float, height: float, max_log_growth: float = math.log(1e6)
) -> float:
    """Largest ``v <= height`` keeping :func:`log_growth` below ``max_log_growth``."""
    if log_growth(approx, x_l, x_r, height) <= max_log_growth:
        return height
    lo, hi = 0.0, height
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if log_growth(approx, x_l, x_r, mid) <= max_log_growth:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise BernsteinOverflow(f"degree {approx.m} cannot be evaluated stably on [{x_l}, {x_r}]")
    return lo


def degree_for_clt(n: int, eps0: float = DEFAULT_EPS0) -> int:
    """``floor(n^(3/5 + eps0))``, the degree used for CLT experiments."""
    return max(1, int(math.floor(n ** (0.6 + eps0))))


def degree_for_rate(n: int, kappa: float = DEFAULT_KAPPA) -> int:
    """``floor(n^(8/5 - kappa))``, the degree used for rate experiments."""
    return max(1, int(math.floor(n ** (1.6 - kappa))))
