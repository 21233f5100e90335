"""Finite-n CLT mean and variance for linear spectral statistics.

Both quantities are contour integrals of the companion transform
``s = s_n^0(z)``:

mean (real case)::

    -1/(2 pi i) \\oint f(z) y s^3 <t^2 (1+ts)^-3> / (1 - y s^2 <t^2 (1+ts)^-2>)^2 dz
    -beta/(2 pi i) \\oint f(z) s^3 y h2(z) / (1 - y s^2 <t^2 (1+ts)^-2>) dz

variance::

    -k/(pi^2) \\oint\\oint f'(z1) f'(z2) (-Log(1 - a(z1, z2))) dz2 dz1
    -beta y/(4 pi^2) \\oint\\oint f'(z1) f'(z2) s1 s2 h1(z1, z2) dz2 dz1

with ``k = 1/2`` for real entries and ``1/4`` for complex entries with
``E x^2 = 0``; ``<.>`` averages over H_p. The complex case drops the first
mean term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .contour import RectContour, integrate_adaptive, rect_contour
from .errors import BranchViolation, DegenerateFunction, InvalidArgument, QuadratureNotConverged, SingularFactor
from .mp_core import (
    EntryCase,
    ModelParams,
    PopulationSpectrum,
    as_complex_function,
    solve_underline_s_many,
    support_bounds,
)

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
IMAG_TOL = 1e-6
SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class CLTConfig:
    eps: float = 0.2
    v0: float = 0.5
    nodes_per_side: int = 64
    max_nodes: int = 4096
    rtol: float = 1e-8
    symmetric: bool = True


@dataclass(frozen=True)
class CLTParams:
    mu_n: float
    sigma2_n: float
    entry_case: EntryCase
    quad_error_estimate: float

    def to_dict(self) -> dict:
        return {
            "mu_n": self.mu_n,
            "sigma2_n": self.sigma2_n,
            "entry_case": self.entry_case.value,
            "quad_error_estimate": self.quad_error_estimate,
        }


def build_contour(
    params: ModelParams,
    spectrum: PopulationSpectrum,
    eps: float = 0.2,
    v0: float = 0.5,
    nodes_per_side: int = 64,
) -> RectContour:
    """Rectangle enclosing the support bracket with margin ``eps``.

    When the left end of the bracket is zero the left side is placed at
    ``-eps``.
    """
    if eps <= 0 or v0 <= 0 or nodes_per_side <= 0:
        raise InvalidArgument("eps, v0 and nodes_per_side must be positive")
    lo, hi = support_bounds(params, spectrum)
    x_l = -eps if lo <= 0 else lo - eps
    return rect_contour(x_l, hi + eps, v0, nodes_per_side)


def second_contour(params: ModelParams, spectrum: PopulationSpectrum, contour: RectContour, eps: float) -> RectContour:
    """Companion contour for double integrals: 1.5x the margin, 2x the height."""
    return build_contour(params, spectrum, 1.5 * eps, 2.0 * contour.v0, contour.nodes_per_side)


def _check_factors(d: np.ndarray) -> None:
    if np.any(np.abs(d) < SINGULAR_TOL):
        raise SingularFactor("|1 + t s| below 1e-12; contour touches the spectrum")


def h1_fn(z1, z2, spectrum: PopulationSpectrum, s1, s2):
    """``p^-1 sum_i [t_i/(1+t_i s1)] [t_i/(1+t_i s2)]``, broadcasting over s1, s2."""
    t, w = spectrum.atoms
    s1 = np.asarray(s1, dtype=np.complex128)
    s2 = np.asarray(s2, dtype=np.complex128)
    d1 = 1.0 + s1[..., None] * t
    d2 = 1.0 + s2[..., None] * t
    _check_factors(d1)
    _check_factors(d2)
    out = np.sum(w * (t / d1) * (t / d2), axis=-1)
    return complex(out) if out.ndim == 0 else out


def h2_fn(z, spectrum: PopulationSpectrum, s):
    """``p^-1 sum_i t_i^2 / (1 + t_i s)^3``."""
    t, w = spectrum.atoms
    s = np.asarray(s, dtype=np.complex128)
    d = 1.0 + s[..., None] * t
    _check_factors(d)
    out = np.sum(w * t**2 / d**3, axis=-1)
    return complex(out) if out.ndim == 0 else out


def a_fn(z1, z2, params: ModelParams, spectrum: PopulationSpectrum, s1, s2):
    """``a_n(z1, z2) = y_n s1 s2 <t^2 / ((1 + t s1)(1 + t s2))>``."""
    s1 = np.asarray(s1, dtype=np.complex128)
    s2 = np.asarray(s2, dtype=np.complex128)
    out = params.y_n * s1 * s2 * np.asarray(h1_fn(z1, z2, spectrum, s1, s2))
    return complex(out) if out.ndim == 0 else out


def _a_matrix(s1: np.ndarray, s2: np.ndarray, y: float, spectrum: PopulationSpectrum) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(a, h1)`` on the grid ``s1[:, None] x s2[None, :]``."""
    t, w = spectrum.atoms
    d1 = 1.0 + s1[:, None] * t
    d2 = 1.0 + s2[:, None] * t
    _check_factors(d1)
    _check_factors(d2)
    h1 = ((t / d1) * w) @ (t / d2).T
    return y * s1[:, None] * s2[None, :] * h1, h1


def _neg_log1m(a: np.ndarray) -> np.ndarray:
    """``a * int_0^1 dt / (1 - t a) = -Log(1 - a)``, series for tiny |a|."""
    small = np.abs(a) < SERIES_CUTOFF
    out = np.empty_like(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~small] = -np.log(1.0 - a[~small])
    sa = a[small]
    out[small] = sa * (1.0 + sa / 2.0 + sa * sa / 3.0 + sa**3 / 4.0)
    return out


def _derivative_of(f):
    if hasattr(f, "derivative"):
        return f.derivative()
    d = getattr(f, "deriv1", None)
    if d is None:
        raise InvalidArgument("cov_lss needs f' : pass a Bernstein approximant or a function with deriv1")
    return d


def _mean_integrand(f, z: np.ndarray, params: ModelParams, spectrum: PopulationSpectrum) -> np.ndarray:
    s = solve_underline_s_many(z, params, spectrum).s_underline
    t, w = spectrum.atoms
    d = 1.0 + s[:, None] * t
    _check_factors(d)
    y = params.y_n
    m2 = (t**2 / d**2) @ w
    m3 = (t**2 / d**3) @ w
    denom = 1.0 - y * s**2 * m2
    fz = as_complex_function(f)(z)
    out = np.zeros_like(z)
    if params.entry_case is EntryCase.REAL:
        out += fz * y * s**3 * m3 / denom**2
    if params.beta_x != 0.0:
        out += params.beta_x * fz * s**3 * y * m3 / denom
    return out


def _mean_on(f, contour: RectContour, params, spectrum, symmetric: bool) -> tuple[complex, float]:
    if symmetric:
        z, w = contour.upper_nodes, contour.upper_weights
        terms = _mean_integrand(f, z, params, spectrum) * w
        # lower half mirrors the upper one: \oint g = 2i Im(sum over upper)
        value = -(2j * np.imag(terms.sum())) / (2j * np.pi)
        return value, 2 * float(np.abs(terms).sum()) / (2 * np.pi)
    terms = _mean_integrand(f, contour.nodes, params, spectrum) * contour.weights
    return -terms.sum() / (2j * np.pi), float(np.abs(terms).sum()) / (2 * np.pi)


def _require_real(value: complex, what: str) -> float:
    if abs(value.imag) > IMAG_TOL * (1.0 + abs(value.real)):
        raise InvalidArgument(f"{what} has imaginary part {value.imag:.3e}; f must be real on the real axis")
    return float(value.real)


def mean_lss(
    f,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    contour: RectContour,
    *,
    symmetric: bool = True,
    adaptive: bool = False,
    rtol: float = 1e-8,
    max_nodes: int = 4096,
) -> float:
    """Finite-n CLT mean ``mu_n(f)``.

    For complex entries with ``beta_x = 0`` the integrand vanishes and the
    result is exactly 0.
    """
    if params.entry_case is EntryCase.COMPLEX_ALPHA_ZERO and params.beta_x == 0.0:
        return 0.0
    value, _ = _adaptive(lambda c: _mean_on(f, c, params, spectrum, symmetric), contour, adaptive, rtol, max_nodes)
    return _require_real(value, "mu_n")


def _cov_on(
    fp, gp, c1: RectContour, c2: RectContour, params: ModelParams, spectrum: PopulationSpectrum, symmetric: bool
) -> tuple[complex, float]:
    y = params.y_n
    k = 1.0 / (2 * np.pi**2) if params.entry_case is EntryCase.REAL else 1.0 / (4 * np.pi**2)
    beta = params.beta_x

    def block(z1, w1, z2, w2, s1, s2):
        a, h1 = _a_matrix(s1, s2, y, spectrum)
        if np.any(np.abs(a) >= 1.0):
            raise BranchViolation(f"max |a_n| = {np.abs(a).max():.6f} >= 1; contours too close to the support")
        kernel = -k * _neg_log1m(a)
        if beta != 0.0:
            kernel = kernel - beta * y / (4 * np.pi**2) * (s1[:, None] * s2[None, :]) * h1
        u = as_complex_function(fp)(z1) * w1
        v = as_complex_function(gp)(z2) * w2
        return u @ kernel @ v, float(np.abs(u) @ np.abs(kernel) @ np.abs(v))

    if symmetric:
        z1, w1 = c1.upper_nodes, c1.upper_weights
        z2, w2 = c2.upper_nodes, c2.upper_weights
        s1 = solve_underline_s_many(z1, params, spectrum).s_underline
        s2 = solve_underline_s_many(z2, params, spectrum).s_underline
        same, sc1 = block(z1, w1, z2, w2, s1, s2)
        # lower nodes of C2 are conj(z2) with weights -conj(w2)
        cross, sc2 = block(z1, w1, np.conj(z2), -np.conj(w2), s1, np.conj(s2))
        return complex(2.0 * np.real(same + cross)), 2.0 * (sc1 + sc2)
    s1 = solve_underline_s_many(c1.nodes, params, spectrum).s_underline
    s2 = solve_underline_s_many(c2.nodes, params, spectrum).s_underline
    return block(c1.nodes, c1.weights, c2.nodes, c2.weights, s1, s2)


def _adaptive(evaluate, contour, adaptive: bool, rtol: float, max_nodes: int):
    if not adaptive:
        return evaluate(contour)[0], float("nan")
    return integrate_adaptive(evaluate, contour, rtol=rtol, max_nodes=max_nodes)


def cov_lss(
    f,
    g,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    contour1: RectContour,
    contour2: RectContour,
    *,
    symmetric: bool = True,
    adaptive: bool = False,
    rtol: float = 1e-8,
    max_nodes: int = 4096,
) -> float:
    """Finite-n CLT covariance of the statistics of ``f`` and ``g``.

    ``contour1`` and ``contour2`` must not overlap. Derivatives come from
    ``f.derivative()`` (Bernstein approximants) or ``f.deriv1``.
    """
    fp, gp = _derivative_of(f), _derivative_of(g)

    def evaluate(c1: RectContour):
        c2 = contour2 if c1 is contour1 else contour2.refined(c1.nodes_per_side // contour1.nodes_per_side)
        return _cov_on(fp, gp, c1, c2, params, spectrum, symmetric)

    value, _ = _adaptive(evaluate, contour1, adaptive, rtol, max_nodes)
    return _require_real(value, "covariance")


def clt_params_for(
    f,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    config: CLTConfig = CLTConfig(),
) -> CLTParams:
    """``mu_n(f)`` and ``sigma_n^2(f)`` with node doubling to ``config.rtol``.

    Raises
    ------
    DegenerateFunction
        If the variance is not positive (e.g. constant ``f``).
    """
    c1 = build_contour(params, spectrum, config.eps, config.v0, config.nodes_per_side)
    c2 = second_contour(params, spectrum, c1, config.eps)
    fp = _derivative_of(f)

    def evaluate(c: RectContour) -> tuple[np.ndarray, float]:
        factor = c.nodes_per_side // c1.nodes_per_side
        cc2 = c2 if factor == 1 else c2.refined(factor)
        if params.entry_case is EntryCase.COMPLEX_ALPHA_ZERO and params.beta_x == 0.0:
            mu, mscale = 0.0, 0.0
        else:
            mu, mscale = _mean_on(f, c, params, spectrum, config.symmetric)
        var, vscale = _cov_on(fp, fp, c, cc2, params, spectrum, config.symmetric)
        return np.array([mu, var], dtype=np.complex128), mscale + vscale

    values, _ = evaluate(c1)
    current = c1
    rel = np.inf
    while True:
        if current.nodes_per_side * 2 > config.max_nodes:
            raise QuadratureNotConverged(
                "CLT parameter quadrature not converged", residual=float(rel), iterations=current.nodes_per_side
            )
        current = current.refined()
        new, scale = evaluate(current)
        change = np.abs(new - values)
        rel = float(np.max(change / np.maximum(np.abs(new), 1.0)))
        values = new
        if np.all(change <= config.rtol * np.abs(new) + 1e-13 * scale):
            break
    mu = _require_real(complex(values[0]), "mu_n")
    var = _require_real(complex(values[1]), "sigma_n^2")
    if not var > 1e-12 * max(1.0, abs(mu)):
        raise DegenerateFunction(f"sigma_n^2 = {var:.3e} is not positive; f is degenerate for this model", mu_n=mu)
    logger.debug("clt params mu=%.12g sigma2=%.12g nodes=%d", mu, var, current.nodes_per_side)
    return CLTParams(mu, var, params.entry_case, rel)
