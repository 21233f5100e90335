"""Marchenko-Pastur companion equation, limiting density, CDF and support.

The population covariance enters only through a finite discrete spectral
measure ``H_p`` (eigenvalues of ``T_p`` with probability weights), so every
integral over ``dH_p`` below is an exact finite sum.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .contour import RectContour, integrate_adaptive
from .errors import InvalidArgument, NonConvergence

logger = logging.getLogger(__name__)

ZERO_EIGENVALUE = 1e-14
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
DEFAULT_DAMPING = 0.5
DEFAULT_ETA_LADDER = (1e-2, 5e-3, 2.5e-3)
# residual below which the damped iteration hands over to Newton steps
NEWTON_SWITCH = 1e-3
_CHUNK = 2048


class EntryCase(str, enum.Enum):
    """Which CLT applies: real entries, or complex entries with E x^2 = 0."""

    REAL = "real"
    COMPLEX_ALPHA_ZERO = "complex"


@dataclass(frozen=True, eq=False)
class PopulationSpectrum:
    """Discrete population spectral measure H_p.

    Parameters
    ----------
    eigenvalues : array_like
        Nonnegative eigenvalues of ``T_p``. Values below ``1e-14`` are
        treated as exact zeros.
    weights : array_like, optional
        Probability masses; uniform ``1/len(eigenvalues)`` by default.
    norm_bound : float, optional
        If given, the largest eigenvalue must not exceed it.
    """

    eigenvalues: np.ndarray
    weights: np.ndarray | None = None
    norm_bound: float | None = None

    def __post_init__(self) -> None:
        t = np.array(self.eigenvalues, dtype=np.float64).ravel()
        if t.size == 0:
            raise InvalidArgument("spectrum must contain at least one eigenvalue")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise InvalidArgument("eigenvalues must be finite and nonnegative")
        t[t < ZERO_EIGENVALUE] = 0.0
        if self.weights is None:
            w = np.full(t.size, 1.0 / t.size)
        else:
            w = np.array(self.weights, dtype=np.float64).ravel()
            if w.shape != t.shape:
                raise InvalidArgument("weights and eigenvalues differ in length")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidArgument("weights must be nonnegative and sum to 1")
        if self.norm_bound is not None and t.max() > self.norm_bound:
            raise InvalidArgument(
                f"largest eigenvalue {t.max():g} exceeds norm bound {self.norm_bound:g}"
            )
        t.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "eigenvalues", t)
        object.__setattr__(self, "weights", w)

    @classmethod
    def identity(cls, p: int) -> PopulationSpectrum:
        return cls(np.ones(p))

    @classmethod
    def from_file(cls, path: str | Path, rescale: bool = False) -> PopulationSpectrum:
        """Load ``eigenvalue [weight]`` lines; blanks and ``#`` comments skipped."""
        values: list[float] = []
        weights: list[float] = []
        ncols = None
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) not in (1, 2) or (ncols is not None and len(parts) != ncols):
                    raise InvalidArgument(f"{path}:{lineno}: expected 'eigenvalue [weight]'")
                ncols = len(parts)
                try:
                    values.append(float(parts[0]))
                    if ncols == 2:
                        weights.append(float(parts[1]))
                except ValueError as exc:
                    raise InvalidArgument(f"{path}:{lineno}: {exc}") from None
        t = np.asarray(values)
        if rescale and t.size and t.max() > 0:
            t = t / t.max()
        return cls(t, np.asarray(weights) if weights else None)

    @property
    def p(self) -> int:
        return int(self.eigenvalues.size)

    @cached_property
    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct eigenvalues and their total weights."""
        t, inv = np.unique(self.eigenvalues, return_inverse=True)
        w = np.bincount(inv, weights=self.weights, minlength=t.size)
        return t, w

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues.max())

    def moment(self, k: int) -> float:
        t, w = self.atoms
        return float(np.dot(w, t**k))


@dataclass(frozen=True)
class ModelParams:
    """Dimension, sample size and entry-law parameters of the model."""

    p: int
    n: int
    entry_case: EntryCase = EntryCase.REAL
    beta_x: float = 0.0
    alpha_x: float | None = None

    def __post_init__(self) -> None:
        if self.p <= 0 or self.n <= 0:
            raise InvalidArgument("p and n must be positive")
        if not self.p < self.n:
            raise InvalidArgument(f"need 0 < y_n = p/n < 1, got p={self.p}, n={self.n}")
        case = EntryCase(self.entry_case)
        forced = 1.0 if case is EntryCase.REAL else 0.0
        if self.alpha_x is not None and self.alpha_x != forced:
            raise InvalidArgument(f"alpha_x must be {forced} for entry case {case.value}")
        # E|x|^4 >= (E|x|^2)^2 = 1
        if not np.isfinite(self.beta_x) or self.beta_x < -1.0 - forced:
            raise InvalidArgument(f"beta_x must be >= {-1.0 - forced} for entry case {case.value}")
        object.__setattr__(self, "entry_case", case)
        object.__setattr__(self, "alpha_x", forced)

    @property
    def y_n(self) -> float:
        return self.p / self.n


@dataclass(frozen=True)
class StieltjesValue:
    z: complex
    s_underline: complex
    residual: float
    iterations: int


@dataclass(frozen=True, eq=False)
class StieltjesArray:
    """Vectorized solver output; ``residual`` and ``iterations`` per node."""

    z: np.ndarray
    s_underline: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray = field(repr=False)

    def __getitem__(self, i: int) -> StieltjesValue:
        return StieltjesValue(
            complex(self.z[i]), complex(self.s_underline[i]), float(self.residual[i]), int(self.iterations[i])
        )

    def __len__(self) -> int:
        return int(self.z.size)


def support_bounds(params: ModelParams, spectrum: PopulationSpectrum) -> tuple[float, float]:
    """Bracket of the limiting support: ``[l_min (1-sqrt y)^2, l_max (1+sqrt y)^2]``."""
    r = np.sqrt(params.y_n)
    return spectrum.lambda_min * (1.0 - r) ** 2, spectrum.lambda_max * (1.0 + r) ** 2


def _resolvent_sums(s: np.ndarray, t: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``sum w t/(1+ts)`` and ``sum w t^2/(1+ts)^2`` for every s."""
    m1 = np.empty_like(s)
    m2 = np.empty_like(s)
    for lo in range(0, s.size, _CHUNK):
        q = t / (1.0 + s[lo : lo + _CHUNK, None] * t)
        m1[lo : lo + _CHUNK] = q @ w
        m2[lo : lo + _CHUNK] = (q * q) @ w
    return m1, m2


def _check_domain(z: np.ndarray, params: ModelParams, spectrum: PopulationSpectrum) -> None:
    lo, hi = support_bounds(params, spectrum)
    if lo <= 0.0:
        lo = 0.0
    on_axis = z.imag == 0
    bad = on_axis & (((z.real >= lo) & (z.real <= hi)) | (z.real == 0))
    if np.any(bad):
        raise InvalidArgument(
            f"z = {complex(z[bad][0])} lies on the real axis inside the support bracket [{lo:g}, {hi:g}]"
        )


def _iterate(
    z: np.ndarray,
    s0: np.ndarray,
    y: float,
    t: np.ndarray,
    w: np.ndarray,
    tol: float,
    max_iter: int,
    damping: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = s0.astype(np.complex128, copy=True)
    residual = np.full(z.size, np.inf)
    iterations = np.zeros(z.size, dtype=np.int64)
    active = np.arange(z.size)
    for it in range(max_iter + 1):
        sa, za = s[active], z[active]
        m1, m2 = _resolvent_sums(sa, t, w)
        denom = za - y * m1
        g = -1.0 / denom
        r = np.abs(sa - g)
        residual[active] = r
        iterations[active] = it
        done = r <= tol
        if np.all(done) or it == max_iter:
            active = active[~done]
            break
        keep = ~done
        sa, za, g, r, denom, m2 = sa[keep], za[keep], g[keep], r[keep], denom[keep], m2[keep]
        active = active[keep]
        # Newton on F(s) = s - g(s), g'(s) = y m2 / denom^2
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sa - (sa - g) / (1.0 - y * m2 / denom**2)
        damped = (1.0 - damping) * sa + damping * g
        use_newton = (r < NEWTON_SWITCH) & np.isfinite(newton)
        new = np.where(use_newton, newton, damped)
        flip = (za.imag != 0) & (new.imag * za.imag < 0)
        new[flip] = np.conj(new[flip])
        s[active] = new
    return s, residual, iterations


def solve_underline_s_many(
    z: Sequence[complex] | np.ndarray,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    warm_start: np.ndarray | complex | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = DEFAULT_DAMPING,
    continuation: bool = False,
) -> StieltjesArray:
    """Solve the companion equation at every point of ``z``.

    With ``continuation=True`` the points are visited in order and each one
    is warm-started from the previous solution; otherwise all points are
    iterated simultaneously from ``-1/z`` (or ``warm_start``).
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    _check_domain(z, params, spectrum)
    t, w = spectrum.atoms
    y = params.y_n
    if continuation:
        s = np.empty_like(z)
        res = np.empty(z.size)
        its = np.empty(z.size, dtype=np.int64)
        prev = None if warm_start is None else complex(np.ravel(warm_start)[0])
        for i, zi in enumerate(z):
            start = -1.0 / zi if prev is None else prev
            # a continued start must sit in the right half-plane
            if prev is not None and zi.imag * start.imag < 0:
                start = np.conj(start)
            si, ri, ki = _iterate(np.array([zi]), np.array([start]), y, t, w, tol, max_iter, damping)
            s[i], res[i], its[i] = si[0], ri[0], ki[0]
            prev = complex(si[0])
    else:
        if warm_start is None:
            s0 = -1.0 / z
        else:
            s0 = np.broadcast_to(np.asarray(warm_start, dtype=np.complex128), z.shape)
        s, res, its = _iterate(z, s0, y, t, w, tol, max_iter, damping)
    failed = ~(res <= tol)
    if np.any(failed):
        worst = int(np.argmax(np.where(failed, res, -1.0)))
        raise NonConvergence(
            f"companion equation did not converge at z={complex(z[worst])}",
            residual=float(res[worst]),
            iterations=int(its[worst]),
        )
    return StieltjesArray(z, s, res, its)


def solve_underline_s(
    z: complex,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    warm_start: complex | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    damping: float = DEFAULT_DAMPING,
) -> StieltjesValue:
    """Companion Stieltjes transform ``s_n^0(z)`` of the limiting law at (y_n, H_p).

    Solves ``s = -(z - y_n * sum_i w_i t_i / (1 + t_i s))^{-1}`` by damped
    fixed-point iteration started at ``-1/z``, finished with Newton steps.

    Raises
    ------
    InvalidArgument
        If ``z`` is real and inside the support bracket (or zero).
    NonConvergence
        If the residual does not reach ``tol`` within ``max_iter`` steps.
    """
    out = solve_underline_s_many(
        [z], params, spectrum, warm_start, tol=tol, max_iter=max_iter, damping=damping
    )
    return out[0]


def convert_to_s(z: complex | np.ndarray, s_underline: complex | np.ndarray, params: ModelParams | float):
    """Map the companion transform to the Stieltjes transform of F^{y_n,H_p}."""
    y = params if isinstance(params, (int, float)) else params.y_n
    z = np.asarray(z)
    if np.any(z == 0):
        raise InvalidArgument("convert_to_s is undefined at z = 0")
    s = (np.asarray(s_underline) + (1.0 - y) / z) / y
    return s[()] if s.ndim == 0 else s


def _richardson_to_zero(etas: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Neville extrapolation of ``values(eta)`` to eta = 0 along axis 0."""
    table = [v.astype(np.float64) for v in values]
    h = list(etas)
    k = len(h)
    for level in range(1, k):
        for i in range(k - level):
            table[i] = (h[i] * table[i + 1] - h[i + level] * table[i]) / (h[i] - h[i + level])
    return table[0]


def density(
    x: float | np.ndarray,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    eta_ladder: Sequence[float] = DEFAULT_ETA_LADDER,
) -> float | np.ndarray:
    """Limiting spectral density of F^{y_n,H_p} at ``x``.

    ``(1/pi) Im s(x + i eta)`` is evaluated along ``eta_ladder`` and
    extrapolated to ``eta = 0``. Negative values are clamped to zero. The
    atom at zero carried by null eigenvalues of ``T`` is excluded.
    """
    etas = np.asarray(sorted(eta_ladder, reverse=True), dtype=np.float64)
    if etas.size == 0 or np.any(etas <= 0):
        raise InvalidArgument("eta_ladder must hold positive values")
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = (xs[None, :] + 1j * etas[:, None]).ravel()
    su = solve_underline_s_many(z, params, spectrum).s_underline
    s = convert_to_s(z, su, params)
    t, w = spectrum.atoms
    zero_mass = float(w[t == 0].sum())
    if zero_mass:
        # drop the atom at 0, whose Lorentzian would not extrapolate away
        s = s + zero_mass / z
    vals = (np.imag(s) / np.pi).reshape(etas.size, xs.size)
    dens = _richardson_to_zero(etas, vals) if etas.size > 1 else vals[0]
    if np.any(dens < -1e-8):
        logger.debug("density extrapolation undershoot %.3e clamped", dens.min())
    dens = np.maximum(dens, 0.0)
    return float(dens[0]) if np.ndim(x) == 0 else dens


class LimitingCDF:
    """Tabulated CDF of F^{y_n,H_p} on a uniform grid, linearly interpolated."""

    def __init__(self, params: ModelParams, spectrum: PopulationSpectrum, grid_size: int = 4096,
                 eta_ladder: Sequence[float] = DEFAULT_ETA_LADDER):
        lo, hi = support_bounds(params, spectrum)
        pad = 0.02 * (hi - lo)
        self.x = np.linspace(max(lo - pad, 0.0), hi + pad, grid_size)
        dens = density(self.x, params, spectrum, eta_ladder)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(self.x))])
        t, w = spectrum.atoms
        # atom of F^{y,H} at zero carries the null-space mass of T
        self.atom_at_zero = float(w[t == 0].sum())
        self.pdf = dens
        self.continuous_mass = float(cdf[-1])
        self.cdf = self.atom_at_zero + cdf

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        xs = np.asarray(x, dtype=np.float64)
        out = np.interp(xs, self.x, self.cdf, left=0.0, right=self.cdf[-1])
        if self.atom_at_zero:
            out = np.where(xs >= 0.0, np.maximum(out, self.atom_at_zero), 0.0)
        return float(out) if out.ndim == 0 else out


_CDF_CACHE: dict[tuple, LimitingCDF] = {}


def limiting_cdf(params: ModelParams, spectrum: PopulationSpectrum, grid_size: int = 4096) -> LimitingCDF:
    t, w = spectrum.atoms
    key = (params.y_n, t.tobytes(), w.tobytes(), grid_size)
    if key not in _CDF_CACHE:
        _CDF_CACHE[key] = LimitingCDF(params, spectrum, grid_size)
    return _CDF_CACHE[key]


def as_complex_function(f) -> Callable[[np.ndarray], np.ndarray]:
    """Return a callable evaluating ``f`` on complex arrays."""
    if hasattr(f, "eval_complex"):
        return f.eval_complex
    if hasattr(f, "complex_eval"):
        return f.complex_eval
    if callable(f):
        return f
    raise InvalidArgument(f"cannot evaluate {f!r} on the contour")


def centering_integral(
    f,
    params: ModelParams,
    spectrum: PopulationSpectrum,
    contour: RectContour,
    *,
    rtol: float = 1e-8,
    max_nodes: int = 4096,
    imag_tol: float = 1e-6,
) -> float:
    """``int f dF^{y_n,H_p}`` as ``-(1/2 pi i) \\oint f(z) s_n^0(z) dz``.

    ``f`` must be analytic on and inside ``contour``. Nodes are doubled until
    two successive estimates agree to ``rtol``.
    """
    fz = as_complex_function(f)

    def evaluate(c: RectContour) -> tuple[complex, float]:
        su = solve_underline_s_many(c.nodes, params, spectrum).s_underline
        terms = fz(c.nodes) * convert_to_s(c.nodes, su, params) * c.weights
        return -terms.sum() / (2j * np.pi), float(np.abs(terms).sum()) / (2 * np.pi)

    value, _ = integrate_adaptive(evaluate, contour, rtol=rtol, max_nodes=max_nodes)
    if abs(value.imag) > imag_tol * (1.0 + abs(value.real)):
        raise InvalidArgument(f"centering integral has imaginary part {value.imag:.3e}; is f real on the axis?")
    return float(value.real)


def centering_by_density(
    f: Callable[[np.ndarray], np.ndarray],
    params: ModelParams,
    spectrum: PopulationSpectrum,
    grid_size: int = 4096,
) -> float:
    """``int f dF^{y_n,H_p}`` from the tabulated density; for non-analytic f."""
    cdf = limiting_cdf(params, spectrum, grid_size)
    x = cdf.x
    vals = np.asarray(f(x), dtype=np.float64) * cdf.pdf
    total = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(x)))
    if cdf.atom_at_zero:
        total += cdf.atom_at_zero * float(f(np.array([0.0]))[0])
    return total
