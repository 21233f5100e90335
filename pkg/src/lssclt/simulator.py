"""Monte-Carlo sampling of B_n = (1/n) T^{1/2} X X^* T^{1/2} and its LSS.

Every replicate ``k`` draws from a Philox generator keyed by
``base_seed + k``, so results depend only on the configuration and the
seed, never on thread count or completion order.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from . import bernstein
from .clt_params import CLTConfig, build_contour
from .errors import DegenerateTruncation, InvalidArgument, LinAlgFailure, ValidationError
from .functions import TestFunction, get_function
from .mp_core import (
    EntryCase,
    ModelParams,
    PopulationSpectrum,
    centering_by_density,
    centering_integral,
    convert_to_s,
    limiting_cdf,
    solve_underline_s_many,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("replicate_id", "seed_used", "lss_raw", "lss_centered", "xi_event", "max_eigenvalue", "min_eigenvalue")


class LawKind(str, enum.Enum):
    REAL_GAUSSIAN = "real_gaussian"
    COMPLEX_GAUSSIAN = "complex_gaussian"
    RADEMACHER = "rademacher"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class EntryLaw:
    """Standardized entry distribution (mean 0, E|x|^2 = 1)."""

    kind: LawKind
    nu: float | None = None

    def __post_init__(self) -> None:
        kind = LawKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is LawKind.STUDENT_T:
            if self.nu is None or not self.nu > 4:
                raise InvalidArgument("student_t needs nu > 4 for a finite fourth moment")
        elif self.nu is not None:
            raise InvalidArgument(f"nu only applies to student_t, not {kind.value}")

    @classmethod
    def parse(cls, name: str, nu: float | None = None) -> EntryLaw:
        try:
            return cls(LawKind(name), nu)
        except ValueError:
            raise InvalidArgument(f"unknown entry law {name!r}") from None

    @property
    def is_complex(self) -> bool:
        return self.kind is LawKind.COMPLEX_GAUSSIAN

    @property
    def entry_case(self) -> EntryCase:
        return EntryCase.COMPLEX_ALPHA_ZERO if self.is_complex else EntryCase.REAL

    @property
    def fourth_moment(self) -> float:
        if self.kind is LawKind.REAL_GAUSSIAN:
            return 3.0
        if self.kind is LawKind.COMPLEX_GAUSSIAN:
            return 2.0
        if self.kind is LawKind.RADEMACHER:
            return 1.0
        nu = self.nu
        return 3.0 * (nu - 2.0) / (nu - 4.0)

    @property
    def alpha_x(self) -> float:
        return 0.0 if self.is_complex else 1.0

    @property
    def beta_x(self) -> float:
        return self.fourth_moment - self.alpha_x - 2.0

    def sample(self, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
        if self.kind is LawKind.REAL_GAUSSIAN:
            return rng.standard_normal(shape)
        if self.kind is LawKind.COMPLEX_GAUSSIAN:
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
        if self.kind is LawKind.RADEMACHER:
            return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
        return rng.standard_t(self.nu, size=shape) * math.sqrt((self.nu - 2.0) / self.nu)

    def abs_density(self, r: np.ndarray | float) -> np.ndarray | float:
        """Density of |x| on (0, inf); Rademacher has none."""
        if self.kind is LawKind.REAL_GAUSSIAN:
            return 2.0 * stats.norm.pdf(r)
        if self.kind is LawKind.COMPLEX_GAUSSIAN:
            # |x|^2 ~ Exp(1)
            return 2.0 * r * np.exp(-(r**2))
        if self.kind is LawKind.STUDENT_T:
            scale = math.sqrt((self.nu - 2.0) / self.nu)
            return 2.0 * stats.t.pdf(r / scale, self.nu) / scale
        raise InvalidArgument("Rademacher law has no density")


def eta_schedule(n: int) -> float:
    """Truncation sequence eta_n = max(0.5, 2 / log n)."""
    return max(0.5, 2.0 / math.log(n))


@dataclass(frozen=True)
class TruncatedMoments:
    """Population moments of ``x 1{|x| < threshold}``.

    ``fourth`` is ``E|x~|^4`` of the centered and normalized variable.
    """

    threshold: float
    mean: float
    variance: float
    fourth: float
    removed_mass: float


@lru_cache(maxsize=256)
def truncated_moments(law: EntryLaw, threshold: float) -> TruncatedMoments:
    """Truncated moments by quadrature of the density of ``|x|``.

    Every supported law is symmetric, so the truncated mean vanishes and
    only even moments of ``|x|`` are needed. Rademacher is enumerated.
    """
    if law.kind is LawKind.RADEMACHER:
        kept = 1.0 if threshold > 1.0 else 0.0
        second, fourth, removed = kept, kept, 1.0 - kept
    else:
        def moment(k: int) -> float:
            val, _ = integrate.quad(
                lambda r: r**k * law.abs_density(r), 0.0, threshold, limit=200, epsabs=1e-15, epsrel=1e-13
            )
            return val

        removed = max(1.0 - moment(0), 0.0)
        second, fourth = moment(2), moment(4)
    if second < 1e-6:
        raise DegenerateTruncation(f"truncated variance {second:.3e} at threshold {threshold:g}")
    return TruncatedMoments(threshold, 0.0, second, fourth / second**2, removed)


def truncation_threshold(n: int, eta_n: float | None = None) -> float:
    eta = eta_schedule(n) if eta_n is None else eta_n
    return eta * n**0.25


def draw_entries(p: int, n: int, law: EntryLaw, seed: int) -> np.ndarray:
    """``p x n`` matrix of i.i.d. standardized entries from a Philox stream."""
    if not isinstance(law, EntryLaw):
        raise InvalidArgument(f"unknown entry law {law!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    return law.sample(rng, (p, n))


def truncate_normalize(entries: np.ndarray, n: int, eta_n: float, law: EntryLaw) -> np.ndarray:
    """Truncate at ``eta_n n^{1/4}``, then center and scale with population moments."""
    mom = truncated_moments(law, truncation_threshold(n, eta_n))
    kept = np.where(np.abs(entries) < mom.threshold, entries, 0.0)
    if mom.mean == 0.0 and mom.variance == 1.0:
        return kept
    return (kept - mom.mean) / math.sqrt(mom.variance)


def effective_beta(law: EntryLaw, n: int, truncate: bool, eta_n: float | None = None) -> float:
    """beta_x of the variables actually fed to B_n."""
    if not truncate:
        return law.beta_x
    mom = truncated_moments(law, truncation_threshold(n, eta_n))
    return mom.fourth - law.alpha_x - 2.0


def eigenvalues_bn(entries: np.ndarray, spectrum: PopulationSpectrum) -> np.ndarray:
    """Eigenvalues of B_n in descending order, via singular values of
    ``n^{-1/2} diag(sqrt(t)) X``."""
    p, n = entries.shape[-2:]
    if spectrum.p != p:
        raise InvalidArgument(f"spectrum has {spectrum.p} eigenvalues but X has {p} rows")
    scaled = np.sqrt(spectrum.eigenvalues)[:, None] * entries / math.sqrt(n)
    try:
        sv = np.linalg.svd(scaled, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise LinAlgFailure(str(exc)) from exc
    lam = sv**2
    if lam.shape[-1] < p:
        lam = np.concatenate([lam, np.zeros(lam.shape[:-1] + (p - lam.shape[-1],))], axis=-1)
    return lam


def stieltjes_diagnostic(eigenvalues: np.ndarray, z_grid, params: ModelParams, spectrum: PopulationSpectrum) -> list[complex]:
    """``M_n(z) = p [s_{F^{B_n}}(z) - s_n^0(z)]`` on ``z_grid``."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    z = np.atleast_1d(np.asarray(z_grid, dtype=np.complex128))
    if lam.size == 0 or z.size == 0:
        return []
    if np.any(z.imag == 0):
        raise InvalidArgument("z_grid must stay off the real axis")
    su = solve_underline_s_many(z, params, spectrum).s_underline
    s0 = convert_to_s(z, su, params)
    emp = np.mean(1.0 / (lam[None, :] - z[:, None]), axis=1)
    return list(lam.size * (emp - s0))


def esd_sup_distance(eigenvalues: np.ndarray, params: ModelParams, spectrum: PopulationSpectrum) -> float:
    """``sup_x |F^{B_n}(x) - F^{y_n,H_p}(x)|`` against the tabulated limit CDF."""
    lam = np.sort(np.asarray(eigenvalues, dtype=np.float64))
    p = lam.size
    F = limiting_cdf(params, spectrum)(lam)
    i = np.arange(1, p + 1)
    return float(max(np.max(i / p - F), np.max(F - (i - 1) / p)))


def spectrum_from_spec(spec: str, p: int) -> PopulationSpectrum:
    """Named preset or path to a spectrum file with ``p`` eigenvalues."""
    if spec == "identity":
        return PopulationSpectrum.identity(p)
    if spec == "two_point":
        # half the coordinates at 1/2, half at 1
        return PopulationSpectrum(np.where(np.arange(p) < p // 2, 0.5, 1.0))
    if spec == "uniform":
        return PopulationSpectrum(np.linspace(0.25, 1.0, p))
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"spectrum {spec!r} is neither a preset (identity, two_point, uniform) nor a file")
    spectrum = PopulationSpectrum.from_file(path)
    if spectrum.p != p or not np.allclose(spectrum.weights, 1.0 / p):
        raise ValidationError(f"spectrum file must list exactly p={p} equally weighted eigenvalues")
    return spectrum


@dataclass(frozen=True)
class ExperimentConfig:
    p: int
    n: int
    spectrum_spec: str = "identity"
    entry_law: EntryLaw = EntryLaw(LawKind.REAL_GAUSSIAN)
    truncate: bool = True
    f_name: str = "square"
    bernstein_m: int | None = None
    replicates: int = 100
    base_seed: int = 0
    upsilon: float = bernstein.DEFAULT_UPSILON
    clt: CLTConfig = field(default_factory=CLTConfig)
    rate_experiment: bool = False

    def __post_init__(self) -> None:
        if self.p <= 0 or self.n <= 0:
            raise ValidationError("p and n must be positive integers")
        if not self.p < self.n:
            raise ValidationError(f"Assumption 2 (0 < y_n < 1) needs p < n, got p={self.p}, n={self.n}")
        if self.replicates <= 0:
            raise ValidationError("replicates R must be a positive integer")
        if not 0 <= self.base_seed < 2**64:
            raise ValidationError("base_seed must be a 64-bit unsigned integer")
        if self.bernstein_m is not None and self.bernstein_m < 1:
            raise ValidationError("bernstein_m must be positive")
        law = self.entry_law
        if law.kind is LawKind.STUDENT_T and self.rate_experiment and not law.nu > 10:
            raise ValidationError("rate experiments need a finite tenth moment: student_t requires nu > 10")
        get_function(self.f_name)

    @property
    def test_function(self) -> TestFunction:
        return get_function(self.f_name)

    @property
    def spectrum(self) -> PopulationSpectrum:
        return spectrum_from_spec(self.spectrum_spec, self.p)

    def model_params(self) -> ModelParams:
        beta = effective_beta(self.entry_law, self.n, self.truncate)
        return ModelParams(self.p, self.n, self.entry_law.entry_case, beta)

    def with_size(self, p: int, n: int) -> ExperimentConfig:
        return replace(self, p=p, n=n)


@dataclass(frozen=True)
class LSSResult:
    replicate_id: int
    seed_used: int
    lss_raw: float
    lss_centered: float
    xi_event: bool
    max_eigenvalue: float
    min_eigenvalue: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: list[LSSResult]
    metadata: dict

    @property
    def centered(self) -> np.ndarray:
        return np.array([r.lss_centered for r in self.results])

    def to_csv(self, config_hash: str | None = None) -> str:
        buf = io.StringIO()
        if config_hash is not None:
            buf.write(f"# config_hash: {config_hash}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.results:
            writer.writerow(
                [
                    r.replicate_id,
                    r.seed_used,
                    format(r.lss_raw, ".17g"),
                    format(r.lss_centered, ".17g"),
                    int(r.xi_event),
                    format(r.max_eigenvalue, ".17g"),
                    format(r.min_eigenvalue, ".17g"),
                ]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class Approximation:
    """What the simulator integrates against the limiting law for one f.

    ``clt`` is the contour configuration to use with ``contour_f``; for a
    Bernstein approximant its height is capped so that evaluating the
    polynomial on both CLT contours stays numerically stable.
    """

    f: TestFunction
    contour_f: object  # analytic f, or its Bernstein approximant
    m: int | None
    clt: CLTConfig


def approximation_for(config: ExperimentConfig, params: ModelParams, spectrum: PopulationSpectrum) -> Approximation:
    f = config.test_function
    clt = config.clt
    if f.analytic and config.bernstein_m is None:
        return Approximation(f, f, None, clt)
    contour = build_contour(params, spectrum, clt.eps, clt.v0, clt.nodes_per_side)
    m = config.bernstein_m or bernstein.degree_for_clt(config.n)
    approx = bernstein.fit(f, (contour.x_l, contour.x_r), config.upsilon, m)
    # the second contour is 1.5x wider in margin and twice as tall
    pad = 0.5 * clt.eps
    height = bernstein.safe_height(approx, contour.x_l - pad, contour.x_r + pad, 2.0 * clt.v0) / 2.0
    if height < clt.v0:
        logger.info("contour height lowered from %g to %g for degree %d", clt.v0, height, m)
        clt = replace(clt, v0=height)
    return Approximation(f, approx, m, clt)


def centering_constant(config: ExperimentConfig, params: ModelParams, spectrum: PopulationSpectrum) -> float:
    """``p * int f dF^{y_n,H_p}``.

    Analytic f is integrated on the contour. Otherwise the Bernstein part
    goes on the contour and only the small remainder ``f - f_m`` through the
    tabulated density.
    """
    approx = approximation_for(config, params, spectrum)
    clt = approx.clt
    contour = build_contour(params, spectrum, clt.eps, clt.v0, clt.nodes_per_side)
    f = approx.f
    if approx.m is None:
        return config.p * centering_integral(f, params, spectrum, contour, max_nodes=clt.max_nodes)
    fm = approx.contour_f
    main = centering_integral(fm, params, spectrum, contour, max_nodes=clt.max_nodes)
    remainder = centering_by_density(lambda x: f.eval(x) - fm.eval_real(x), params, spectrum)
    return config.p * (main + remainder)


def _xi_bounds(config: ExperimentConfig, params: ModelParams, spectrum: PopulationSpectrum) -> tuple[float, float]:
    contour = build_contour(params, spectrum, config.clt.eps, config.clt.v0, config.clt.nodes_per_side)
    half = config.clt.eps / 2.0
    return contour.x_l + half, contour.x_r - half


def replicate_eigenvalues(config: ExperimentConfig, spectrum: PopulationSpectrum, replicate_id: int) -> np.ndarray:
    seed = config.base_seed + replicate_id
    x = draw_entries(config.p, config.n, config.entry_law, seed)
    if config.truncate:
        x = truncate_normalize(x, config.n, eta_schedule(config.n), config.entry_law)
    return eigenvalues_bn(x, spectrum)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Draw ``config.replicates`` matrices and record their centered LSS."""
    spectrum = config.spectrum
    params = config.model_params()
    centering = centering_constant(config, params, spectrum)
    lo, hi = _xi_bounds(config, params, spectrum)
    f = config.test_function

    def one(k: int) -> LSSResult:
        lam = replicate_eigenvalues(config, spectrum, k)
        raw = float(np.sum(f.eval(lam)))
        return LSSResult(
            replicate_id=k,
            seed_used=config.base_seed + k,
            lss_raw=raw,
            lss_centered=raw - centering,
            xi_event=bool(lam.min() <= lo or lam.max() >= hi),
            max_eigenvalue=float(lam.max()),
            min_eigenvalue=float(lam.min()),
        )

    ids = range(config.replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(k) for k in ids]
    results.sort(key=lambda r: r.replicate_id)
    metadata = {
        "p": config.p,
        "n": config.n,
        "y_n": params.y_n,
        "beta_x": params.beta_x,
        "entry_case": params.entry_case.value,
        "centering": centering,
        "xi_bounds": [lo, hi],
        "eta_n": eta_schedule(config.n) if config.truncate else None,
    }
    logger.info("ran %d replicates at p=%d n=%d", config.replicates, config.p, config.n)
    return ExperimentResult(config, results, metadata)
