"""Normalization, Kolmogorov-Smirnov distances and rate fits for LSS samples."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erfc

from .bernstein import BernsteinApproximant
from .errors import InvalidArgument
from .functions import TestFunction


@dataclass(frozen=True)
class KSReport:
    n: int
    p: int
    R: int
    ks: float
    empirical_mean: float
    empirical_var: float
    mu_n_used: float
    sigma2_n_used: float

    def __post_init__(self) -> None:
        if self.R < 2:
            raise InvalidArgument("a KS report needs at least two samples")
        if not 0.0 <= self.ks <= 1.0:
            raise InvalidArgument(f"ks must lie in [0, 1], got {self.ks}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RateFit:
    points: tuple[tuple[int, float], ...]
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return {"points": [list(pt) for pt in self.points], "slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def normal_cdf(x):
    """Standard normal CDF via ``erfc``, accurate in both tails."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def normalize(samples, mu_n: float, sigma2_n: float) -> np.ndarray:
    """``(x - mu_n) / sqrt(sigma2_n)`` elementwise."""
    if not sigma2_n > 0:
        raise InvalidArgument(f"sigma2_n must be positive, got {sigma2_n}")
    return (np.asarray(samples, dtype=np.float64) - mu_n) / math.sqrt(sigma2_n)


def ks_to_normal(samples) -> float:
    """Kolmogorov distance between the empirical CDF of ``samples`` and N(0, 1)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    R = x.size
    if R == 0:
        raise InvalidArgument("need at least one sample")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("samples must be finite")
    phi = normal_cdf(x)
    i = np.arange(1, R + 1)
    return float(max(np.max(np.abs(i / R - phi)), np.max(np.abs((i - 1) / R - phi))))


def ks_report(samples, n: int, p: int, mu_n: float, sigma2_n: float) -> KSReport:
    raw = np.asarray(samples, dtype=np.float64)
    z = normalize(raw, mu_n, sigma2_n)
    return KSReport(
        n=int(n),
        p=int(p),
        R=int(raw.size),
        ks=ks_to_normal(z),
        empirical_mean=float(raw.mean()),
        empirical_var=float(raw.var(ddof=1)),
        mu_n_used=float(mu_n),
        sigma2_n_used=float(sigma2_n),
    )


def fit_rate(points: Iterable[tuple[int, float]]) -> RateFit:
    """Least-squares line through ``(log n, log ks)``."""
    pts = tuple((int(n), float(ks)) for n, ks in points)
    if len(pts) < 3:
        raise InvalidArgument("a rate fit needs at least three points")
    n = np.array([pt[0] for pt in pts], dtype=np.float64)
    ks = np.array([pt[1] for pt in pts])
    if np.any(ks <= 0) or np.any(n <= 0):
        raise InvalidArgument("n and ks must be positive")
    if np.unique(n).size < 2:
        raise InvalidArgument("need at least two distinct n")
    lx, ly = np.log(n), np.log(ks)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit(pts, float(slope), float(intercept), r2)


def delta_diagnostics(
    eigenvalues,
    f: TestFunction,
    approx: BernsteinApproximant,
    hm: BernsteinApproximant,
    centering_f: float,
    centering_fm: float,
    centering_hm: float,
) -> tuple[float, float, float]:
    """Split ``int f dG_n`` into the Bernstein part, its correction and the rest.

    The centering arguments are ``p int g dF`` for ``g = f, f_m, h_m``.
    Returns ``(delta1, delta2, delta3)`` with

        delta1 = sum f_m(lambda) - centering_fm
        delta2 = -(sum h_m(lambda) - centering_hm) / (2m)
        delta3 = int f dG_n - delta1 - delta2
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    total = float(np.sum(f.eval(lam))) - centering_f
    delta1 = float(np.sum(approx.eval_real(lam))) - centering_fm
    delta2 = -(float(np.sum(hm.eval_real(lam))) - centering_hm) / (2.0 * approx.m)
    return delta1, delta2, total - delta1 - delta2


def reports_to_jsonl(reports: Sequence[KSReport], experiment: str | None = None, config_hash: str | None = None) -> str:
    lines = []
    for rep in reports:
        obj = rep.to_dict()
        if experiment is not None:
            obj["experiment"] = experiment
        if config_hash is not None:
            obj["config_hash"] = config_hash
        lines.append(json.dumps(obj, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def rate_csv(fit: RateFit, config_hash: str | None = None) -> str:
    """Plot-ready ``n,ks,slope`` table."""
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash: {config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "ks", "slope"])
    for n, ks in fit.points:
        writer.writerow([n, format(ks, ".17g"), format(fit.slope, ".17g")])
    return buf.getvalue()
