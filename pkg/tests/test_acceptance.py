"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every test prints one ``criterion N: PASS|FAIL`` line with the measured
quantities, whether or not pytest captures output.
"""

import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from conftest import mp_companion
from lssclt.bernstein import correction_hm, fit, sup_error
from lssclt.cli import main as cli_main
from lssclt.clt_params import CLTConfig, build_contour, clt_params_for, cov_lss, mean_lss, second_contour
from lssclt.errors import DegenerateFunction
from lssclt.functions import REGISTRY, get_function
from lssclt.mp_core import EntryCase, ModelParams, PopulationSpectrum, solve_underline_s_many, support_bounds
from lssclt.simulator import (
    EntryLaw,
    ExperimentConfig,
    LawKind,
    approximation_for,
    esd_sup_distance,
    replicate_eigenvalues,
    run_experiment,
)
from lssclt.stats_harness import fit_rate, ks_report, ks_to_normal, normalize

REAL, CPLX = EntryCase.REAL, EntryCase.COMPLEX_ALPHA_ZERO


@pytest.fixture
def criterion(capsys):
    """Time a block, then print one PASS/FAIL line for criterion ``number``."""

    @contextmanager
    def run(number, budget_s):
        notes = {}
        start = time.perf_counter()
        ok = False
        try:
            yield notes
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            within = elapsed < budget_s
            detail = ", ".join(f"{k}={v}" for k, v in notes.items())
            verdict = "PASS" if ok and within else "FAIL"
            with capsys.disabled():
                print(f"\ncriterion {number}: {verdict} ({elapsed:.1f}s of {budget_s:.0f}s) {detail}")
        assert within, f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s"

    return run


def _fmt(x):
    return f"{x:.3g}"


def test_criterion_01_mp_oracle(criterion):
    with criterion(1, 1.0) as notes:
        worst = 0.0
        for y in (0.25, 0.5, 0.9):
            p = 100
            params = ModelParams(p, round(p / y))
            sp = PopulationSpectrum.identity(p)
            c = build_contour(params, sp, nodes_per_side=64)
            idx = np.linspace(0, c.nodes.size - 1, 200).astype(int)
            z = c.nodes[idx]
            s = solve_underline_s_many(z, params, sp).s_underline
            worst = max(worst, float(np.max(np.abs(s - mp_companion(z, params.y_n)))))
        notes["max_abs_err"] = _fmt(worst)
        assert worst <= 1e-10


def test_criterion_02_contour_calculus(criterion):
    with criterion(2, 1.0) as notes:
        # every contour the benchmarks build: T = I, both CLT contours, both geometries
        worst_pole, worst_poly, count = 0.0, 0.0, 0
        sp = PopulationSpectrum.identity(100)
        for y in (0.25, 0.5, 0.9):
            params = ModelParams(100, round(100 / y))
            lo, hi = support_bounds(params, sp)
            for eps, v0 in ((0.2, 0.5), (0.45, 1.3)):
                c1 = build_contour(params, sp, eps, v0, 64)
                for c in (c1, second_contour(params, sp, c1, eps)):
                    for pole in np.linspace(lo, hi, 9):
                        worst_pole = max(worst_pole, abs(c.integrate(1.0 / (c.nodes - pole)) - 2j * np.pi))
                    worst_poly = max(worst_poly, abs(c.integrate(c.nodes**2)))
                    count += 1
        notes.update(contours=count, pole_err=_fmt(worst_pole), z2_err=_fmt(worst_poly))
        assert worst_pole <= 1e-10 and worst_poly <= 1e-10


@pytest.mark.slow
def test_criterion_03_variance_oracle(criterion):
    with criterion(3, 300.0) as notes:
        sp = PopulationSpectrum.identity(64)
        f_x, f_sq = get_function("affine"), get_function("square")

        def sigma2(case, beta, f):
            return clt_params_for(f, ModelParams(64, 128, case, beta), sp).sigma2_n

        # exact Var(tr B_n) = y (E x^4 - 1) int t^2 dH
        real, cplx = sigma2(REAL, 0.0, f_x), sigma2(CPLX, 0.0, f_x)
        notes.update(real=f"{real:.10f}", complex=f"{cplx:.10f}")
        assert abs(real - 0.5 * (3 - 1)) <= 1e-4
        assert abs(cplx - 0.5 * (2 - 1)) <= 1e-4

        # the beta term is linear: sigma2(-2) = sigma2(0) - 2 * (h1-term at beta = 1)
        params0, params1 = ModelParams(64, 128, REAL, 0.0), ModelParams(64, 128, REAL, 1.0)
        paramsr = ModelParams(64, 128, REAL, -2.0)
        c1 = build_contour(params0, sp)
        c2 = second_contour(params0, sp, c1, 0.2)
        for f in (f_x, f_sq):
            v0 = cov_lss(f, f, params0, sp, c1, c2)
            h1_term = cov_lss(f, f, params1, sp, c1, c2) - v0
            rad = cov_lss(f, f, paramsr, sp, c1, c2)
            assert abs(rad - (v0 - 2.0 * h1_term)) <= 1e-10
        # for f = x the shift cancels the variance exactly: sum_j x_ij^2 = n
        with pytest.raises(DegenerateFunction):
            clt_params_for(f_x, paramsr, sp)

        # Monte-Carlo cross-check on f = x^2, where the Rademacher variance is nonzero
        predicted = sigma2(REAL, -2.0, f_sq)
        cfg = ExperimentConfig(
            64, 128, entry_law=EntryLaw(LawKind.RADEMACHER), f_name="square", replicates=100_000, base_seed=31
        )
        raw = np.array([r.lss_raw for r in run_experiment(cfg).results])
        mc = float(raw.var(ddof=1))
        rel = abs(mc - predicted) / predicted
        notes.update(rademacher_predicted=f"{predicted:.6f}", rademacher_mc=f"{mc:.6f}", rel_diff=_fmt(rel))
        assert rel <= 0.05


def test_criterion_04_mean_degeneracy(criterion):
    with criterion(4, 30.0) as notes:
        sp = PopulationSpectrum.identity(64)
        params = ModelParams(64, 128, CPLX, 0.0)
        c = build_contour(params, sp)
        worst = 0.0
        for name in sorted(REGISTRY):
            f = get_function(name)
            if not f.analytic:
                f = fit(f, (c.x_l, c.x_r), 0.1, 64)
            worst = max(worst, abs(mean_lss(f, params, sp, c)))
            worst = max(worst, abs(clt_params_for(f, params, sp).mu_n))
        real = mean_lss(get_function("affine"), ModelParams(64, 128, REAL, 0.0), sp, c)
        notes.update(complex_max_abs_mu=_fmt(worst), real_affine_mu=_fmt(abs(real)))
        assert worst <= 1e-8
        assert abs(real) <= 1e-6


def test_criterion_05_bernstein_decay(criterion):
    with criterion(5, 10.0) as notes:
        f = get_function("pow7half")
        interval = (0.25, 2.25)
        plain, corrected = [], []
        for m in (64, 128, 256):
            approx = fit(f, interval, 0.1, m)
            plain.append(sup_error(approx, f))
            corrected.append(sup_error(approx, f, hm=correction_hm(f, interval, 0.1, m)))
        r_plain = [b / a for a, b in zip(plain, plain[1:])]
        r_corr = [b / a for a, b in zip(corrected, corrected[1:])]
        notes.update(ratios=[round(r, 4) for r in r_plain], corrected_ratios=[round(r, 4) for r in r_corr])
        assert all(0.4 <= r <= 0.6 for r in r_plain)
        assert all(0.2 <= r <= 0.3 for r in r_corr)


GAUSS_BENCH = ExperimentConfig(128, 256, f_name="square", truncate=False, replicates=2000, base_seed=20240)


def _normalized(cfg):
    clt = clt_params_for(get_function(cfg.f_name), cfg.model_params(), cfg.spectrum, cfg.clt)
    res = run_experiment(cfg)
    return normalize(res.centered, clt.mu_n, clt.sigma2_n), clt


@pytest.mark.slow
def test_criterion_06_gaussianity(criterion):
    with criterion(6, 600.0) as notes:
        z, clt = _normalized(GAUSS_BENCH)
        ks = ks_to_normal(z)
        notes.update(ks=f"{ks:.4f}", mean=f"{z.mean():.3f}", var=f"{z.var(ddof=1):.3f}", sigma2_n=_fmt(clt.sigma2_n))
        assert ks <= 0.06
        # the variance coefficient is live-checked as well
        assert 0.8 <= z.var(ddof=1) <= 1.2


@pytest.mark.slow
def test_criterion_07_rate_trend(criterion):
    with criterion(7, 45 * 60.0) as notes:
        batches, R = 10, 2000
        medians = []
        for n in (64, 128, 256, 512):
            cfg = replace(GAUSS_BENCH, p=n // 2, n=n, replicates=batches * R, base_seed=7000 + n)
            clt = clt_params_for(get_function("square"), cfg.model_params(), cfg.spectrum)
            values = run_experiment(cfg).centered
            ks = [ks_report(b, n, n // 2, clt.mu_n, clt.sigma2_n).ks for b in np.split(values, batches)]
            medians.append((n, float(np.median(ks))))
        fit_ = fit_rate(medians)
        decreasing = all(b[1] < a[1] for a, b in zip(medians, medians[1:]))
        notes.update(
            median_ks={n: round(k, 4) for n, k in medians},
            slope=f"{fit_.slope:.3f}",
            strictly_decreasing=decreasing,
            noise_floor=f"{0.8687 / math.sqrt(R):.4f}",
        )
        assert fit_.slope <= -0.25
        assert decreasing


@pytest.mark.slow
def test_criterion_08_esd_rate(criterion):
    with criterion(8, 300.0) as notes:
        medians = {}
        for n in (64, 128, 256, 512):
            cfg = ExperimentConfig(n // 2, n, truncate=False, base_seed=800 + n)
            params, sp = cfg.model_params(), cfg.spectrum
            d = [esd_sup_distance(replicate_eigenvalues(cfg, sp, k), params, sp) for k in range(20)]
            medians[n] = float(np.median(d))
        C = medians[64] * 64**0.4
        bound = C * 512**-0.4
        notes.update(median_sup={n: round(v, 5) for n, v in medians.items()}, bound_512=f"{bound:.5f}")
        assert medians[512] <= bound


def test_criterion_09_determinism(criterion, tmp_path):
    with criterion(9, 60.0) as notes:
        cfg = tmp_path / "det.ini"
        cfg.write_text(
            "[model]\np = 64\nn = 128\nlaw = rademacher\n[function]\nf = pow7half\n[run]\nR = 50\nseed = 2718\n"
        )
        outs = []
        for label, threads in (("a", 1), ("b", 4)):
            assert cli_main(["simulate", "--config", str(cfg), "--out", str(tmp_path / label), "--threads", str(threads)]) == 0
            outs.append((tmp_path / label / "replicates.csv").read_bytes())
        notes.update(bytes=len(outs[0]), identical=outs[0] == outs[1])
        assert outs[0] == outs[1]


def test_criterion_10_contour_independence(criterion):
    with criterion(10, 60.0) as notes:
        sp = PopulationSpectrum.identity(64)
        geometries = (CLTConfig(), CLTConfig(eps=0.45, v0=1.3, nodes_per_side=48))
        worst = 0.0
        for case, beta in ((REAL, 0.0), (CPLX, 0.0), (REAL, -2.0)):
            params = ModelParams(64, 128, case, beta)
            for name in ("square", "cube", "logshift"):
                a, b = (clt_params_for(get_function(name), params, sp, g) for g in geometries)
                worst = max(worst, abs(a.mu_n - b.mu_n), abs(a.sigma2_n - b.sigma2_n))
        # a C^3 function goes through its Bernstein approximant
        cfg = ExperimentConfig(64, 128, f_name="pow7half", truncate=False)
        approx = approximation_for(cfg, cfg.model_params(), sp)
        a, b = (clt_params_for(approx.contour_f, cfg.model_params(), sp, g) for g in geometries)
        worst = max(worst, abs(a.mu_n - b.mu_n), abs(a.sigma2_n - b.sigma2_n))
        notes["max_abs_diff"] = _fmt(worst)
        assert worst <= 1e-6
