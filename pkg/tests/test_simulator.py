import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from conftest import mp_density

from lssclt.clt_params import build_contour
from lssclt.errors import DegenerateTruncation, InvalidArgument, ValidationError
from lssclt.functions import get_function
from lssclt.mp_core import ModelParams, PopulationSpectrum, centering_by_density
from lssclt.simulator import (
    CSV_COLUMNS,
    EntryLaw,
    ExperimentConfig,
    LawKind,
    centering_constant,
    draw_entries,
    effective_beta,
    eigenvalues_bn,
    esd_sup_distance,
    eta_schedule,
    replicate_eigenvalues,
    run_experiment,
    spectrum_from_spec,
    stieltjes_diagnostic,
    truncate_normalize,
    truncated_moments,
    truncation_threshold,
)

GAUSS = EntryLaw(LawKind.REAL_GAUSSIAN)
CGAUSS = EntryLaw(LawKind.COMPLEX_GAUSSIAN)
RADEM = EntryLaw(LawKind.RADEMACHER)


class TestEntryLaws:
    def test_rademacher_mean(self):
        x = draw_entries(1000, 1000, RADEM, 11)
        assert set(np.unique(x)) == {-1.0, 1.0}
        assert abs(x.mean()) <= 0.004

    def test_complex_gaussian_moments(self):
        x = draw_entries(1000, 1000, CGAUSS, 12)
        assert abs(np.mean(np.abs(x) ** 2) - 1.0) <= 0.005
        assert abs(np.mean(x**2)) <= 0.005

    def test_student_t_standardized(self):
        x = draw_entries(1000, 1000, EntryLaw(LawKind.STUDENT_T, 12.0), 13)
        assert abs(x.var() - 1.0) < 0.01

    @pytest.mark.parametrize("law", [GAUSS, CGAUSS, RADEM, EntryLaw(LawKind.STUDENT_T, 8.0)])
    def test_bitwise_deterministic(self, law):
        a = draw_entries(7, 9, law, 2**63 + 5)
        b = draw_entries(7, 9, law, 2**63 + 5)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != draw_entries(7, 9, law, 6).tobytes()

    def test_unknown_law(self):
        with pytest.raises(InvalidArgument):
            draw_entries(2, 2, "cauchy", 0)
        with pytest.raises(InvalidArgument):
            EntryLaw.parse("cauchy")

    def test_student_t_needs_fourth_moment(self):
        with pytest.raises(InvalidArgument):
            EntryLaw(LawKind.STUDENT_T, 4.0)
        with pytest.raises(InvalidArgument):
            EntryLaw(LawKind.REAL_GAUSSIAN, 5.0)

    def test_beta_values(self):
        assert GAUSS.beta_x == 0.0 and CGAUSS.beta_x == 0.0 and RADEM.beta_x == -2.0
        assert EntryLaw(LawKind.STUDENT_T, 12.0).beta_x == pytest.approx(3 * 10 / 8 - 3)


class TestTruncation:
    def test_schedule(self):
        assert eta_schedule(64) == 0.5
        assert eta_schedule(3) == pytest.approx(2 / math.log(3))
        assert truncation_threshold(256) == pytest.approx(0.5 * 4.0)

    def test_gaussian_far_threshold_is_vacuous(self):
        n = 4096
        eta = 8.0 / n**0.25
        mom = truncated_moments(GAUSS, truncation_threshold(n, eta))
        assert mom.removed_mass < 1e-14
        x = draw_entries(50, 60, GAUSS, 1)
        np.testing.assert_allclose(truncate_normalize(x, n, eta, GAUSS), x, rtol=1e-13)

    def test_rademacher_identity(self):
        x = draw_entries(5, 6, RADEM, 2)
        out = truncate_normalize(x, 256, eta_schedule(256), RADEM)
        assert out.tobytes() == x.tobytes()

    def test_student_t_variance_against_monte_carlo(self):
        law = EntryLaw(LawKind.STUDENT_T, 12.0)
        mom = truncated_moments(law, 5.0)
        rng = np.random.Generator(np.random.Philox(2024))
        x = rng.standard_t(12.0, 10**7) * math.sqrt(10.0 / 12.0)
        kept = np.where(np.abs(x) < 5.0, x, 0.0) ** 2
        se = kept.std() / math.sqrt(kept.size)
        assert abs(kept.mean() - mom.variance) < 3 * se

    def test_output_bounded_and_standardized(self):
        n = 256
        x = draw_entries(200, 300, GAUSS, 3)
        out = truncate_normalize(x, n, eta_schedule(n), GAUSS)
        mom = truncated_moments(GAUSS, truncation_threshold(n))
        assert np.abs(out).max() <= truncation_threshold(n) / math.sqrt(mom.variance)
        assert abs(out.var() - 1.0) < 0.02

    def test_truncated_fourth_moment(self):
        # for the Gaussian cut at 2: E x^4 1{|x|<2} / (E x^2 1{|x|<2})^2 by hand
        from scipy import stats

        c = 2.0
        phi, Phi = stats.norm.pdf(c), stats.norm.cdf(c)
        m0 = 2 * Phi - 1
        m2 = m0 - 2 * c * phi
        m4 = 3 * m2 - 2 * c**3 * phi
        mom = truncated_moments(GAUSS, c)
        assert mom.variance == pytest.approx(m2, rel=1e-12)
        assert mom.fourth == pytest.approx(m4 / m2**2, rel=1e-10)
        assert effective_beta(GAUSS, 256, True) == pytest.approx(m4 / m2**2 - 3, rel=1e-10)
        assert effective_beta(GAUSS, 256, False) == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateTruncation):
            truncated_moments(GAUSS, 1e-3)
        with pytest.raises(DegenerateTruncation):
            truncated_moments(RADEM, 0.5)


class TestEigenvalues:
    def test_zero_population(self):
        x = draw_entries(4, 8, GAUSS, 0)
        lam = eigenvalues_bn(x, PopulationSpectrum(np.zeros(4)))
        assert np.all(lam == 0)

    def test_scalar_case(self):
        x = draw_entries(1, 50, GAUSS, 0)
        lam = eigenvalues_bn(x, PopulationSpectrum([1.0]))
        assert lam[0] == pytest.approx(np.sum(x**2) / 50, abs=1e-12)

    @pytest.mark.parametrize("law", [GAUSS, CGAUSS])
    def test_trace_identity_and_order(self, law):
        p, n = 30, 70
        t = np.linspace(0.2, 3.0, p)
        x = draw_entries(p, n, law, 4)
        lam = eigenvalues_bn(x, PopulationSpectrum(t))
        direct = np.sum(t * np.sum(np.abs(x) ** 2, axis=1)) / n
        assert lam.sum() == pytest.approx(direct, rel=1e-8)
        assert np.all(np.diff(lam) <= 0) and np.all(lam >= 0)

    def test_matches_dense_eigensolver(self):
        p, n = 20, 45
        t = np.linspace(0.5, 2.0, p)
        x = draw_entries(p, n, CGAUSS, 5)
        half = np.sqrt(t)[:, None] * x
        dense = np.linalg.eigvalsh(half @ half.conj().T / n)[::-1]
        np.testing.assert_allclose(eigenvalues_bn(x, PopulationSpectrum(t)), dense, atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(InvalidArgument):
            eigenvalues_bn(np.ones((3, 5)), PopulationSpectrum.identity(4))


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(10, 10)
        with pytest.raises(ValidationError):
            ExperimentConfig(5, 10, replicates=0)
        with pytest.raises(ValidationError):
            ExperimentConfig(5, 10, entry_law=EntryLaw(LawKind.STUDENT_T, 8.0), rate_experiment=True)
        ExperimentConfig(5, 10, entry_law=EntryLaw(LawKind.STUDENT_T, 12.0), rate_experiment=True)
        with pytest.raises(InvalidArgument):
            ExperimentConfig(5, 10, f_name="nope")

    def test_spectrum_presets(self, tmp_path):
        assert spectrum_from_spec("identity", 4).lambda_max == 1.0
        assert spectrum_from_spec("two_point", 4).atoms[0].tolist() == [0.5, 1.0]
        path = tmp_path / "t.txt"
        path.write_text("1\n2\n3\n")
        assert spectrum_from_spec(str(path), 3).moment(1) == pytest.approx(2.0)
        with pytest.raises(ValidationError):
            spectrum_from_spec(str(path), 4)
        with pytest.raises(ValidationError):
            spectrum_from_spec("missing_preset", 4)


class TestRunExperiment:
    def test_bitwise_reproducible_and_thread_independent(self):
        cfg = ExperimentConfig(16, 40, replicates=4, base_seed=99)
        a = run_experiment(cfg, threads=1).to_csv("h")
        b = run_experiment(cfg, threads=3).to_csv("h")
        assert a == b
        lines = a.splitlines()
        assert lines[0] == "# config_hash: h"
        assert lines[1] == ",".join(CSV_COLUMNS)
        assert [int(line.split(",")[1]) for line in lines[2:]] == [99, 100, 101, 102]

    def test_centered_equals_raw_minus_centering(self):
        cfg = ExperimentConfig(16, 40, replicates=3, f_name="logshift")
        res = run_experiment(cfg)
        c = res.metadata["centering"]
        for r in res.results:
            assert r.lss_centered == r.lss_raw - c

    def test_replicate_uses_its_own_seed(self):
        cfg = ExperimentConfig(8, 20, replicates=3, base_seed=5)
        res = run_experiment(cfg)
        lam = replicate_eigenvalues(replace(cfg, base_seed=7), cfg.spectrum, 0)
        assert res.results[2].max_eigenvalue == float(lam.max())

    @pytest.mark.slow
    def test_trace_mean_against_exact_moments(self):
        # E tr B = p, Var tr B = y (E x^4 - 1) = 1 for real Gaussian T = I
        cfg = ExperimentConfig(128, 256, replicates=10_000, base_seed=1, f_name="affine", truncate=False)
        raw = np.array([r.lss_raw for r in run_experiment(cfg).results])
        assert abs(raw.mean() - 128) < 3 * math.sqrt(1.0 / raw.size)
        assert raw.var(ddof=1) == pytest.approx(1.0, rel=0.05)

    def test_xi_events_rare_at_large_n(self):
        cfg = ExperimentConfig(256, 512, replicates=200, base_seed=3)
        res = run_experiment(cfg)
        assert np.mean([r.xi_event for r in res.results]) <= 0.005

    def test_xi_events_decrease_with_n(self):
        freq = []
        for p, n in [(4, 8), (32, 64), (128, 256)]:
            res = run_experiment(ExperimentConfig(p, n, replicates=200, base_seed=8))
            freq.append(np.mean([r.xi_event for r in res.results]))
        assert freq[0] >= freq[1] >= freq[2]
        assert freq[0] > 0

    def test_c3_centering_against_closed_form_density(self):
        cfg = ExperimentConfig(64, 128, f_name="pow7half", truncate=False)
        params, sp = cfg.model_params(), cfg.spectrum
        f = get_function("pow7half")
        a, b = (1 - math.sqrt(0.5)) ** 2, (1 + math.sqrt(0.5)) ** 2
        exact, _ = integrate.quad(lambda x: f.eval(x) * mp_density(np.array([x]), 0.5)[0], a, b, epsabs=1e-13)
        # f - f_m goes through the density table, so the error falls with m
        assert centering_constant(cfg, params, sp) == pytest.approx(cfg.p * exact, abs=64 * 1e-5)
        fine = replace(cfg, bernstein_m=800)
        assert centering_constant(fine, params, sp) == pytest.approx(cfg.p * exact, abs=64 * 1e-6)
        # the pure density-table route is coarser
        assert cfg.p * centering_by_density(f.eval, params, sp) == pytest.approx(cfg.p * exact, abs=64 * 1e-4)


class TestDiagnostics:
    def setup_method(self):
        self.cfg = ExperimentConfig(64, 128, truncate=False)
        self.params = self.cfg.model_params()
        self.sp = self.cfg.spectrum

    def test_empty(self):
        assert stieltjes_diagnostic(np.array([]), [1 + 1j], self.params, self.sp) == []

    def test_conjugate_symmetry(self):
        lam = replicate_eigenvalues(self.cfg, self.sp, 0)
        z = np.array([0.5 + 0.3j, 3.5 + 1j])
        up = stieltjes_diagnostic(lam, z, self.params, self.sp)
        lo = stieltjes_diagnostic(lam, np.conj(z), self.params, self.sp)
        np.testing.assert_allclose(lo, np.conj(up), atol=1e-12)

    def test_rejects_real_points(self):
        lam = replicate_eigenvalues(self.cfg, self.sp, 0)
        with pytest.raises(InvalidArgument):
            stieltjes_diagnostic(lam, [5.0], self.params, self.sp)

    def test_m_n_is_tight(self):
        variances = []
        for p, n in [(64, 128), (128, 256), (256, 512)]:
            cfg = ExperimentConfig(p, n, replicates=100, base_seed=21, truncate=False)
            params, sp = cfg.model_params(), cfg.spectrum
            z = build_contour(params, sp).x_r + 1j
            vals = [stieltjes_diagnostic(replicate_eigenvalues(cfg, sp, k), [z], params, sp)[0] for k in range(100)]
            assert max(abs(v) for v in vals) < 1.0
            variances.append(np.var(vals))
        assert 0.5 < variances[2] / variances[1] < 2.0

    def test_esd_distance_small_and_bounded(self):
        lam = replicate_eigenvalues(self.cfg, self.sp, 0)
        d = esd_sup_distance(lam, self.params, self.sp)
        assert 0 < d < 0.1
        far = esd_sup_distance(lam + 10.0, self.params, self.sp)
        assert far == pytest.approx(1.0, abs=1e-3)
