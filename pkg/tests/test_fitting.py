import math

import numpy as np
import pytest

from turbghost.engine import KlyshkoPath
from turbghost.fitting import (
    ScanFitModel,
    fit_alpha,
    fit_profile,
    fit_scan,
    initial_guess,
    slit_correction,
)
from turbghost.model import (
    ObjectPattern,
    OpticsConfig,
    TurbulenceSpec,
    VisibilityPoint,
    fringe_visibility,
    fringe_wavenumber_from_cycles,
)
from turbghost.scan import DetectorModel, ScanData, simulate_scan

K = OpticsConfig().k
K0 = fringe_wavenumber_from_cycles(3.6)
TRUTH = ScanFitModel(
    amplitude_cps=50.0,
    center_mm=0.01,
    envelope_width_mm=0.4,
    fringe_wavenumber=K0,
    fringe_phase_rad=0.3,
    visibility=0.5,
    background_cps=2.0,
)


def truth_scan(model=TRUTH, duration=1e5, n=161, span=0.8):
    """Noiseless scan: expected counts rounded to integers at long dwell."""
    x = np.linspace(-span / 2, span / 2, n)
    counts = np.rint(model.evaluate(x) * duration).astype(np.int64)
    return ScanData(x, counts, np.full_like(x, duration))


class TestFitProfile:
    def test_noiseless_round_trip_six_digits(self):
        x = np.linspace(-0.4, 0.4, 161)
        result = fit_profile(x, TRUTH.evaluate(x))
        assert result.converged
        for name in (
            "amplitude_cps",
            "envelope_width_mm",
            "fringe_wavenumber",
            "visibility",
        ):
            assert getattr(result.model, name) == pytest.approx(
                getattr(TRUTH, name), rel=1e-6
            )
        assert result.model.center_mm == pytest.approx(TRUTH.center_mm, abs=1e-8)
        assert result.model.fringe_phase_rad == pytest.approx(TRUTH.fringe_phase_rad, abs=1e-6)
        assert result.model.background_cps == pytest.approx(TRUTH.background_cps, abs=1e-5)

    def test_fringe_free_recovers_zero_visibility(self):
        x = np.linspace(-0.4, 0.4, 161)
        flat = ScanFitModel(50.0, 0.0, 0.4, K0, 0.0, 1e-12, 2.0)
        y = 2.0 + 50.0 * np.exp(-0.5 * (x / 0.4) ** 2)
        result = fit_profile(x, y, init=flat)
        assert result.converged
        assert result.model.visibility == pytest.approx(0.0, abs=1e-6)

    def test_visibility_stays_in_bounds(self):
        # Data with raw contrast above 1 (square pattern) must clamp at 1.
        pattern = ObjectPattern(form="squarewave")
        x = np.linspace(-1.0, 1.0, 401)
        result = fit_profile(x, pattern.evaluate(x))
        assert result.model.visibility <= 1.0


class TestFitScan:
    def test_round_trip_from_counts(self):
        result = fit_scan(truth_scan())
        assert result.converged
        assert result.model.visibility == pytest.approx(0.5, rel=1e-6)
        assert result.model.envelope_width_mm == pytest.approx(0.4, rel=1e-6)
        assert result.model.fringe_wavenumber == pytest.approx(K0, rel=1e-6)

    def test_replicates_statistics(self):
        # 60 Poisson replicates at truth V: small bias and error bars that
        # track the empirical scatter within 30%.
        optics = OpticsConfig()
        path = KlyshkoPath(optics, TurbulenceSpec.crystal_side(2.0, 482.0))
        det = DetectorModel()
        pattern = ObjectPattern()
        truth = fringe_visibility(1.0, 2.0, 482.0, K, K0) * 0.966237985637492
        vs, errs = [], []
        for seed in range(60):
            fit = fit_scan(simulate_scan(path, 2.0, pattern, det, seed=seed))
            assert fit.converged
            vs.append(fit.model.visibility)
            errs.append(fit.errors["visibility"])
        vs = np.array(vs)
        assert abs(vs.mean() - truth) <= 0.02
        assert np.mean(errs) == pytest.approx(vs.std(ddof=1), rel=0.30)

    def test_all_zero_counts_fails_explicitly(self):
        x = np.linspace(-0.4, 0.4, 20)
        data = ScanData(x, np.zeros_like(x, dtype=np.int64), np.ones_like(x))
        result = fit_scan(data)
        assert not result.converged
        assert "zero" in result.message

    def test_too_few_points_rejected(self):
        x = np.linspace(-0.4, 0.4, 5)
        data = ScanData(x, np.ones_like(x, dtype=np.int64), np.ones_like(x))
        with pytest.raises(ValueError):
            fit_scan(data)

    def test_too_few_periods_rejected(self):
        model = ScanFitModel(50.0, 0.0, 0.4, 2.0, 0.0, 0.5, 0.0)  # period ~ 3 mm
        x = np.linspace(-0.4, 0.4, 50)
        counts = np.rint(model.evaluate(x) * 100).astype(np.int64)
        data = ScanData(x, counts, np.full_like(x, 100.0))
        with pytest.raises(ValueError):
            fit_scan(data, init=model)

    def test_count_scale_absorbed_by_amplitude(self):
        # Scaling counts at fixed dwell multiplies the rate, so the fitted
        # amplitude scales and every shape parameter stays put.
        base = truth_scan(duration=1e4)
        scaled = ScanData(base.positions_mm, base.counts * 4, base.durations_s)
        f1, f4 = fit_scan(base), fit_scan(scaled)
        assert f4.model.amplitude_cps == pytest.approx(4.0 * f1.model.amplitude_cps, rel=1e-6)
        for name in ("center_mm", "envelope_width_mm", "fringe_wavenumber", "visibility"):
            assert getattr(f4.model, name) == pytest.approx(
                getattr(f1.model, name), rel=1e-6, abs=1e-9
            )

    def test_joint_count_duration_scale_invariant(self):
        base = truth_scan(duration=1e4)
        scaled = ScanData(base.positions_mm, base.counts * 4, base.durations_s * 4)
        f1, f4 = fit_scan(base), fit_scan(scaled)
        for name in ("amplitude_cps", "visibility", "envelope_width_mm"):
            assert getattr(f4.model, name) == pytest.approx(getattr(f1.model, name), rel=1e-6)

    def test_translation_covariance(self):
        base = truth_scan(duration=1e4)
        delta = 0.35
        moved = ScanData(base.positions_mm + delta, base.counts, base.durations_s)
        f0, f1 = fit_scan(base), fit_scan(moved)
        assert f1.model.center_mm - f0.model.center_mm == pytest.approx(delta, abs=1e-7)
        for name in ("amplitude_cps", "envelope_width_mm", "fringe_wavenumber", "visibility"):
            assert getattr(f1.model, name) == pytest.approx(getattr(f0.model, name), rel=1e-6)

    def test_json_schema_stable(self):
        result = fit_scan(truth_scan())
        payload = result.to_json_dict()
        assert payload["schema_version"] == 1
        assert set(payload) == {
            "schema_version", "converged", "model", "errors",
            "reduced_chi2", "n_evaluations", "message",
        }
        assert set(payload["model"]) == {
            "amplitude_cps", "center_mm", "envelope_width_mm", "fringe_wavenumber",
            "fringe_phase_rad", "visibility", "background_cps",
        }


class TestFitAlpha:
    @staticmethod
    def campaign_points(alpha, sigv=0.0, rng=None):
        g = {"unshifted": 1.0, "shifted": 0.65}
        pts = []
        for label in g:
            for d in (50.0, 100.0, 152.0, 203.0, 330.0, 482.0):
                v = fringe_visibility(g[label], alpha, d, K, K0)
                if rng is not None:
                    v = float(np.clip(v + rng.normal(0.0, sigv), 0.0, 1.0))
                pts.append(VisibilityPoint(d, v, sigv, label=label))
        return pts, g

    def test_noiseless_round_trip_six_digits(self):
        pts, g = self.campaign_points(2.5)
        result = fit_alpha(pts, g, K, K0)
        assert result.converged
        assert result.alpha_per_mm2 == pytest.approx(2.5, rel=1e-8)

    def test_ceiling_visibilities_give_zero_alpha(self):
        g = {"unshifted": 1.0}
        pts = [VisibilityPoint(d, 1.0, 0.0, label="unshifted") for d in (50.0, 150.0, 482.0)]
        result = fit_alpha(pts, g, K, K0)
        assert result.converged
        assert result.alpha_per_mm2 == pytest.approx(0.0, abs=1e-10)

    def test_all_zero_distance_unidentifiable(self):
        g = {"unshifted": 1.0}
        pts = [VisibilityPoint(0.0, 1.0, 0.04, label="unshifted") for _ in range(3)]
        result = fit_alpha(pts, g, K, K0)
        assert not result.converged
        assert "unidentifiable" in result.message

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_alpha([VisibilityPoint(10.0, 0.5, 0.1, label="u")], {"u": 1.0}, K, K0)

    def test_coverage_calibration(self):
        # The 1-sigma interval should cover truth at roughly the nominal
        # 68% rate; require at least 60% over 100 replicates.
        cover = 0
        for rep in range(100):
            rng = np.random.default_rng(1000 + rep)
            pts, g = self.campaign_points(2.5, sigv=0.04, rng=rng)
            result = fit_alpha(pts, g, K, K0)
            if result.converged and abs(result.alpha_per_mm2 - 2.5) <= result.alpha_sigma:
                cover += 1
        assert cover >= 60


class TestSlitCorrection:
    def test_zero_width_identity(self):
        assert slit_correction(0.28, K0, 0.0) == 0.28

    def test_reference_factor(self):
        # Top-hat average of cos(k0 x) over a 40 um slit: sinc factor 0.966238.
        corrected = slit_correction(0.2802 * 0.966237985637492, K0, 0.040)
        assert corrected == pytest.approx(0.2802, rel=1e-12)

    def test_inverse_consistency(self):
        raw = 0.2708
        v = slit_correction(raw, K0, 0.040)
        assert v * 0.966237985637492 == pytest.approx(raw, rel=1e-12)

    def test_too_wide_slit_rejected(self):
        with pytest.raises(ValueError):
            slit_correction(0.5, K0, 2.0 * math.pi / K0)


class TestInitialGuess:
    def test_guess_lands_near_truth(self):
        x = np.linspace(-0.4, 0.4, 161)
        guess = initial_guess(x, TRUTH.evaluate(x))
        assert guess.fringe_wavenumber == pytest.approx(K0, rel=0.05)
        assert abs(guess.center_mm - TRUTH.center_mm) < 0.05
        assert 0.2 < guess.visibility < 0.9

    def test_flat_zero_profile_rejected(self):
        x = np.linspace(-0.4, 0.4, 20)
        with pytest.raises(ValueError):
            initial_guess(x, np.zeros_like(x))
