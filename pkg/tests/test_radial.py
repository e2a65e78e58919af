import math

import numpy as np
import pytest

from qflow.energy import LdGParams
from qflow.radial import (
    RadialProfile,
    blowup_certificate,
    comparison_lower_bound,
    criterion_value,
    dominates_comparison,
    hedgehog_consistency_check,
    run_radial,
    theta_rhs,
)


def params(a=0.0, c=1.0, L1=0.5, L2=0.0, L3=0.0, L4=-1.0):
    # zeta = 2 L1 + L2 + L3
    return LdGParams(a=a, b=0.0, c=c, L1=L1, L2=L2, L3=L3, L4=L4)


class TestRadialProfile:
    def test_rejects_bad_annulus(self):
        with pytest.raises(ValueError):
            RadialProfile(4.0, 3.0, 10, np.zeros(12))

    def test_flow_rejects_negative_boundary(self):
        th = np.zeros(12)
        th[0] = th[-1] = -0.5
        prof = RadialProfile(3.0, 4.0, 10, th)
        with pytest.raises(ValueError, match="theta_b"):
            run_radial(prof, params(), 0.1, 1e-3)

    def test_flow_rejects_mismatched_boundary(self):
        th = np.zeros(12)
        th[-1] = 1.0
        prof = RadialProfile(3.0, 4.0, 10, th)
        with pytest.raises(ValueError, match="must agree"):
            run_radial(prof, params(), 0.1, 1e-3)

    def test_sine_bump_shape(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 99, -50.0)
        assert prof.theta[0] == 0.0 and prof.theta[-1] == pytest.approx(0.0, abs=1e-12)
        assert prof.theta.min() == pytest.approx(-50.0, abs=1e-8)


class TestThetaRhs:
    def test_zero_profile(self):
        prof = RadialProfile(3.0, 4.0, 20, np.zeros(22))
        assert np.all(theta_rhs(prof, params()) == 0.0)

    def test_constant_value_terms(self):
        # theta == 1 flat at r = 1: L4*6 - 4*zeta - c/2 = 6 - 8 - 1 = -3
        p = LdGParams(a=0.0, b=0.0, c=2.0, L1=1.0, L2=0.0, L3=0.0, L4=1.0)
        prof = RadialProfile.from_function(0.9, 1.1, 99, lambda r: np.ones_like(r))
        rhs = theta_rhs(prof, p)
        mid = len(rhs) // 2
        r_mid = prof.r[1:-1][mid]
        expected = 1.0 * 6.0 / r_mid**2 - 4.0 * 2.0 / r_mid**2 - 1.0
        assert rhs[mid] == pytest.approx(expected, abs=1e-10)
        assert rhs[mid] == pytest.approx(-3.0, abs=0.15)  # at r = 1 exactly -3

    def test_quadratic_profile_closed_form(self):
        # theta = r^2 at r = 2 with L4 = 0, zeta = 1, a = c = 0:
        # theta'' + theta'/r - 4 theta/r^2 = 2 + 2 - 4 = 0
        p = LdGParams(a=0.0, b=0.0, c=1e-300, L1=0.5, L2=0.0, L3=0.0, L4=0.0)
        prof = RadialProfile.from_function(1.5, 2.5, 199, lambda r: r * r)
        rhs = theta_rhs(prof, p)
        r = prof.r[1:-1]
        idx = int(np.argmin(np.abs(r - 2.0)))
        assert rhs[idx] == pytest.approx(0.0, abs=1e-8)


class TestBlowupCertificate:
    def test_criterion_true_geometry(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 50, -1.0)
        cert = blowup_certificate(prof, params())
        assert cert.criterion_value == pytest.approx(math.pi**2, rel=1e-12)
        assert cert.criterion_ok

    def test_criterion_false_geometry(self):
        prof = RadialProfile.sine_bump(1.0, 4.0, 50, -1.0)
        cert = blowup_certificate(prof, params())
        assert cert.criterion_value == pytest.approx(math.pi**2 / 81.0, rel=1e-12)
        assert not cert.criterion_ok

    def test_m0_reference_value(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 50, -1.0)
        cert = blowup_certificate(prof, params(L4=-1.0))
        m0 = 6.0 / math.sqrt(175.0) * (math.pi**2 / 9.0 - 1.0 / 9.0)
        assert cert.M0 == pytest.approx(m0, rel=1e-12)
        assert cert.M0 == pytest.approx(0.446986, abs=1e-6)

    def test_rejects_l4_zero(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 50, -1.0)
        with pytest.raises(ValueError):
            blowup_certificate(prof, params(L4=0.0))

    def test_scale_invariance_of_criterion(self):
        for lam in (0.5, 2.0, 7.3):
            assert criterion_value(3.0 * lam, 4.0 * lam) == pytest.approx(
                criterion_value(3.0, 4.0), rel=1e-12
            )

    def test_y0_uses_signed_part(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 400, -2.0)
        cert = blowup_certificate(prof, params(L4=-1.0))
        r = prof.r
        expected = np.trapezoid(np.maximum(-prof.theta, 0.0) ** 2 * r, r)
        assert cert.y0 == pytest.approx(expected, rel=1e-12)
        # positive data contributes nothing to theta_minus
        prof_pos = RadialProfile.sine_bump(3.0, 4.0, 400, 2.0)
        assert blowup_certificate(prof_pos, params(L4=-1.0)).y0 == 0.0


class TestComparisonLowerBound:
    def test_zero_stays_zero(self):
        vals, tdiv = comparison_lower_bound(0.447, 0.0, 0.0, 0.0, np.linspace(0, 5, 10))
        assert np.all(vals == 0.0)
        assert tdiv is None

    def test_pure_power_divergence_time(self):
        # F0 = 0, a = 0: y(t) = (y0^{-1/2} - M0 t)^{-2}, diverges at 1/(M0 sqrt(y0))
        M0, y0 = 0.4469895, 100.0
        t_star = 1.0 / (M0 * math.sqrt(y0))
        vals, tdiv = comparison_lower_bound(M0, 0.0, 0.0, y0, np.array([t_star * 2]))
        assert tdiv is not None
        assert tdiv == pytest.approx(t_star, rel=0.01)

    def test_matches_closed_form_before_divergence(self):
        M0, y0 = 0.3, 50.0
        ts = np.linspace(0.0, 0.5 / (M0 * math.sqrt(y0)), 20)
        vals, _ = comparison_lower_bound(M0, 0.0, 0.0, y0, ts)
        exact = (y0**-0.5 - M0 * ts) ** -2.0
        assert np.max(np.abs(vals / exact - 1.0)) < 1e-3

    def test_bounded_when_damping_dominates(self):
        vals, tdiv = comparison_lower_bound(1e-3, 10.0, 0.0, 1.0, np.array([100.0]))
        assert tdiv is None
        assert vals[0] < 10.0


class TestRunRadial:
    def test_zero_stays_zero(self):
        prof = RadialProfile(3.0, 4.0, 30, np.zeros(32))
        trace = run_radial(prof, params(), 0.1, 1e-3)
        assert np.all(trace.y == 0.0)
        assert not trace.blown_up

    def test_small_data_decays(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 60, 0.01)
        trace = run_radial(prof, params(a=1.0, c=1.0), 2.0, 1e-2)
        assert not trace.blown_up
        assert trace.y[-1] < 1e-4 * trace.y[0]

    def test_times_strictly_increasing(self):
        prof = RadialProfile.sine_bump(3.0, 4.0, 40, 0.5)
        trace = run_radial(prof, params(a=1.0), 0.2, 1e-2)
        assert np.all(np.diff(trace.t) > 0)

    def test_mirror_symmetry(self):
        # flipping the sign of both L4 and theta0 swaps y_minus and y_plus
        prof_m = RadialProfile.sine_bump(3.0, 4.0, 60, -5.0)
        prof_p = RadialProfile.sine_bump(3.0, 4.0, 60, 5.0)
        tr_m = run_radial(prof_m, params(a=0.5, L4=-1.0), 0.5, 1e-3)
        tr_p = run_radial(prof_p, params(a=0.5, L4=1.0), 0.5, 1e-3)
        assert len(tr_m.t) == len(tr_p.t)
        assert np.abs(tr_m.y_minus - tr_p.y_plus).max() < 1e-12 * max(1.0, tr_m.y.max())
        assert np.abs(tr_m.y_plus - tr_p.y_minus).max() < 1e-12 * max(1.0, tr_m.y.max())

    def test_deep_quench_blowup_and_domination(self):
        # the pinned geometry dissipates the cubic terms (Poincare), so the
        # runaway is driven by a deep quench a << 0; the comparison solution
        # must stay below the recorded signed series throughout
        p = params(a=-6000.0, c=1e-8, L4=-1.0)
        prof = RadialProfile.sine_bump(3.0, 4.0, 100, -50.0)
        cert = blowup_certificate(prof, p)
        trace = run_radial(prof, p, 0.01, 1e-5)
        assert trace.blown_up and not trace.nonfinite
        assert trace.blowup_time < 0.01
        assert dominates_comparison(trace, p, cert, rtol=0.01)

    def test_backward_diffusion_flagged(self):
        # L4 = -1 with large positive theta makes zeta + L4 theta < 0
        prof = RadialProfile.sine_bump(3.0, 4.0, 40, 5.0)
        trace = run_radial(prof, params(L4=-1.0), 0.1, 1e-3)
        assert trace.nonfinite


class TestPoincareStep:
    def test_gradient_cubed_inequality(self):
        # int (theta_-')^2 theta_- dr >= (4 pi^2 / 9 dR^2) int theta_-^3 dr
        rng = np.random.default_rng(17)
        R0, R1, n = 3.0, 4.0, 400
        r = np.linspace(R0, R1, n)
        const = 4.0 * math.pi**2 / (9.0 * (R1 - R0) ** 2)
        for _ in range(1000):
            coeffs = rng.normal(size=4)
            th = sum(
                c * np.sin((k + 1) * np.pi * (r - R0) / (R1 - R0))
                for k, c in enumerate(coeffs)
            )
            tm = np.maximum(-th, 0.0)
            dtm = np.gradient(tm, r, edge_order=2)
            lhs = np.trapezoid(dtm * dtm * tm, r)
            rhs = const * np.trapezoid(tm**3, r)
            assert lhs >= rhs - 1e-6 * max(abs(rhs), 1.0)


class TestHedgehogConsistency:
    @pytest.mark.parametrize(
        "name,triple",
        [
            (
                "constant",
                (lambda r: np.full_like(np.asarray(r, dtype=float), 0.7),
                 lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                 lambda r: np.zeros_like(np.asarray(r, dtype=float))),
            ),
            (
                "linear",
                (lambda r: np.asarray(r, dtype=float),
                 lambda r: np.ones_like(np.asarray(r, dtype=float)),
                 lambda r: np.zeros_like(np.asarray(r, dtype=float))),
            ),
        ],
    )
    def test_richardson_ratio(self, name, triple):
        p = LdGParams(a=0.3, b=0.0, c=1.0, L1=1.0, L2=0.1, L3=0.2, L4=0.7)
        rng = np.random.default_rng(18)
        rr = rng.uniform(3.2, 3.8, size=8)
        ang = rng.uniform(0, 2 * np.pi, size=8)
        pts = np.stack([rr * np.cos(ang), rr * np.sin(ang)], axis=1)
        h = 4e-3  # large enough to stay above the FD roundoff floor
        m1 = hedgehog_consistency_check(triple, p, pts, h, r_bounds=(3.0, 4.0))
        m2 = hedgehog_consistency_check(triple, p, pts, h / 2, r_bounds=(3.0, 4.0))
        assert m1 / m2 == pytest.approx(4.0, abs=0.5)

    def test_pure_laplacian_case(self):
        # L4 = L2 = L3 = 0 reduces to the Laplacian identity
        p = LdGParams(a=0.0, b=0.0, c=1e-300, L1=0.5, L2=0.0, L3=0.0, L4=0.0)
        triple = (
            lambda r: np.sin(np.asarray(r, dtype=float)),
            lambda r: np.cos(np.asarray(r, dtype=float)),
            lambda r: -np.sin(np.asarray(r, dtype=float)),
        )
        pts = np.array([[3.5, 0.0], [0.0, 3.3], [2.5, 2.5]])
        h = 4e-3
        m1 = hedgehog_consistency_check(triple, p, pts, h, r_bounds=(3.0, 4.0))
        m2 = hedgehog_consistency_check(triple, p, pts, h / 2, r_bounds=(3.0, 4.0))
        assert m1 / m2 == pytest.approx(4.0, abs=0.5)

    def test_spline_input(self):
        from scipy.interpolate import CubicSpline

        rs = np.linspace(3.0, 4.0, 200)
        spline = CubicSpline(rs, np.sin(rs))
        p = LdGParams(a=0.1, b=0.0, c=1.0, L1=1.0, L2=0.0, L3=0.0, L4=0.5)
        pts = np.array([[3.5, 0.1]])
        mism = hedgehog_consistency_check(spline, p, pts, 1e-3, r_bounds=(3.0, 4.0))
        assert mism < 1e-2

    def test_rejects_samples_near_boundary(self):
        p = params()
        triple = (
            lambda r: np.asarray(r, dtype=float),
            lambda r: np.ones_like(np.asarray(r, dtype=float)),
            lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        )
        with pytest.raises(ValueError, match="annulus boundary"):
            hedgehog_consistency_check(triple, p, [[3.0005, 0.0]], 1e-3, r_bounds=(3.0, 4.0))
