import math

import numpy as np
import pytest

from pharmap.errors import DomainError, UsageError
from pharmap.warp import (
    CurvatureReport,
    IdentityWarp,
    OddPolynomialWarp,
    ScaledWarp,
    SinhWarp,
    SplineWarp,
    certification_grid,
    curvature_radial,
    curvature_tangential,
    eval_warp,
    is_cartan_hadamard,
    is_hyperbolic_type,
    load_warp_csv,
    parse_warp_spec,
    save_warp_csv,
    scale_k,
)

R_PLUS_R3 = OddPolynomialWarp([1.0, 1.0])


def test_eval_analytic_values():
    s, d1, d2 = eval_warp(SinhWarp(), 1.0)
    assert s == pytest.approx(math.sinh(1.0), abs=1e-15)
    assert d1 == pytest.approx(math.cosh(1.0), abs=1e-15)
    assert d2 == pytest.approx(math.sinh(1.0), abs=1e-15)
    assert eval_warp(IdentityWarp(), 5.0) == (5.0, 1.0, 0.0)
    assert eval_warp(R_PLUS_R3, 2.0) == (10.0, 13.0, 12.0)


def test_eval_at_pole_and_negative_radius():
    for w in (IdentityWarp(), SinhWarp(), R_PLUS_R3):
        s, d1, _ = eval_warp(w, 0.0)
        assert s == 0.0 and d1 == 1.0
        with pytest.raises(DomainError):
            w.evaluate(-0.1)


def test_finite_difference_consistency_order():
    # d(sigma)/dr via central differences reproduces dsigma at order ~2;
    # steps chosen so truncation dominates roundoff (see second block for d2).
    radii = np.array([0.3, 0.9, 1.7, 3.1])
    for w in (SinhWarp(), R_PLUS_R3):
        errs = []
        for h in (1e-3, 1e-4):
            sp, _, _ = w.evaluate(radii + h)
            sm, _, _ = w.evaluate(radii - h)
            _, d1, _ = w.evaluate(radii)
            errs.append(np.max(np.abs((sp - sm) / (2 * h) - d1)))
        order = math.log10(errs[0] / errs[1])
        assert order >= 1.9
        errs2 = []
        for h in (1e-2, 1e-3):
            sp, _, _ = w.evaluate(radii + h)
            sm, _, _ = w.evaluate(radii - h)
            s0, _, d2 = w.evaluate(radii)
            errs2.append(np.max(np.abs((sp - 2 * s0 + sm) / h**2 - d2)))
        if isinstance(w, SinhWarp):
            assert math.log10(errs2[0] / errs2[1]) >= 1.9
        else:
            # second differences are exact for cubics; only roundoff remains
            assert max(errs2) < 1e-8


def test_curvature_formulas():
    r = np.linspace(0.05, 5.0, 37)
    assert np.allclose(curvature_radial(SinhWarp(), r), -1.0, atol=1e-12)
    assert np.allclose(curvature_tangential(SinhWarp(), r), -1.0, atol=5e-13, rtol=1e-12)
    assert np.all(curvature_radial(IdentityWarp(), r) == 0.0)
    assert np.all(curvature_tangential(IdentityWarp(), r) == 0.0)
    assert curvature_radial(R_PLUS_R3, 1.0) == pytest.approx(-3.0, rel=1e-14)
    assert curvature_tangential(R_PLUS_R3, 1.0) == pytest.approx(-3.75, rel=1e-14)


def test_curvature_pole_limits():
    assert curvature_radial(SinhWarp(), 0.0) == -1.0
    assert curvature_radial(IdentityWarp(), 0.0) == 0.0
    assert curvature_tangential(R_PLUS_R3, 0.0) == -6.0
    sampled = SplineWarp.sample(SinhWarp(), np.linspace(0.0, 2.0, 50))
    with pytest.raises(DomainError):
        curvature_radial(sampled, 0.0)
    with pytest.raises(DomainError):
        curvature_tangential(sampled, 0.0)


def test_is_cartan_hadamard():
    grid = np.linspace(0.025, 5.0, 200)
    assert is_cartan_hadamard(SinhWarp(), grid).is_nonpositive
    assert is_cartan_hadamard(R_PLUS_R3, grid).is_nonpositive
    with pytest.raises(UsageError):
        is_cartan_hadamard(SinhWarp(), np.array([]))


def test_is_cartan_hadamard_detects_spherical_cap():
    # sigma = r - r^3/3 has sigma'' = -2r < 0; worst curvature sits at the
    # largest radius (confirmed by direct evaluation of -sigma''/sigma).
    grid = np.linspace(0.05, 1.0, 200)
    r = grid
    sampled = SplineWarp(grid, r - r**3 / 3, 1 - r**2, -2 * r)
    report = is_cartan_hadamard(sampled, grid)
    assert not report.is_nonpositive
    r_end = grid[-1]
    expected_worst = 2 * r_end / (r_end - r_end**3 / 3)
    assert report.worst_violation == pytest.approx(expected_worst, rel=1e-9)
    assert np.argmax(np.maximum(report.sec_rad, report.sec_tg)) == len(grid) - 1


def test_sign_theorem_convexity_implies_tangential_nonpositive():
    grid = np.linspace(0.05, 5.0, 300)
    for w in (SinhWarp(), R_PLUS_R3, OddPolynomialWarp([1.0, 0.25, 0.01])):
        report = is_cartan_hadamard(w, grid)
        assert report.is_nonpositive
        assert np.all(report.sec_tg <= 1e-9 * (1 + np.abs(report.sec_tg)))


def test_scale_k_values():
    sk = scale_k(SinhWarp(), 4.0)
    s, d1, d2 = eval_warp(sk, 1.0)
    assert s == pytest.approx(math.sinh(2.0) / 2.0, rel=1e-15)
    assert d1 == pytest.approx(math.cosh(2.0), rel=1e-15)
    assert d2 == pytest.approx(2.0 * math.sinh(2.0), rel=1e-15)
    trivial = scale_k(R_PLUS_R3, 1.0)
    r = np.linspace(0.0, 3.0, 17)
    for got, ref in zip(trivial.evaluate(r), R_PLUS_R3.evaluate(r)):
        assert np.allclose(got, ref, rtol=1e-15)
    with pytest.raises(DomainError):
        scale_k(SinhWarp(), 0.0)


def test_curvature_scaling_law():
    # sec(scale_k(w))(r) = k * sec(w)(sqrt(k) r), both flavours, rel 1e-10.
    r = np.linspace(0.2, 3.0, 29)
    for w in (SinhWarp(), R_PLUS_R3):
        for k in (2.0, 4.0, 9.0):
            sk = scale_k(w, k)
            lhs_rad = curvature_radial(sk, r)
            rhs_rad = k * curvature_radial(w, np.sqrt(k) * r)
            assert np.allclose(lhs_rad, rhs_rad, rtol=1e-10)
            lhs_tg = curvature_tangential(sk, r)
            rhs_tg = k * curvature_tangential(w, np.sqrt(k) * r)
            assert np.allclose(lhs_tg, rhs_tg, rtol=1e-10)
    assert curvature_radial(scale_k(SinhWarp(), 4.0), 1.0) == pytest.approx(-4.0, rel=1e-12)


def test_is_hyperbolic_type():
    grid = np.linspace(0.05, 5.0, 200)
    ks = [1.0, 2.0, 4.0, 8.0, 16.0]
    assert is_hyperbolic_type(SinhWarp(), grid, ks).is_hyperbolic
    rep_id = is_hyperbolic_type(IdentityWarp(), grid, ks)
    assert not rep_id.is_hyperbolic
    assert not rep_id.growth_ok  # sigma_k = r does not diverge in k
    rep_poly = is_hyperbolic_type(R_PLUS_R3, grid, ks)
    assert not rep_poly.is_hyperbolic
    assert not rep_poly.slope_ok  # sigma_k' < sigma_k at large r (e.g. r=4, k=1)


def test_spline_round_trip():
    knots = np.linspace(0.0, 4.0, 400)
    mid = 0.5 * (knots[:-1] + knots[1:])
    for w in (SinhWarp(), R_PLUS_R3):
        for with_second in (True, False):
            spline = SplineWarp.sample(w, knots, with_second=with_second)
            s_ref, d_ref, _ = w.evaluate(mid)
            s_got, d_got, _ = spline.evaluate(mid)
            assert np.max(np.abs(s_got - s_ref)) <= 1e-8
            assert np.max(np.abs(d_got - d_ref)) <= 1e-6


def test_spline_triple_consistency_between_knots():
    spline = SplineWarp.sample(SinhWarp(), np.linspace(0.0, 3.0, 60))
    r = np.linspace(0.31, 2.7, 11)  # away from knots
    h = 1e-5
    sp, _, _ = spline.evaluate(r + h)
    sm, _, _ = spline.evaluate(r - h)
    s0, d1, d2 = spline.evaluate(r)
    assert np.max(np.abs((sp - sm) / (2 * h) - d1)) < 1e-8
    assert np.max(np.abs((sp - 2 * s0 + sm) / h**2 - d2)) < 1e-4


def test_spline_domain_and_tail():
    spline = SplineWarp.sample(SinhWarp(), np.linspace(1.0, 2.0, 20))
    with pytest.raises(DomainError):
        spline.evaluate(0.5)
    # quadratic Taylor tail beyond the last knot, anchored at the spline data
    h = 1e-6
    s2, d2_, dd2 = spline.evaluate(2.0)
    s_tail, d_tail, dd_tail = spline.evaluate(2.0 + h)
    assert s_tail == pytest.approx(s2 + d2_ * h + 0.5 * dd2 * h * h, rel=1e-12)
    assert d_tail == pytest.approx(d2_ + dd2 * h, rel=1e-9)
    assert dd_tail == pytest.approx(dd2, rel=1e-6)


def test_spline_validation():
    with pytest.raises(UsageError):
        SplineWarp([0.0, 0.0, 1.0], [0, 0, 1], [1, 1, 1])
    with pytest.raises(UsageError):
        SplineWarp([0.0, 1.0], [0.5, 1.0], [1.0, 1.0])  # sigma(0) != 0


def test_certification_grid():
    g = certification_grid(0.01, 1.0)
    assert g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1.0)
    assert g.size >= 1024
    assert np.all(np.diff(np.log(g)) > 0)
    with pytest.raises(UsageError):
        certification_grid(1.0, 0.5)


def test_parse_warp_spec_and_csv_round_trip(tmp_path):
    assert isinstance(parse_warp_spec("identity"), IdentityWarp)
    assert isinstance(parse_warp_spec("sinh"), SinhWarp)
    poly = parse_warp_spec("poly:1,1")
    assert eval_warp(poly, 2.0) == (10.0, 13.0, 12.0)
    with pytest.raises(UsageError):
        parse_warp_spec("banana")

    path = tmp_path / "warp.csv"
    save_warp_csv(path, SinhWarp(), np.linspace(0.0, 3.0, 200))
    loaded = parse_warp_spec(f"file:{path}")
    r = np.linspace(0.1, 2.9, 23)
    s_ref, d_ref, _ = SinhWarp().evaluate(r)
    s_got, d_got, _ = loaded.evaluate(r)
    assert np.max(np.abs(s_got - s_ref)) < 1e-10
    assert np.max(np.abs(d_got - d_ref)) < 1e-8


def test_curvature_report_json_fields():
    report = is_cartan_hadamard(SinhWarp(), np.linspace(0.1, 1.0, 5))
    doc = report.to_json_dict()
    assert list(doc) == ["grid", "sec_rad", "sec_tg", "is_nonpositive", "worst_violation"]
    assert isinstance(report, CurvatureReport)


def test_scaled_warp_nesting():
    w = ScaledWarp(ScaledWarp(SinhWarp(), 2.0), 2.0)
    ref = ScaledWarp(SinhWarp(), 4.0)
    r = np.linspace(0.0, 2.0, 9)
    for got, want in zip(w.evaluate(r), ref.evaluate(r)):
        assert np.allclose(got, want, rtol=1e-14)
