import math

import numpy as np
import pytest
from scipy.optimize import minimize

from pharmap.blend import (
    BlendResult,
    PolarMetricGrid,
    blend_metric,
    find_k_blend,
    hess_T_coefficient,
    hyperbolic_coefficient,
    load_metric_csv,
    partition_profile,
    save_metric_csv,
)
from pharmap.errors import SearchExhaustedError, UsageError


def grid_from(gen, t_grid, ntheta=16, gen_dt=None):
    return PolarMetricGrid.from_generator(gen, t_grid, ntheta, generator_dt=gen_dt)


T_GRID = np.linspace(0.5, 2.5, 201)  # spacing 0.01, contains 1.0 and 2.0

SQUARE = lambda t, h: t**2  # noqa: E731
SQUARE_DT = lambda t, h: 2.0 * t  # noqa: E731
SINH2 = lambda t, h: np.sinh(t) ** 2  # noqa: E731
SINH2_DT = lambda t, h: np.sinh(2.0 * t)  # noqa: E731


def test_hyperbolic_coefficient_values():
    t = np.linspace(0.0, 3.0, 50)
    assert np.allclose(hyperbolic_coefficient(1.0, t), np.sinh(t) ** 2, rtol=1e-15)
    assert hyperbolic_coefficient(4.0, 1.0) == pytest.approx(math.sinh(2.0) ** 2 / 4.0, rel=1e-14)
    assert hyperbolic_coefficient(7.3, 0.0) == 0.0


def test_hess_T_coefficient_analytic():
    g = grid_from(SINH2, T_GRID, gen_dt=SINH2_DT)
    coeff = hess_T_coefficient(g)
    want = 0.5 * np.sinh(2.0 * T_GRID)
    assert np.allclose(coeff, want[:, None], rtol=1e-14)
    g2 = grid_from(SQUARE, T_GRID, gen_dt=SQUARE_DT)
    assert np.allclose(hess_T_coefficient(g2), T_GRID[:, None], rtol=1e-14)


def test_hess_T_coefficient_finite_difference_route():
    g = grid_from(SINH2, T_GRID)  # no analytic derivative
    coeff = hess_T_coefficient(g)
    want = 0.5 * np.sinh(2.0 * T_GRID)
    assert np.max(np.abs(coeff - want[:, None]) / (1 + np.abs(want[:, None]))) < 1e-7


def test_hess_T_coefficient_constant_metric_is_degenerate():
    g = PolarMetricGrid(T_GRID, 2 * np.pi * np.arange(8) / 8, np.full((T_GRID.size, 8), 5.0))
    assert np.max(np.abs(hess_T_coefficient(g))) < 1e-10


def test_grid_validation():
    theta = 2 * np.pi * np.arange(8) / 8
    with pytest.raises(UsageError):
        PolarMetricGrid(np.array([0.0, 1.0]), theta, np.ones((2, 8)))  # t must be positive
    with pytest.raises(UsageError):
        PolarMetricGrid(T_GRID, theta, -np.ones((T_GRID.size, 8)))  # j must be positive
    with pytest.raises(UsageError):
        PolarMetricGrid(T_GRID, np.linspace(0, np.pi, 8), np.ones((T_GRID.size, 8)))
    with pytest.raises(UsageError):
        grid_from(lambda t, h: 2.0 + np.sin(0.5 * h), T_GRID)  # not 2pi-periodic


def test_find_k_blend_square_metric():
    g = grid_from(SQUARE, T_GRID, gen_dt=SQUARE_DT)
    k, c2 = find_k_blend(g, 1.0, 2.0)
    assert k == 1.0
    assert c2 == pytest.approx(math.sinh(1.0) ** 2, rel=1e-12)  # annulus min sits at t=1
    # independent grid-min oracle
    mask = (T_GRID >= 1.0) & (T_GRID <= 2.0)
    oracle = np.min(np.sinh(T_GRID[mask]) ** 2 / T_GRID[mask] ** 2)
    assert c2 == pytest.approx(oracle, rel=1e-14)


def test_find_k_blend_self():
    g = grid_from(SINH2, T_GRID)
    k, c2 = find_k_blend(g, 1.0, 2.0)
    assert k == 1.0 and c2 == pytest.approx(1.0, rel=1e-15)


def test_find_k_blend_steep_metric_requires_large_k():
    g = grid_from(lambda t, h: np.exp(10.0 * t), T_GRID, gen_dt=lambda t, h: 10.0 * np.exp(10.0 * t))
    k, c2 = find_k_blend(g, 1.0, 2.0)
    assert k > 1.0
    # returned k satisfies both inequalities; k/2 fails at least one
    t_ann = T_GRID[(T_GRID >= 1.0) & (T_GRID <= 2.0)]
    j_ann = np.exp(10.0 * t_ann)

    def feasible(kk):
        a = math.sinh(math.sqrt(kk) * 1.0) ** 2 >= kk * math.sinh(1.0) ** 2 / c2
        b = np.all(hyperbolic_coefficient(kk, t_ann) >= j_ann)
        return a and b

    assert feasible(k)
    assert not feasible(k / 2.0)
    with pytest.raises(SearchExhaustedError):
        find_k_blend(g, 1.0, 2.0, k_max=k / 4.0)


def test_partition_identity_and_monotonicity():
    t = np.linspace(0.2, 3.0, 400)
    phi_j, phi_h, dphi_j = partition_profile(t, 1.0, 2.0)
    assert np.max(np.abs(phi_j + phi_h - 1.0)) == 0.0
    assert np.all(dphi_j <= 0.0)
    assert np.all(phi_j[t <= 1.0] == 1.0)
    assert np.all(phi_h[t >= 2.0] == 1.0)
    # dphi matches finite differences of phi
    h = 1e-6
    pj_p, _, _ = partition_profile(t + h, 1.0, 2.0)
    pj_m, _, _ = partition_profile(t - h, 1.0, 2.0)
    assert np.max(np.abs((pj_p - pj_m) / (2 * h) - dphi_j)) < 1e-7


def test_blend_endpoints_bit_exact():
    g = grid_from(SQUARE, T_GRID, ntheta=16, gen_dt=SQUARE_DT)
    result = blend_metric(g, 1.0, 1.0, 2.0)
    inner = T_GRID <= 1.0
    outer = T_GRID >= 2.0
    assert np.array_equal(result.blended.j[inner], g.j[inner])
    h = hyperbolic_coefficient(1.0, T_GRID[outer])
    assert np.array_equal(result.blended.j[outer], np.broadcast_to(h[:, None], result.blended.j[outer].shape))


def test_blend_self_is_identity():
    g = grid_from(SINH2, T_GRID, gen_dt=SINH2_DT)
    result = blend_metric(g, 1.0, 1.0, 2.0)
    assert result.passed
    assert np.allclose(result.blended.j, g.j, rtol=1e-15)
    # min of d_t jhat = sinh(2t) sits at the smallest positive t
    assert result.min_radial_derivative == pytest.approx(math.sinh(2 * T_GRID[0]), rel=1e-12)


def test_blend_square_metric_positive_certificate():
    g = grid_from(SQUARE, T_GRID, ntheta=64, gen_dt=SQUARE_DT)
    result = blend_metric(g, 1.0, 1.0, 2.0)
    assert isinstance(result, BlendResult)
    assert result.passed
    assert result.min_radial_derivative > 0.0


def test_blend_adversarial_violation_flagged():
    # j >> h_1 on the annulus makes the partition term drive d_t jhat negative
    gen = lambda t, h: 50.0 * (1.0 + t**2)  # noqa: E731
    gen_dt = lambda t, h: 100.0 * t  # noqa: E731
    g = grid_from(gen, T_GRID, gen_dt=gen_dt)
    result = blend_metric(g, 1.0, 1.0, 2.0)  # k=1 without find_k_blend
    assert not result.passed
    assert result.min_radial_derivative < 0.0


def test_hessian_decomposition_three_term_expansion():
    for gen, gen_dt in ((SQUARE, SQUARE_DT), (SINH2, SINH2_DT)):
        g = grid_from(gen, T_GRID, gen_dt=gen_dt)
        k, _ = find_k_blend(g, 1.0, 2.0)
        result = blend_metric(g, k, 1.0, 2.0)
        djhat = result.blended.d_dt()
        phi_j, phi_h, dphi_j = partition_profile(T_GRID, 1.0, 2.0)
        dh = np.sinh(2.0 * np.sqrt(k) * T_GRID) / np.sqrt(k)
        hcol = hyperbolic_coefficient(k, T_GRID)
        tt, hh = np.meshgrid(T_GRID, g.theta_grid, indexing="ij")
        three_term = (
            phi_j[:, None] * gen_dt(tt, hh)
            + phi_h[:, None] * dh[:, None]
            + dphi_j[:, None] * (gen(tt, hh) - hcol[:, None])
        )
        assert np.max(np.abs(djhat - three_term)) <= 1e-10 * max(1.0, np.max(np.abs(three_term)))


def test_blend_without_generator_uses_fd_and_agrees():
    g_samples = grid_from(SQUARE, T_GRID, ntheta=8)  # samples only
    g_analytic = grid_from(SQUARE, T_GRID, ntheta=8, gen_dt=SQUARE_DT)
    r1 = blend_metric(g_samples, 1.0, 1.0, 2.0)
    r2 = blend_metric(g_analytic, 1.0, 1.0, 2.0)
    assert r1.passed and r2.passed
    assert r1.min_radial_derivative == pytest.approx(r2.min_radial_derivative, rel=1e-4)


def test_certified_positivity_implies_convex_radial_function_on_geodesics():
    # relax random polygons to discrete geodesics of dt^2 + jhat dtheta^2 and
    # check the discrete second variation of T^2 = t^2 along them
    g = grid_from(SQUARE, T_GRID, ntheta=32, gen_dt=SQUARE_DT)
    k, _ = find_k_blend(g, 1.0, 2.0)
    result = blend_metric(g, k, 1.0, 2.0)
    assert result.passed
    jhat = result.blended.generator
    rng = np.random.default_rng(42)
    nseg = 16
    for _ in range(4):
        t0, t1 = rng.uniform(0.6, 2.3, size=2)
        th0 = rng.uniform(0.0, 0.5)
        th1 = th0 + rng.uniform(0.8, 1.6)
        lam = np.linspace(0.0, 1.0, nseg + 1)
        init = np.stack([t0 + lam * (t1 - t0), th0 + lam * (th1 - th0)], axis=1)

        def energy(flat):
            pts = np.vstack([init[0], flat.reshape(-1, 2), init[-1]])
            dt = np.diff(pts[:, 0])
            dth = np.diff(pts[:, 1])
            mid_t = 0.5 * (pts[1:, 0] + pts[:-1, 0])
            mid_h = 0.5 * (pts[1:, 1] + pts[:-1, 1])
            return np.sum(dt**2 + jhat(mid_t, mid_h) * dth**2)

        res = minimize(energy, init[1:-1].ravel(), method="L-BFGS-B", tol=1e-12)
        pts = np.vstack([init[0], res.x.reshape(-1, 2), init[-1]])
        tsq = pts[:, 0] ** 2
        second = tsq[:-2] - 2.0 * tsq[1:-1] + tsq[2:]
        assert np.min(second) > -1e-3 * max(1.0, np.max(tsq))


def test_metric_csv_round_trip(tmp_path):
    g = grid_from(SQUARE, np.linspace(0.5, 2.0, 7), ntheta=5)
    path = tmp_path / "grid.csv"
    save_metric_csv(path, g)
    loaded = load_metric_csv(path)
    assert np.array_equal(loaded.t_grid, g.t_grid)
    assert np.array_equal(loaded.theta_grid, g.theta_grid)
    assert np.array_equal(loaded.j, g.j)
    save_metric_csv(tmp_path / "again.csv", g)
    assert (tmp_path / "grid.csv").read_bytes() == (tmp_path / "again.csv").read_bytes()
