"""Surgery on warping functions: prescribe a hyperbolic-type infinity.

Given a convex inner warp ``rho`` and a hyperbolic-type outer warp ``sigma``,
the construction produces a convex glued warp ``tau`` that equals ``rho`` on
an inner ball and a rescaling ``sigma_k`` beyond a larger ball, so the model
generated by ``tau`` keeps nonpositive curvature while acquiring the outer
geometry at infinity.  Feasibility is a secant inequality: ``k`` must be
large enough that

    rho'(R1)  <=  (sigma_k(R2) - rho(R1)) / (R2 - R1)  <=  sigma_k'(R2),

i.e. the chord from (R1, rho(R1)) to (R2, sigma_k(R2)) has slope between the
one-sided derivatives.  The raw three-piece function (rho | chord | sigma_k)
is convex but has corners; instead of an exact smooth convex approximation we
ramp the *derivative* linearly across bands of half-width ``delta`` around R1
and R2, which yields a C^{1,1} convex function with piecewise-constant
nonnegative second derivative - enough regularity for every downstream
numerical check, and certifiable.

The free plateau slope ``s`` is fixed by matching ``tau = sigma_k`` at the
outer band edge, found by bisection (the mismatch is strictly increasing in
``s``).  ``certify`` measures the convexity margin, the slope margin, head
and tail mismatches and the curvatures of ``tau`` and emits a certificate.

The same surgery applies per ray to a 2-dimensional metric given by angular
samples ``nu(., theta)``: one (k, R1, R2) is chosen to satisfy the secant
inequality for the worst ray, the plateau slope is solved per ray, and the
joint certificate additionally reports a Lipschitz bound on s(theta).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, DomainError, InfeasibleError, SearchExhaustedError, UsageError
from .warp import (
    CurvatureReport,
    ScaledWarp,
    SplineWarp,
    WarpingFunction,
    is_cartan_hadamard,
    is_hyperbolic_type,
    scale_k,
)

__all__ = [
    "GlueSpec",
    "GluedWarp",
    "GlueCertificate",
    "Glue2DResult",
    "choose_radii",
    "find_k",
    "build_tau",
    "certify",
    "default_certification_grid",
    "glue_pipeline",
    "glue2d",
    "rays_from_polar_samples",
]

CONVEXITY_TOL = 1e-9
SLOPE_TOL = 1e-12
CURVATURE_TOL = 1e-9


@dataclass
class GlueSpec:
    """Inputs of the gluing pipeline.

    ``delta`` is the corner-band half-width (None picks the default
    min(0.05, (R2-R1)/10) once the intermediate radii are chosen);
    ``value_tol`` bounds the admissible tail mismatch |tau - sigma_k|.
    """

    rho: WarpingFunction
    sigma: WarpingFunction
    R_bar: float
    R: float
    delta: float | None = None
    k_max: float = 2.0**40
    value_tol: float = 1e-10

    def validate(self, check_sigma: bool = True) -> None:
        if not (0.0 < self.R_bar < self.R):
            raise UsageError("glue spec needs 0 < R_bar < R")
        if self.delta is not None and not (0.0 < self.delta < (self.R - self.R_bar) / 8.0):
            raise UsageError("glue spec needs 0 < delta < (R - R_bar)/8")
        if self.k_max < 1.0:
            raise UsageError("glue spec needs k_max >= 1")
        if self.value_tol <= 0.0:
            raise UsageError("glue spec needs value_tol > 0")
        if check_sigma:
            grid = np.geomspace(1e-2, max(2.0 * self.R, 4.0), 512)
            if not is_hyperbolic_type(self.sigma, grid).is_hyperbolic:
                raise UsageError("outer warp fails the hyperbolic-type check on the glue grid")


class GluedWarp(WarpingFunction):
    """Convex surgered warp: inner warp, derivative ramps, plateau, rescaled tail.

    The derivative profile is rho' on [0, R1-delta], a linear ramp to the
    plateau slope s on [R1-delta, R1+delta], constant s up to R2-delta, a
    linear ramp to sigma_k'(R2+delta), and sigma_k' beyond.  Values integrate
    this profile exactly (the ramp and plateau pieces are polynomials, the
    tail integral telescopes to sigma_k), anchored so tau == rho on the head.
    """

    kind = "Glued"

    def __init__(self, rho: WarpingFunction, sigma_k: WarpingFunction, R1: float, R2: float,
                 delta: float, k: float, s: float, value_tol: float = 1e-10):
        if not (0.0 < R1 < R2):
            raise UsageError("glued warp needs 0 < R1 < R2")
        if not (0.0 < delta < (R2 - R1) / 2.0):
            raise DomainError("band half-width must satisfy 0 < delta < (R2-R1)/2")
        self.rho = rho
        self.sigma_k = sigma_k
        self.R1 = float(R1)
        self.R2 = float(R2)
        self.delta = float(delta)
        self.k = float(k)
        self.s = float(s)
        self.value_tol = float(value_tol)
        self.third_at_zero = rho.third_at_zero

    # band edges
    @property
    def edges(self):
        d = self.delta
        return (self.R1 - d, self.R1 + d, self.R2 - d, self.R2 + d)

    def _anchors(self):
        a, b, c, d = self.edges
        rho_a, drho_a, _ = self.rho.evaluate(np.asarray(a))
        sig_d, dsig_d, _ = self.sigma_k.evaluate(np.asarray(d))
        tau_b = float(rho_a) + self.delta * (float(drho_a) + self.s)
        tau_c = tau_b + self.s * (c - b)
        tau_d = tau_c + self.delta * (self.s + float(dsig_d))
        return (float(rho_a), float(drho_a), float(sig_d), float(dsig_d), tau_b, tau_c, tau_d)

    def _eval(self, r):
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        a, b, c, d = self.edges
        rho_a, drho_a, sig_d, dsig_d, tau_b, tau_c, tau_d = self._anchors()
        ramp1 = (self.s - drho_a) / (2.0 * self.delta)
        ramp2 = (dsig_d - self.s) / (2.0 * self.delta)

        s_out = np.empty_like(r)
        d1_out = np.empty_like(r)
        d2_out = np.empty_like(r)

        head = r < a
        if np.any(head):
            s_out[head], d1_out[head], d2_out[head] = self.rho.evaluate(r[head])
        m1 = (r >= a) & (r < b)
        if np.any(m1):
            t = r[m1] - a
            s_out[m1] = rho_a + drho_a * t + 0.5 * ramp1 * t * t
            d1_out[m1] = drho_a + ramp1 * t
            d2_out[m1] = ramp1
        m2 = (r >= b) & (r < c)
        if np.any(m2):
            t = r[m2] - b
            s_out[m2] = tau_b + self.s * t
            d1_out[m2] = self.s
            d2_out[m2] = 0.0
        m3 = (r >= c) & (r < d)
        if np.any(m3):
            t = r[m3] - c
            s_out[m3] = tau_c + self.s * t + 0.5 * ramp2 * t * t
            d1_out[m3] = self.s + ramp2 * t
            d2_out[m3] = ramp2
        tail = r >= d
        if np.any(tail):
            sv, dv, ddv = self.sigma_k.evaluate(r[tail])
            s_out[tail] = tau_d + (sv - sig_d)
            d1_out[tail] = dv
            d2_out[tail] = ddv
        if scalar:
            return s_out[0], d1_out[0], d2_out[0]
        return s_out, d1_out, d2_out

    def tau_prime(self, r):
        return self.evaluate(r)[1]

    def with_slope(self, s: float) -> "GluedWarp":
        """Copy with a replaced plateau slope (for adversarial checks)."""
        return GluedWarp(self.rho, self.sigma_k, self.R1, self.R2, self.delta, self.k, s, self.value_tol)


@dataclass
class GlueCertificate:
    """Machine-checked evidence that a glued warp satisfies its contract."""

    min_second_difference: float
    min_slope_minus_one: float
    head_mismatch: float
    tail_mismatch: float
    curvature: CurvatureReport
    passed: bool
    value_tol: float

    def to_json_dict(self, gw: GluedWarp | None = None):
        doc = {
            "pass": bool(self.passed),
            "min_second_difference": float(self.min_second_difference),
            "min_slope_minus_one": float(self.min_slope_minus_one),
            "head_mismatch": float(self.head_mismatch),
            "tail_mismatch": float(self.tail_mismatch),
            "max_sec_rad": float(np.max(self.curvature.sec_rad)),
            "max_sec_tg": float(np.max(self.curvature.sec_tg)),
            "curvature_nonpositive": bool(self.curvature.is_nonpositive),
            "value_tol": float(self.value_tol),
        }
        if gw is not None:
            doc.update({"R1": gw.R1, "R2": gw.R2, "delta": gw.delta, "k": gw.k, "s": gw.s})
        return doc

    def to_json(self, gw: GluedWarp | None = None):
        return json.dumps(self.to_json_dict(gw), indent=2)


def choose_radii(spec: GlueSpec):
    """Intermediate radii at the interior thirds of (R_bar, R)."""
    spec.validate(check_sigma=False)
    step = (spec.R - spec.R_bar) / 3.0
    return spec.R_bar + step, spec.R_bar + 2.0 * step


def _secant_conditions(rho, sigma_k, R1, R2, delta):
    """Delta-shifted secant inequality data: (lower slope, chord slope, upper slope).

    With delta = 0 this reduces to the plain secant inequality at (R1, R2).
    The shifted form bounds the plateau-slope root of ``build_tau``.
    """
    rho_lo, _, _ = rho.evaluate(np.asarray(R1 - delta))
    _, drho_hi, _ = rho.evaluate(np.asarray(R1 + delta))
    sig_hi, _, _ = sigma_k.evaluate(np.asarray(R2 + delta))
    _, dsig_lo, _ = sigma_k.evaluate(np.asarray(R2 - delta))
    denom = (R2 - delta) - (R1 + delta)
    quotient = (float(sig_hi) - float(rho_lo) - 2.0 * delta * float(drho_hi)) / denom
    return float(drho_hi), quotient, float(dsig_lo)


def find_k(rho: WarpingFunction, sigma: WarpingFunction, R1: float, R2: float,
           delta: float = 0.0, k_max: float = 2.0**40) -> float:
    """Smallest doubling scale k with the (delta-shifted) secant inequality.

    Scans k = 1, 2, 4, ... <= k_max and returns the first k for which
    lower <= chord <= upper holds; raises with the last violated inequality
    when the cap is reached.
    """
    if not (0.0 < R1 < R2):
        raise UsageError("find_k needs 0 < R1 < R2")
    if delta < 0.0 or 2.0 * delta >= R2 - R1:
        raise DomainError("find_k needs 0 <= delta < (R2-R1)/2")
    k = 1.0
    last = ""
    while k <= k_max:
        lower, chord, upper = _secant_conditions(rho, scale_k(sigma, k), R1, R2, delta)
        if lower <= chord <= upper:
            return k
        if chord < lower:
            last = f"chord slope {chord:.6g} < rho'(R1+delta) = {lower:.6g} at k={k:g}"
        else:
            last = f"chord slope {chord:.6g} > sigma_k'(R2-delta) = {upper:.6g} at k={k:g}"
        k *= 2.0
    raise SearchExhaustedError(f"no k <= {k_max:g} satisfies the secant inequality; last failure: {last}")


def build_tau(rho: WarpingFunction, sigma_k: WarpingFunction, R1: float, R2: float,
              delta: float, value_tol: float = 1e-10) -> GluedWarp:
    """Assemble the glued warp; the plateau slope comes from a bisection root-find.

    The mismatch ``tau(R2+delta; s) - sigma_k(R2+delta)`` is strictly
    increasing in s, bracketed by the monotonicity bounds
    [rho'(R1-delta), sigma_k'(R2+delta)]; an empty bracket means the chosen k
    is infeasible.
    """
    if not (0.0 < R1 < R2):
        raise UsageError("build_tau needs 0 < R1 < R2")
    if not (0.0 < delta < (R2 - R1) / 2.0):
        raise DomainError("build_tau needs 0 < delta < (R2-R1)/2")
    k = sigma_k.k if isinstance(sigma_k, ScaledWarp) else 1.0

    rho_a, drho_a, _ = (float(v) for v in rho.evaluate(np.asarray(R1 - delta)))
    sig_d, dsig_d, _ = (float(v) for v in sigma_k.evaluate(np.asarray(R2 + delta)))

    def mismatch(s):
        # closed form of tau(R2+delta; s) - sigma_k(R2+delta)
        return rho_a + delta * (drho_a + s) + s * (R2 - R1 - 2.0 * delta) + delta * (s + dsig_d) - sig_d

    lo, hi = drho_a, dsig_d
    scale = max(1.0, abs(sig_d))
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo > 1e-12 * scale:
        raise InfeasibleError(
            f"plateau slope root lies below the monotone bracket (mismatch at rho'(R1-delta): {f_lo:.3g})"
        )
    if f_hi < -1e-12 * scale:
        raise InfeasibleError(
            f"plateau slope root lies above the monotone bracket (mismatch at sigma_k'(R2+delta): {f_hi:.3g})"
        )
    if hi <= lo:
        s = lo
    else:
        for _ in range(200):
            s = 0.5 * (lo + hi)
            fm = mismatch(s)
            if abs(fm) <= 1e-13 * scale or (hi - lo) <= 1e-16 * max(1.0, abs(lo) + abs(hi)):
                break
            if fm > 0.0:
                hi = s
            else:
                lo = s
        else:  # pragma: no cover - bisection always terminates earlier
            raise ConstructionError("plateau slope bisection failed to converge")

    gw = GluedWarp(rho, sigma_k, R1, R2, delta, k, s, value_tol)
    # defence in depth: the derivative profile must be monotone
    if s < drho_a - 1e-12 * max(1.0, abs(drho_a)) or dsig_d < s - 1e-12 * max(1.0, abs(dsig_d)):
        raise ConstructionError("glued derivative profile is not monotone")
    return gw


def default_certification_grid(gw: GluedWarp, n: int = 4001) -> np.ndarray:
    """Uniform grid on [0, R2+4*delta] with the band edges inserted."""
    top = gw.R2 + 4.0 * gw.delta
    grid = np.linspace(0.0, top, max(n, 2000))
    grid = np.unique(np.concatenate([grid, np.asarray(gw.edges)]))
    return grid


def certify(gw: GluedWarp, grid) -> GlueCertificate:
    """Measure the contract margins of a glued warp on a grid.

    ``min_second_difference`` is the undivided midpoint convexity defect
    min_i [ (h1 tau_{i-1} + h0 tau_{i+1})/(h0+h1) - tau_i ]  (>= 0 for convex
    tau); keeping it undivided leaves roundoff at the 1e-14 level, far below
    the 1e-9 acceptance threshold, while the curvature report certifies the
    sign of tau'' itself from the analytic profile.
    """
    grid = np.asarray(grid, dtype=float)
    a, b, c, d = gw.edges
    if grid.ndim != 1 or grid.size < 2000:
        raise UsageError("certification grid needs at least 2000 points")
    if np.any(np.diff(grid) <= 0.0):
        raise UsageError("certification grid must be strictly increasing")
    if grid[0] > 1e-12 or grid[-1] < gw.R2 + 4.0 * gw.delta - 1e-9:
        raise UsageError("certification grid must span [0, R2 + 4*delta]")
    for edge in (a, b, c, d):
        if np.min(np.abs(grid - edge)) > 1e-9:
            raise UsageError("certification grid must include the band edges")

    tau, dtau, _ = gw.evaluate(grid)

    h0 = np.diff(grid[:-1])
    h1 = np.diff(grid[1:])
    mid = (h1 * tau[:-2] + h0 * tau[2:]) / (h0 + h1) - tau[1:-1]
    min_second = float(np.min(mid))

    min_slope = float(np.min(dtau) - 1.0)

    head_pts = grid <= a
    rho_vals = gw.rho.evaluate(grid[head_pts])[0]
    head_mismatch = float(np.max(np.abs(tau[head_pts] - rho_vals))) if np.any(head_pts) else 0.0

    tail_pts = grid >= d
    sig_vals = gw.sigma_k.evaluate(grid[tail_pts])[0]
    tail_mismatch = float(np.max(np.abs(tau[tail_pts] - sig_vals))) if np.any(tail_pts) else 0.0

    report = is_cartan_hadamard(gw, grid[grid > 0.0])

    passed = (
        min_second >= -CONVEXITY_TOL
        and min_slope >= -SLOPE_TOL
        and head_mismatch == 0.0
        and tail_mismatch <= gw.value_tol
        and report.is_nonpositive
        and float(np.max(np.maximum(report.sec_rad, report.sec_tg))) <= CURVATURE_TOL
    )
    return GlueCertificate(
        min_second_difference=min_second,
        min_slope_minus_one=min_slope,
        head_mismatch=head_mismatch,
        tail_mismatch=tail_mismatch,
        curvature=report,
        passed=passed,
        value_tol=gw.value_tol,
    )


def glue_pipeline(spec: GlueSpec, cert_points: int = 4001):
    """Full pipeline: validate, choose radii, search k, build tau, certify."""
    spec.validate()
    R1, R2 = choose_radii(spec)
    delta = spec.delta if spec.delta is not None else min(0.05, (R2 - R1) / 10.0)
    if not (0.0 < delta < (R2 - R1) / 2.0):
        raise UsageError("delta is too large for the chosen intermediate radii")
    k = find_k(spec.rho, spec.sigma, R1, R2, delta, spec.k_max)
    gw = build_tau(spec.rho, scale_k(spec.sigma, k), R1, R2, delta, spec.value_tol)
    cert = certify(gw, default_certification_grid(gw, cert_points))
    return gw, cert


# ---------------------------------------------------------------------------
# per-ray surgery for 2d metrics dr^2 + nu(r, theta)^2 dtheta^2
# ---------------------------------------------------------------------------


@dataclass
class Glue2DResult:
    """Per-ray glued warps with a joint certificate."""

    k: float
    R1: float
    R2: float
    delta: float
    theta_grid: np.ndarray
    glued: list
    certificates: list
    slopes: np.ndarray
    lip: float
    passed: bool


def rays_from_polar_samples(t_grid, nu, dnu=None) -> list[SplineWarp]:
    """Per-ray spline warps from angular samples nu of shape (nt, ntheta).

    ``t_grid`` must start at 0 so the glued heads stay evaluable down to the
    pole.  Missing radial derivatives are taken from a C^2 value spline.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if t_grid.ndim != 1 or nu.ndim != 2 or nu.shape[0] != t_grid.size:
        raise UsageError("need t_grid (nt,) and nu (nt, ntheta)")
    if t_grid[0] != 0.0:
        raise UsageError("ray samples must start at t = 0 (the glued head reaches the pole)")
    if dnu is None:
        from scipy.interpolate import CubicSpline

        dnu = np.empty_like(nu)
        for j in range(nu.shape[1]):
            dnu[:, j] = CubicSpline(t_grid, nu[:, j])(t_grid, 1)
    else:
        dnu = np.asarray(dnu, dtype=float)
        if dnu.shape != nu.shape:
            raise UsageError("dnu must match nu")
    return [SplineWarp(t_grid, nu[:, j], dnu[:, j]) for j in range(nu.shape[1])]


def glue2d(rays, theta_grid, sigma: WarpingFunction, R_bar: float, R: float, *,
           delta: float | None = None, k_max: float = 2.0**40, value_tol: float = 1e-10,
           cert_points: int = 2001) -> Glue2DResult:
    """Glue a hyperbolic-type infinity onto a 2d metric given per ray.

    Each ray (the angular sample nu(., theta_j), a warping function of the
    radius) must be convex on the checking window: the single curvature of
    the 2d metric is -nu_rr/nu, so convexity is the nonpositive-curvature
    precondition.  A single (k, R1, R2) is chosen so the secant inequality
    holds for the worst ray; the plateau slope is solved ray by ray.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    rays = list(rays)
    if theta_grid.ndim != 1 or len(rays) != theta_grid.size or not rays:
        raise UsageError("need one ray per theta sample")
    spec = GlueSpec(rays[0], sigma, R_bar, R, delta=delta, k_max=k_max, value_tol=value_tol)
    spec.validate()
    R1, R2 = choose_radii(spec)
    band = delta if delta is not None else min(0.05, (R2 - R1) / 10.0)

    check = np.linspace(band * 1e-3, R1 + 2.0 * band, 256)
    for j, ray in enumerate(rays):
        _, _, dd = ray.evaluate(check)
        if np.any(dd < -1e-9 * (1.0 + np.abs(dd))):
            raise UsageError(
                f"ray {j} (theta={theta_grid[j]:.6g}) is concave on the checking window; "
                "the 2d metric is not nonpositively curved there"
            )

    k = 1.0
    feasible = False
    worst = (0, -np.inf)
    while k <= k_max:
        margins = []
        for j, ray in enumerate(rays):
            lower, chord, upper = _secant_conditions(ray, scale_k(sigma, k), R1, R2, band)
            margins.append(max(lower - chord, chord - upper))
        worst = (int(np.argmax(margins)), float(np.max(margins)))
        if worst[1] <= 0.0:
            feasible = True
            break
        k *= 2.0
    if not feasible:
        j = worst[0]
        raise SearchExhaustedError(
            f"no k <= {k_max:g} glues every ray; worst ray {j} (theta={theta_grid[j]:.6g}) "
            f"violates the secant inequality by {worst[1]:.3g}"
        )

    sigma_k = scale_k(sigma, k)
    glued = [build_tau(ray, sigma_k, R1, R2, band, value_tol) for ray in rays]
    certs = [certify(gw, default_certification_grid(gw, cert_points)) for gw in glued]
    slopes = np.array([gw.s for gw in glued])
    dtheta = 2.0 * np.pi / theta_grid.size
    steps = np.abs(np.diff(np.concatenate([slopes, slopes[:1]])))
    lip = float(np.max(steps) / dtheta) if slopes.size > 1 else 0.0
    return Glue2DResult(
        k=k,
        R1=R1,
        R2=R2,
        delta=band,
        theta_grid=theta_grid,
        glued=glued,
        certificates=certs,
        slopes=slopes,
        lip=lip,
        passed=all(c.passed for c in certs),
    )
