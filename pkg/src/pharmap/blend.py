"""Radial blending of a 2d metric with a rescaled hyperbolic one.

In polar coordinates ``dt^2 + j(t, theta) d theta^2`` the radial coordinate
``T(t, theta) = t`` has Hessian

    Hess T (X, X) = 1/2 X^i X^l d_t j_il      (angular components of X),

so strict convexity of T off the radial direction is exactly positivity of
``d_t j`` for t > 0.  Blending ``j`` with the angular coefficient of the
curvature ``-k`` hyperbolic plane,

    h_k(t) = sinh^2(sqrt(k) t) / k,
    jhat   = phi_j(t) j + phi_h(t) h_k,        phi_j + phi_h = 1,

keeps that positivity provided ``h_k >= j`` on the transition annulus
[R1, R2] (the extra Hessian term is ``phi_j' (j - h_k)`` with phi_j' <= 0).
A doubling search produces such a ``k``: with

    c2 = min over the annulus of h_1(t) / j(t, theta)

it suffices that ``sinh^2(sqrt(k) R1) >= k sinh^2(R1) / c2``; the pointwise
inequality ``h_k >= j`` is checked as well because it is what the Hessian
estimate actually consumes.  The partition uses the quintic smoothstep, so
``jhat`` is C^2, equals ``j`` for t <= R1 and ``h_k`` for t >= R2 bit-exactly.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SearchExhaustedError, UsageError

__all__ = [
    "PolarMetricGrid",
    "BlendResult",
    "hess_T_coefficient",
    "hyperbolic_coefficient",
    "find_k_blend",
    "blend_metric",
    "partition_profile",
    "save_metric_csv",
    "load_metric_csv",
]


def _derivative_weights(t: np.ndarray) -> np.ndarray:
    """Sparse 5-point Lagrange differentiation weights for each grid point.

    Returns (n, 5) weights and (n, 5) column indices packed as a pair; works
    on nonuniform grids and falls back to one-sided stencils at the ends.
    """
    n = t.size
    width = min(5, n)
    weights = np.zeros((n, width))
    cols = np.zeros((n, width), dtype=np.int64)
    for i in range(n):
        lo = min(max(i - width // 2, 0), n - width)
        nodes = t[lo : lo + width] - t[i]
        for j in range(width):
            # L_j'(0) for the Lagrange basis on `nodes` (0 is always a node)
            others = [m for m in range(width) if m != j]
            denom = np.prod([nodes[j] - nodes[m] for m in others])
            num = 0.0
            for kk in others:
                num += np.prod([-nodes[m] for m in others if m != kk])
            weights[i, j] = num / denom
        cols[i] = np.arange(lo, lo + width)
    return weights, cols


def _d_dt(t: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Derivative of F (shape (nt, ...)) along the first axis on grid t."""
    if t.size < 3:
        raise UsageError("radial derivative needs at least 3 samples (or an analytic generator)")
    if t.size < 5:
        return np.gradient(F, t, axis=0, edge_order=2)
    weights, cols = _derivative_weights(t)
    return np.einsum("iw,iw...->i...", weights, F[cols])


@dataclass
class PolarMetricGrid:
    """Sampled angular metric coefficient j(t, theta) > 0 on a polar grid.

    ``theta_grid`` must be the uniform grid on [0, 2pi) so the samples wrap
    consistently.  ``generator``/``generator_dt`` optionally supply j and
    d_t j analytically (vectorized over meshgrid arrays).
    """

    t_grid: np.ndarray
    theta_grid: np.ndarray
    j: np.ndarray
    generator: object = None
    generator_dt: object = None

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.theta_grid = np.asarray(self.theta_grid, dtype=float)
        self.j = np.asarray(self.j, dtype=float)
        if self.t_grid.ndim != 1 or np.any(self.t_grid <= 0.0) or np.any(np.diff(self.t_grid) <= 0.0):
            raise UsageError("t_grid must be strictly increasing and positive")
        m = self.theta_grid.size
        if m < 3:
            raise UsageError("theta_grid needs at least 3 angles")
        want = self.theta_grid[0] + 2.0 * np.pi * np.arange(m) / m
        if not np.allclose(self.theta_grid, want, atol=1e-12):
            raise UsageError("theta_grid must be uniform on [0, 2*pi)")
        if self.j.shape != (self.t_grid.size, m):
            raise UsageError("j must have shape (len(t_grid), len(theta_grid))")
        if not np.all(np.isfinite(self.j)) or np.any(self.j <= 0.0):
            raise UsageError("metric coefficient j must be positive and finite")
        if self.generator is not None:
            tt = np.full_like(self.theta_grid, self.t_grid[-1])
            wrap = np.asarray(self.generator(tt, self.theta_grid + 2.0 * np.pi))
            base = np.asarray(self.generator(tt, self.theta_grid))
            if not np.allclose(wrap, base, rtol=1e-10, atol=1e-12):
                raise UsageError("generator is not 2*pi-periodic in theta")

    @classmethod
    def from_generator(cls, generator, t_grid, ntheta: int, generator_dt=None) -> "PolarMetricGrid":
        t_grid = np.asarray(t_grid, dtype=float)
        theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
        tt, hh = np.meshgrid(t_grid, theta, indexing="ij")
        return cls(t_grid, theta, np.asarray(generator(tt, hh), dtype=float), generator, generator_dt)

    def d_dt(self) -> np.ndarray:
        """d_t j on the grid: analytic when a generator derivative exists."""
        if self.generator_dt is not None:
            tt, hh = np.meshgrid(self.t_grid, self.theta_grid, indexing="ij")
            return np.asarray(self.generator_dt(tt, hh), dtype=float)
        return _d_dt(self.t_grid, self.j)


@dataclass
class BlendResult:
    """Blended metric with its positivity certificate."""

    k: float
    c2: float
    blended: PolarMetricGrid
    phi_j: np.ndarray
    phi_h: np.ndarray
    min_radial_derivative: float
    passed: bool

    def to_json_dict(self):
        return {
            "k": float(self.k),
            "c2": float(self.c2),
            "min_dt_jhat": float(self.min_radial_derivative),
            "pass": bool(self.passed),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2)


def hess_T_coefficient(grid: PolarMetricGrid) -> np.ndarray:
    """The field (1/2) d_t j whose positivity makes T strictly convex off the rays."""
    return 0.5 * grid.d_dt()


def hyperbolic_coefficient(k: float, t) -> np.ndarray:
    """Angular coefficient sinh^2(sqrt(k) t)/k of the curvature -k hyperbolic plane."""
    if k <= 0.0:
        raise DomainError("hyperbolic coefficient needs k > 0")
    t = np.asarray(t, dtype=float)
    return np.sinh(np.sqrt(k) * t) ** 2 / k


def _annulus_mask(t_grid, R1, R2):
    if not (0.0 < R1 < R2):
        raise UsageError("need 0 < R1 < R2")
    if t_grid[0] > R1 + 1e-12 or t_grid[-1] < R2 - 1e-12:
        raise UsageError("t_grid must cover the transition annulus [R1, R2]")
    mask = (t_grid >= R1 - 1e-12) & (t_grid <= R2 + 1e-12)
    if not np.any(mask):
        raise UsageError("no radial samples inside the annulus [R1, R2]")
    return mask


def find_k_blend(grid: PolarMetricGrid, R1: float, R2: float, k_max: float = 2.0**40):
    """Doubling search for the hyperbolic scale that dominates j on the annulus.

    Returns (k, c2) with c2 the annulus minimum of h_1/j; k is the smallest
    doubling value satisfying both the c2-inequality at R1 and the pointwise
    domination h_k >= j on every annulus sample.
    """
    mask = _annulus_mask(grid.t_grid, R1, R2)
    t_ann = grid.t_grid[mask]
    j_ann = grid.j[mask]
    h1 = np.sinh(t_ann) ** 2
    c2 = float(np.min(h1[:, None] / j_ann))
    sinh_R1_sq = np.sinh(R1) ** 2
    k = 1.0
    while k <= k_max:
        with np.errstate(over="ignore"):
            scale_ok = np.sinh(np.sqrt(k) * R1) ** 2 >= k * sinh_R1_sq / c2
            pointwise_ok = np.all(hyperbolic_coefficient(k, t_ann)[:, None] >= j_ann)
        if scale_ok and pointwise_ok:
            return k, c2
        k *= 2.0
    raise SearchExhaustedError(f"no k <= {k_max:g} dominates j on the annulus (c2 = {c2:.6g})")


def partition_profile(t, R1: float, R2: float):
    """Quintic-smoothstep partition: phi_j, phi_h = 1 - phi_j, and phi_j'.

    phi_j is 1 up to R1, 0 from R2 on, C^2 and nonincreasing in between.
    """
    t = np.asarray(t, dtype=float)
    x = np.clip((t - R1) / (R2 - R1), 0.0, 1.0)
    smooth = x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    phi_j = 1.0 - smooth
    dsmooth = 30.0 * x * x * (1.0 - x) ** 2 / (R2 - R1)
    inside = (t > R1) & (t < R2)
    dphi_j = np.where(inside, -dsmooth, 0.0)
    return phi_j, 1.0 - phi_j, dphi_j


def blend_metric(grid: PolarMetricGrid, k: float, R1: float, R2: float) -> BlendResult:
    """Blend j with h_k across [R1, R2] and certify min d_t jhat > 0.

    A failing certificate is returned with ``passed=False`` rather than
    raised; callers inspect the result.
    """
    _annulus_mask(grid.t_grid, R1, R2)
    t = grid.t_grid
    phi_j, phi_h, dphi_j = partition_profile(t, R1, R2)
    h_col = hyperbolic_coefficient(k, t)
    jhat = phi_j[:, None] * grid.j + phi_h[:, None] * h_col[:, None]

    generator = None
    generator_dt = None
    if grid.generator is not None:
        base = grid.generator

        def generator(tt, hh, _base=base, _k=k, _R1=R1, _R2=R2):
            pj, ph, _ = partition_profile(tt, _R1, _R2)
            return pj * np.asarray(_base(tt, hh)) + ph * hyperbolic_coefficient(_k, tt)

    if grid.generator is not None and grid.generator_dt is not None:
        base = grid.generator
        base_dt = grid.generator_dt

        def generator_dt(tt, hh, _b=base, _bdt=base_dt, _k=k, _R1=R1, _R2=R2):
            pj, ph, dpj = partition_profile(tt, _R1, _R2)
            sq = np.sqrt(_k)
            dh = np.sinh(2.0 * sq * tt) / sq
            return (
                pj * np.asarray(_bdt(tt, hh))
                + ph * dh
                + dpj * np.asarray(_b(tt, hh))
                - dpj * hyperbolic_coefficient(_k, tt)
            )

    blended = PolarMetricGrid(t, grid.theta_grid, jhat, generator, generator_dt)
    djhat = blended.d_dt()
    min_dt = float(np.min(djhat))
    # annulus minimum of h_1/j, recorded for the certificate
    mask = _annulus_mask(t, R1, R2)
    c2 = float(np.min((np.sinh(t[mask]) ** 2)[:, None] / grid.j[mask]))
    return BlendResult(
        k=float(k),
        c2=c2,
        blended=blended,
        phi_j=phi_j,
        phi_h=phi_h,
        min_radial_derivative=min_dt,
        passed=bool(min_dt > 0.0),
    )


def save_metric_csv(path, grid: PolarMetricGrid, values: np.ndarray | None = None,
                    value_name: str = "j") -> None:
    """Write a polar metric grid as CSV ``t,theta,j`` (row-major by t)."""
    values = grid.j if values is None else values
    buf = io.StringIO()
    buf.write(f"t,theta,{value_name}\n")
    for i, t in enumerate(grid.t_grid):
        for jj, th in enumerate(grid.theta_grid):
            buf.write(f"{t:.17g},{th:.17g},{values[i, jj]:.17g}\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_metric_csv(path) -> PolarMetricGrid:
    """Load a polar metric grid from CSV with header ``t,theta,j``."""
    if not os.path.exists(path):
        raise UsageError(f"metric grid file not found: {path}")
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header.split(",")[:2] != ["t", "theta"] or len(header.split(",")) != 3:
            raise UsageError(f"bad metric grid header {header!r}")
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise UsageError("metric grid rows need 3 comma-separated fields")
            rows.append([float(x) for x in parts])
    data = np.asarray(rows, dtype=float)
    t_grid = np.unique(data[:, 0])
    theta_grid = np.unique(data[:, 1])
    if data.shape[0] != t_grid.size * theta_grid.size:
        raise UsageError("metric grid rows do not form a full (t, theta) product")
    order = np.lexsort((data[:, 1], data[:, 0]))
    j = data[order, 2].reshape(t_grid.size, theta_grid.size)
    return PolarMetricGrid(t_grid, theta_grid, j)
