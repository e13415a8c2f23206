"""Discrete p-energy minimization for maps into model-target charts.

The unknown is a per-vertex chart point q_v in R^n on a flat triangulated
domain; the affine interpolant has a constant differential D on each
triangle, and the discrete p-energy with one quadrature point at the image
centroid qbar is

    E = sum_T (area_T / p) * e_T^{p/2},
    e_T = sum_{alpha=1,2} h_ij(qbar_T) D_alpha^i D_alpha^j,

which is exact for affine maps into Euclidean targets.  The analytic
gradient carries both the |du|^{p-2} du part and the metric-derivative part
through d h_ij / d x^k; for p >= 2 the integrand is C^1 also where du = 0.

Minimization is monotone descent: limited-memory quasi-Newton directions
(memory 10, initial scaling by the Barzilai-Borwein quotient) safeguarded by
an Armijo backtracking line search, with Dirichlet rows pinned bit-exactly.
Assembly is evaluated in fixed-size triangle chunks whose results land in
preallocated slots and are reduced in index order, so energies and gradients
are byte-reproducible for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import spsolve

from .chart import TargetChart
from .errors import DivergenceError, DomainError, UsageError
from .mesh import TriMesh

__all__ = [
    "MapState",
    "SolveConfig",
    "SolveReport",
    "UniquenessReport",
    "energy",
    "energy_gradient",
    "residual",
    "harmonic_init",
    "solve",
    "check_max_principle",
    "max_principle_tolerance",
    "uniqueness_probe",
    "load_boundary_csv",
    "save_boundary_csv",
    "save_solution_csv",
    "load_solution_csv",
]

_CHUNK = 4096  # triangles per assembly chunk; fixed so results never depend on threading


@dataclass(frozen=True)
class MapState:
    """Per-vertex target-chart coordinates of the discrete map."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise UsageError("map state needs shape (nv, n)")
        object.__setattr__(self, "points", pts)

    def copy(self) -> "MapState":
        return MapState(self.points.copy())


@dataclass
class SolveConfig:
    """Solver knobs; p >= 2 is a hard requirement of the energy."""

    p: float
    grad_tol: float = 1e-8
    max_iter: int = 1000
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    quadrature: int = 1
    seed: int = 0
    memory: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.p < 2.0:
            raise UsageError("p must be >= 2")
        if self.grad_tol <= 0.0:
            raise UsageError("grad_tol must be positive")
        if self.max_iter < 1:
            raise UsageError("max_iter must be at least 1")
        if self.quadrature not in (1, 3):
            raise UsageError("quadrature rule id must be 1 (centroid) or 3 (edge midpoints)")
        if self.threads < 1:
            raise UsageError("threads must be at least 1")


@dataclass
class SolveReport:
    """Outcome of a minimization run."""

    final_energy: float
    energy_trace: list
    residual: float
    iterations: int
    mp_margin: float
    converged: bool

    def to_json_dict(self):
        return {
            "final_energy": float(self.final_energy),
            "energy_trace": [float(v) for v in self.energy_trace],
            "residual": float(self.residual),
            "margin": float(self.mp_margin),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


@dataclass
class UniquenessReport:
    """Multi-start probe: spread of converged minimizers."""

    spread: float
    converged: list
    residuals: list
    n_starts: int
    states: list = field(default_factory=list, repr=False)

    @property
    def all_converged(self):
        return all(self.converged)


def _points_of(state) -> np.ndarray:
    if isinstance(state, MapState):
        return state.points
    return np.asarray(state, dtype=float)


def _check_shapes(mesh: TriMesh, chart: TargetChart, pts: np.ndarray):
    if pts.shape != (mesh.num_vertices, chart.dim):
        raise UsageError(
            f"state shape {pts.shape} does not match mesh/chart ({mesh.num_vertices}, {chart.dim})"
        )


_QUAD_WEIGHTS = {
    # quadrature id -> list of (barycentric weights of the evaluation point, rule weight)
    1: [(np.array([1.0, 1.0, 1.0]) / 3.0, 1.0)],
    3: [
        (np.array([0.5, 0.5, 0.0]), 1.0 / 3.0),
        (np.array([0.0, 0.5, 0.5]), 1.0 / 3.0),
        (np.array([0.5, 0.0, 0.5]), 1.0 / 3.0),
    ],
}


def _assemble_chunk(mesh, chart, pts, p, rule, sl, e_out, g_out):
    tris = mesh.triangles[sl]
    G = mesh.grads[sl]
    areas = mesh.areas[sl]
    Q = pts[tris]  # (m, 3, n)
    D = np.einsum("tva,tvi->tai", G, Q)
    half = 0.5 * (p - 2.0)
    dens = np.zeros(tris.shape[0])
    grad = np.zeros_like(Q) if g_out is not None else None
    for bary, weight in _QUAD_WEIGHTS[rule]:
        xq = np.einsum("v,tvi->ti", bary, Q)
        H = chart.metric(xq)
        DH = np.einsum("tai,tij->taj", D, H)
        e = np.einsum("tai,tai->t", DH, D)
        np.maximum(e, 0.0, out=e)  # clip the roundoff of the quadratic form
        epow = e**half if p != 2.0 else np.ones_like(e)
        dens += weight * epow * e
        if grad is not None:
            dH = chart.metric_jacobian(xq)
            Jc = np.einsum("tai,tijc,taj->tc", D, dH, D)
            w = (0.5 * weight) * areas * epow
            term_d = 2.0 * np.einsum("tva,tac->tvc", G, DH)
            term_m = bary[None, :, None] * Jc[:, None, :]
            grad += w[:, None, None] * (term_d + term_m)
    e_out[sl] = (areas / p) * dens
    if g_out is not None:
        g_out[sl] = grad


def _assemble(mesh, chart, pts, p, rule=1, need_grad=True, threads=1):
    """Per-triangle energies and (optionally) the full gradient array.

    Chunk boundaries are fixed; threads only map chunk evaluations, results
    are written to disjoint slots and reduced in index order afterwards.
    """
    nt = mesh.num_triangles
    e_out = np.empty(nt)
    g_out = np.empty((nt, 3, chart.dim)) if need_grad else None
    slices = [slice(lo, min(lo + _CHUNK, nt)) for lo in range(0, nt, _CHUNK)]
    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_assemble_chunk, mesh, chart, pts, p, rule, sl, e_out, g_out)
                for sl in slices
            ]
            for fut in futures:
                fut.result()
    else:
        for sl in slices:
            _assemble_chunk(mesh, chart, pts, p, rule, sl, e_out, g_out)
    total = float(np.add.reduce(e_out))
    if not need_grad:
        return total, None
    grad_full = np.zeros_like(pts)
    np.add.at(grad_full, mesh.triangles.reshape(-1), g_out.reshape(-1, chart.dim))
    return total, grad_full


def energy(mesh: TriMesh, chart: TargetChart, state, p: float, *, quadrature: int = 1,
           threads: int = 1) -> float:
    """Discrete p-energy of the map; nonnegative, zero iff du vanishes."""
    if p < 2.0:
        raise UsageError("p must be >= 2")
    pts = _points_of(state)
    _check_shapes(mesh, chart, pts)
    total, _ = _assemble(mesh, chart, pts, p, quadrature, need_grad=False, threads=threads)
    return total


def energy_gradient(mesh: TriMesh, chart: TargetChart, state, p: float, *, quadrature: int = 1,
                    threads: int = 1) -> np.ndarray:
    """Exact gradient of ``energy`` w.r.t. interior vertex coordinates.

    Rows follow ``mesh.interior_indices()``.
    """
    if p < 2.0:
        raise UsageError("p must be >= 2")
    pts = _points_of(state)
    _check_shapes(mesh, chart, pts)
    _, grad = _assemble(mesh, chart, pts, p, quadrature, need_grad=True, threads=threads)
    return grad[mesh.interior_indices()]


def residual(mesh: TriMesh, chart: TargetChart, state, p: float, *, quadrature: int = 1,
             threads: int = 1) -> float:
    """Stationarity defect: sup over interior vertices of the gradient norm."""
    grad = energy_gradient(mesh, chart, state, p, quadrature=quadrature, threads=threads)
    if grad.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(grad, axis=1)))


def _stiffness(mesh: TriMesh):
    tris = mesh.triangles
    nt = tris.shape[0]
    local = np.einsum("t,tva,twa->tvw", mesh.areas, mesh.grads, mesh.grads)
    rows = np.repeat(tris, 3, axis=1).reshape(nt, 3, 3)
    cols = np.tile(tris[:, None, :], (1, 3, 1))
    K = sparse.coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.num_vertices, mesh.num_vertices),
    )
    return K.tocsr()


def harmonic_init(mesh: TriMesh, boundary_values) -> MapState:
    """Componentwise discrete 2-harmonic extension of the boundary data.

    Solves the Euclidean-target p=2 problem per component; reproduces affine
    data exactly and obeys the componentwise discrete maximum principle.
    """
    bvals = np.asarray(boundary_values, dtype=float)
    if bvals.ndim != 2 or bvals.shape[0] != mesh.num_vertices:
        raise UsageError("boundary values need shape (nv, n)")
    bidx = mesh.boundary_indices()
    iidx = mesh.interior_indices()
    if bidx.size == 0:
        raise UsageError("mesh has no boundary; the Dirichlet problem is empty")
    if not np.all(np.isfinite(bvals[bidx])):
        raise UsageError("boundary values must be finite on boundary vertices")
    pts = np.zeros_like(bvals)
    pts[bidx] = bvals[bidx]
    if iidx.size:
        K = _stiffness(mesh)
        K_ii = K[iidx][:, iidx].tocsc()
        K_ib = K[iidx][:, bidx]
        rhs = -K_ib @ bvals[bidx]
        sol = spsolve(K_ii, rhs)
        pts[iidx] = sol.reshape(iidx.size, -1)
    return MapState(pts)


def check_max_principle(mesh: TriMesh, chart: TargetChart, state) -> float:
    """Margin max_interior dist(q, pole) - max_boundary dist(q, pole).

    Nonpositive for an exact weak maximum principle; the discrete defect of a
    converged p-harmonic state is bounded by ``max_principle_tolerance``.
    """
    pts = _points_of(state)
    _check_shapes(mesh, chart, pts)
    radii = chart.dist_to_pole(pts)
    iidx = mesh.interior_indices()
    bidx = mesh.boundary_indices()
    if bidx.size == 0:
        raise UsageError("max principle needs a nonempty boundary")
    interior_max = float(np.max(radii[iidx])) if iidx.size else 0.0
    return interior_max - float(np.max(radii[bidx]))


def max_principle_tolerance(mesh: TriMesh, chart: TargetChart, state) -> float:
    """First-order slack 2 * (max boundary radius) * (mesh size) + 1e-8."""
    pts = _points_of(state)
    radii = chart.dist_to_pole(pts)
    r0 = float(np.max(radii[mesh.boundary_indices()]))
    return 2.0 * r0 * mesh.mesh_size() + 1e-8


def _two_loop(mem, g, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def solve(mesh: TriMesh, chart: TargetChart, boundary_values, config: SolveConfig,
          initial: MapState | None = None):
    """Minimize the p-energy subject to Dirichlet data; returns (state, report).

    Starts from ``harmonic_init`` unless an initial state is given.  The
    energy trace is monotone (Armijo); boundary rows are never modified.
    """
    bvals = np.asarray(boundary_values, dtype=float)
    if bvals.ndim != 2 or bvals.shape != (mesh.num_vertices, chart.dim):
        raise UsageError("boundary values need shape (nv, n) matching mesh and chart")
    bidx = mesh.boundary_indices()
    iidx = mesh.interior_indices()
    if bidx.size == 0:
        raise UsageError("the Dirichlet problem needs a nonempty boundary")

    if initial is None:
        state0 = harmonic_init(mesh, bvals)
    else:
        state0 = initial
    pts = _points_of(state0).copy()
    _check_shapes(mesh, chart, pts)
    pts[bidx] = bvals[bidx]  # boundary rows pinned bit-exactly
    n = chart.dim

    def split(x):
        full = pts.copy()
        full[iidx] = x.reshape(iidx.size, n)
        return full

    def f_only(x):
        total, _ = _assemble(mesh, chart, split(x), config.p, config.quadrature,
                             need_grad=False, threads=config.threads)
        return total

    def f_and_g(x):
        total, grad = _assemble(mesh, chart, split(x), config.p, config.quadrature,
                                need_grad=True, threads=config.threads)
        return total, grad[iidx].ravel()

    x = pts[iidx].ravel().copy()
    f, g = f_and_g(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite energy or gradient at the initial state")
    trace = [f]

    def sup_res(gvec):
        if gvec.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(gvec.reshape(-1, n), axis=1)))

    mem: list = []
    gamma = 1.0
    iterations = 0
    converged = sup_res(g) <= config.grad_tol
    while not converged and iterations < config.max_iter:
        iterations += 1
        if mem:
            d = -_two_loop(mem, g, gamma)
        else:
            d = -g
        gd = float(np.dot(g, d))
        if gd >= 0.0:
            d = -g
            gd = float(np.dot(g, d))
        step = 1.0 if mem else 1.0 / max(1.0, float(np.linalg.norm(g)))
        accepted = False
        f_scale = max(1.0, abs(f))
        for _ in range(60):
            x_new = x + step * d
            f_new = f_only(x_new)
            predicted = -step * gd
            if np.isfinite(f_new):
                if f_new <= f + config.armijo_c1 * step * gd:
                    accepted = True
                    break
                # near the energy's floating-point floor the Armijo margin is
                # sub-measurable; any strict decrease still makes progress
                if f_new < f and predicted <= 1e-9 * f_scale:
                    accepted = True
                    break
            if predicted <= 4e-16 * f_scale:
                break  # no backtracked step can produce a measurable decrease
            step *= config.backtrack
        if not accepted:
            break  # line search stagnated at the current resolution
        f_new, g_new = f_and_g(x_new)
        if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
            raise DivergenceError("non-finite energy or gradient during descent")
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            mem.append((s, y, 1.0 / sy))
            if len(mem) > config.memory:
                mem.pop(0)
            gamma = sy / float(np.dot(y, y))
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        converged = sup_res(g) <= config.grad_tol

    final = MapState(split(x))
    report = SolveReport(
        final_energy=f,
        energy_trace=trace,
        residual=sup_res(g),
        iterations=iterations,
        mp_margin=check_max_principle(mesh, chart, final),
        converged=bool(converged),
    )
    return final, report


def uniqueness_probe(mesh: TriMesh, chart: TargetChart, boundary_values, config: SolveConfig,
                     n_starts: int) -> UniquenessReport:
    """Solve from seeded random interior perturbations and measure the spread.

    Start 0 is the plain harmonic extension; the rest add per-vertex uniform
    samples from the chart ball whose radius equals the boundary-data
    diameter.  The spread is the max pairwise sup-distance over converged
    states only; non-converged starts are reported per start.
    """
    if n_starts < 1:
        raise UsageError("need at least one start")
    bvals = np.asarray(boundary_values, dtype=float)
    bidx = mesh.boundary_indices()
    iidx = mesh.interior_indices()
    bdata = bvals[bidx]
    diam = 0.0
    for i in range(bdata.shape[0]):
        diam = max(diam, float(np.max(np.linalg.norm(bdata[i + 1 :] - bdata[i], axis=1), initial=0.0)))
    rng = np.random.default_rng(config.seed)
    base = harmonic_init(mesh, bvals)
    states = []
    converged = []
    residuals = []
    for start in range(n_starts):
        pts = base.points.copy()
        if start > 0 and iidx.size:
            direction = rng.normal(size=(iidx.size, chart.dim))
            norms = np.linalg.norm(direction, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            radius = diam * rng.uniform(0.0, 1.0, size=(iidx.size, 1)) ** (1.0 / chart.dim)
            pts[iidx] += direction / norms * radius
        state, report = solve(mesh, chart, bvals, config, initial=MapState(pts))
        states.append(state)
        converged.append(bool(report.converged))
        residuals.append(float(report.residual))
    spread = 0.0
    good = [s for s, ok in zip(states, converged) if ok]
    for i in range(len(good)):
        for j in range(i + 1, len(good)):
            diff = np.linalg.norm(good[i].points - good[j].points, axis=1)
            spread = max(spread, float(np.max(diff)))
    return UniquenessReport(
        spread=spread,
        converged=converged,
        residuals=residuals,
        n_starts=n_starts,
        states=states,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_boundary_csv(path, mesh: TriMesh, values) -> None:
    """Write boundary rows as CSV ``vertex,x1,...,xn``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[1]
    header = "vertex," + ",".join(f"x{i+1}" for i in range(n))
    lines = [header]
    for v in mesh.boundary_indices():
        lines.append(str(int(v)) + "," + ",".join(f"{c:.17g}" for c in values[v]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_boundary_csv(path, mesh: TriMesh, dim: int) -> np.ndarray:
    """Read boundary data; every boundary vertex must be covered."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        want = "vertex," + ",".join(f"x{i+1}" for i in range(dim))
        if header != want:
            raise UsageError(f"bad boundary header {header!r}, expected {want!r}")
        values = np.zeros((mesh.num_vertices, dim))
        seen = np.zeros(mesh.num_vertices, dtype=bool)
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 1:
                raise UsageError("boundary rows need vertex plus one column per coordinate")
            v = int(parts[0])
            if not (0 <= v < mesh.num_vertices):
                raise UsageError(f"boundary row names vertex {v} outside the mesh")
            values[v] = [float(x) for x in parts[1:]]
            seen[v] = True
    missing = np.flatnonzero(mesh.boundary & ~seen)
    if missing.size:
        raise UsageError(f"boundary data missing for vertex {int(missing[0])}")
    return values


def save_solution_csv(path, state: MapState) -> None:
    pts = state.points
    header = "vertex," + ",".join(f"x{i+1}" for i in range(pts.shape[1]))
    lines = [header]
    for v, row in enumerate(pts):
        lines.append(str(v) + "," + ",".join(f"{c:.17g}" for c in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_solution_csv(path) -> MapState:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("vertex,x1"):
            raise UsageError(f"bad solution header {header!r}")
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")[1:]])
    if not rows:
        raise UsageError("solution file has no rows")
    return MapState(np.asarray(rows, dtype=float))
