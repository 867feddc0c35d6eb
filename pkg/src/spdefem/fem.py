"""P1 finite elements on structured meshes of the interval and rectangle.

Covers mesh construction, stiffness/mass assembly with Dirichlet elimination,
the noise load vector (closed form in 1D, adaptive Gauss quadrature on
triangles in 2D), the energy (Ritz) projection, L2 errors against eigenmode
expansions, nested-mesh prolongation, and CSV/gnuplot exports.

Quadrature policy: the number of Gauss points per axis grows with the phase
change of the highest retained mode across one element, and assembly refuses
(raises) when that exceeds the hard cap instead of silently under-integrating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .eigenbasis import Domain, EigenBasis
from .errors import QuadratureError, SolveError

# Hard cap on Gauss points per axis; 0.55*phase + 3 points resolve the
# oscillation of the highest mode with orders of magnitude to spare (the 0.55
# also covers the skewed frequencies of the collapsed-square map on
# triangles), and the floor of 10 puts smooth low-mode integrands at machine
# precision.
_MAX_AXIS_POINTS = 64
_CG_RTOL = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Structured mesh: uniform segments in 1D, right-triangle split of an
    n x n grid in 2D.  `interior` indexes the non-Dirichlet nodes; `cells` and
    `upper` record which grid cell and which half each triangle came from
    (the two halves share reference geometry, which quadrature exploits)."""

    dim: int
    n_per_side: int
    extent: tuple
    nodes: np.ndarray
    elements: np.ndarray
    boundary_mask: np.ndarray
    h: float
    interior: np.ndarray
    cells: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def spacing(self) -> tuple:
        return tuple(L / self.n_per_side for L in self.extent)


@dataclass(frozen=True)
class FemFunction:
    """Piecewise-linear function by nodal values; Dirichlet nodes exactly zero."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise ValueError(f"values shape {vals.shape} != ({self.mesh.n_nodes},)")
        if np.any(vals[self.mesh.boundary_mask] != 0.0):
            raise ValueError("boundary values must be exactly zero")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_interior(cls, mesh: Mesh, interior_values: np.ndarray) -> "FemFunction":
        vals = np.zeros(mesh.n_nodes)
        vals[mesh.interior] = interior_values
        return cls(mesh=mesh, values=vals)


@dataclass(frozen=True)
class FemSystem:
    """Assembled Galerkin operators; `stiffness`/`mass` act on interior nodes,
    the `_full` variants keep all nodes (pre-elimination)."""

    mesh: Mesh
    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    stiffness_full: sparse.csr_matrix
    mass_full: sparse.csr_matrix
    noise_load: np.ndarray | None = None

    def with_noise_load(self, load: np.ndarray) -> "FemSystem":
        load = np.asarray(load, dtype=float)
        if load.shape != (self.mesh.interior.size,):
            raise ValueError(
                f"load shape {load.shape} != ({self.mesh.interior.size},)"
            )
        return replace(self, noise_load=load)


def build_mesh(domain: Domain, n_per_side: int) -> Mesh:
    """Uniform structured mesh with n segments per side (n >= 2)."""
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be >= 2, got {n_per_side}")
    n = n_per_side
    if domain.dim == 1:
        L = domain.extent[0]
        nodes = np.linspace(0.0, L, n + 1)
        elements = np.column_stack((np.arange(n), np.arange(1, n + 1)))
        boundary = np.zeros(n + 1, dtype=bool)
        boundary[[0, n]] = True
        return Mesh(
            dim=1, n_per_side=n, extent=domain.extent, nodes=nodes,
            elements=elements, boundary_mask=boundary, h=L / n,
            interior=np.flatnonzero(~boundary),
        )
    Lx, Ly = domain.extent
    xs = np.linspace(0.0, Lx, n + 1)
    ys = np.linspace(0.0, Ly, n + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack((X.ravel(), Y.ravel()))
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    a, b = a.ravel(), b.ravel()
    v00 = b * (n + 1) + a
    v10, v01 = v00 + 1, v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack((v00, v10, v11))
    upper = np.column_stack((v00, v11, v01))
    elements = np.vstack((lower, upper))
    cells = np.vstack((np.column_stack((a, b)), np.column_stack((a, b))))
    upper_mask = np.zeros(2 * n * n, dtype=bool)
    upper_mask[n * n :] = True
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    boundary = ((ii == 0) | (ii == n) | (jj == 0) | (jj == n)).T.ravel()
    return Mesh(
        dim=2, n_per_side=n, extent=domain.extent, nodes=nodes,
        elements=elements, boundary_mask=boundary,
        h=math.hypot(Lx / n, Ly / n), interior=np.flatnonzero(~boundary),
        cells=cells, upper=upper_mask,
    )


def element_diameters(mesh: Mesh) -> np.ndarray:
    p = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        return np.abs(p[:, 1] - p[:, 0])
    edges = [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]]
    return np.max([np.linalg.norm(e, axis=1) for e in edges], axis=0)


def assemble(mesh: Mesh) -> FemSystem:
    """Galerkin stiffness and mass matrices, Dirichlet rows/columns eliminated."""
    if mesh.dim == 1:
        h = np.diff(mesh.nodes[mesh.elements], axis=1)[:, 0]
        if np.any(h <= 0):
            raise ValueError("degenerate element (zero length)")
        s_loc = (1.0 / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
        m_loc = (h / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
        loc_dof = 2
    else:
        p = mesh.nodes[mesh.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        area = np.abs(det) / 2.0
        if np.any(area <= 0):
            raise ValueError("degenerate element (zero area)")
        # gradients of the three hats: rows of inv(B)^T @ ref_grads^T
        inv = np.empty((len(det), 2, 2))
        inv[:, 0, 0] = e2[:, 1] / det
        inv[:, 0, 1] = -e2[:, 0] / det
        inv[:, 1, 0] = -e1[:, 1] / det
        inv[:, 1, 1] = e1[:, 0] / det
        ref_grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        grads = np.einsum("lr,erx->elx", ref_grads, inv)
        s_loc = area[:, None, None] * np.einsum("eix,ejx->eij", grads, grads)
        m_loc = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
        loc_dof = 3
    rows = np.repeat(mesh.elements, loc_dof, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, loc_dof)).ravel()
    shape = (mesh.n_nodes, mesh.n_nodes)
    s_full = sparse.coo_matrix((s_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    m_full = sparse.coo_matrix((m_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    idx = mesh.interior
    return FemSystem(
        mesh=mesh,
        stiffness=s_full[idx][:, idx].tocsr(),
        mass=m_full[idx][:, idx].tocsr(),
        stiffness_full=s_full,
        mass_full=m_full,
    )


def _axis_points(phase: float) -> int:
    n = max(10, math.ceil(0.55 * phase) + 3)
    if n > _MAX_AXIS_POINTS:
        raise QuadratureError(
            f"resolving the highest retained mode needs {n} Gauss points per axis "
            f"(cap {_MAX_AXIS_POINTS}); use a finer mesh or fewer modes"
        )
    return n


def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def _triangle_rule(n: int):
    """Collapsed-square Gauss rule on the reference triangle (0,0),(1,0),(0,1).

    Returns (xi, eta, w) with sum(w) = 1/2 (the reference area)."""
    u, wu = _gauss01(n)
    v, wv = _gauss01(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    xi = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    return xi, eta, W.ravel()


def _orientation_offsets(xi, eta, orient_upper: bool):
    """In-cell quadrature offsets for one triangle orientation of the split."""
    if orient_upper:
        return xi, xi + eta
    return xi + eta, eta


def _orientation_geometry(mesh: Mesh, xi, eta, orient_upper: bool):
    """Quadrature points in cell units and the local-vertex hat values for one
    triangle orientation of the structured split."""
    locx, locy = _orientation_offsets(xi, eta, orient_upper)
    hats = np.stack((1.0 - xi - eta, xi, eta), axis=1)  # (n_q, 3)
    sel = mesh.upper if orient_upper else ~mesh.upper
    tris = np.flatnonzero(sel)
    cells = mesh.cells[tris]
    gx, gy = mesh.spacing
    x = (cells[:, 0:1] + locx[None, :]) * gx
    y = (cells[:, 1:2] + locy[None, :]) * gy
    return tris, x.ravel(), y.ravel(), hats


def _axis_points_for_modes(mesh: Mesh, basis: EigenBasis, count: int) -> int:
    spacing = mesh.spacing
    ext = mesh.extent
    phases = [
        basis.modes[:count, ax].max() * math.pi * spacing[ax] / ext[ax]
        for ax in range(mesh.dim)
    ]
    return _axis_points(max(phases))


def noise_load_matrix(mesh: Mesh, basis: EigenBasis, count: int) -> np.ndarray:
    """Matrix G[i, m] = (phi_m, hat_i) over interior nodes i and modes m <= count.

    1D entries are closed-form integrals of sines against hats; 2D entries use
    per-triangle Gauss quadrature whose degree tracks the highest mode."""
    if not 1 <= count <= len(basis):
        raise ValueError(f"count {count} outside 1..{len(basis)}")
    if mesh.dim == 1:
        L = mesh.extent[0]
        h = mesh.h
        omega = basis.modes[:count, 0] * (math.pi / L)
        factor = math.sqrt(2.0 / L) * 2.0 * (1.0 - np.cos(omega * h)) / (omega**2 * h)
        x = mesh.nodes[mesh.interior]
        return np.sin(np.outer(x, omega)) * factor
    n_g = _axis_points_for_modes(mesh, basis, count)
    xi, eta, wq = _triangle_rule(n_g)
    n_q = xi.size
    Lx, Ly = mesh.extent
    gx, gy = mesh.spacing
    n = mesh.n_per_side
    area = gx * gy / 2.0
    norm = 2.0 / math.sqrt(Lx * Ly)
    i_arr = basis.modes[:count, 0]
    j_arr = basis.modes[:count, 1]
    # per-element phases of every axis index up to the largest in use
    om_x = np.arange(1, i_arr.max() + 1) * (math.pi * gx / Lx)
    om_y = np.arange(1, j_arr.max() + 1) * (math.pi * gy / Ly)
    # sin(om*(a + X_q)) = sin(om*a)cos(om*X_q) + cos(om*a)sin(om*X_q): the
    # cell index a separates from the in-cell quadrature offsets, so the
    # per-mode quadrature sums are taken once and fanned out over cells.
    a_idx = np.arange(n)
    sin_ax = np.sin(np.outer(a_idx, om_x))
    cos_ax = np.cos(np.outer(a_idx, om_x))
    sin_ay = np.sin(np.outer(a_idx, om_y))
    cos_ay = np.cos(np.outer(a_idx, om_y))
    cells_a = np.repeat(a_idx, n)
    cells_b = np.tile(a_idx, n)
    cell_nodes = cells_b * (n + 1) + cells_a
    vertex_offsets = {
        False: (0, 1, n + 2),          # lower: v00, v10, v11
        True: (0, n + 2, n + 1),       # upper: v00, v11, v01
    }
    G = np.zeros((mesh.n_nodes, count))
    block = int(np.clip(2**22 // max(n_q, n * n), 64, count))
    for orient_upper in (False, True):
        locx, locy = _orientation_offsets(xi, eta, orient_upper)
        hats = np.stack((1.0 - xi - eta, xi, eta), axis=1)
        kernel = (2.0 * area * norm) * wq[:, None] * hats  # (n_q, 3)
        cos_qx = np.cos(np.outer(locx, om_x))
        sin_qx = np.sin(np.outer(locx, om_x))
        cos_qy = np.cos(np.outer(locy, om_y))
        sin_qy = np.sin(np.outer(locy, om_y))
        offs = vertex_offsets[orient_upper]
        for start in range(0, count, block):
            sel = slice(start, min(start + block, count))
            ii = i_arr[sel] - 1
            jj = j_arr[sel] - 1
            qcc = kernel.T @ (cos_qx[:, ii] * cos_qy[:, jj])  # (3, B)
            qcs = kernel.T @ (cos_qx[:, ii] * sin_qy[:, jj])
            qsc = kernel.T @ (sin_qx[:, ii] * cos_qy[:, jj])
            qss = kernel.T @ (sin_qx[:, ii] * sin_qy[:, jj])
            sa = sin_ax[cells_a[:, None], ii]  # (n_cells, B)
            ca = cos_ax[cells_a[:, None], ii]
            sb = sin_ay[cells_b[:, None], jj]
            cb = cos_ay[cells_b[:, None], jj]
            for l in range(3):
                contrib = (
                    sa * sb * qcc[l] + sa * cb * qcs[l]
                    + ca * sb * qsc[l] + ca * cb * qss[l]
                )
                np.add.at(G[:, sel], cell_nodes + offs[l], contrib)
    return G[mesh.interior]


def assemble_noise_load(mesh: Mesh, basis: EigenBasis, sample) -> np.ndarray:
    """Load vector b_i = sum_m w_m (phi_m, hat_i) over interior nodes."""
    return noise_load_matrix(mesh, basis, sample.n) @ sample.coeffs


def solve_spd(A: sparse.csr_matrix, b: np.ndarray, rtol: float = _CG_RTOL,
              x0: np.ndarray | None = None) -> np.ndarray:
    """Conjugate gradient for SPD systems; relative residual rtol, no fallback."""
    if not np.any(b):
        return np.zeros_like(b)
    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=20 * A.shape[0])
    if info != 0:
        raise SolveError(f"conjugate gradient failed to converge (info={info})")
    return x


def ritz_project(system: FemSystem, basis: EigenBasis, coeffs: np.ndarray) -> FemFunction:
    """Energy projection of the expansion sum_m w_m phi_m onto the P1 space:
    solves S c = g with g_i = sum_m lambda_m w_m (phi_m, hat_i)."""
    coeffs = np.asarray(coeffs, dtype=float)
    count = coeffs.size
    if count == 0 or not np.any(coeffs):
        return FemFunction.from_interior(system.mesh, np.zeros(system.mesh.interior.size))
    g = noise_load_matrix(system.mesh, basis, count) @ (basis.lambdas[:count] * coeffs)
    return FemFunction.from_interior(system.mesh, solve_spd(system.stiffness, g))


def _field_at(basis: EigenBasis, coeffs: np.ndarray, x: np.ndarray, y: np.ndarray | None):
    count = coeffs.size
    ext = basis.domain.extent
    if y is None:
        return basis.mode_values(x, count) @ coeffs
    i_arr = basis.modes[:count, 0]
    j_arr = basis.modes[:count, 1]
    sin_x = np.sin(np.outer(x, np.arange(1, i_arr.max() + 1) * (math.pi / ext[0])))
    sin_y = np.sin(np.outer(y, np.arange(1, j_arr.max() + 1) * (math.pi / ext[1])))
    norm = 2.0 / math.sqrt(ext[0] * ext[1])
    out = np.zeros(x.size)
    block = 512
    for start in range(0, count, block):
        sel = slice(start, min(start + block, count))
        out += (sin_x[:, i_arr[sel] - 1] * sin_y[:, j_arr[sel] - 1]) @ coeffs[sel]
    return norm * out


def l2_error(fe: FemFunction, basis: EigenBasis, coeffs: np.ndarray) -> float:
    """L2 distance between a P1 function and the expansion sum_m w_m phi_m,
    by per-element Gauss quadrature at the mode-resolving degree."""
    coeffs = np.asarray(coeffs, dtype=float)
    mesh = fe.mesh
    if coeffs.size == 0:
        coeffs = np.zeros(1)
    if coeffs.size > len(basis):
        raise ValueError(f"{coeffs.size} coefficients exceed basis size {len(basis)}")
    n_g = _axis_points_for_modes(mesh, basis, coeffs.size)
    if mesh.dim == 1:
        t, wq = _gauss01(n_g)
        left = mesh.nodes[mesh.elements[:, 0]]
        h = mesh.h
        x = (left[:, None] + t[None, :] * h).ravel()
        field = _field_at(basis, coeffs, x, None)
        vals = fe.values[mesh.elements]
        fe_q = (vals[:, 0:1] * (1.0 - t)[None, :] + vals[:, 1:2] * t[None, :]).ravel()
        diff2 = (fe_q - field) ** 2
        return math.sqrt(float((diff2.reshape(-1, n_g) @ wq).sum() * h))
    xi, eta, wq = _triangle_rule(n_g)
    gx, gy = mesh.spacing
    area = gx * gy / 2.0
    total = 0.0
    for orient_upper in (False, True):
        tris, x, y, hats = _orientation_geometry(mesh, xi, eta, orient_upper)
        field = _field_at(basis, coeffs, x, y)
        vals = fe.values[mesh.elements[tris]]  # (T, 3)
        fe_q = (vals @ hats.T).ravel()
        diff2 = (fe_q - field) ** 2
        total += 2.0 * area * float((diff2.reshape(len(tris), -1) @ wq).sum())
    return math.sqrt(total)


def prolong(fn: FemFunction, fine: Mesh) -> FemFunction:
    """Exact re-representation of a P1 function on a nested refinement."""
    coarse = fn.mesh
    if fine.dim != coarse.dim or fine.extent != coarse.extent:
        raise ValueError("meshes must share the domain")
    if fine.n_per_side % coarse.n_per_side != 0:
        raise ValueError(
            f"fine mesh ({fine.n_per_side}) is not a refinement of {coarse.n_per_side}"
        )
    if coarse.dim == 1:
        vals = np.interp(fine.nodes, coarse.nodes, fn.values)
        vals[fine.boundary_mask] = 0.0
        return FemFunction(mesh=fine, values=vals)
    n = coarse.n_per_side
    gx, gy = coarse.spacing
    x, y = fine.nodes[:, 0], fine.nodes[:, 1]
    a = np.minimum((x / gx).astype(int), n - 1)
    b = np.minimum((y / gy).astype(int), n - 1)
    s = x / gx - a
    t = y / gy - b
    stride = n + 1
    v00 = fn.values[b * stride + a]
    v10 = fn.values[b * stride + a + 1]
    v01 = fn.values[(b + 1) * stride + a]
    v11 = fn.values[(b + 1) * stride + a + 1]
    lower = v00 * (1.0 - s) + v10 * (s - t) + v11 * t
    upper = v00 * (1.0 - t) + v11 * s + v01 * (t - s)
    vals = np.where(s >= t, lower, upper)
    vals[fine.boundary_mask] = 0.0
    return FemFunction(mesh=fine, values=vals)


def write_function_csv(fn: FemFunction, path) -> None:
    """Nodal dump: `x,value` (1D) or `x,y,value` (2D)."""
    mesh = fn.mesh
    with open(path, "w") as f:
        if mesh.dim == 1:
            f.write("x,value\n")
            for x, v in zip(mesh.nodes, fn.values):
                f.write(f"{float(x)!r},{float(v)!r}\n")
        else:
            f.write("x,y,value\n")
            for (x, y), v in zip(mesh.nodes, fn.values):
                f.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")


def write_function_grid(fn: FemFunction, path) -> None:
    """Grid-ordered matrix dump readable by gnuplot's `splot ... matrix` (2D only)."""
    mesh = fn.mesh
    if mesh.dim != 2:
        raise ValueError("grid dump is defined for 2D functions only")
    n = mesh.n_per_side
    grid = fn.values.reshape(n + 1, n + 1)  # rows: y slow, columns: x fast
    with open(path, "w") as f:
        for row in grid:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")
