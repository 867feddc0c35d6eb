import math

import numpy as np
import pytest
from scipy.integrate import quad

from spdefem import (
    Diagonal,
    Domain,
    FemFunction,
    QuadratureError,
    assemble,
    assemble_noise_load,
    build_basis,
    build_mesh,
    l2_error,
    noise_load_matrix,
    prolong,
    ritz_project,
    sample_projected_noise,
    write_function_csv,
    write_function_grid,
)
from spdefem.fem import element_diameters, solve_spd


def test_mesh_1d_counts():
    m = build_mesh(Domain(1), 4)
    assert np.allclose(m.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert m.boundary_mask.tolist() == [True, False, False, False, True]
    assert m.h == pytest.approx(0.25)
    m = build_mesh(Domain(1), 1024)
    assert m.h == pytest.approx(1 / 1024)


def test_mesh_2d_counts():
    m = build_mesh(Domain(2), 2)
    assert m.n_nodes == 9
    assert m.elements.shape == (8, 3)
    assert m.boundary_mask.sum() == 8
    assert m.interior.size == 1
    assert m.nodes[m.interior[0]].tolist() == [0.5, 0.5]
    assert m.h == pytest.approx(math.sqrt(2) / 2)


def test_mesh_rejects_n_below_2():
    with pytest.raises(ValueError):
        build_mesh(Domain(1), 1)


def test_mesh_quasiuniform():
    for dom, n in ((Domain(1), 7), (Domain(2), 5)):
        d = element_diameters(build_mesh(dom, n))
        assert d.max() / d.min() <= 2.0


def test_stiffness_mass_1d_rows():
    m = build_mesh(Domain(1), 8)
    sys_ = assemble(m)
    h = m.h
    row = sys_.stiffness[3].toarray().ravel()
    assert row[2:5] == pytest.approx([-1 / h, 2 / h, -1 / h])
    row = sys_.mass[3].toarray().ravel()
    assert row[2:5] == pytest.approx([h / 6, 2 * h / 3, h / 6])


def test_stiffness_2d_center_diagonal():
    # oracle: hand-assemble the 8 triangles around the single interior node
    def local_stiffness(p):
        p = np.asarray(p, float)
        B = np.array([p[1] - p[0], p[2] - p[0]]).T
        area = abs(np.linalg.det(B)) / 2
        grads = np.linalg.inv(B).T @ np.array([[-1, -1], [1, 0], [0, 1]], float).T
        return area * grads.T @ grads

    g = 0.5
    diag = 0.0
    for a in range(2):
        for b in range(2):
            corners = {
                "v00": (a, b), "v10": (a + 1, b),
                "v01": (a, b + 1), "v11": (a + 1, b + 1),
            }
            for tri in (("v00", "v10", "v11"), ("v00", "v11", "v01")):
                verts = [corners[t] for t in tri]
                if (1, 1) in verts:
                    loc = verts.index((1, 1))
                    S = local_stiffness([(x * g, y * g) for x, y in verts])
                    diag += S[loc, loc]
    sys_ = assemble(build_mesh(Domain(2), 2))
    assert sys_.stiffness.toarray()[0, 0] == pytest.approx(diag, rel=1e-14)
    assert diag == pytest.approx(4.0)


def test_stiffness_row_sums_and_symmetry():
    for dom, n in ((Domain(1), 9), (Domain(2), 4)):
        sys_ = assemble(build_mesh(dom, n))
        rowsum = np.asarray(sys_.stiffness_full.sum(axis=1)).ravel()
        assert np.abs(rowsum).max() < 1e-12
        for mat in (sys_.stiffness, sys_.mass):
            assert (mat != mat.T).nnz == 0


def test_spd_via_cholesky_and_random_vectors():
    rng = np.random.default_rng(2)
    for dom, n in ((Domain(1), 16), (Domain(2), 6)):
        sys_ = assemble(build_mesh(dom, n))
        for mat in (sys_.stiffness, sys_.mass):
            np.linalg.cholesky(mat.toarray())  # raises if not SPD
        x = rng.standard_normal(sys_.stiffness.shape[0])
        assert x @ (sys_.stiffness @ x) > 0


def test_noise_load_zero():
    basis = build_basis(Domain(1), 8)
    m = build_mesh(Domain(1), 8)
    s = sample_projected_noise(Diagonal(np.zeros(8)), basis, 8, seed=0)
    assert np.all(assemble_noise_load(m, basis, s) == 0.0)


def test_noise_load_1d_closed_form_single_mode():
    basis = build_basis(Domain(1), 4)
    m = build_mesh(Domain(1), 4)
    G = noise_load_matrix(m, basis, 1)
    h = m.h
    xi = m.nodes[m.interior]
    expected = 2 * math.sqrt(2) * np.sin(np.pi * xi) * (1 - math.cos(np.pi * h)) / (np.pi**2 * h)
    assert G[:, 0] == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("n", [8, 16])
def test_noise_load_1d_matches_quadrature(n):
    # independent oracle: adaptive quadrature of sin against each hat
    basis = build_basis(Domain(1), n)
    m = build_mesh(Domain(1), n)
    G = noise_load_matrix(m, basis, n)
    h = m.h
    for row, i in enumerate(m.interior[:: max(1, n // 8)]):
        xc = m.nodes[i]
        for k in (1, 2, max(1, int(1 / (np.pi * h)))):
            val, _ = quad(
                lambda x: math.sqrt(2)
                * math.sin(k * math.pi * x)
                * (1 - abs(x - xc) / h),
                xc - h,
                xc + h,
                epsabs=1e-14,
                limit=200,
            )
            assert abs(G[m.interior.tolist().index(i), k - 1] - val) < 1e-10


def test_noise_load_telescopes():
    basis = build_basis(Domain(2), 32)
    m = build_mesh(Domain(2), 4)
    rng = np.random.default_rng(11)
    w16 = rng.standard_normal(16)
    w32 = np.concatenate([w16, np.zeros(16)])
    G = noise_load_matrix(m, basis, 32)
    assert G[:, :16] @ w16 == pytest.approx(G @ w32, abs=1e-15)


def test_noise_load_refuses_unresolvable_modes():
    basis = build_basis(Domain(2), 4500)
    m = build_mesh(Domain(2), 2)
    with pytest.raises(QuadratureError):
        noise_load_matrix(m, basis, 4500)


def test_ritz_zero_and_idempotence():
    basis = build_basis(Domain(1), 8)
    sys_ = assemble(build_mesh(Domain(1), 32))
    r = ritz_project(sys_, basis, np.zeros(4))
    assert np.all(r.values == 0.0)
    # projection fixes P1 functions: feed the exact energy inner products
    rng = np.random.default_rng(3)
    v = rng.standard_normal(sys_.stiffness.shape[0])
    recovered = solve_spd(sys_.stiffness, sys_.stiffness @ v)
    m_norm = lambda u: math.sqrt(u @ (sys_.mass @ u))
    assert m_norm(recovered - v) <= 1e-7 * m_norm(v)


def test_ritz_order_two():
    basis = build_basis(Domain(1), 4)
    w = np.array([1.0])
    errs = []
    for n in (16, 32, 64, 128, 256):
        sys_ = assemble(build_mesh(Domain(1), n))
        errs.append(l2_error(ritz_project(sys_, basis, w), basis, w))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9) and np.all(orders < 2.1)


def test_l2_error_unit_mode_and_zero():
    basis = build_basis(Domain(1), 4)
    mesh = build_mesh(Domain(1), 64)
    zero = FemFunction(mesh=mesh, values=np.zeros(mesh.n_nodes))
    assert l2_error(zero, basis, np.array([1.0, 0, 0, 0])) == pytest.approx(1.0, abs=1e-12)
    assert l2_error(zero, basis, np.zeros(4)) == 0.0
    basis2 = build_basis(Domain(2), 4)
    mesh2 = build_mesh(Domain(2), 8)
    zero2 = FemFunction(mesh=mesh2, values=np.zeros(mesh2.n_nodes))
    assert l2_error(zero2, basis2, np.array([1.0, 0, 0, 0])) == pytest.approx(1.0, abs=1e-12)


def test_l2_error_interpolant_ratio():
    basis = build_basis(Domain(1), 1)
    errs = []
    for n in (32, 64):
        mesh = build_mesh(Domain(1), n)
        vals = basis.pairs[0].evaluate(mesh.nodes)
        vals[mesh.boundary_mask] = 0.0
        errs.append(l2_error(FemFunction(mesh=mesh, values=vals), basis, np.array([1.0])))
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.05)


def test_prolong_preserves_p1_functions():
    rng = np.random.default_rng(7)
    for dom, n_c, n_f in ((Domain(1), 8, 32), (Domain(2), 4, 12)):
        coarse = build_mesh(dom, n_c)
        fine = build_mesh(dom, n_f)
        fn = FemFunction.from_interior(coarse, rng.standard_normal(coarse.interior.size))
        lifted = prolong(fn, fine)
        m_c = assemble(coarse).mass_full
        m_f = assemble(fine).mass_full
        norm_c = fn.values @ (m_c @ fn.values)
        norm_f = lifted.values @ (m_f @ lifted.values)
        assert norm_f == pytest.approx(norm_c, rel=1e-12)


def test_fem_function_boundary_enforced():
    mesh = build_mesh(Domain(1), 4)
    with pytest.raises(ValueError):
        FemFunction(mesh=mesh, values=np.ones(mesh.n_nodes))
    fn = FemFunction.from_interior(mesh, np.ones(mesh.interior.size))
    assert fn.values[0] == 0.0 and fn.values[-1] == 0.0


def test_function_exports(tmp_path):
    mesh = build_mesh(Domain(2), 3)
    fn = FemFunction.from_interior(mesh, np.arange(mesh.interior.size, dtype=float))
    csv_path = tmp_path / "fn.csv"
    write_function_csv(fn, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == mesh.n_nodes + 1
    grid_path = tmp_path / "fn.grid"
    write_function_grid(fn, grid_path)
    grid = np.loadtxt(grid_path)
    assert grid.shape == (4, 4)
    assert grid.ravel() == pytest.approx(fn.values)
    mesh1 = build_mesh(Domain(1), 4)
    fn1 = FemFunction.from_interior(mesh1, np.ones(3))
    write_function_csv(fn1, tmp_path / "fn1.csv")
    assert (tmp_path / "fn1.csv").read_text().splitlines()[0] == "x,value"
    with pytest.raises(ValueError):
        write_function_grid(fn1, tmp_path / "nope")


def test_degenerate_element_rejected():
    mesh = build_mesh(Domain(2), 2)
    bad_nodes = mesh.nodes.copy()
    bad_nodes[4] = bad_nodes[0]  # collapse the center onto a corner
    import dataclasses

    broken = dataclasses.replace(mesh, nodes=bad_nodes)
    with pytest.raises(ValueError, match="degenerate"):
        assemble(broken)
