import numpy as np
import pytest
import scipy.sparse as sp

from eddyheat.covariance import FieldFamily, Qxx_field
from eddyheat.elliptic import (
    DiffusivityTensor,
    advection_stack,
    apply_advection,
    assemble_advection,
    assemble_diffusion,
    assemble_laplacian,
    ito_corrector,
    ito_corrector_check,
    quadratic_form,
)
from eddyheat.grid import build_grid
from eddyheat.harness import cellular_fields


def _swirl(g):
    """Divergence-free field with stream function sin^2(pi x) sin^2(pi y)."""
    x, y = g.x, g.y
    ux = np.sin(np.pi * x) ** 2 * np.sin(2 * np.pi * y) * np.pi
    uy = -np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2 * np.pi
    return np.column_stack([ux, uy])


def test_scalar_multiple_of_laplacian(square64):
    g = square64
    A1 = assemble_diffusion(g, DiffusivityTensor(1.0)).matrix
    A3 = assemble_diffusion(g, DiffusivityTensor(3.0)).matrix
    assert abs(A3 - 3.0 * A1).max() < 1e-12 * abs(A3).max()
    E1 = assemble_diffusion(g, DiffusivityTensor.isotropic(0.0, np.ones(g.n_nodes))).matrix
    E2 = assemble_diffusion(g, DiffusivityTensor.isotropic(0.0, np.full(g.n_nodes, 2.0))).matrix
    assert abs(E2 - 2.0 * E1).max() < 1e-12 * abs(E2).max()


def test_symmetric_negative(square64):
    g = square64
    rng = np.random.default_rng(0)
    Q = np.zeros((g.n_nodes, 2, 2))
    a = rng.uniform(0, 1, (g.n_nodes, 2))
    Q[:, 0, 0], Q[:, 1, 1] = a[:, 0] + 0.1, a[:, 1] + 0.1
    Q[:, 0, 1] = Q[:, 1, 0] = 0.05
    t = DiffusivityTensor.from_covariance(0.01, Q)
    A = assemble_diffusion(g, t).matrix
    assert abs(A - A.T).max() == 0
    f = rng.standard_normal(g.n_interior)
    assert g.h**2 * f @ (A @ f) == pytest.approx(quadratic_form(g, t, f), rel=1e-10)
    assert quadratic_form(g, t, f) < 0


def test_non_psd_tensor_rejected():
    E = np.array([[[1.0, 0.0], [0.0, -1.0]]])
    with pytest.raises(ValueError):
        DiffusivityTensor(0.1, E)
    with pytest.raises(ValueError):
        DiffusivityTensor(0.1, np.array([[[1.0, 0.5], [0.0, 1.0]]]))


def test_zero_velocity_gives_zero_operator(square64):
    B = assemble_advection(square64, np.zeros((square64.n_nodes, 2))).matrix
    assert B.nnz == 0


def test_advection_skew_and_matrix_free(square64):
    g = square64
    u = _swirl(g)
    B = assemble_advection(g, u).matrix
    assert abs(B + B.T).max() == 0
    f = np.sin(3 * g.x) * np.cos(2 * g.y) * g.interior
    mf = apply_advection(g, u.T.reshape(2, g.ny, g.nx), f.reshape(g.shape)).ravel()
    assert np.allclose(mf[g.interior_nodes], B @ g.restrict(f), atol=1e-12)


def test_advection_second_order():
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        g = build_grid("square", h)
        u = _swirl(g)
        f = np.exp(g.x) * np.cos(2 * g.y)
        exact = u[:, 0] * np.exp(g.x) * np.cos(2 * g.y) - 2 * u[:, 1] * np.exp(g.x) * np.sin(2 * g.y)
        Bf = assemble_advection(g, u).matrix @ g.restrict(f)
        keep = g.boundary_distance[g.interior_nodes] > 0.1
        errs.append(np.abs(Bf - g.restrict(exact))[keep].max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_stack_matches_individual_matrices(square64):
    g = square64
    F = cellular_fields(g)
    S = advection_stack(g, F)
    L = ito_corrector(g, F)
    ref = sum(
        assemble_advection(g, F[:, j].toarray().ravel().reshape(2, -1).T).matrix ** 2 for j in range(F.shape[1])
    )
    ref = 0.5 * ref.toarray()
    assert np.allclose(L.toarray(), ref, atol=1e-9 * abs(ref).max())
    assert S.shape[1] == g.n_interior


def test_ito_check_zero_family(square64):
    g = square64
    res = ito_corrector_check(g, sp.csc_matrix((2 * g.n_nodes, 1)))
    assert res["max_abs_residual"] == 0.0


def test_ito_check_converges():
    res = []
    for h in (1 / 32, 1 / 64):
        g = build_grid("square", h)
        res.append(ito_corrector_check(g, cellular_fields(g))["max_abs_residual"])
    assert res[0] / res[1] > 3.0


def test_cellular_fields_vanish_on_boundary(square64):
    g = square64
    Q = Qxx_field(FieldFamily(g, cellular_fields(g)))
    assert np.abs(Q[~g.interior]).max() < 1e-25


def test_triplet_export(tmp_path):
    g = build_grid("square", 1 / 16)
    op = assemble_diffusion(g, DiffusivityTensor(1.0))
    path = tmp_path / "op.txt"
    op.export_triplets(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + op.matrix.nnz
    i, j, v = lines[1].split()
    assert float(v) == op.matrix[int(i), int(j)]
    assert np.array_equal(assemble_laplacian(g).toarray(), op.matrix.toarray())
