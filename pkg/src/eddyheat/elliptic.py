"""Discrete diffusion and transport operators on masked grids.

All matrices act on interior unknowns (``grid.interior_nodes`` order); the
exterior carries the Dirichlet value zero.  With the grid pairing
``<f, g> = h^2 sum f g`` the operators satisfy

* ``<f, A f> = -kappa |D f|^2 - sum_cells h^2 g_c^T E_c g_c`` for the
  diffusion operator with tensor ``kappa I + E`` (``D`` = face
  differences, ``g_c`` = cell-centred gradient), and
* ``B^T = -B`` for the advection operator of a velocity field.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import Grid


@dataclass(frozen=True, eq=False)
class DiffusivityTensor:
    """``a(x) = kappa I + eddy(x)`` with ``eddy`` PSD per node (or ``None``)."""

    kappa: float
    eddy: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.eddy is not None:
            E = np.asarray(self.eddy, dtype=float)
            if E.ndim != 3 or E.shape[1:] != (2, 2):
                raise ValueError("eddy tensor must have shape (n_nodes, 2, 2)")
            if not np.allclose(E[:, 0, 1], E[:, 1, 0], rtol=0, atol=1e-12 * max(1.0, np.abs(E).max())):
                raise ValueError("eddy tensor is not symmetric")
            a, b, c = E[:, 0, 0], E[:, 0, 1], E[:, 1, 1]
            lam_min = 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
            scale = max(1.0, float(np.abs(E).max()))
            if lam_min.min() < -1e-10 * scale:
                raise ValueError(f"eddy tensor is not PSD (min eigenvalue {lam_min.min():g})")
            object.__setattr__(self, "eddy", E)

    @classmethod
    def from_covariance(cls, kappa: float, Qxx: np.ndarray) -> "DiffusivityTensor":
        """Effective tensor ``kappa I + Q(x, x) / 2``."""
        return cls(kappa, 0.5 * np.asarray(Qxx, dtype=float))

    @classmethod
    def isotropic(cls, kappa: float, sigma2: np.ndarray) -> "DiffusivityTensor":
        s = np.asarray(sigma2, dtype=float)
        E = np.zeros((s.size, 2, 2))
        E[:, 0, 0] = E[:, 1, 1] = s
        return cls(kappa, E)

    def full(self, n_nodes: int) -> np.ndarray:
        out = np.zeros((n_nodes, 2, 2)) if self.eddy is None else self.eddy.copy()
        out[:, 0, 0] += self.kappa
        out[:, 1, 1] += self.kappa
        return out


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    matrix: sp.csr_matrix = field(repr=False)
    kind: str
    kappa: float = 0.0
    fingerprint: tuple = ()

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def export_triplets(self, path) -> None:
        """Write ``i j value`` lines (0-based interior indices)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# {self.kind} {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{i} {j} {v:.17g}\n")


# --------------------------------------------------------------------------
# difference operators


def face_differences(grid: Grid) -> sp.csr_matrix:
    """Forward differences ``(f_k - f_i)/h`` over every face touching an unknown."""
    idx = grid.unknown_index.reshape(grid.shape)
    rows, cols, vals = [], [], []
    n_face = 0
    for left, right in ((idx[:, :-1], idx[:, 1:]), (idx[:-1, :], idx[1:, :])):
        a, b = left.ravel(), right.ravel()
        keep = (a >= 0) | (b >= 0)
        a, b = a[keep], b[keep]
        faces = n_face + np.arange(a.size)
        for node, sign in ((a, -1.0), (b, 1.0)):
            ok = node >= 0
            rows.append(faces[ok])
            cols.append(node[ok])
            vals.append(np.full(ok.sum(), sign / grid.h))
        n_face += a.size
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_face, grid.n_interior),
    )


def cell_gradient(grid: Grid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Cell-centred gradient from the four corners of each box cell.

    Returns ``(G, corners)``: ``G`` stacks the x- then y-components over
    all cells; ``corners[c]`` lists the four node ids of cell ``c``.
    """
    ny, nx = grid.shape
    node = np.arange(grid.n_nodes).reshape(grid.shape)
    c00 = node[:-1, :-1].ravel()
    c10 = node[:-1, 1:].ravel()
    c01 = node[1:, :-1].ravel()
    c11 = node[1:, 1:].ravel()
    n_cells = c00.size
    cells = np.arange(n_cells)
    s = 0.5 / grid.h
    rows, cols, vals = [], [], []
    for corner, gx, gy in ((c00, -s, -s), (c10, s, -s), (c01, -s, s), (c11, s, s)):
        u = grid.unknown_index[corner]
        ok = u >= 0
        rows += [cells[ok], n_cells + cells[ok]]
        cols += [u[ok], u[ok]]
        vals += [np.full(ok.sum(), gx), np.full(ok.sum(), gy)]
    G = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n_cells, grid.n_interior),
    )
    return G, np.column_stack([c00, c10, c01, c11])


def assemble_laplacian(grid: Grid) -> sp.csr_matrix:
    """Five-point Laplacian with Dirichlet exterior."""
    D = face_differences(grid)
    return (-(D.T @ D)).tocsr()


def _cell_tensor(grid: Grid, eddy: np.ndarray, corners: np.ndarray) -> np.ndarray:
    return eddy[corners].mean(axis=1)


def assemble_diffusion(grid: Grid, tensor: DiffusivityTensor) -> DiscreteOperator:
    """Symmetric negative semidefinite discretisation of ``div(a grad .)``.

    The ``kappa`` part is the five-point Laplacian; the eddy part uses
    cell-centred gradients with the arithmetic mean of the corner tensors.
    """
    L = tensor.kappa * assemble_laplacian(grid)
    if tensor.eddy is not None:
        E = np.asarray(tensor.eddy)
        if E.shape[0] != grid.n_nodes:
            raise ValueError("tensor and grid sizes differ")
        G, corners = cell_gradient(grid)
        Ec = _cell_tensor(grid, E, corners)
        n_cells = corners.shape[0]
        W = sp.bmat(
            [[sp.diags(Ec[:, 0, 0]), sp.diags(Ec[:, 0, 1])], [sp.diags(Ec[:, 1, 0]), sp.diags(Ec[:, 1, 1])]],
            format="csr",
        )
        assert W.shape == (2 * n_cells, 2 * n_cells)
        L = L - G.T @ W @ G
    L = sp.csr_matrix(L)
    L = 0.5 * (L + L.T)
    return DiscreteOperator(matrix=L.tocsr(), kind="diffusion", kappa=tensor.kappa, fingerprint=grid.fingerprint())


def quadratic_form(grid: Grid, tensor: DiffusivityTensor, f: np.ndarray) -> float:
    """``-sum h^2 grad f^T a grad f`` from discrete gradients (interior values ``f``)."""
    D = face_differences(grid)
    total = tensor.kappa * float(np.sum((D @ f) ** 2))
    if tensor.eddy is not None:
        G, corners = cell_gradient(grid)
        Ec = _cell_tensor(grid, np.asarray(tensor.eddy), corners)
        g = (G @ f).reshape(2, -1).T
        total += float(np.einsum("ca,cab,cb->", g, Ec, g))
    return -grid.h**2 * total


# --------------------------------------------------------------------------
# transport


def _neighbour_pairs(grid: Grid):
    """Yield ``(component, sign, i, k)`` for box neighbours ``k = i + sign e_c``."""
    node = np.arange(grid.n_nodes).reshape(grid.shape)
    for comp, (a, b) in enumerate(((node[:, :-1], node[:, 1:]), (node[:-1, :], node[1:, :]))):
        a, b = a.ravel(), b.ravel()
        yield comp, 1.0, a, b
        yield comp, -1.0, b, a


def assemble_advection(grid: Grid, u: np.ndarray) -> DiscreteOperator:
    """Skew-symmetric transport matrix for ``f -> u . grad f``.

    Entry ``(i, k)`` for ``k = i +- h e_c`` is ``+-(u_c(i) + u_c(k)) / (4h)``:
    the average of the centred advective and flux forms, exact for
    discretely divergence-free ``u`` and exactly skew for any ``u``.
    """
    u = grid.check_field(u)
    idx = grid.unknown_index
    rows, cols, vals = [], [], []
    for comp, sign, i, k in _neighbour_pairs(grid):
        ok = (idx[i] >= 0) & (idx[k] >= 0)
        i, k = i[ok], k[ok]
        rows.append(idx[i])
        cols.append(idx[k])
        vals.append(sign * (u[i, comp] + u[k, comp]) / (4.0 * grid.h))
    B = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_interior, grid.n_interior),
    )
    B.eliminate_zeros()
    return DiscreteOperator(matrix=B, kind="advection", fingerprint=grid.fingerprint())


def apply_advection(grid: Grid, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Batched matrix-free ``B(u) f``.

    ``u`` has shape ``(..., 2, ny, nx)`` and ``f`` shape ``(..., ny, nx)``
    with zero exterior values; the result is zero off the interior.
    """
    h4 = 4.0 * grid.h
    out = np.zeros_like(f)
    ux, uy = u[..., 0, :, :], u[..., 1, :, :]
    # x-direction
    sx = (ux[..., :, :-1] + ux[..., :, 1:]) * (1.0 / h4)
    out[..., :, :-1] += sx * f[..., :, 1:]
    out[..., :, 1:] -= sx * f[..., :, :-1]
    sy = (uy[..., :-1, :] + uy[..., 1:, :]) * (1.0 / h4)
    out[..., :-1, :] += sy * f[..., 1:, :]
    out[..., 1:, :] -= sy * f[..., :-1, :]
    out *= grid.interior.reshape(grid.shape)
    return out


def advection_stack(grid: Grid, fields: sp.spmatrix) -> sp.csr_matrix:
    """Vertically stacked transport matrices ``[B_1; B_2; ...]`` (nonzero rows only).

    ``fields`` holds one vector field per column, component-major rows.
    """
    U = sp.coo_matrix(fields)
    n = grid.n_nodes
    comp = U.row // n
    a = U.row % n
    j = U.col.astype(np.int64)
    v = U.data / (4.0 * grid.h)
    step = np.where(comp == 0, 1, grid.nx)
    plus, minus = a + step, a - step
    rows = np.concatenate([a, a, minus, plus])
    cols = np.concatenate([plus, minus, a, a])
    vals = np.concatenate([v, -v, v, -v])
    jj = np.concatenate([j, j, j, j])
    valid = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    rows, cols, vals, jj = rows[valid], cols[valid], vals[valid], jj[valid]
    # a +- step must stay on the same box row for x-neighbours
    same_row = np.ones_like(valid[valid])
    xs = np.concatenate([comp == 0] * 4)[valid]
    same_row[xs] = (rows[xs] // grid.nx) == (cols[xs] // grid.nx)
    idx = grid.unknown_index
    keep = same_row & (idx[rows] >= 0) & (idx[cols] >= 0)
    rows, cols, vals, jj = rows[keep], cols[keep], vals[keep], jj[keep]
    key = jj * n + rows
    uniq, inv = np.unique(key, return_inverse=True)
    S = sp.csr_matrix((vals, (inv, idx[cols])), shape=(uniq.size, grid.n_interior))
    S.sum_duplicates()
    return S


def ito_corrector(grid: Grid, fields: sp.spmatrix) -> sp.csr_matrix:
    """``(1/2) sum_j B_j B_j = -(1/2) sum_j B_j^T B_j`` over a field family."""
    S = advection_stack(grid, fields)
    return (-0.5 * (S.T @ S)).tocsr()


def _test_functions(grid: Grid):
    x, y = grid.x, grid.y
    if grid.domain.value == "square":
        return {
            "sin_sin": np.sin(np.pi * x) * np.sin(np.pi * y),
            "sin2_sin": np.sin(2 * np.pi * x) * np.sin(np.pi * y),
            "poly": 16 * x * (1 - x) * y * (1 - y) * (1 + x),
        }
    rr = x**2 + y**2
    return {"bubble": 1 - rr, "bubble_x": (1 - rr) * x, "bubble_sq": (1 - rr) ** 2}


def ito_corrector_check(grid: Grid, fields, tests: dict | None = None, margin: int = 0) -> dict:
    """Compare ``(1/2) sum_j B_j B_j f`` with the assembled ``div((Q/2) grad f)``.

    ``fields`` is a sparse field matrix or anything with a ``matrix``
    attribute.  Nodes closer than ``margin`` cells to the box edge of the
    interior are excluded (for fields that do not vanish at the boundary).
    """
    from .covariance import FieldFamily, Qxx_field

    mat = sp.csc_matrix(getattr(fields, "matrix", fields))
    fam = FieldFamily(grid, mat)
    lhs_op = ito_corrector(grid, mat)
    Q = Qxx_field(fam)
    rhs_op = assemble_diffusion(grid, DiffusivityTensor.from_covariance(0.0, Q)).matrix
    tests = _test_functions(grid) if tests is None else tests
    keep = grid.boundary_distance[grid.interior_nodes] > margin * grid.h * (1 + 1e-9)
    out = {}
    for name, f in tests.items():
        fi = grid.restrict(np.where(grid.interior, f, 0.0))
        lhs = lhs_op @ fi
        rhs = rhs_op @ fi
        diff = np.abs(lhs - rhs)[keep]
        scale = float(np.abs(rhs[keep]).max()) if keep.any() else 0.0
        out[name] = {
            "max_abs_residual": float(diff.max()) if diff.size else 0.0,
            "max_rel_residual": float(diff.max() / scale) if scale > 0 else 0.0,
            "scale": scale,
        }
    out["max_abs_residual"] = max((v["max_abs_residual"] for v in out.values()), default=0.0)
    out["max_rel_residual"] = max((v["max_rel_residual"] for k, v in out.items() if isinstance(v, dict)), default=0.0)
    return out
