"""Covariance diagnostics of a finite family of noise fields.

For fields ``u_j`` the covariance is ``Q(x, y) = sum_j u_j(x) u_j(y)^T``.
The quantities reported are the pointwise matrix ``Q(x, x)``, its
smallest eigenvalue ``q(x)`` and ``epsilon_Q``, the norm of the integral
operator with kernel ``Q``.  For a finite family the operator is
``U U*`` whose nonzero spectrum equals that of the Gram matrix ``U* U``,
so ``epsilon_Q`` is the top Gram eigenvalue.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .grid import Grid, inner_layer_mask
from .vortex import Lattice, VortexConfig, VortexProfile, lattice_template

DENSE_LIMIT = 2500


@dataclass(frozen=True, eq=False)
class FieldFamily:
    """Generic finite family: sparse columns, component-major rows."""

    grid: Grid
    matrix: sp.csc_matrix = field(repr=False)

    @property
    def n_fields(self) -> int:
        return self.matrix.shape[1]

    def field(self, j: int) -> np.ndarray:
        return self.matrix[:, j].toarray().ravel().reshape(2, self.grid.n_nodes).T

    @classmethod
    def from_fields(cls, grid: Grid, fields) -> "FieldFamily":
        from .vortex import field_matrix

        return cls(grid, field_matrix(grid, fields))

    def subset(self, idx) -> "FieldFamily":
        return FieldFamily(self.grid, self.matrix[:, np.asarray(idx)])


def as_family(basis) -> FieldFamily:
    if isinstance(basis, FieldFamily):
        return basis
    return FieldFamily(basis.grid, sp.csc_matrix(basis.matrix))


def _components(fam: FieldFamily):
    n = fam.grid.n_nodes
    mat = fam.matrix.tocsr()
    return mat[:n], mat[n:]


# --------------------------------------------------------------------------
# pointwise quantities


def pointwise_Q(basis, node: int) -> np.ndarray:
    fam = as_family(basis)
    n = fam.grid.n_nodes
    mat = fam.matrix.tocsr()
    u = np.vstack([mat[node].toarray().ravel(), mat[n + node].toarray().ravel()])
    return u @ u.T


def Qxx_field(basis) -> np.ndarray:
    """``Q(x, x)`` at every node, shape ``(n_nodes, 2, 2)``."""
    fam = as_family(basis)
    ux, uy = _components(fam)
    q11 = np.asarray(ux.multiply(ux).sum(axis=1)).ravel()
    q22 = np.asarray(uy.multiply(uy).sum(axis=1)).ravel()
    q12 = np.asarray(ux.multiply(uy).sum(axis=1)).ravel()
    out = np.empty((fam.grid.n_nodes, 2, 2))
    out[:, 0, 0] = q11
    out[:, 1, 1] = q22
    out[:, 0, 1] = out[:, 1, 0] = q12
    return out


def min_eigenvalue_2x2(Q: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of symmetric 2x2 matrices (trace/determinant form)."""
    Q = np.asarray(Q, dtype=float)
    a, b, c = Q[..., 0, 0], Q[..., 0, 1], Q[..., 1, 1]
    return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)


def q_field(basis) -> np.ndarray:
    return np.maximum(min_eigenvalue_2x2(Qxx_field(basis)), 0.0)


# --------------------------------------------------------------------------
# operator and Gram matrix


def _interior_rows(fam: FieldFamily) -> np.ndarray:
    mask = fam.grid.interior.astype(float)
    return np.concatenate([mask, mask])


def _flat(fam: FieldFamily, v: np.ndarray) -> np.ndarray:
    v = fam.grid.check_field(v)
    if v.ndim != 2 or v.shape[1] != 2:
        raise ValueError("expected a vector field of shape (n_nodes, 2)")
    return v.T.ravel()


def pair(basis, v: np.ndarray) -> np.ndarray:
    """``<u_j, v>`` for every member."""
    fam = as_family(basis)
    flat = _flat(fam, v) * _interior_rows(fam)
    return fam.grid.h**2 * (fam.matrix.T @ flat)


def apply_Qop(basis, v: np.ndarray) -> np.ndarray:
    """``(Q v)(x) = sum_j u_j(x) <u_j, v>``."""
    fam = as_family(basis)
    coeff = pair(fam, v)
    out = fam.matrix @ coeff
    return out.reshape(2, fam.grid.n_nodes).T


def gram_matrix(basis) -> sp.csr_matrix:
    """Sparse Gram matrix ``<u_i, u_j>``.

    Members with disjoint supports produce no stored entry, so same-class
    vortex pairs are structural zeros.
    """
    fam = as_family(basis)
    mat = fam.matrix.multiply(_interior_rows(fam)[:, None]).tocsc()
    return (fam.grid.h**2 * (mat.T @ fam.matrix)).tocsr()


def same_class_offdiagonal(gram: sp.spmatrix, lattice: Lattice) -> np.ndarray:
    """Stored Gram entries linking two different members of one class."""
    g = sp.coo_matrix(gram)
    cls = lattice.class_index()
    mask = (g.row != g.col) & (cls[g.row] == cls[g.col])
    return g.data[mask]


def power_iteration(matvec, n: int, tol: float = 1e-8, max_iter: int = 100_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite operator."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matvec(x)
        new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    raise RuntimeError("power iteration did not converge")


def top_eigenpair(gram, tol: float = 1e-10):
    """Top eigenpair of a symmetric PSD matrix (dense or sparse)."""
    n = gram.shape[0]
    if n == 0:
        return 0.0, np.zeros(0)
    if n <= DENSE_LIMIT:
        dense = gram.toarray() if sp.issparse(gram) else np.asarray(gram)
        vals, vecs = np.linalg.eigh(dense)
        return float(vals[-1]), vecs[:, -1]
    vals, vecs = spla.eigsh(gram, k=1, which="LA", tol=tol, v0=_start_vector(n))
    return float(vals[0]), vecs[:, 0]


def _start_vector(n: int) -> np.ndarray:
    # ARPACK's default start is random and its state persists across calls
    return np.random.default_rng(0).standard_normal(n)


def epsilon_Q(basis, method: str = "auto") -> float:
    """Top eigenvalue of the Gram matrix.

    ``method`` is ``"dense"`` (symmetric eigensolve), ``"power"`` (power
    iteration, relative tolerance 1e-8), ``"lanczos"`` or ``"auto"``.
    """
    fam = as_family(basis)
    if fam.n_fields == 0:
        return 0.0
    G = gram_matrix(fam)
    if method == "power":
        return power_iteration(lambda x: G @ x, G.shape[0])
    if method == "dense":
        return float(np.linalg.eigvalsh(G.toarray())[-1])
    if method == "lanczos":
        return float(spla.eigsh(G, k=1, which="LA", tol=1e-12, v0=_start_vector(G.shape[0]))[0][0])
    return top_eigenpair(G)[0]


@dataclass(frozen=True, eq=False)
class CovarianceDiagnostics:
    Qxx: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    epsilon_Q: float
    gram: sp.csr_matrix = field(repr=False)
    top_vector: np.ndarray = field(repr=False)

    @property
    def trace(self) -> float:
        return float(self.gram.diagonal().sum())

    def pointwise_trace_integral(self, grid: Grid) -> float:
        tr = self.Qxx[:, 0, 0] + self.Qxx[:, 1, 1]
        return float(grid.h**2 * tr[grid.interior].sum())

    def report(self, grid: Grid, delta: float | None = None) -> dict:
        out = {"epsilon_Q": self.epsilon_Q, "trace": self.trace}
        if delta is not None:
            mask = inner_layer_mask(grid, min(2 * delta, 0.999))
            out["min_q_D2delta"] = float(self.q[mask].min()) if mask.any() else None
        return out


def diagnostics(basis) -> CovarianceDiagnostics:
    fam = as_family(basis)
    Q = Qxx_field(fam)
    G = gram_matrix(fam)
    lam, vec = top_eigenpair(G)
    return CovarianceDiagnostics(Qxx=Q, q=np.maximum(min_eigenvalue_2x2(Q), 0.0), epsilon_Q=lam, gram=G, top_vector=vec)


def rayleigh_quotient(basis, v: np.ndarray) -> float:
    """``<v, Q v> / <v, v>`` for a vector field ``v``."""
    fam = as_family(basis)
    c = pair(fam, v)
    num = float(c @ c)
    flat = _flat(fam, v) * _interior_rows(fam)
    den = fam.grid.h**2 * float(flat @ flat)
    return num / den


def export_q_csv(grid: Grid, q: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "x", "y", "q"])
        for k in np.flatnonzero(grid.interior):
            w.writerow([int(k), repr(float(grid.x[k])), repr(float(grid.y[k])), repr(float(q[k]))])


def export_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# lattice-translation structure


class LatticeGram:
    """Gram matrix of a vortex family whose members are exact translates.

    The fields are sampled at spacing ``1/(N*refine)`` aligned with the
    lattice, so ``<u_i, u_j>`` depends on ``z_i - z_j`` only.  The kernel is
    the discrete autocorrelation of one template, evaluated at lattice
    offsets; products with the Gram matrix are lattice convolutions.
    """

    def __init__(self, cfg: VortexConfig, profile: VortexProfile, lattice: Lattice, refine: int):
        self.cfg = cfg
        self.lattice = lattice
        self.refine = refine
        template, s = lattice_template(cfg, profile, refine)
        self.spacing = s
        auto = sum(fftconvolve(t, t[::-1, ::-1], mode="full") for t in template) * s**2
        c = auto.shape[0] // 2
        reach = (auto.shape[0] // 2) // refine
        idx = c + refine * np.arange(-reach, reach + 1)
        # kernel[dh, dk] = <u(. - z), u(. - z - d)> with d = (dk, dh) / N
        kernel = auto[np.ix_(idx, idx)]
        off = np.arange(-reach, reach + 1) / cfg.N
        dist = np.hypot(off[:, None], off[None, :])
        # members farther apart than two support radii share no sampled node
        kernel[dist >= 2 * cfg.support_radius + 2 * s] = 0.0
        self.kernel = kernel
        self.reach = reach
        self._template = template
        self.norm_sq = float(auto[c, c])
        k0, k1, h0, h1 = lattice.box()
        self._origin = (k0, h0)
        self._shape = (h1 - h0 + 1, k1 - k0 + 1)
        mask = np.zeros(self._shape, dtype=bool)
        mask[lattice.h - h0, lattice.k - k0] = True
        self._mask = mask

    @property
    def size(self) -> int:
        return len(self.lattice)

    def matvec(self, c: np.ndarray) -> np.ndarray:
        img = np.zeros(self._shape)
        k0, h0 = self._origin
        img[self.lattice.h - h0, self.lattice.k - k0] = c
        out = fftconvolve(img, self.kernel, mode="same")
        return out[self.lattice.h - h0, self.lattice.k - k0]

    def operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.size, self.size), matvec=self.matvec, dtype=float)

    def epsilon_Q(self, tol: float = 1e-10) -> float:
        vals = spla.eigsh(
            self.operator(), k=1, which="LA", tol=tol, v0=_start_vector(self.size), return_eigenvectors=False
        )
        return float(vals[0])

    @property
    def trace(self) -> float:
        return self.size * self.norm_sq

    def same_class_values(self) -> np.ndarray:
        """Pairings of a member with its nearest same-class neighbours.

        Computed as explicit sums of template products at offsets
        ``M * (a, b)``, ``a, b in {-1, 0, 1}``; farther same-class members
        are farther apart still.
        """
        M, refine, s = self.cfg.M, self.refine, self.spacing
        L = self._template.shape[-1]
        out = []
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                if a == 0 and b == 0:
                    continue
                sx, sy = a * M * refine, b * M * refine
                if abs(sx) >= L or abs(sy) >= L:
                    out.append(0.0)
                    continue
                t = self._template
                ys, xs = slice(max(sy, 0), L + min(sy, 0)), slice(max(sx, 0), L + min(sx, 0))
                ys2, xs2 = slice(max(-sy, 0), L + min(-sy, 0)), slice(max(-sx, 0), L + min(-sx, 0))
                out.append(float(s**2 * np.sum(t[:, ys, xs] * t[:, ys2, xs2])))
        return np.array(out)

    def dense(self) -> np.ndarray:
        """Explicit Gram matrix (small lattices only)."""
        k, h = self.lattice.k, self.lattice.h
        dk = k[None, :] - k[:, None]
        dh = h[None, :] - h[:, None]
        inside = (np.abs(dk) <= self.reach) & (np.abs(dh) <= self.reach)
        out = np.zeros((self.size, self.size))
        out[inside] = self.kernel[dh[inside] + self.reach, dk[inside] + self.reach]
        return out


def Q_at_points(cfg: VortexConfig, profile: VortexProfile, lattice: Lattice, points: np.ndarray,
                chunk: int = 4096) -> np.ndarray:
    """``Q(x, x)`` evaluated from the profile at arbitrary points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N = cfg.N
    R = cfg.support_radius
    W = int(np.ceil(R * N)) + 1
    off = np.arange(-W, W + 1)
    dk, dh = np.meshgrid(off, off, indexing="ij")
    dk, dh = dk.ravel(), dh.ravel()
    k0, k1, h0, h1 = lattice.box()
    member = np.zeros((k1 - k0 + 1, h1 - h0 + 1), dtype=bool)
    member[lattice.k - k0, lattice.h - h0] = True
    out = np.zeros((points.shape[0], 2, 2))
    scale = cfg.Gamma / cfg.r
    step = max(1, chunk * 64 // dk.size)
    for s in range(0, points.shape[0], step):
        p = points[s:s + step]
        kc = np.rint(p[:, 0] * N).astype(np.int64)
        hc = np.rint(p[:, 1] * N).astype(np.int64)
        K = kc[:, None] + dk[None, :]
        H = hc[:, None] + dh[None, :]
        ok = (K >= k0) & (K <= k1) & (H >= h0) & (H <= h1)
        ok[ok] = member[K[ok] - k0, H[ok] - h0]
        dx = p[:, 0, None] - K / N
        dy = p[:, 1, None] - H / N
        ok &= np.hypot(dx, dy) < R
        w = profile.w(np.where(ok, dx, 0.0) / cfg.r, np.where(ok, dy, 0.0) / cfg.r) * scale
        w = np.where(ok[..., None], w, 0.0)
        out[s:s + step] = np.einsum("pja,pjb->pab", w, w)
    return out


def q_at_points(cfg: VortexConfig, profile: VortexProfile, lattice: Lattice, points: np.ndarray) -> np.ndarray:
    return np.maximum(min_eigenvalue_2x2(Q_at_points(cfg, profile, lattice, points)), 0.0)


def geometric_condition(cfg: VortexConfig, lattice: Lattice, points: np.ndarray, n_dirs: int = 72) -> np.ndarray:
    """Whether each point has, for every direction ``v``, a center ``z`` with
    ``1/(2N) <= |x - z| < 2/N`` and ``|v . (x - z)_perp| >= |x - z| / 4``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N = cfg.N
    off = np.arange(-3, 4)
    dk, dh = np.meshgrid(off, off, indexing="ij")
    dk, dh = dk.ravel(), dh.ravel()
    k0, k1, h0, h1 = lattice.box()
    member = np.zeros((k1 - k0 + 1, h1 - h0 + 1), dtype=bool)
    member[lattice.k - k0, lattice.h - h0] = True
    theta = np.pi * np.arange(n_dirs) / n_dirs
    v = np.column_stack([np.cos(theta), np.sin(theta)])
    kc = np.rint(points[:, 0] * N).astype(np.int64)
    hc = np.rint(points[:, 1] * N).astype(np.int64)
    K = kc[:, None] + dk[None, :]
    H = hc[:, None] + dh[None, :]
    ok = (K >= k0) & (K <= k1) & (H >= h0) & (H <= h1)
    ok[ok] = member[K[ok] - k0, H[ok] - h0]
    dx = points[:, 0, None] - K / N
    dy = points[:, 1, None] - H / N
    dist = np.hypot(dx, dy)
    ok &= (dist >= 0.5 / N) & (dist < 2.0 / N)
    # (x - z)_perp = (-dy, dx)
    proj = np.abs(-dy[..., None] * v[:, 0] + dx[..., None] * v[:, 1])
    good = ok[..., None] & (proj >= 0.25 * dist[..., None])
    return good.any(axis=1).all(axis=1)
