"""Vortex-patch noise: lattice of centers, mollified vortex profile, basis fields.

The profile is the divergence-free field ``w = grad_perp(psi)`` where
``psi`` is a cut-off logarithm ``psi0`` smoothed by a bump density of
width ``eps``.  Each noise field is ``Gamma * w_r(x - z)`` with
``w_r(x) = w(x / r) / r`` and ``z`` running over the lattice of centers.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.special import exp1

from .grid import Domain, Grid

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
INNER_RADIUS = 1.0 / 3.0
OUTER_RADIUS = 2.0 / 3.0
MIN_CELLS_PER_EPS = 4


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class VortexConfig:
    N: int
    M: int
    delta: float
    r: float
    eps: float
    Gamma: float

    @classmethod
    def admissible(cls, N: int, M: int = 30, delta: float = 0.1, r: float | None = None,
                   Gamma: float = 1.0) -> "VortexConfig":
        """Config with ``eps = 1/N`` and, by default, ``r`` midway in its window."""
        if r is None:
            lo = 12.0 / N
            hi = min(M / (2.0 * N), delta)
            r = 0.5 * (lo + hi)
        return cls(N=int(N), M=int(M), delta=float(delta), r=float(r), eps=1.0 / N, Gamma=float(Gamma))

    def with_gamma(self, Gamma: float) -> "VortexConfig":
        return VortexConfig(self.N, self.M, self.delta, self.r, self.eps, float(Gamma))

    @property
    def support_radius(self) -> float:
        """Radius of the support of every rescaled field."""
        return self.r * (OUTER_RADIUS + self.eps)


def validate_config(cfg: VortexConfig) -> list[str]:
    """List the violated admissibility constraints (empty when admissible)."""
    rel = 1e-12
    N, M, delta, r, eps = cfg.N, cfg.M, cfg.delta, cfg.r, cfg.eps
    out = []
    if N < 1:
        out.append(f"N={N} must be a positive integer")
        return out
    if M < 1:
        out.append(f"M={M} must be a positive integer")
    if not (0.0 < delta < 0.5):
        out.append(f"delta={delta} must lie in (0, 1/2)")
    if not (0.0 < eps < 1.0 / 6.0):
        out.append(f"eps={eps} must lie in (0, 1/6)")
    if r <= 0:
        out.append(f"r={r} must be positive")
    if cfg.Gamma < 0:
        out.append(f"Gamma={cfg.Gamma} must be non-negative")
    if 1.0 / N > delta * (1 + rel):
        out.append(f"1/N={1.0 / N:g} <= delta={delta:g} fails")
    if r > M / (2.0 * N) * (1 + rel):
        out.append(f"r={r:g} <= M/(2N)={M / (2.0 * N):g} fails")
    if r > delta * (1 + rel):
        out.append(f"r={r:g} <= delta={delta:g} fails")
    if r < 12.0 / N * (1 - rel):
        out.append(f"r={r:g} >= 12/N={12.0 / N:g} fails")
    if not M > 24:
        out.append(f"M={M} > 24 fails")
    if abs(eps * N - 1.0) > 1e-9:
        out.append(f"eps={eps:g} = 1/N={1.0 / N:g} fails")
    return out


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("inadmissible vortex config: " + "; ".join(self.violations))


def require_admissible(cfg: VortexConfig) -> None:
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)


# --------------------------------------------------------------------------
# lattice of centers


@dataclass(frozen=True, eq=False)
class Lattice:
    N: int
    M: int
    k: np.ndarray
    h: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return np.column_stack([self.k, self.h]) / self.N

    @property
    def classes(self) -> np.ndarray:
        return np.column_stack([np.mod(self.k, self.M), np.mod(self.h, self.M)])

    def __len__(self) -> int:
        return int(self.k.size)

    def class_of(self, i: int) -> tuple[int, int]:
        return (int(self.k[i] % self.M), int(self.h[i] % self.M))

    def class_index(self) -> np.ndarray:
        c = self.classes
        return c[:, 0] * self.M + c[:, 1]

    def box(self) -> tuple[int, int, int, int]:
        return int(self.k.min()), int(self.k.max()), int(self.h.min()), int(self.h.max())


def build_lattice(domain: Grid | Domain, cfg: VortexConfig) -> Lattice:
    """All points ``(k/N, h/N)`` farther than ``delta`` from the boundary."""
    if isinstance(domain, Grid):
        domain = domain.domain
    N = cfg.N
    lo, hi = (0, N) if domain is Domain.UNIT_SQUARE else (-N, N)
    ticks = np.arange(lo, hi + 1)
    kk, hh = np.meshgrid(ticks, ticks, indexing="ij")
    kk, hh = kk.ravel(), hh.ravel()
    dist = domain.distance_to_boundary(kk / N, hh / N)
    keep = dist > cfg.delta + 1e-12
    if not keep.any():
        raise ValueError(f"empty lattice: no points of spacing 1/{N} with distance > {cfg.delta} to the boundary")
    return Lattice(N=N, M=cfg.M, k=kk[keep], h=hh[keep])


# --------------------------------------------------------------------------
# radial building blocks


def _phi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def cutoff(rho):
    """Smooth step: 1 on [0, 1/3], 0 on [2/3, inf)."""
    t = 3.0 * np.asarray(rho, dtype=float) - 1.0
    a, b = _phi(1.0 - t), _phi(t)
    return a / (a + b)


def cutoff_derivative(rho):
    t = 3.0 * np.asarray(rho, dtype=float) - 1.0
    a, b = _phi(1.0 - t), _phi(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(t < 1, -a / (1.0 - t) ** 2, 0.0)
        db = np.where(t > 0, b / t**2, 0.0)
    return 3.0 * (da * b - a * db) / (a + b) ** 2


def psi0(rho):
    """Cut-off logarithmic stream function ``log(rho) / 2pi * cutoff(rho)``."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rho < OUTER_RADIUS, np.log(rho) / TWO_PI * cutoff(rho), 0.0)


def _remainder(rho):
    """``psi0 - log/2pi``; smooth, vanishes on [0, 1/3]."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(rho > INNER_RADIUS, np.log(rho) / TWO_PI * (cutoff(rho) - 1.0), 0.0)


def _remainder_derivative(rho):
    rho = np.asarray(rho, dtype=float)
    safe = np.maximum(rho, 1e-300)
    d = ((cutoff(safe) - 1.0) / safe + np.log(safe) * cutoff_derivative(safe)) / TWO_PI
    return np.where(rho > INNER_RADIUS, d, 0.0)


def _G(v):
    return -np.exp(-v) / v + exp1(v)


BUMP_CONST = 1.0 / (np.pi * (np.exp(-1.0) - exp1(1.0)))


def mollifier(rho):
    """Bump probability density on the unit disk, ``c * exp(-1/(1-|x|^2))``."""
    rho = np.asarray(rho, dtype=float)
    inside = rho < 1.0
    out = np.zeros_like(rho)
    out[inside] = BUMP_CONST * np.exp(-1.0 / (1.0 - rho[inside] ** 2))
    return out


def mollifier_mass(t):
    """Mass of the unit bump inside the disk of radius ``t`` (closed form)."""
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    inside = t < 1.0
    ti = t[inside]
    out[inside] = np.pi * BUMP_CONST * (_G(1.0 / (1.0 - ti**2)) - _G(1.0))
    return out


# --------------------------------------------------------------------------
# profile


@dataclass(frozen=True, eq=False)
class VortexProfile:
    """Radial stream function ``psi = psi0 * f_eps`` and its field ``w``.

    ``dpsi(rho)`` is the radial derivative; ``w(x) = dpsi(|x|) x_perp / |x|``.
    The point-vortex part uses the exact mass function of the mollifier;
    the cut-off remainder is convolved numerically and interpolated by a
    cubic spline on the table.
    """

    eps: float
    rho: np.ndarray = field(repr=False)
    psi_table: np.ndarray = field(repr=False)
    dpsi_table: np.ndarray = field(repr=False)
    _rem_spline: CubicSpline = field(repr=False)
    _drem_spline: CubicSpline = field(repr=False)

    @property
    def support(self) -> float:
        return OUTER_RADIUS + self.eps

    def dpsi(self, rho):
        rho = np.asarray(rho, dtype=float)
        core = mollifier_mass(rho / self.eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = np.where(rho > 0, core / (TWO_PI * np.maximum(rho, 1e-300)), 0.0)
        rem = np.where(rho > INNER_RADIUS - self.eps, self._drem_spline(np.clip(rho, 0, 1)), 0.0)
        return np.where(rho < self.support, newton + rem, 0.0)

    def dpsi_over_rho(self, rho):
        """``dpsi(rho) / rho``, finite at the origin."""
        rho = np.asarray(rho, dtype=float)
        small = rho < 1e-3 * self.eps
        safe = np.where(small, 1.0, rho)
        out = self.dpsi(safe) / safe
        # mass ~ pi c e^{-1} t^2 near the origin
        centre = BUMP_CONST * np.exp(-1.0) / (2.0 * self.eps**2)
        return np.where(small, centre, out)

    def psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        return np.interp(rho, self.rho, self.psi_table, right=0.0)

    def w(self, x, y):
        """Profile field at points ``(x, y)``; returns shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.dpsi_over_rho(np.hypot(x, y))
        return np.stack([-y * g, x * g], axis=-1)

    @cached_property
    def norm_w_sq(self) -> float:
        """``int |w|^2 dx`` over the plane."""
        e = self.eps

        def integrand(s):
            return float(self.dpsi(np.array([s]))[0] ** 2) * s

        pts = [0.0, e, INNER_RADIUS - e, INNER_RADIUS + e, OUTER_RADIUS - e, self.support]
        pts = sorted(set(p for p in pts if 0 <= p <= self.support))
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            if a < INNER_RADIUS - e and b <= INNER_RADIUS - e and a >= e:
                # pure point vortex: dpsi = 1/(2 pi rho)
                total += np.log(b / a) / TWO_PI**2
            else:
                total += quad(integrand, a, b, limit=200, epsabs=1e-14, epsrel=1e-12)[0]
        return TWO_PI * total


def _polar_rule(eps: float, n_s: int = 32, n_theta: int = 96):
    """Quadrature nodes/weights for integrals against ``f_eps``."""
    g, wg = np.polynomial.legendre.leggauss(n_s)
    s = 0.5 * (g + 1.0)
    ws = 0.5 * wg
    theta = TWO_PI * np.arange(n_theta) / n_theta
    S, TH = np.meshgrid(s, theta, indexing="ij")
    W = (ws[:, None] * mollifier(S) * S) * (TWO_PI / n_theta)
    y1 = eps * S * np.cos(TH)
    y2 = eps * S * np.sin(TH)
    return y1.ravel(), y2.ravel(), W.ravel()


def _convolve_remainder(rho: np.ndarray, eps: float, chunk: int = 2048):
    """Value and radial derivative of ``remainder * f_eps`` at ``(rho, 0)``."""
    y1, y2, W = _polar_rule(eps)
    val = np.zeros_like(rho)
    der = np.zeros_like(rho)
    for start in range(0, rho.size, chunk):
        r = rho[start:start + chunk, None]
        d1 = r - y1[None, :]
        d2 = -y2[None, :]
        dist = np.hypot(d1, d2)
        val[start:start + chunk] = (_remainder(dist) * W).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(dist > 0, d1 / dist, 0.0)
        der[start:start + chunk] = (_remainder_derivative(dist) * radial * W).sum(axis=1)
    return val, der


def _newton_potential(rho: np.ndarray, eps: float) -> np.ndarray:
    """``(log/2pi) * f_eps`` at radius ``rho``."""
    out = np.log(np.maximum(rho, eps)) / TWO_PI
    core = rho < eps
    if core.any():
        g, wg = np.polynomial.legendre.leggauss(64)
        for idx in np.flatnonzero(core):
            a = rho[idx]
            # int_{|y|<eps} log max(|x|,|y|) f_eps = m(a) log a + int_a^eps log s dm(s)
            s = a + (eps - a) * 0.5 * (g + 1.0)
            dm = TWO_PI * s * mollifier(s / eps) / eps**2
            tail = 0.5 * (eps - a) * np.sum(wg * np.log(s) * dm)
            mass = mollifier_mass(np.array([a / eps]))[0]
            head = mass * np.log(a) if a > 0 else 0.0
            out[idx] = (head + tail) / TWO_PI
    return out


def build_profile(cfg: VortexConfig | float, table_resolution: int | None = None) -> VortexProfile:
    """Tabulate the mollified stream function on ``[0, 1]``.

    ``table_resolution`` is the number of uniform table cells on ``[0, 1]``;
    at least four cells per ``eps`` are required.
    """
    eps = cfg.eps if isinstance(cfg, VortexConfig) else float(cfg)
    if not (0.0 < eps < 1.0 / 6.0):
        raise ValueError(f"eps={eps} must lie in (0, 1/6)")
    if table_resolution is None:
        table_resolution = int(max(4096, np.ceil(16.0 / eps)))
    if table_resolution * eps < MIN_CELLS_PER_EPS:
        raise ValueError(
            f"table_resolution={table_resolution} gives fewer than {MIN_CELLS_PER_EPS} cells per eps={eps}"
        )
    rho = np.linspace(0.0, 1.0, table_resolution + 1)
    band = (rho > INNER_RADIUS - eps - 0.05) & (rho < OUTER_RADIUS + eps + 0.05)
    rem = _remainder(rho)
    drem = _remainder_derivative(rho)
    rem[band], drem[band] = _convolve_remainder(rho[band], eps)
    rem_spline = CubicSpline(rho, rem)
    drem_spline = CubicSpline(rho, drem)

    psi = _newton_potential(rho, eps) + rem
    psi[rho >= OUTER_RADIUS + eps] = 0.0
    prof = VortexProfile(
        eps=eps,
        rho=rho,
        psi_table=psi,
        dpsi_table=np.zeros_like(rho),
        _rem_spline=rem_spline,
        _drem_spline=drem_spline,
    )
    object.__setattr__(prof, "dpsi_table", prof.dpsi(rho))
    return prof


# --------------------------------------------------------------------------
# basis


def _sample_window(grid: Grid, centers: np.ndarray, radius: float):
    """Grid nodes within ``radius`` of each center, as (center, node, dx, dy)."""
    h = grid.h
    ox, oy = grid.origin
    W = int(np.ceil(radius / h)) + 1
    off = np.arange(-W, W + 1)
    di, dj = np.meshgrid(off, off, indexing="ij")
    di, dj = di.ravel(), dj.ravel()
    ci = np.rint((centers[:, 0] - ox) / h).astype(np.int64)
    cj = np.rint((centers[:, 1] - oy) / h).astype(np.int64)
    rows, nodes, dxs, dys = [], [], [], []
    chunk = max(1, 2_000_000 // di.size)
    for s in range(0, centers.shape[0], chunk):
        c = np.arange(s, min(s + chunk, centers.shape[0]))
        col = ci[c, None] + di[None, :]
        row = cj[c, None] + dj[None, :]
        ok = (col >= 0) & (col < grid.nx) & (row >= 0) & (row < grid.ny)
        node = np.where(ok, row * grid.nx + col, 0)
        dx = grid.x[node] - centers[c, 0, None]
        dy = grid.y[node] - centers[c, 1, None]
        ok &= np.hypot(dx, dy) < radius
        ok &= grid.interior[node]
        idx = np.nonzero(ok)
        rows.append(c[idx[0]])
        nodes.append(node[idx])
        dxs.append(dx[idx])
        dys.append(dy[idx])
    return (np.concatenate(rows), np.concatenate(nodes), np.concatenate(dxs), np.concatenate(dys))


@dataclass(frozen=True, eq=False)
class VortexBasis:
    """Noise fields ``Gamma * w_r(. - z)`` sampled on a grid.

    ``matrix`` is sparse with one column per center; row ``c * n_nodes + k``
    holds component ``c`` at node ``k``.
    """

    config: VortexConfig
    lattice: Lattice
    profile: VortexProfile
    grid: Grid
    matrix: sp.csc_matrix = field(repr=False)
    resolved: bool = True

    @property
    def n_fields(self) -> int:
        return self.matrix.shape[1]

    @property
    def norm_w_sq(self) -> float:
        return self.profile.norm_w_sq

    def field(self, j: int) -> np.ndarray:
        col = self.matrix[:, j].toarray().ravel()
        return col.reshape(2, self.grid.n_nodes).T

    def fields(self):
        for j in range(self.n_fields):
            yield self.field(j)

    def fingerprint(self) -> tuple:
        c = self.config
        return (c.N, c.M, c.delta, c.r, c.eps, c.Gamma) + self.grid.fingerprint()


def field_matrix(grid: Grid, fields) -> sp.csc_matrix:
    """Stack vector fields ``(n_nodes, 2)`` as columns of a sparse matrix."""
    cols = [sp.csc_matrix(np.asarray(f, dtype=float).T.reshape(-1, 1)) for f in fields]
    if not cols:
        return sp.csc_matrix((2 * grid.n_nodes, 0))
    return sp.hstack(cols, format="csc")


def sample_fields(grid: Grid, cfg: VortexConfig, profile: VortexProfile, lattice: Lattice) -> sp.csc_matrix:
    r = cfg.r
    centers = lattice.centers
    rows, nodes, dx, dy = _sample_window(grid, centers, cfg.support_radius)
    w = profile.w(dx / r, dy / r) * (cfg.Gamma / r)
    n = grid.n_nodes
    data = np.concatenate([w[:, 0], w[:, 1]])
    row_idx = np.concatenate([nodes, nodes + n])
    col_idx = np.concatenate([rows, rows])
    keep = data != 0.0
    mat = sp.csc_matrix((data[keep], (row_idx[keep], col_idx[keep])), shape=(2 * n, len(lattice)))
    mat.sum_duplicates()
    return mat


def assemble_basis(grid: Grid, cfg: VortexConfig, profile: VortexProfile,
                   lattice: Lattice | None = None) -> VortexBasis:
    """Sample every lattice field on ``grid``.

    Grids coarser than the vortex core ``r * eps`` are accepted with a
    warning: the fields are then point samples of an unresolved core and
    their discrete norms undershoot ``Gamma^2 * norm_w_sq``.
    """
    require_admissible(cfg)
    if lattice is None:
        lattice = build_lattice(grid, cfg)
    resolved = grid.h <= cfg.r * cfg.eps * (1 + 1e-12)
    if not resolved:
        warnings.warn(
            f"grid spacing {grid.h:g} exceeds the vortex core r*eps={cfg.r * cfg.eps:g}; "
            "core values are point samples",
            stacklevel=2,
        )
    mat = sample_fields(grid, cfg, profile, lattice)
    log.debug("assembled %d vortex fields, nnz=%d", len(lattice), mat.nnz)
    return VortexBasis(config=cfg, lattice=lattice, profile=profile, grid=grid, matrix=mat, resolved=resolved)


def discrete_divergence(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Centered-difference divergence at nodes whose four neighbours exist."""
    u = grid.check_field(u)
    ux = u[:, 0].reshape(grid.shape)
    uy = u[:, 1].reshape(grid.shape)
    div = np.zeros(grid.shape)
    div[1:-1, 1:-1] = (ux[1:-1, 2:] - ux[1:-1, :-2] + uy[2:, 1:-1] - uy[:-2, 1:-1]) / (2 * grid.h)
    return div.ravel()


def lattice_template(cfg: VortexConfig, profile: VortexProfile, refine: int):
    """One field ``Gamma * w_r`` sampled at spacing ``1/(N*refine)``.

    The sampling nodes are aligned with the lattice, so every member of the
    family is an exact index shift of this template.  Returns
    ``(template, spacing)`` with ``template.shape == (2, L, L)`` centred.
    """
    s = 1.0 / (cfg.N * refine)
    W = int(np.ceil(cfg.support_radius / s))
    off = s * np.arange(-W, W + 1)
    X, Y = np.meshgrid(off, off, indexing="xy")
    w = profile.w(X / cfg.r, Y / cfg.r) * (cfg.Gamma / cfg.r)
    return np.moveaxis(w, -1, 0), s


def export_basis_csv(basis: VortexBasis, path) -> None:
    """Write the sampled fields as rows (center_x, center_y, class_k, class_h, node, u1, u2)."""
    mat = basis.matrix.tocoo()
    n = basis.grid.n_nodes
    comp = mat.row // n
    node = mat.row % n
    centers = basis.lattice.centers
    classes = basis.lattice.classes
    table: dict[tuple[int, int], list[float]] = {}
    for c, k, j, v in zip(comp, node, mat.col, mat.data):
        table.setdefault((int(j), int(k)), [0.0, 0.0])[int(c)] = float(v)
    with open(path, "w") as fh:
        fh.write("center_x,center_y,class_k,class_h,node,u1,u2\n")
        for (j, k) in sorted(table):
            u1, u2 = table[(j, k)]
            fh.write(
                f"{centers[j, 0]:.17g},{centers[j, 1]:.17g},{classes[j, 0]},{classes[j, 1]},{k},{u1:.17g},{u2:.17g}\n"
            )
