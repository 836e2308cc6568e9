"""Principal Dirichlet eigenvalues.

Two solvers:

* :func:`principal_eigenvalue` for the masked-grid operators of
  :mod:`eddyheat.elliptic` (smallest eigenvalue of ``-A``), and
* :func:`radial_lambda` for the one-dimensional radial problem
  ``-(a(r) r^(d-1) f')' = lam r^(d-1) f`` on ``[0, 1]`` with
  ``a = kappa + sigma2 * 1[r < 1 - delta]``, ``f'(0) = 0``, ``f(1) = 0``.

Both use inverse iteration followed by a few Rayleigh-quotient steps.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma

from .elliptic import DiscreteOperator

RESIDUAL_TOL = 1e-8


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenResult:
    lam: float
    eigenvector: np.ndarray = field(repr=False)
    iterations: int
    residual: float
    mesh: np.ndarray | None = field(default=None, repr=False)

    @property
    def value(self) -> float:
        return self.lam


def _sign_normalise(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    v = v if v[i] >= 0 else -v
    return v


def principal_eigenvalue(
    op,
    *,
    tol: float = RESIDUAL_TOL,
    max_iter: int = 500,
    solver: str = "lu",
    x0: np.ndarray | None = None,
) -> EigenResult:
    """Smallest eigenvalue of ``-op`` for a symmetric negative definite ``op``.

    The returned vector has unit Euclidean norm and is sign-normalised so
    that its largest entry is positive.  ``residual`` is
    ``|(-A) v - lam v| / lam``.

    Parameters
    ----------
    op : DiscreteOperator or sparse matrix
    solver : {"lu", "cg"}
        ``"lu"`` factorises once per shift; ``"cg"`` uses conjugate
        gradients with a Jacobi preconditioner and shift zero only.
    """
    A = sp.csr_matrix(getattr(op, "matrix", op))
    K = (-A).tocsc()
    n = K.shape[0]
    if n == 0:
        raise ValueError("empty operator")
    if abs(K - K.T).max() > 1e-12 * max(1.0, abs(K).max()):
        raise ValueError("operator is not symmetric")
    v = np.ones(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    v /= np.linalg.norm(v)

    if solver == "cg":
        dinv = 1.0 / K.diagonal()
        pre = spla.LinearOperator((n, n), matvec=lambda x: dinv * x)

        def solve(b, x_guess):
            x, info = spla.cg(K, b, x0=x_guess, rtol=tol * 1e-2, atol=0.0, M=pre, maxiter=20 * n)
            if info != 0:
                raise ConvergenceError(f"CG failed (info={info})")
            return x
    elif solver == "lu":
        lu0 = spla.splu(K)

        def solve(b, x_guess):
            return lu0.solve(b)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    lam = float(v @ (K @ v))
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = solve(v, v / max(lam, 1e-300))
        if it == 1 and float(w @ (K @ w)) <= 0:
            raise ValueError("operator is not negative definite")
        v = w / np.linalg.norm(w)
        Kv = K @ v
        lam = float(v @ Kv)
        res = float(np.linalg.norm(Kv - lam * v) / lam)
        if res <= tol or (solver == "lu" and res < 1e-3):
            break
    if solver == "lu" and res > tol:
        # shifted refinement; shift stays below the Rayleigh quotient
        for it2 in range(1, 50):
            shift = lam * (1.0 - max(10.0 * res, 1e-6))
            lu = spla.splu((K - shift * sp.identity(n, format="csc")).tocsc())
            w = lu.solve(v)
            v = w / np.linalg.norm(w)
            Kv = K @ v
            lam = float(v @ Kv)
            res = float(np.linalg.norm(Kv - lam * v) / lam)
            it += 1
            if res <= tol:
                break
    if res > tol:
        raise ConvergenceError(f"residual {res:.3e} after {it} iterations")
    v = _sign_normalise(v)
    if v.min() < -1e-6 * v.max():
        raise ConvergenceError("eigenvector changes sign: not the principal mode")
    return EigenResult(lam=lam, eigenvector=v, iterations=it, residual=res)


def rayleigh_quotient(op, v: np.ndarray) -> float:
    A = getattr(op, "matrix", op)
    v = np.asarray(v, dtype=float)
    return float(-(v @ (A @ v)) / (v @ v))


# --------------------------------------------------------------------------
# radial problem


def sphere_measure(d: int) -> float:
    """Surface measure of the unit sphere in ``R^d`` (2 for ``d = 1``)."""
    return 2.0 * math.pi ** (d / 2) / gamma(d / 2)


@dataclass(frozen=True)
class RadialProblem:
    kappa: float
    sigma2: float
    delta: float
    d: int = 2
    n_cells: int = 4096

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.kappa <= 0 or self.sigma2 < 0:
            raise ValueError("need kappa > 0 and sigma2 >= 0")
        if self.d < 1 or self.n_cells < 8:
            raise ValueError("need d >= 1 and n_cells >= 8")

    def mesh(self) -> np.ndarray:
        """Piecewise-uniform mesh with a node at ``1 - delta``.

        The outer layer gets at least an eighth of the cells.
        """
        n, delta = self.n_cells, self.delta
        n_layer = min(max(int(round(n * delta)), n // 8), n - 4)
        n_core = n - n_layer
        return np.concatenate(
            [np.linspace(0.0, 1.0 - delta, n_core + 1), np.linspace(1.0 - delta, 1.0, n_layer + 1)[1:]]
        )


def _radial_matrices(p: RadialProblem, r: np.ndarray):
    """Element stiffness weights and tridiagonal consistent mass.

    The stiffness is ``D^T diag(k) D``.  The Dirichlet node at r = 1 is dropped.
    """
    gq, wq = np.polynomial.legendre.leggauss(3)
    a, b = r[:-1], r[1:]
    L = b - a
    xq = 0.5 * (a + b)[:, None] + 0.5 * L[:, None] * gq[None, :]
    w = 0.5 * L[:, None] * wq[None, :]
    rho = xq ** (p.d - 1)
    inside = 0.5 * (a + b) < 1.0 - p.delta
    coef = p.kappa + p.sigma2 * inside
    k = coef * (rho * w).sum(1) / L**2
    phi0 = (b[:, None] - xq) / L[:, None]
    phi1 = 1.0 - phi0
    m00 = (rho * w * phi0 * phi0).sum(1)
    m01 = (rho * w * phi0 * phi1).sum(1)
    m11 = (rho * w * phi1 * phi1).sum(1)
    Md = np.zeros(r.size)
    Md[:-1] += m00
    Md[1:] += m11
    return Md[:-1], m01[:-1], k


def _flux_solve(k, b):
    """Exact ``K^-1 b`` for ``K = D^T diag(k) D`` returning ``(f, D f)``.

    ``D f`` are the element differences ``f_e - f_{e+1}`` with the
    Dirichlet value at the last node.  Carrying them separately keeps the
    small variations of a nearly flat ``f`` that nodal values lose.
    """
    z = np.cumsum(b) / k
    return np.cumsum(z[::-1])[::-1], z


def _flux_mv(k, z):
    """``K f`` from the differences ``z = D f``."""
    flux = k * z
    y = flux.copy()
    y[1:] -= flux[:-1]
    return y


def _tri_mv(diag, off, x):
    y = diag * x
    y[:-1] += off * x[1:]
    y[1:] += off * x[:-1]
    return y


def radial_lambda(p: RadialProblem, *, tol: float = RESIDUAL_TOL, max_iter: int = 400) -> EigenResult:
    """Minimum of ``omega_d J(f)`` subject to the radial normalisation.

    Returns the eigenvalue, nodal minimiser on :meth:`RadialProblem.mesh`
    (including ``f(1) = 0``) normalised so that
    ``int_0^1 f^2 r^(d-1) dr = 1 / omega_d``.  ``residual`` is measured in
    the dual energy norm, ``sqrt(r^T K^-1 r / lam)`` with ``r = K f - lam M f``.
    """
    r = p.mesh()
    Md, Mo, ke = _radial_matrices(p, r)
    f = 1.0 - r[:-1] ** 2
    lam, res, it = 0.0, np.inf, 0
    for it in range(1, max_iter + 1):
        f, z = _flux_solve(ke, _tri_mv(Md, Mo, f))
        Mf = _tri_mv(Md, Mo, f)
        c = math.sqrt(f @ Mf)
        f, z, Mf = f / c, z / c, Mf / c
        lam = float(np.sum(ke * z * z))
        rvec = _flux_mv(ke, z) - lam * Mf
        # dual-norm residual sqrt(r^T K^-1 r / lam)
        res = float(math.sqrt(np.sum(np.cumsum(rvec) ** 2 / ke) / lam))
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"radial iteration did not converge (residual {res:.2e})")
    f = _sign_normalise(f)
    if f.min() < -1e-8 * f.max():
        raise ConvergenceError("radial minimiser changes sign")
    full = np.append(f, 0.0) / math.sqrt(sphere_measure(p.d))
    return EigenResult(lam=lam, eigenvector=full, iterations=it, residual=res, mesh=r)


def J_functional(p: RadialProblem, r: np.ndarray, f: np.ndarray) -> float:
    """``omega_d * J(f)`` for nodal ``f`` (piecewise linear) on mesh ``r``."""
    df = np.diff(f) / np.diff(r)
    a, b = r[:-1], r[1:]
    wr = (b**p.d - a**p.d) / p.d
    coef = p.kappa + p.sigma2 * (0.5 * (a + b) < 1 - p.delta)
    return float(sphere_measure(p.d) * np.sum(coef * df**2 * wr))


def theorem_bounds(kappa: float, sigma2: float, delta: float, d: int) -> dict:
    """Closed-form lower bounds for the radial eigenvalue."""
    if min(kappa, delta) <= 0 or sigma2 < 0 or d < 1:
        raise ValueError("need kappa, delta > 0, sigma2 >= 0 and d >= 1")
    return {
        "bound_asym": kappa * d * sigma2 / (kappa + delta * sigma2),
        "bound_min": 0.5 * d * min(sigma2, kappa / delta),
    }


def local_minimality(op, result: EigenResult, *, n_trials: int = 20, eta: float = 1e-3, seed: int = 0) -> float:
    """Smallest ``RQ(v + eta w) - lam`` over random unit perturbations ``w``."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_trials):
        w = rng.normal(size=result.eigenvector.size)
        w /= np.linalg.norm(w)
        worst = min(worst, rayleigh_quotient(op, result.eigenvector + eta * w) - result.lam)
    return float(worst)


SWEEP_COLUMNS = ("kappa", "sigma2", "delta", "d", "lambda_radial", "lambda_2d", "bound_asym", "bound_min", "margin")


def sweep(
    kappa: float,
    sigma2_values,
    delta_values,
    d: int = 2,
    n_cells: int = 4096,
    grid=None,
) -> list[dict]:
    """Radial eigenvalues and bounds over a ``(sigma2, delta)`` product.

    With a disk ``grid`` the masked 2D eigenvalue with tensor
    ``kappa I + sigma2 1[D_delta] I`` is added (``lambda_2d``).
    ``margin`` is ``lambda_radial - max(bound_asym, bound_min)``.
    """
    from .elliptic import DiffusivityTensor, assemble_diffusion
    from .grid import inner_layer_mask

    rows = []
    for s2 in sigma2_values:
        for dl in delta_values:
            rad = radial_lambda(RadialProblem(kappa, float(s2), float(dl), d, n_cells)).lam
            b = theorem_bounds(kappa, float(s2), float(dl), d)
            lam2d = float("nan")
            if grid is not None:
                mask = inner_layer_mask(grid, float(dl)).astype(float)
                op = assemble_diffusion(grid, DiffusivityTensor.isotropic(kappa, float(s2) * mask))
                lam2d = principal_eigenvalue(op).lam
            rows.append(
                {
                    "kappa": kappa,
                    "sigma2": float(s2),
                    "delta": float(dl),
                    "d": d,
                    "lambda_radial": rad,
                    "lambda_2d": lam2d,
                    **b,
                    "margin": rad - max(b["bound_asym"], b["bound_min"]),
                }
            )
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(row[k])) if k != "d" else row[k] for k in SWEEP_COLUMNS})
