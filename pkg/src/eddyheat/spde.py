"""Time stepping for the transport-noise heat equation and its mean.

Each step of the stochastic scheme is

    (I - dt A) T* = T_n,        T_{n+1} = T* + sqrt(dt) B(sum_j xi_j u_j) T*

with ``A = kappa Lap + L`` the drift (diffusion plus Ito corrector) and
``B(u)`` the skew transport stencil, linear in ``u``.  The energy integral
is accumulated as ``E += dt |grad T*|^2``; with ``L = -(1/2) sum B_j^T B_j``
this makes ``E|T_n|^2 + 2 kappa E E_n = |T_0|^2 - dt^2 sum |A T*|^2``
an exact identity of the scheme.

Random increments come from one Philox stream per path keyed by
``(seed, path_id)``; step ``n`` consumes the ``n``-th block of ``J``
normals, so results do not depend on how paths are batched.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic import (
    DiffusivityTensor,
    DiscreteOperator,
    apply_advection,
    assemble_diffusion,
    assemble_laplacian,
    ito_corrector,
)
from .grid import Grid

SOLVE_RTOL = 1e-10
SCHEME = "semi-implicit-diffusion/explicit-noise"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeStepConfig:
    dt: float
    t_end: float
    seed: int = 0
    checkpoints: tuple[float, ...] = ()
    scheme: str = SCHEME

    def __post_init__(self):
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if self.scheme != SCHEME:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        cps = tuple(float(t) for t in (self.checkpoints or (self.t_end,)))
        if any(t <= 0 or t > self.t_end * (1 + 1e-12) for t in cps) or list(cps) != sorted(cps):
            raise ValueError("checkpoints must be increasing and inside (0, t_end]")
        object.__setattr__(self, "checkpoints", cps)
        self.checkpoint_steps()

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def checkpoint_steps(self) -> np.ndarray:
        steps = np.rint(np.asarray(self.checkpoints) / self.dt).astype(int)
        if np.any(np.abs(steps * self.dt - np.asarray(self.checkpoints)) > 1e-9 * self.t_end):
            raise ValueError("checkpoints must be multiples of dt")
        return steps

    def refined(self, factor: int = 2) -> "TimeStepConfig":
        return TimeStepConfig(self.dt / factor, self.t_end, self.seed, self.checkpoints, self.scheme)


# --------------------------------------------------------------------------
# operators


def drift_operator(grid: Grid, kappa: float, noise_matrix=None, corrector: str = "ito") -> DiscreteOperator:
    """``kappa Lap + L`` with ``L`` the discrete Ito corrector of the noise.

    ``corrector="ito"`` uses ``-(1/2) sum B_j^T B_j`` (exact mean-square
    balance for the scheme); ``"tensor"`` uses the assembled
    ``div((Q/2) grad .)``.  Without noise both reduce to ``kappa Lap``.
    """
    L = kappa * assemble_laplacian(grid)
    if noise_matrix is not None:
        mat = sp.csc_matrix(getattr(noise_matrix, "matrix", noise_matrix))
        if corrector == "ito":
            L = L + ito_corrector(grid, mat)
        elif corrector == "tensor":
            from .covariance import FieldFamily, Qxx_field

            Q = Qxx_field(FieldFamily(grid, mat))
            L = L + assemble_diffusion(grid, DiffusivityTensor.from_covariance(0.0, Q)).matrix
        else:
            raise ValueError(f"unknown corrector {corrector!r}")
    L = sp.csr_matrix(L)
    return DiscreteOperator(matrix=0.5 * (L + L.T), kind="drift", kappa=kappa, fingerprint=grid.fingerprint())


class ImplicitSolver:
    """Factorised ``I - dt A`` with a residual check on every solve."""

    def __init__(self, A, dt: float):
        A = sp.csr_matrix(getattr(A, "matrix", A))
        self.M = (sp.identity(A.shape[0], format="csr") - dt * A).tocsr()
        self.lu = spla.splu(self.M.tocsc())
        self.dt = dt

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for a vector or a batch ``(P, n)`` of right-hand sides.

        Residuals are checked per right-hand side, so each result does not
        depend on what else is in the batch.
        """
        rhs = np.asarray(rhs, dtype=float)
        b = rhs.T if rhs.ndim == 2 else rhs[:, None]
        x = self.lu.solve(b)
        scale = np.maximum(np.abs(b).max(axis=0), 1e-300)
        bad = np.abs(self.M @ x - b).max(axis=0) > SOLVE_RTOL * scale
        if bad.any():
            # one step of iterative refinement on the offending columns
            xb = x[:, bad]
            xb = xb - self.lu.solve(self.M @ xb - b[:, bad])
            rb = np.abs(self.M @ xb - b[:, bad]).max(axis=0) / scale[bad]
            if rb.max() > SOLVE_RTOL:
                raise SolverError(f"linear solve residual {rb.max():.2e}")
            x[:, bad] = xb
        return x.T if rhs.ndim == 2 else x[:, 0]


class NoiseOperator:
    """Transport by ``sum_j xi_j u_j`` for batches of coefficient vectors."""

    def __init__(self, grid: Grid, fields):
        mat = sp.csr_matrix(getattr(fields, "matrix", fields))
        if mat.shape[0] != 2 * grid.n_nodes:
            raise ValueError("field matrix does not match the grid")
        rows = np.concatenate([grid.interior_nodes, grid.n_nodes + grid.interior_nodes])
        self.grid = grid
        self.U = mat[rows].tocsr()
        self.n_fields = mat.shape[1]

    def velocity(self, xi: np.ndarray) -> np.ndarray:
        """Box-shaped velocities ``(P, 2, ny, nx)`` for coefficients ``(P, J)``."""
        g = self.grid
        xi = np.atleast_2d(xi)
        V = (self.U @ xi.T).T  # (P, 2 n_int)
        n = g.n_interior
        out = np.zeros((xi.shape[0], 2, g.n_nodes))
        out[:, 0, g.interior_nodes] = V[:, :n]
        out[:, 1, g.interior_nodes] = V[:, n:]
        return out.reshape(xi.shape[0], 2, g.ny, g.nx)

    def apply(self, xi: np.ndarray, T: np.ndarray) -> np.ndarray:
        """``B(sum_j xi_j u_j) T`` for interior batches ``T`` of shape ``(P, n_int)``."""
        g = self.grid
        T = np.atleast_2d(T)
        box = np.zeros((T.shape[0], g.n_nodes))
        box[:, g.interior_nodes] = T
        out = apply_advection(g, self.velocity(xi), box.reshape(T.shape[0], g.ny, g.nx))
        return out.reshape(T.shape[0], -1)[:, g.interior_nodes]


def path_generator(seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by ``(seed, path_id)``."""
    return np.random.Generator(np.random.Philox(key=np.array([int(seed), int(path_id)], dtype=np.uint64)))


def grad_norm_sq(grid: Grid, T: np.ndarray, lap: sp.csr_matrix | None = None) -> np.ndarray:
    """``|grad T|^2 = -<T, Lap T>`` for one or a batch of interior vectors."""
    lap = assemble_laplacian(grid) if lap is None else lap
    T = np.asarray(T)
    LT = (lap @ T.T).T if T.ndim == 2 else lap @ T
    return -grid.h**2 * np.sum(T * LT, axis=-1)


# --------------------------------------------------------------------------
# single-path stepping


@dataclass
class SpdeState:
    t: float
    T: np.ndarray = field(repr=False)
    energy: float = 0.0
    step: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False)


def step(state: SpdeState, solver: ImplicitSolver, noise: NoiseOperator | None, grid: Grid, lap=None) -> SpdeState:
    """Advance one path by one step (draws from ``state.rng`` if there is noise)."""
    dt = solver.dt
    Ts = solver.solve(state.T)
    energy = state.energy + dt * float(grad_norm_sq(grid, Ts, lap))
    if noise is not None and noise.n_fields:
        xi = state.rng.standard_normal(noise.n_fields)
        Ts = Ts + math.sqrt(dt) * noise.apply(xi[None], Ts[None])[0]
    return SpdeState(t=state.t + dt, T=Ts, energy=energy, step=state.step + 1, rng=state.rng)


# --------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    path_ids: np.ndarray
    times: np.ndarray
    phi_pairing: np.ndarray = field(repr=False)  # (P, n_checkpoints)
    l2norm_sq: np.ndarray = field(repr=False)
    energy_integral: np.ndarray = field(repr=False)
    seed: int = 0
    integral: np.ndarray | None = field(default=None, repr=False)  # int_D |T| at checkpoints

    @property
    def n_paths(self) -> int:
        return int(self.path_ids.size)

    def subset(self, idx) -> "PathEnsemble":
        idx = np.asarray(idx)
        return PathEnsemble(
            self.path_ids[idx],
            self.times,
            self.phi_pairing[idx],
            self.l2norm_sq[idx],
            self.energy_integral[idx],
            self.seed,
            None if self.integral is None else self.integral[idx],
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "phi_pairing", "l2norm_sq", "energy_integral"])
            for p, pid in enumerate(self.path_ids):
                for c, t in enumerate(self.times):
                    w.writerow(
                        [int(pid), repr(float(t)), repr(float(self.phi_pairing[p, c])),
                         repr(float(self.l2norm_sq[p, c])), repr(float(self.energy_integral[p, c]))]
                    )


def simulate_paths(
    grid: Grid,
    drift,
    noise: NoiseOperator | None,
    T0: np.ndarray,
    cfg: TimeStepConfig,
    phi: np.ndarray,
    path_ids,
    *,
    chunk: int = 250,
    noise_substeps: int = 1,
    solver: ImplicitSolver | None = None,
    progress=None,
) -> PathEnsemble:
    """Run independent paths and record checkpoint observables.

    ``T0`` and ``phi`` are full-node fields.  With ``noise_substeps = s``
    each increment is ``(xi_1 + ... + xi_s) / sqrt(s)`` over ``s``
    consecutive blocks of the path stream, which couples a run at step
    ``dt`` with a run at ``dt / s`` driven by the same Brownian path.
    """
    path_ids = np.asarray(path_ids, dtype=np.int64)
    solver = solver or ImplicitSolver(drift, cfg.dt)
    if abs(solver.dt - cfg.dt) > 1e-15 * cfg.dt:
        raise ValueError("solver was factorised for a different dt")
    lap = assemble_laplacian(grid)
    T0i = grid.restrict(np.where(grid.interior, T0, 0.0))
    phii = grid.restrict(phi)
    ck = cfg.checkpoint_steps()
    n_ck = ck.size
    P = path_ids.size
    out_phi = np.zeros((P, n_ck))
    out_l2 = np.zeros((P, n_ck))
    out_E = np.zeros((P, n_ck))
    out_int = np.zeros((P, n_ck))
    h2 = grid.h**2
    sq = math.sqrt(cfg.dt)
    J = 0 if noise is None else noise.n_fields
    for start in range(0, P, chunk):
        ids = path_ids[start:start + chunk]
        gens = [path_generator(cfg.seed, pid) for pid in ids] if J else []
        T = np.tile(T0i, (ids.size, 1))
        E = np.zeros(ids.size)
        c = 0
        for n in range(1, ck[-1] + 1):
            Ts = solver.solve(T)
            E += cfg.dt * grad_norm_sq(grid, Ts, lap)
            if J:
                xi = np.empty((ids.size, J))
                for i, g in enumerate(gens):
                    if noise_substeps == 1:
                        xi[i] = g.standard_normal(J)
                    else:
                        xi[i] = g.standard_normal((noise_substeps, J)).sum(axis=0) / math.sqrt(noise_substeps)
                Ts = Ts + sq * noise.apply(xi, Ts)
            T = Ts
            while c < n_ck and ck[c] == n:
                sl = slice(start, start + ids.size)
                out_phi[sl, c] = h2 * np.sum(T * phii, axis=1)  # row-wise, independent of batch size
                out_l2[sl, c] = h2 * np.sum(T * T, axis=1)
                out_E[sl, c] = E
                out_int[sl, c] = h2 * np.abs(T).sum(axis=1)
                c += 1
        if progress is not None:
            progress(start + ids.size, P)
    return PathEnsemble(
        path_ids=path_ids,
        times=ck * cfg.dt,
        phi_pairing=out_phi,
        l2norm_sq=out_l2,
        energy_integral=out_E,
        seed=int(cfg.seed),
        integral=out_int,
    )


@dataclass(frozen=True, eq=False)
class EffectiveTrajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)  # (n_checkpoints, n_interior)
    energy: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)

    def full(self, i: int) -> np.ndarray:
        return self.grid.extend(self.states[i])

    def pairing(self, phi: np.ndarray) -> np.ndarray:
        return self.grid.h**2 * np.sum(self.states * self.grid.restrict(phi), axis=1)

    def norm_sq(self) -> np.ndarray:
        return self.grid.h**2 * np.sum(self.states**2, axis=1)


def solve_effective(grid: Grid, tensor, T0: np.ndarray, cfg: TimeStepConfig) -> EffectiveTrajectory:
    """Backward-Euler trajectory of the mean equation at the checkpoints.

    ``tensor`` is a :class:`DiffusivityTensor` or an already assembled
    operator.
    """
    op = assemble_diffusion(grid, tensor) if isinstance(tensor, DiffusivityTensor) else tensor
    solver = ImplicitSolver(op, cfg.dt)
    lap = assemble_laplacian(grid)
    T = grid.restrict(np.where(grid.interior, T0, 0.0))
    ck = cfg.checkpoint_steps()
    states, energy = [], []
    E = 0.0
    c = 0
    for n in range(1, ck[-1] + 1):
        T = solver.solve(T)
        E += cfg.dt * float(grad_norm_sq(grid, T, lap))
        while c < ck.size and ck[c] == n:
            states.append(T.copy())
            energy.append(E)
            c += 1
    return EffectiveTrajectory(times=ck * cfg.dt, states=np.array(states), energy=np.array(energy), grid=grid)


def energy_report(ensemble: PathEnsemble, T0_norm_sq: float, kappa: float, tol: float = 0.0) -> dict:
    """Pathwise check ``E(t_end) <= (1 + tol) |T0|^2 / (2 kappa)`` plus the mean balance."""
    bound = T0_norm_sq / (2.0 * kappa)
    ratio = ensemble.energy_integral[:, -1] / bound
    balance = ensemble.l2norm_sq + 2.0 * kappa * ensemble.energy_integral
    mean_bal = balance.mean(axis=0)
    if ensemble.n_paths > 1:
        se_bal = balance.std(axis=0, ddof=1) / math.sqrt(ensemble.n_paths)
    else:
        se_bal = np.zeros_like(mean_bal)
    violations = int(np.sum(ratio > 1.0 + tol))
    return {
        "bound": bound,
        "tol": tol,
        "violations": violations,
        "ratio_max": float(ratio.max()),
        "ratio_mean": float(ratio.mean()),
        "ratio_quantiles": [float(q) for q in np.quantile(ratio, [0.05, 0.5, 0.95])],
        "balance_mean": [float(x) for x in mean_bal],
        "balance_stderr": [float(x) for x in se_bal],
        "T0_norm_sq": T0_norm_sq,
        "passed": violations == 0,
    }
