"""Homogeneous isotropic divergence-free covariances with a power-law shell spectrum.

    Q(z) = sigma2 k0^zeta  int_{k0 <= |k| <= k1} |k|^(-d-zeta) e^{i k.z} (I - k k^T/|k|^2) dk

In two dimensions the angular integral of the projector is closed form,

    int_0^{2 pi} (I - k^ k^T) e^{i rho cos(theta)} dtheta
        = pi (J0 + J2)(rho) z^ z^T + pi (J0 - J2)(rho) (I - z^ z^T),

so only a one-dimensional radial quadrature remains.  In three dimensions a
product Gauss rule over the sphere is used.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy import integrate
from scipy.special import jv

# sup_x sqrt(x) |J0(x) -+ J2(x)| is below this (numerically 1.5958)
_BESSEL_ENVELOPE = 1.6


class Regime(enum.Enum):
    UV_CASCADE = "UVcascade"
    IR_CASCADE = "IRcascade"


@dataclass(frozen=True)
class KraichnanParams:
    sigma2: float
    zeta: float
    k0: float
    k1: float = math.inf
    d: int = 2

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not self.k0 > 0:
            raise ValueError("k0 must be positive")
        if not self.k1 >= self.k0:
            raise ValueError("need k1 >= k0")
        if self.d not in (2, 3):
            raise ValueError("only d = 2 and d = 3 are supported")
        if self.zeta < -self.d:
            raise ValueError(f"zeta={self.zeta} < -d is not admissible")
        if self.zeta <= 0 and math.isinf(self.k1):
            raise ValueError("zeta <= 0 needs a finite k1 (spectrum not integrable)")

    @property
    def infinite_shell(self) -> bool:
        return math.isinf(self.k1)


def radial_normalisation(p: KraichnanParams) -> float:
    """``k0^zeta int_{k0}^{k1} r^(-1-zeta) dr`` (the log form at ``zeta = 0``)."""
    if p.k1 == p.k0:
        return 0.0
    if p.zeta == 0:
        return math.log(p.k1 / p.k0)
    if p.infinite_shell:
        return 1.0 / p.zeta
    return -math.expm1(p.zeta * math.log(p.k0 / p.k1)) / p.zeta


def projector_sphere_integral(d: int) -> float:
    """``int_{S^{d-1}} (I - k^ k^T) dS`` is this multiple of ``I``."""
    return math.pi if d == 2 else 8.0 * math.pi / 3.0


def covariance_at_origin(p: KraichnanParams) -> np.ndarray:
    """Closed form ``Q(0) = sigma2 * radial_normalisation * projector_integral * I``."""
    return p.sigma2 * radial_normalisation(p) * projector_sphere_integral(p.d) * np.eye(p.d)


def _radial_quad(func, a: float, b: float, period: float) -> float:
    """Adaptive quadrature split into pieces of about one oscillation."""
    if b <= a:
        return 0.0
    n = max(1, min(20000, int(math.ceil((b - a) / period))))
    edges = np.linspace(a, b, n + 1)
    total = 0.0
    with warnings.catch_warnings():
        # pieces that integrate to ~0 trip the relative roundoff detector
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += integrate.quad(func, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
    return total


def _covariance_2d(p: KraichnanParams, z: np.ndarray, rtol: float):
    rho = float(np.hypot(*z))
    if rho == 0.0:
        return covariance_at_origin(p), 0.0
    zh = z / rho
    pref = p.sigma2 * p.k0**p.zeta * math.pi
    k1 = p.k1
    tail = 0.0
    if p.infinite_shell:
        # truncate where the Bessel envelope bounds the tail below rtol * |Q(0)|
        scale = float(covariance_at_origin(p)[0, 0])
        a = p.zeta + 0.5
        c = pref * _BESSEL_ENVELOPE / math.sqrt(rho) / a
        k1 = max(p.k0 * 2.0, (c / (rtol * scale)) ** (1.0 / a))
        k1 = min(k1, p.k0 + 2e4 * 2 * math.pi / rho)
        tail = c * k1 ** (-a)
    period = 2.0 * math.pi / rho
    par = _radial_quad(lambda k: k ** (-1 - p.zeta) * (jv(0, k * rho) + jv(2, k * rho)), p.k0, k1, period)
    perp = _radial_quad(lambda k: k ** (-1 - p.zeta) * (jv(0, k * rho) - jv(2, k * rho)), p.k0, k1, period)
    P = np.outer(zh, zh)
    return pref * (par * P + perp * (np.eye(2) - P)), tail


def _sphere_rule(n_theta: int = 48, n_phi: int = 96):
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - ct**2)
    dirs = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(n_phi))], axis=-1
    ).reshape(-1, 3)
    w = np.outer(wt, np.full(n_phi, 2 * math.pi / n_phi)).ravel()
    return dirs, w


def _covariance_3d(p: KraichnanParams, z: np.ndarray, n_radial: int = 4000):
    if not np.any(z):
        return covariance_at_origin(p), 0.0
    if p.infinite_shell:
        raise ValueError("d = 3 off-origin evaluation needs a finite k1")
    dirs, w = _sphere_rule()
    proj = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    # Gauss-Legendre in log k over the shell
    x, wx = np.polynomial.legendre.leggauss(64)
    edges = np.geomspace(p.k0, p.k1, max(2, n_radial // 64) + 1)
    out = np.zeros((3, 3))
    for lo, hi in zip(edges[:-1], edges[1:]):
        t = 0.5 * (np.log(lo) + np.log(hi)) + 0.5 * (np.log(hi) - np.log(lo)) * x
        k = np.exp(t)
        wk = 0.5 * (np.log(hi) - np.log(lo)) * wx * k  # dk = k dt
        phase = np.cos(k[:, None] * (dirs @ z)[None, :])  # imaginary part cancels
        radial = wk * k ** (2 - 3 - p.zeta)
        out += np.einsum("r,rs,s,sij->ij", radial, phase, w, proj)
    return p.sigma2 * p.k0**p.zeta * out, 0.0


def covariance_at(p: KraichnanParams, z, rtol: float = 1e-10, with_error: bool = False):
    """``Q(z)`` as a real symmetric ``d x d`` matrix.

    For ``k1 = inf`` in 2D the radial integral is truncated where the
    Bessel envelope bound of the remainder drops below ``rtol * Q(0)``;
    ``with_error=True`` also returns that bound.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != p.d:
        raise ValueError(f"point has dimension {z.size}, expected {p.d}")
    if not np.all(np.isfinite(z)):
        raise ValueError("point must be finite")
    if p.d == 2:
        Q, err = _covariance_2d(p, z, rtol)
    else:
        Q, err = _covariance_3d(p, z)
    Q = 0.5 * (Q + Q.T)
    return (Q, err) if with_error else Q


def angular_fraction(d: int) -> float:
    """Fraction of the unit sphere where ``|k^ . xi^| <= 1/2``."""
    return 1.0 / 3.0 if d == 2 else 0.5


def constants(p: KraichnanParams) -> dict:
    """``C`` (angular measure of the cone set) and ``C' = C * radial normalisation``."""
    sphere = 2.0 * math.pi if p.d == 2 else 4.0 * math.pi
    C = angular_fraction(p.d) * sphere
    return {"C": C, "C_prime": C * radial_normalisation(p), "angular_fraction": angular_fraction(p.d)}


def q_lower_bound(p: KraichnanParams) -> float:
    """``(3/4) sigma2 C'``: the cone lower bound for ``lambda_min(Q(0))``."""
    return 0.75 * p.sigma2 * constants(p)["C_prime"]


def epsQ_upper_bound(p: KraichnanParams) -> float:
    return p.sigma2 * p.k0 ** (-p.d)


def torus_cross_check(p: KraichnanParams, n: int | None = None, length: float = 2 * math.pi, use_eigsh: bool = True) -> dict:
    """Top eigenvalue of the shell multiplier on a periodic ``n^d`` grid.

    The operator multiplies the Fourier coefficient of mode ``k`` (lattice
    spacing ``2 pi / length``) by ``sigma2 k0^zeta |k|^(-d-zeta) (I - k^ k^T)``
    inside the shell.  Shell radii are snapped to the nearest lattice radii
    inside ``[k0, k1]``; both raw and snapped values are reported.
    """
    if p.d != 2:
        raise ValueError("torus cross-check is implemented in 2D")
    dk = 2 * math.pi / length
    if n is None:
        reach = p.k1 if not p.infinite_shell else 4 * p.k0
        n = int(min(256, max(32, 2 * math.ceil(reach / dk) + 4)))
    freq = np.fft.fftfreq(n, d=1.0 / n) * dk
    KX, KY = np.meshgrid(freq, freq, indexing="xy")
    K = np.hypot(KX, KY)
    shell = (K >= p.k0 * (1 - 1e-12)) & (K <= p.k1 * (1 + 1e-12)) & (K > 0)
    # modes at |k| = n/2 * dk are unpaired; keep the lattice symmetric
    shell &= (np.abs(KX) < 0.5 * n * dk) & (np.abs(KY) < 0.5 * n * dk)
    if not shell.any():
        raise ValueError("no lattice modes in the shell; enlarge n or length")
    mult = np.zeros_like(K)
    mult[shell] = p.sigma2 * p.k0**p.zeta * K[shell] ** (-p.d - p.zeta)
    with np.errstate(invalid="ignore", divide="ignore"):
        kx = np.where(K > 0, KX / np.where(K > 0, K, 1), 0)
        ky = np.where(K > 0, KY / np.where(K > 0, K, 1), 0)
    top_modes = float(mult.max())
    out = {
        "k0_snapped": float(K[shell].min()),
        "k1_snapped": float(K[shell].max()),
        "n_modes": int(shell.sum()),
        "n": n,
        "top_mode_value": top_modes,
        "bound": epsQ_upper_bound(p),
    }
    if use_eigsh:
        def apply(v):
            v = v.reshape(2, n, n)
            vh = np.fft.fft2(v)
            dot = kx * vh[0] + ky * vh[1]
            wx = mult * (vh[0] - kx * dot)
            wy = mult * (vh[1] - ky * dot)
            return np.real(np.fft.ifft2(np.stack([wx, wy]))).ravel()

        op = spla.LinearOperator((2 * n * n, 2 * n * n), matvec=apply, dtype=float)
        v0 = np.random.default_rng(0).standard_normal(2 * n * n)
        vals = spla.eigsh(op, k=1, which="LA", tol=1e-12, v0=v0)[0]
        out["top_eigenvalue"] = float(vals[0])
    else:
        out["top_eigenvalue"] = top_modes
    return out


@dataclass(frozen=True)
class RegimeReport:
    q_lower: float
    epsQ_upper: float
    regime: Regime
    enstrophy_case: bool
    white_in_space: bool
    favourable: bool | None
    constants: dict

    def as_dict(self) -> dict:
        return {
            "q_lower": self.q_lower,
            "epsQ_upper": self.epsQ_upper,
            "regime": self.regime.value,
            "enstrophy_case": self.enstrophy_case,
            "white_in_space": self.white_in_space,
            "favourable": self.favourable,
            **self.constants,
        }


def regime_report(p: KraichnanParams, q_min: float | None = None, eps_max: float | None = None) -> RegimeReport:
    """Classify the spectrum and evaluate both bounds.

    ``favourable`` is ``q_lower >= q_min and epsQ_upper <= eps_max`` when
    both thresholds are given, else ``None``.
    """
    q = q_lower_bound(p)
    e = epsQ_upper_bound(p)
    fav = None
    if q_min is not None and eps_max is not None:
        fav = bool(q >= q_min and e <= eps_max)
    return RegimeReport(
        q_lower=q,
        epsQ_upper=e,
        regime=Regime.UV_CASCADE if p.zeta > 0 else Regime.IR_CASCADE,
        enstrophy_case=(p.zeta == 0 and p.d == 2),
        white_in_space=(p.zeta == -p.d),
        favourable=fav,
        constants=constants(p),
    )
