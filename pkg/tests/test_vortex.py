import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from eddyheat.grid import Domain
from eddyheat.vortex import (
    ConfigError,
    VortexConfig,
    build_lattice,
    build_profile,
    discrete_divergence,
    mollifier,
    psi0,
    require_admissible,
    validate_config,
)


def test_validate_desk_config():
    assert validate_config(VortexConfig(200, 30, 0.1, 0.07, 1 / 200, 0.01)) == []


def test_validate_reports_small_r():
    out = validate_config(VortexConfig(100, 25, 0.1, 0.11, 1 / 100, 1.0))
    assert any("12/N" in v or "r" in v for v in out) and out


def test_validate_reports_small_M():
    out = validate_config(VortexConfig(200, 20, 0.1, 0.07, 1 / 200, 1.0))
    assert any("M" in v for v in out)
    with pytest.raises(ConfigError):
        require_admissible(VortexConfig(200, 20, 0.1, 0.07, 1 / 200, 1.0))


def test_small_lattice_enumeration():
    cfg = VortexConfig(5, 30, 0.3, 0.1, 0.2, 1.0)
    lat = build_lattice(Domain.UNIT_SQUARE, cfg)
    pts = {tuple(np.round(c, 12)) for c in lat.centers}
    assert pts == {(0.4, 0.4), (0.4, 0.6), (0.6, 0.4), (0.6, 0.6)}


def test_empty_lattice():
    with pytest.raises(ValueError):
        build_lattice(Domain.UNIT_SQUARE, VortexConfig(10, 30, 0.6, 0.1, 0.1, 1.0))


def test_same_class_spacing():
    cfg = VortexConfig.admissible(200)
    lat = build_lattice(Domain.UNIT_SQUARE, cfg)
    cls = lat.class_index()
    c = lat.centers
    best = np.inf
    for k in np.unique(cls)[:50]:
        pts = c[cls == k]
        if len(pts) > 1:
            d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
            best = min(best, d[d > 0].min())
    assert best == pytest.approx(cfg.M / cfg.N)
    assert np.all(lat.centers[:, 0] > cfg.delta)


def test_profile_pieces():
    rho = np.array([0.05, 0.2, 0.3])
    assert np.allclose(psi0(rho), np.log(rho) / (2 * np.pi))
    assert np.all(psi0(np.array([0.7, 0.9])) == 0)
    mass, _ = integrate.quad(lambda s: 2 * np.pi * s * mollifier(s), 0, 1)
    assert mass == pytest.approx(1.0, rel=1e-8)


def test_field_vanishes_outside_support():
    p = build_profile(1e-3)
    x = np.linspace(2 / 3 + 2e-3, 1.0, 20)
    assert np.all(p.w(x, 0 * x) == 0)


def test_near_kernel_regime():
    p = build_profile(1e-3)
    w = p.w(np.array([1 / 8]), np.array([0.0]))
    assert np.linalg.norm(w) == pytest.approx(4 / np.pi, rel=1e-2)


def test_gamma_zero_fields_vanish(square64):
    from eddyheat.vortex import assemble_basis

    cfg = VortexConfig(50, 25, 0.25, 0.245, 1 / 50, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = assemble_basis(square64, cfg, build_profile(cfg))
    assert b.matrix.count_nonzero() == 0


def test_basis_vanishes_on_boundary(small_basis):
    g = small_basis.grid
    mat = small_basis.matrix.tocsr()
    boundary = np.flatnonzero(~g.interior)
    rows = np.concatenate([boundary, g.n_nodes + boundary])
    assert abs(mat[rows]).sum() == 0


def test_profile_divergence_free():
    p = build_profile(1 / 200)
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.7, 0.7, size=(200, 2))
    pts = pts[np.hypot(*pts.T) > 0.02]
    eta = 1e-5

    def w(dx, dy):
        return p.w(pts[:, 0] + dx, pts[:, 1] + dy)

    div = (w(eta, 0)[:, 0] - w(-eta, 0)[:, 0] + w(0, eta)[:, 1] - w(0, -eta)[:, 1]) / (2 * eta)
    scale = np.abs(w(0, 0)).max() / 0.02
    assert np.abs(div).max() < 1e-4 * scale


def test_same_class_fields_disjoint(small_basis):
    cls = small_basis.lattice.class_index()
    idx = np.flatnonzero(cls == cls[0])
    assert idx.size >= 2
    a, b = small_basis.field(idx[0]), small_basis.field(idx[1])
    assert np.all(np.abs(a * b).sum(axis=1) == 0)


def test_norm_w_sq_matches_quadrature():
    p = build_profile(1 / 200)
    val, _ = integrate.quad(lambda s: 2 * math.pi * s * p.dpsi(s) ** 2, 0, p.support, limit=400, points=[1 / 200, 1 / 3, 2 / 3])
    assert p.norm_w_sq == pytest.approx(val, rel=1e-3)
