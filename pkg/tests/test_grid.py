import numpy as np
import pytest

from eddyheat.grid import build_grid, dot, inner_layer_mask


def test_square_quarter_spacing_nodes():
    with pytest.warns(UserWarning):
        g = build_grid("square", 1 / 4)
    pts = sorted(zip(g.x[g.interior], g.y[g.interior]))
    expect = sorted((a, b) for a in (0.25, 0.5, 0.75) for b in (0.25, 0.5, 0.75))
    assert np.allclose(pts, expect)


def test_disk_half_spacing_nodes():
    with pytest.warns(UserWarning):
        g = build_grid("disk", 1 / 2)
    pts = {(float(a), float(b)) for a, b in zip(g.x[g.interior], g.y[g.interior])}
    # every h-lattice point with |x| < 1, diagonals included
    expect = {(a, b) for a in (-0.5, 0.0, 0.5) for b in (-0.5, 0.0, 0.5)}
    assert pts == expect


def test_square_node_count():
    assert build_grid("square", 1 / 128).n_interior == 127**2


def test_bad_spacing():
    with pytest.raises(ValueError):
        build_grid("square", 0.75)
    with pytest.raises(ValueError):
        build_grid("triangle", 0.1)


def test_inner_layer_mask(square64):
    assert not inner_layer_mask(square64, 0.5).any()
    assert np.array_equal(inner_layer_mask(square64, 1e-9), square64.interior)
    g = build_grid("disk", 1 / 64)
    m = inner_layer_mask(g, 0.25)
    r = np.hypot(g.x, g.y)
    assert np.all(r[m] < 0.75)
    assert np.all(m[(r < 0.75 - g.h) & g.interior])


def test_dot_areas(square64):
    one = np.ones(square64.n_nodes)
    assert dot(square64, one, one) == pytest.approx(1.0, abs=3 * square64.h)
    g = build_grid("disk", 1 / 64)
    one = np.ones(g.n_nodes)
    assert dot(g, one, one) == pytest.approx(np.pi, abs=10 * g.h)


def test_dot_odd_symmetry_is_zero(square64):
    g = square64
    f = np.cos(np.pi * (g.x - 0.5))
    h = np.sin(np.pi * (g.x - 0.5)) * g.y
    assert abs(dot(g, f, h)) < 1e-14


def test_grid_is_read_only(square64):
    with pytest.raises(ValueError):
        square64.x[0] = 1.0
