"""Uniform Cartesian grids on the unit disk and unit square.

Fields live on every node of the bounding box as flat numpy arrays
(``shape == (grid.n_nodes,)`` for scalars, ``(grid.n_nodes, 2)`` for
vectors).  Non-interior nodes carry the Dirichlet value zero.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np


class Domain(enum.Enum):
    UNIT_DISK = "disk"
    UNIT_SQUARE = "square"

    @property
    def area(self) -> float:
        return np.pi if self is Domain.UNIT_DISK else 1.0

    @property
    def diameter(self) -> float:
        return 2.0 if self is Domain.UNIT_DISK else np.sqrt(2.0)

    def distance_to_boundary(self, x, y):
        """Exact Euclidean distance to the boundary (points inside the closure)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self is Domain.UNIT_DISK:
            return 1.0 - np.hypot(x, y)
        return np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, Domain):
            return value
        value = str(value).strip().lower()
        for member in cls:
            if value in (member.value, member.name.lower(), "unit" + member.value):
                return member
        raise ValueError(f"unknown domain {value!r}")


# Nodes closer than this to the boundary count as boundary nodes.
_BOUNDARY_TOL = 1e-12

MAX_SPACING = 0.5
COARSE_SPACING = 1.0 / 8.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Masked uniform grid.

    Nodes are ordered row-major over the bounding box: node ``k`` has
    column ``k % nx`` and row ``k // nx``.
    """

    domain: Domain
    h: float
    nx: int
    ny: int
    origin: tuple[float, float]
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    boundary_distance: np.ndarray = field(repr=False)
    interior_nodes: np.ndarray = field(repr=False)
    unknown_index: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_interior(self) -> int:
        return int(self.interior_nodes.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def nodes(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def fingerprint(self) -> tuple:
        return (self.domain.value, float(self.h), self.nx, self.ny)

    def restrict(self, f: np.ndarray) -> np.ndarray:
        """Values at interior nodes (the unknowns of the discrete operators)."""
        f = np.asarray(f)
        return f[..., self.interior_nodes] if f.shape[-1] == self.n_nodes else f[self.interior_nodes]

    def extend(self, v: np.ndarray) -> np.ndarray:
        """Full-node field from interior values, zero elsewhere."""
        v = np.asarray(v)
        out = np.zeros(v.shape[:-1] + (self.n_nodes,), dtype=v.dtype)
        out[..., self.interior_nodes] = v
        return out

    def scalar(self, func) -> np.ndarray:
        """Sample ``func(x, y)`` and zero it outside the interior."""
        values = np.asarray(func(self.x, self.y), dtype=float) * np.ones(self.n_nodes)
        return np.where(self.interior, values, 0.0)

    def check_field(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.n_nodes:
            raise ValueError(
                f"field has {f.shape[0]} nodes, grid has {self.n_nodes}"
            )
        return f


def build_grid(domain: Domain | str, h: float) -> Grid:
    """Build the masked grid of spacing ``h`` on ``domain``.

    Spacings of 1/8 and coarser are accepted (the enumeration examples use
    them) but trigger a warning; spacings above 1/2 are rejected.
    """
    domain = Domain.parse(domain)
    h = float(h)
    if not (0.0 < h <= MAX_SPACING):
        raise ValueError(f"grid spacing h={h} outside (0, {MAX_SPACING}]")
    if h >= COARSE_SPACING:
        warnings.warn(f"grid spacing h={h} is too coarse for quantitative use", stacklevel=2)

    n = int(np.floor(1.0 / h + 1e-9))
    if domain is Domain.UNIT_SQUARE:
        ticks = h * np.arange(n + 1)
        origin = (0.0, 0.0)
    else:
        ticks = h * np.arange(-n, n + 1)
        origin = (-n * h, -n * h)
    xx, yy = np.meshgrid(ticks, ticks)
    x = xx.ravel()
    y = yy.ravel()
    if domain is Domain.UNIT_DISK:
        dist = 1.0 - np.hypot(x, y)
    else:
        dist = domain.distance_to_boundary(x, y)
    interior = dist > _BOUNDARY_TOL
    dist = np.maximum(dist, 0.0)
    interior_nodes = np.flatnonzero(interior)
    unknown_index = np.full(x.size, -1, dtype=np.int64)
    unknown_index[interior_nodes] = np.arange(interior_nodes.size)
    for arr in (x, y, interior, dist, interior_nodes, unknown_index):
        arr.setflags(write=False)
    return Grid(
        domain=domain,
        h=h,
        nx=ticks.size,
        ny=ticks.size,
        origin=origin,
        x=x,
        y=y,
        interior=interior,
        boundary_distance=dist,
        interior_nodes=interior_nodes,
        unknown_index=unknown_index,
    )


def inner_layer_mask(grid: Grid, delta: float) -> np.ndarray:
    """Nodes of ``D_delta``: strictly farther than ``delta`` from the boundary."""
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta={delta} outside (0, 1)")
    return grid.interior & (grid.boundary_distance > delta)


def dot(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    """Midpoint quadrature of the L2 pairing over the interior nodes.

    Vector fields (trailing axis of length 2) are paired componentwise.
    """
    f = grid.check_field(f)
    g = grid.check_field(g)
    if f.shape != g.shape:
        raise ValueError(f"field shapes differ: {f.shape} vs {g.shape}")
    prod = f * g
    if prod.ndim > 1:
        prod = prod.reshape(grid.n_nodes, -1).sum(axis=1)
    return float(grid.h**2 * prod[grid.interior].sum())


def norm_sq(grid: Grid, f: np.ndarray) -> float:
    return dot(grid, f, f)
