"""Equal-area grids on S^1 and S^2 and sets represented as cell occupancy.

S^1 is cut into ``n_phi`` equal arcs; cell i is centred at angle
psi_i = -pi + (i + 1/2) 2 pi / n from the north pole, i.e. at
(sin psi_i, cos psi_i).  S^2 is cut into ``n_t`` rings uniform in height and
``n_phi`` sectors uniform in azimuth; by Archimedes every cell has the same
area.  Flat cell indices are row-major: ring index first, then azimuth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, PreconditionError
from .rng import generator
from .sphere_core import Cap, Point, north_pole

SCHEMA = "sphere-symm/1"
# nodes within this distance of a cap boundary count as inside
CAP_EPS = 1e-12


@dataclass(frozen=True)
class Grid:
    d: int
    n_phi: int
    n_t: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise PreconditionError("set-level grids exist only for d in {1, 2}")
        if self.d == 1 and (self.n_t != 1 or self.n_phi < 2 or self.n_phi % 2):
            raise PreconditionError("a circle grid needs an even number of cells and n_t = 1")
        if self.d == 2 and (self.n_phi < 3 or self.n_t < 2):
            raise PreconditionError("a sphere grid needs n_phi >= 3 and n_t >= 2")

    @classmethod
    def circle(cls, n_cells=4096):
        return cls(1, int(n_cells), 1)

    @classmethod
    def sphere(cls, n_phi=256, n_t=256):
        return cls(2, int(n_phi), int(n_t))

    @classmethod
    def default(cls, d):
        return cls.circle() if d == 1 else cls.sphere()

    @property
    def n_cells(self):
        return self.n_phi * self.n_t

    @property
    def cell_measure(self):
        return 1.0 / self.n_cells

    @property
    def shape(self):
        return (self.n_t, self.n_phi)

    @property
    def cell_diameter(self):
        """Geodesic diameter of an equatorial cell."""
        if self.d == 1:
            return 2.0 * math.pi / self.n_phi
        return math.hypot(2.0 / self.n_t, 2.0 * math.pi / self.n_phi)

    @property
    def half_cell(self):
        """Half the smallest equatorial cell extent."""
        if self.d == 1:
            return math.pi / self.n_phi
        return 0.5 * min(2.0 / self.n_t, 2.0 * math.pi / self.n_phi)

    @property
    def eps_grid(self):
        return 4.0 * self.cell_diameter

    @cached_property
    def ring_heights(self):
        """Cell-centre heights t_k of the rings (d = 2)."""
        k = np.arange(self.n_t)
        return -1.0 + (2.0 * k + 1.0) / self.n_t

    @cached_property
    def angles(self):
        """Angle of each azimuth column: psi_i for d = 1, phi_m for d = 2."""
        i = np.arange(self.n_phi)
        if self.d == 1:
            return -math.pi + (i + 0.5) * (2.0 * math.pi / self.n_phi)
        return (i + 0.5) * (2.0 * math.pi / self.n_phi)

    @cached_property
    def nodes(self):
        if self.d == 1:
            psi = self.angles
            out = np.stack([np.sin(psi), np.cos(psi)], axis=-1)
        else:
            t = self.ring_heights[:, None]
            s = np.sqrt(1.0 - t * t)
            phi = self.angles[None, :]
            out = np.stack(np.broadcast_arrays(s * np.cos(phi), s * np.sin(phi), t), axis=-1)
            out = out.reshape(-1, 3)
        out.setflags(write=False)
        return out

    @cached_property
    def heights(self):
        """Height t of every cell centre (flat)."""
        out = np.ascontiguousarray(self.nodes[:, -1])
        out.setflags(write=False)
        return out

    @cached_property
    def height_rank(self):
        """Integer rank of each cell by height; 0 is highest, ties share a rank."""
        if self.d == 1:
            i = np.arange(self.n_phi)
            return np.abs(2 * i + 1 - self.n_phi) // 2
        k = np.repeat(np.arange(self.n_t), self.n_phi)
        return self.n_t - 1 - k

    @cached_property
    def azimuth_index(self):
        if self.d == 1:
            return np.arange(self.n_phi)
        return np.tile(np.arange(self.n_phi), self.n_t)

    @cached_property
    def north_order(self):
        """Cells by decreasing height; ties broken by azimuth index ascending."""
        return np.lexsort((self.azimuth_index, self.height_rank))

    @cached_property
    def column_index(self):
        """Boundary node carrying each cell: azimuth m for d = 2, 0/1 for x_1 < 0 / x_1 > 0 on d = 1."""
        if self.d == 1:
            return (np.arange(self.n_phi) >= self.n_phi // 2).astype(np.intp)
        return self.azimuth_index

    @property
    def n_columns(self):
        return 2 if self.d == 1 else self.n_phi

    @property
    def column_mass(self):
        """mu-measure of one boundary node."""
        return 1.0 / self.n_columns

    def locate(self, x):
        """Index of the cell containing each unit vector in x (shape (..., d+1))."""
        x = np.asarray(x, dtype=float)
        if self.d == 1:
            psi = np.arctan2(x[..., 0], x[..., 1])
            i = np.floor((psi + math.pi) * (self.n_phi / (2.0 * math.pi))).astype(np.intp)
            return np.mod(i, self.n_phi)
        t = np.clip(x[..., 2], -1.0, 1.0)
        k = np.clip(np.floor((t + 1.0) * (self.n_t / 2.0)).astype(np.intp), 0, self.n_t - 1)
        phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * math.pi)
        m = np.mod(np.floor(phi * (self.n_phi / (2.0 * math.pi))).astype(np.intp), self.n_phi)
        return k * self.n_phi + m

    def header(self):
        return {"d": self.d, "n_phi": self.n_phi, "n_t": self.n_t}


class SphericalSet:
    """Immutable subset of a grid: one occupancy bit per cell."""

    __slots__ = ("grid", "occupancy")

    def __init__(self, grid, occupancy):
        occ = np.asarray(occupancy, dtype=bool).reshape(-1)
        if occ.size != grid.n_cells:
            raise PreconditionError(f"occupancy has {occ.size} cells, grid has {grid.n_cells}")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "occupancy", occ)

    def __setattr__(self, name, value):
        raise AttributeError("SphericalSet is immutable")

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros(grid.n_cells, bool))

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.n_cells, bool))

    @property
    def d(self):
        return self.grid.d

    @property
    def count(self):
        return int(np.count_nonzero(self.occupancy))

    @property
    def measure(self):
        return self.count * self.grid.cell_measure

    @property
    def rows(self):
        """Occupancy as an (n_t, n_phi) array."""
        return self.occupancy.reshape(self.grid.shape)

    def complement(self):
        return SphericalSet(self.grid, ~self.occupancy)

    def __or__(self, other):
        _same_grid(self, other)
        return SphericalSet(self.grid, self.occupancy | other.occupancy)

    def __and__(self, other):
        _same_grid(self, other)
        return SphericalSet(self.grid, self.occupancy & other.occupancy)

    def __sub__(self, other):
        _same_grid(self, other)
        return SphericalSet(self.grid, self.occupancy & ~other.occupancy)

    def __xor__(self, other):
        _same_grid(self, other)
        return SphericalSet(self.grid, self.occupancy ^ other.occupancy)

    def __eq__(self, other):
        if not isinstance(other, SphericalSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.occupancy, other.occupancy)

    __hash__ = None

    def __repr__(self):
        return f"SphericalSet(grid={self.grid!r}, count={self.count})"

    def rolled(self, shift):
        """Grid-compatible rotation: azimuth shift (d = 2) or arc shift (d = 1) by whole cells."""
        return SphericalSet(self.grid, np.roll(self.rows, shift, axis=1))

    def transported(self, R):
        """Image under the orthogonal map R, resampled at cell centres (not measure exact)."""
        src = self.grid.locate(self.grid.nodes @ np.asarray(R))
        return SphericalSet(self.grid, self.occupancy[src])

    def to_bytes(self, seed=None):
        header = {"schema": SCHEMA, **self.grid.header()}
        if seed is not None:
            header["seed"] = int(seed)
        head = json.dumps(header, sort_keys=True).encode()
        return head + b"\n" + np.packbits(self.occupancy, bitorder="big").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        head, _, body = bytes(blob).partition(b"\n")
        header = json.loads(head)
        if header.get("schema") != SCHEMA:
            raise PreconditionError(f"unsupported set schema {header.get('schema')!r}")
        grid = Grid(int(header["d"]), int(header["n_phi"]), int(header["n_t"]))
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="big")
        if bits.size < grid.n_cells:
            raise PreconditionError("truncated set payload")
        return cls(grid, bits[: grid.n_cells].astype(bool))

    def save(self, path, seed=None):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(seed=seed))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _same_grid(A, B):
    if A.grid != B.grid:
        raise GridMismatchError(f"grid mismatch: {A.grid!r} vs {B.grid!r}")


def in_cap(nodes, center, height):
    center = center.coords if isinstance(center, Point) else np.asarray(center, dtype=float)
    return nodes @ center >= height - CAP_EPS


def rasterize_cap(c, g):
    """Cells whose centre lies in the cap."""
    if c.d != g.d:
        raise PreconditionError(f"cap lives on S^{c.d}, grid on S^{g.d}")
    return SphericalSet(g, in_cap(g.nodes, c.center, c.height))


def north_cap(g, height):
    return rasterize_cap(Cap(Point(north_pole(g.d)), height), g)


def symm_diff_measure(A, B):
    _same_grid(A, B)
    return int(np.count_nonzero(A.occupancy ^ B.occupancy)) * A.grid.cell_measure


def rearrange(E, pole="north"):
    """Discrete symmetric rearrangement keeping the cell count.

    The north version fills cells by decreasing height (ties by azimuth index
    ascending); the south version uses exactly the reverse order, so that
    rearrange(E.complement()) == rearrange(E, "south").complement().
    """
    order = E.grid.north_order
    if pole == "south":
        order = order[::-1]
    elif pole != "north":
        raise PreconditionError(f"pole must be 'north' or 'south', got {pole!r}")
    occ = np.zeros(E.grid.n_cells, bool)
    occ[order[: E.count]] = True
    return SphericalSet(E.grid, occ)


def random_set(e, seed, g):
    """round(e * n_cells) cells chosen by a seeded permutation."""
    if not 0.0 <= e <= 1.0:
        raise PreconditionError(f"measure must lie in [0, 1], got {e!r}")
    k = int(round(e * g.n_cells))
    occ = np.zeros(g.n_cells, bool)
    occ[generator(seed).permutation(g.n_cells)[:k]] = True
    return SphericalSet(g, occ)




def random_level_set(e, seed, g, n_bumps=3, concentration=None):
    """Superlevel set of a random sum of spherical bumps holding exactly round(e * n_cells) cells.

    One bump gives a rasterized cap around a random centre; more bumps give
    connected, cap-like or multi-lobed sets.  Ties are broken by cell index.
    """
    if not 0.0 <= e <= 1.0:
        raise PreconditionError(f"measure must lie in [0, 1], got {e!r}")
    rng = generator(seed)
    dim = g.d + 1
    centres = rng.standard_normal((n_bumps, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    kappa = rng.uniform(1.0, 8.0, n_bumps) if concentration is None else np.full(n_bumps, float(concentration))
    weights = rng.uniform(0.5, 1.0, n_bumps)
    field_ = (weights * np.exp(kappa * (g.nodes @ centres.T - 1.0))).sum(axis=1)
    k = int(round(e * g.n_cells))
    order = np.lexsort((np.arange(g.n_cells), -field_))
    occ = np.zeros(g.n_cells, bool)
    occ[order[:k]] = True
    return SphericalSet(g, occ)
