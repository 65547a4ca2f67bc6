"""Synthetic 3-D voxel worlds, obstacle inflation and clearance queries.

Occupancy lives on a regular grid; a cell with index (ix, iy, iz) has its
center at origin + (index + 0.5) * cell_sizes. Configuration spaces are
derived by inflating obstacles: a cell is inflated-occupied when its center
lies within delta of some obstacle cell's axis-aligned box (Minkowski sum
with a ball, evaluated at centers). Distance fields are exact Euclidean
transforms over cell centers of the raw occupancy.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

MAP_MAGIC = "KSGRID1"

_NEIGHBOR_OFFSETS = np.array(
    [(dx, dy, dz)
     for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
     if (dx, dy, dz) != (0, 0, 0)],
    dtype=np.int64)


@dataclass(frozen=True, eq=False)
class VoxelWorld:
    dims: np.ndarray
    cell_sizes: np.ndarray
    origin: np.ndarray
    occ: np.ndarray

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=np.int64)
        cs = np.asarray(self.cell_sizes, dtype=float)
        org = np.asarray(self.origin, dtype=float)
        occ = np.ascontiguousarray(np.asarray(self.occ, dtype=bool))
        if dims.shape != (3,) or np.any(dims < 1):
            raise ValueError("dims must be three counts >= 1")
        if cs.shape != (3,) or np.any(cs <= 0):
            raise ValueError("cell sizes must be three positive lengths")
        if occ.shape != tuple(dims):
            raise ValueError("occupancy shape does not match dims")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "cell_sizes", cs)
        object.__setattr__(self, "origin", org)
        object.__setattr__(self, "occ", occ)

    @property
    def extent(self) -> np.ndarray:
        return self.dims * self.cell_sizes

    def cell_center(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) * self.cell_sizes

    def point_to_cell(self, point) -> np.ndarray:
        return np.floor((np.asarray(point, dtype=float) - self.origin)
                        / self.cell_sizes).astype(np.int64)

    def in_bounds(self, cell) -> bool:
        cell = np.asarray(cell)
        return bool(np.all(cell >= 0) and np.all(cell < self.dims))

    def point_in_bounds(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p <= self.origin + self.extent))

    def occupied_cells(self) -> np.ndarray:
        return np.argwhere(self.occ).astype(np.int64)

    def with_occ(self, occ) -> "VoxelWorld":
        return VoxelWorld(self.dims, self.cell_sizes, self.origin, occ)


def neighbors26(cell, dims) -> np.ndarray:
    """All grid neighbors at Chebyshev distance 1, clipped at the boundary."""
    cand = np.asarray(cell, dtype=np.int64) + _NEIGHBOR_OFFSETS
    keep = np.all(cand >= 0, axis=1) & np.all(cand < np.asarray(dims), axis=1)
    return cand[keep]


def _inflation_stencil(cell_sizes, delta: float) -> np.ndarray:
    """Boolean dilation stencil for center-to-box distance <= delta."""
    cs = np.asarray(cell_sizes, dtype=float)
    reach = np.maximum(np.ceil(delta / cs + 0.5).astype(int), 0)
    ax = [np.arange(-r, r + 1) for r in reach]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    d2 = np.zeros(gx.shape)
    for g, c in ((gx, cs[0]), (gy, cs[1]), (gz, cs[2])):
        over = np.maximum(np.abs(g) - 0.5, 0.0) * c
        d2 += over * over
    return d2 <= delta * delta + 1e-12


@dataclass(frozen=True, eq=False)
class ConfigSpace:
    """A VoxelWorld with obstacles inflated by delta, plus clearance data.

    occ_inflated marks cells whose centers are within delta of an obstacle
    box. dist/nearest hold the exact Euclidean distance transform of the
    raw occupancy over cell centers, computed on first use. The KD-tree
    indexes inflated-occupied cell centers for continuous nearest-obstacle
    queries; the six world boundary faces always count as obstacles so
    clearances stay finite.
    """

    world: VoxelWorld
    delta: float
    occ_inflated: np.ndarray

    @property
    def occ_flat(self) -> np.ndarray:
        """C-order uint8 view of the inflated occupancy for the kernels."""
        return self._occ_flat

    @property
    def tree(self):
        """KD-tree over inflated-occupied cell centers, built on first use."""
        if not hasattr(self, "_tree_cache"):
            centers = ((np.argwhere(self.occ_inflated) + 0.5)
                       * self.world.cell_sizes + self.world.origin)
            object.__setattr__(self, "_tree_cache",
                               cKDTree(centers) if centers.size else None)
        return self._tree_cache

    @property
    def dist(self) -> np.ndarray:
        self._ensure_distance()
        return self._dist

    @property
    def nearest(self) -> np.ndarray:
        self._ensure_distance()
        return self._nearest

    def _ensure_distance(self) -> None:
        if not hasattr(self, "_dist"):
            dist, nearest = _distance_field(self.world)
            object.__setattr__(self, "_dist", dist)
            object.__setattr__(self, "_nearest", nearest)

    def is_free(self, cell) -> bool:
        cell = np.asarray(cell, dtype=np.int64)
        if not self.world.in_bounds(cell):
            raise IndexError(f"cell {cell.tolist()} out of bounds")
        return not bool(self.occ_inflated[tuple(cell)])

    def cells_free(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        return ~self.occ_inflated[cells[:, 0], cells[:, 1], cells[:, 2]]

    def nn_search(self, point) -> tuple[np.ndarray, float]:
        """Nearest obstacle point and clearance radius for a point in bounds.

        Obstacles are the inflated-occupied cell centers plus the six
        boundary planes, so the radius is finite even in open space.
        """
        p = np.asarray(point, dtype=float)
        if not self.world.point_in_bounds(p):
            raise ValueError(f"point {p.tolist()} outside world bounds")
        lo = self.world.origin
        hi = lo + self.world.extent
        best_d = np.inf
        best_pt = None
        for ax in range(3):
            for bound, side in ((lo[ax], p[ax] - lo[ax]), (hi[ax], hi[ax] - p[ax])):
                if side < best_d:
                    best_d = side
                    best_pt = p.copy()
                    best_pt[ax] = bound
        tree = self.tree
        if tree is not None:
            d, idx = tree.query(p)
            if d < best_d:
                best_d = float(d)
                best_pt = tree.data[idx]
        return np.asarray(best_pt, dtype=float), float(best_d)


def build_config_space(world: VoxelWorld, delta: float) -> ConfigSpace:
    if delta < 0:
        raise ValueError("inflation radius must be >= 0")
    if delta == 0:
        inflated = world.occ.copy()
    else:
        inflated = ndimage.binary_dilation(world.occ,
                                           structure=_inflation_stencil(world.cell_sizes, delta))
    return _finish_config_space(world, delta, inflated)


def _finish_config_space(world, delta, inflated) -> ConfigSpace:
    cs = ConfigSpace(world=world, delta=float(delta), occ_inflated=inflated)
    flat = np.ascontiguousarray(inflated.reshape(-1).astype(np.uint8))
    object.__setattr__(cs, "_occ_flat", flat)
    return cs


def updated_config_space(prev: ConfigSpace, world: VoxelWorld,
                         fresh: np.ndarray) -> ConfigSpace:
    """Fresh ConfigSpace after new obstacle cells appeared (copy-on-update).

    Dilation distributes over union, so only the fresh cells are dilated
    and merged into the previous inflated set; the previous space stays
    untouched for concurrent readers.
    """
    if prev.delta == 0:
        inflated = prev.occ_inflated | fresh
    else:
        grown = ndimage.binary_dilation(
            fresh, structure=_inflation_stencil(world.cell_sizes, prev.delta))
        inflated = prev.occ_inflated | grown
    return _finish_config_space(world, prev.delta, inflated)


def _distance_field(world: VoxelWorld) -> tuple[np.ndarray, np.ndarray]:
    """Exact EDT of raw occupancy over cell centers, plus nearest indices."""
    if not world.occ.any():
        dist = np.full(tuple(world.dims), np.inf)
        nearest = np.full((3, *world.dims), -1, dtype=np.int64)
        return dist, nearest
    dist, idx = ndimage.distance_transform_edt(
        ~world.occ, sampling=world.cell_sizes, return_indices=True)
    return dist, idx.astype(np.int64)


def reachable_mask(cs: ConfigSpace, start_cell) -> np.ndarray:
    """Cells 26-connected to start_cell through free space."""
    free = ~cs.occ_inflated
    labels, _ = ndimage.label(free, structure=np.ones((3, 3, 3), dtype=int))
    start = tuple(np.asarray(start_cell, dtype=int))
    if not free[start]:
        return np.zeros_like(free)
    return labels == labels[start]


# ---------------------------------------------------------------------------
# map generation

@dataclass(frozen=True)
class MapGenSpec:
    """Parameters for the synthetic map generators.

    kind is one of "empty", "pillars" or "noise". Extents are meters; the
    grid size is ceil(extent / cell), never silently truncated.
    """

    kind: str
    extent: tuple
    cell_sizes: tuple
    density: float = 0.0
    footprint: tuple = (0.5, 0.5)
    noise_freq: float = 0.3
    noise_threshold: float = 0.62
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("empty", "pillars", "noise"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.density < 0:
            raise ValueError("density must be >= 0")
        if any(e <= 0 for e in self.extent) or any(c <= 0 for c in self.cell_sizes):
            raise ValueError("extents and cell sizes must be positive")


def generate(spec: MapGenSpec) -> VoxelWorld:
    extent = np.asarray(spec.extent, dtype=float)
    cs = np.asarray(spec.cell_sizes, dtype=float)
    dims = np.ceil(extent / cs - 1e-9).astype(np.int64)
    occ = np.zeros(tuple(dims), dtype=bool)
    world = VoxelWorld(dims, cs, np.zeros(3), occ)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "empty" or (spec.kind == "pillars" and spec.density == 0):
        return world
    if spec.kind == "pillars":
        return _gen_pillars(world, spec, rng)
    return _gen_noise(world, spec, rng)


def _gen_pillars(world: VoxelWorld, spec: MapGenSpec, rng) -> VoxelWorld:
    area = float(spec.extent[0]) * float(spec.extent[1])
    count = int(round(spec.density * area))
    fx, fy = spec.footprint
    occ = np.array(world.occ)
    for _ in range(count):
        cx = rng.uniform(0.0, spec.extent[0])
        cy = rng.uniform(0.0, spec.extent[1])
        _fill_box(occ, world,
                  (cx - fx / 2, cy - fy / 2, 0.0),
                  (cx + fx / 2, cy + fy / 2, spec.extent[2]))
    return world.with_occ(occ)


def _fill_box(occ, world: VoxelWorld, lo, hi) -> None:
    """Mark cells whose centers fall inside the closed box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    i0 = np.maximum(np.ceil((lo - world.origin) / world.cell_sizes - 0.5), 0).astype(int)
    i1 = np.minimum(np.floor((hi - world.origin) / world.cell_sizes - 0.5),
                    world.dims - 1).astype(int)
    if np.any(i1 < i0):
        return
    occ[i0[0]:i1[0] + 1, i0[1]:i1[1] + 1, i0[2]:i1[2] + 1] = True


def add_box(world: VoxelWorld, lo, hi) -> VoxelWorld:
    """World with the axis-aligned box [lo, hi] marked occupied."""
    occ = np.array(world.occ)
    _fill_box(occ, world, lo, hi)
    return world.with_occ(occ)


def _gen_noise(world: VoxelWorld, spec: MapGenSpec, rng) -> VoxelWorld:
    """Occupancy from thresholded 3-D gradient noise.

    Classic lattice gradient noise: random unit gradients on integer
    lattice points, quintic-smoothed trilinear blend of the corner dot
    products, sampled at cell centers scaled by noise_freq.
    """
    centers = [(np.arange(n) + 0.5) * c * spec.noise_freq
               for n, c in zip(world.dims, world.cell_sizes)]
    gx, gy, gz = np.meshgrid(*centers, indexing="ij")
    lat_dims = tuple(int(np.floor(c[-1])) + 2 for c in centers)
    grads = rng.normal(size=(*lat_dims, 3))
    grads /= np.linalg.norm(grads, axis=-1, keepdims=True)

    x0 = np.floor(gx).astype(int)
    y0 = np.floor(gy).astype(int)
    z0 = np.floor(gz).astype(int)
    fx, fy, fz = gx - x0, gy - y0, gz - z0

    def fade(t):
        return t * t * t * (t * (6 * t - 15) + 10)

    wx, wy, wz = fade(fx), fade(fy), fade(fz)
    val = np.zeros(gx.shape)
    for cx_ in (0, 1):
        for cy_ in (0, 1):
            for cz_ in (0, 1):
                g = grads[x0 + cx_, y0 + cy_, z0 + cz_]
                dot = (g[..., 0] * (fx - cx_) + g[..., 1] * (fy - cy_)
                       + g[..., 2] * (fz - cz_))
                w = (wx if cx_ else 1 - wx) * (wy if cy_ else 1 - wy) \
                    * (wz if cz_ else 1 - wz)
                val += w * dot
    # normalize to [0, 1] and threshold
    val = 0.5 + val / (2.0 * np.sqrt(3.0 / 4.0))
    return world.with_occ(val > spec.noise_threshold)


def bench_course(cell: float = 0.2, seed: int = 9) -> VoxelWorld:
    """Scripted 20 x 10 x 3 m replanning course.

    A wall whose gap straddles the guiding line, an elevated slab with
    free space below, and a scatter of full-height pillars, so a crossing
    at y = 5 m must squeeze through the gap, duck under the slab and pick
    sides between pillars.
    """
    dims_m = (20.0, 10.0, 3.0)
    w = generate(MapGenSpec(kind="empty", extent=dims_m,
                            cell_sizes=(cell, cell, cell)))
    w = add_box(w, (5.0, 0.0, 0.0), (5.4, 3.6, 3.0))       # wall below the gap
    w = add_box(w, (5.0, 6.4, 0.0), (5.4, 10.0, 3.0))      # wall above the gap
    w = add_box(w, (7.6, 2.2, 1.8), (9.0, 7.8, 2.4))       # slab, free underneath
    # an S-chicane of two staggered walls revealed in sequence: crossings
    # must swing up, then down, under partial knowledge
    w = add_box(w, (10.6, 0.0, 0.0), (11.0, 5.6, 3.0))
    w = add_box(w, (13.6, 4.4, 0.0), (14.0, 10.0, 3.0))
    occ = np.array(w.occ)
    # pillars keep pairwise gaps of at least 1.5 m so every corridor fits a
    # refinable tube; two of them sit near the line so the final stretch
    # picks sides (the course is deterministic; seed kept for interface
    # stability)
    pillars = ((16.2, 3.4), (17.6, 5.0), (16.6, 7.2))
    for cx, cy in pillars:
        _fill_box(occ, w, (cx - 0.25, cy - 0.25, 0.0), (cx + 0.25, cy + 0.25, 3.0))
    return w.with_occ(occ)


# ---------------------------------------------------------------------------
# file formats

def save_map(world: VoxelWorld, path) -> None:
    """ASCII header plus run-length-encoded row-major occupancy."""
    flat = world.occ.reshape(-1).astype(np.int8)
    runs = []
    if flat.size:
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [flat.size]))
        runs = [(int(e - s), int(flat[s])) for s, e in zip(starts, ends)]
    with open(path, "w") as fh:
        fh.write(f"{MAP_MAGIC} {world.dims[0]} {world.dims[1]} {world.dims[2]} "
                 f"{world.cell_sizes[0]:.17g} {world.cell_sizes[1]:.17g} "
                 f"{world.cell_sizes[2]:.17g} "
                 f"{world.origin[0]:.17g} {world.origin[1]:.17g} "
                 f"{world.origin[2]:.17g}\n")
        for count, value in runs:
            fh.write(f"{count} {value}\n")


def load_map(path) -> VoxelWorld:
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != MAP_MAGIC:
            raise ValueError(f"{path}: not a {MAP_MAGIC} map file")
        dims = np.array([int(x) for x in header[1:4]], dtype=np.int64)
        cell_sizes = np.array([float(x) for x in header[4:7]])
        origin = np.array([float(x) for x in header[7:10]])
        flat = np.zeros(int(np.prod(dims)), dtype=bool)
        pos = 0
        for line in fh:
            count_s, value_s = line.split()
            count = int(count_s)
            if value_s != "0":
                flat[pos:pos + count] = True
            pos += count
        if pos != flat.size:
            raise ValueError(f"{path}: RLE covers {pos} of {flat.size} cells")
    return VoxelWorld(dims, cell_sizes, origin, flat.reshape(tuple(dims)))


def load_cells_ascii(path, dims, cell_sizes, origin=(0.0, 0.0, 0.0)) -> VoxelWorld:
    """World from a plain `x y z` occupied-cell list (test fixtures)."""
    dims = np.asarray(dims, dtype=np.int64)
    occ = np.zeros(tuple(dims), dtype=bool)
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y, z = (int(v) for v in line.split())
            occ[x, y, z] = True
    return VoxelWorld(dims, np.asarray(cell_sizes, dtype=float),
                      np.asarray(origin, dtype=float), occ)
