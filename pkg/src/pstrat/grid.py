"""Lattice domains and sphere-valued maps: the substrate for everything else.

A map u : Omega \subset R^m -> S^{N-1} \subset R^N is sampled on a regular
cubic lattice of spacing h covering the closed ball B(0, R_dom).  Gradients
are central differences in the interior and one-sided at the lattice edge;
all integrals are midpoint sums (cell volume h^m per node).  The whole module
is pure: every operation returns fresh objects and never mutates its inputs.

Snapshot layout (see save_snapshot / load_snapshot)
---------------------------------------------------
Binary file, little endian:
    magic       8 bytes  b"PSTRAT01"
    m, N        2 x uint32
    p, h, R_dom 3 x float64
    sides       m x uint32        (points per axis, always odd)
    values      float64, C order, shape (*sides, N)
    boundary    uint8,   C order, shape sides
plus a JSON sidecar ``<path>.json`` with schema_version and metadata
(initializer, seed, singular node indices, regularization epsilon, ...).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNIT_NORM_TOL = 1e-9
SNAPSHOT_MAGIC = b"PSTRAT01"
SCHEMA_VERSION = 1


class GridError(ValueError):
    """Invalid domain, map, or region arguments."""


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDomain:
    """Cubic lattice of spacing h covering the closed ball B(0, R_dom)."""

    m: int
    h: float
    r_dom: float

    def __post_init__(self):
        if not 1 <= self.m <= 4:
            raise GridError(f"dimension m={self.m} outside supported range 1..4")
        if self.h <= 0:
            raise GridError("spacing h must be > 0")
        if self.r_dom <= 0:
            raise GridError("half-extent R_dom must be > 0")

    @property
    def n(self) -> int:
        """Index bound per axis; node coordinates are i*h for |i| <= n."""
        return int(np.ceil(self.r_dom / self.h - 1e-12))

    @property
    def side(self) -> int:
        return 2 * self.n + 1

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.m

    @property
    def axis(self) -> np.ndarray:
        return self.h * np.arange(-self.n, self.n + 1)

    def node_points(self) -> np.ndarray:
        """All node coordinates, shape (side**m, m), C order."""
        grids = np.meshgrid(*([self.axis] * self.m), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def open_coords(self) -> list:
        """Axis coordinate arrays broadcastable to the grid shape."""
        out = []
        for j in range(self.m):
            sh = [1] * self.m
            sh[j] = self.side
            out.append(self.axis.reshape(sh))
        return out

    def contains_ball(self, center, radius: float) -> bool:
        center = np.asarray(center, dtype=float)
        return float(np.linalg.norm(center)) + radius <= self.r_dom + 1e-9

    def ball_slices(self, center, radius: float):
        """Index slices of the axis-aligned bounding box of B(center, radius).

        Returns (slices, local_open_coords); the box is clipped to the lattice.
        """
        center = np.asarray(center, dtype=float)
        slices = []
        coords = []
        for j in range(self.m):
            lo = max(0, int(np.ceil((center[j] - radius) / self.h - 1e-12)) + self.n)
            hi = min(self.side, int(np.floor((center[j] + radius) / self.h + 1e-12)) + self.n + 1)
            hi = max(hi, lo)
            slices.append(slice(lo, hi))
            sh = [1] * self.m
            sh[j] = hi - lo
            coords.append(self.axis[lo:hi].reshape(sh))
        return tuple(slices), coords

    def ball_mask(self, center, radius: float):
        """(slices, mask) with mask True on nodes inside B(center, radius)."""
        slices, coords = self.ball_slices(center, radius)
        center = np.asarray(center, dtype=float)
        d2 = sum((c - center[j]) ** 2 for j, c in enumerate(coords))
        return slices, d2 <= radius * radius + 1e-12

    def boundary_shell_mask(self) -> np.ndarray:
        """Outermost lattice layer (True on nodes with some index at +-n)."""
        mask = np.zeros(self.shape, dtype=bool)
        for j in range(self.m):
            idx = [slice(None)] * self.m
            idx[j] = 0
            mask[tuple(idx)] = True
            idx[j] = -1
            mask[tuple(idx)] = True
        return mask


# ---------------------------------------------------------------------------
# analytic initializers
# ---------------------------------------------------------------------------

#: fixed unit vector assigned wherever an analytic initializer is singular
SINGULAR_FILL_AXIS = 0

INITIALIZER_KINDS = ("constant", "radial", "cylindrical", "random", "geodesic")


@dataclass(frozen=True)
class Initializer:
    """Descriptor for one of the catalog analytic maps.

    kind:
      constant     u(x) = unit vector e_{axis}
      radial       u(x) = x/|x|                      (needs N == m)
      cylindrical  u(x) = (x_1, x_2)/|(x_1, x_2)|    (needs N == 2, m >= 2)
      random       seeded uniform unit field
      geodesic     u(x) = (cos(k x_1), sin(k x_1), 0, ...)  great-circle
                   interpolation along the first axis, rate = ``rate``
    """

    kind: str
    axis: int = 0
    seed: int = 0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in INITIALIZER_KINDS:
            raise GridError(f"unknown initializer kind {self.kind!r}")

    def singular_argument(self, points: np.ndarray) -> np.ndarray | None:
        """|argument| of the projection, or None if the map is smooth."""
        if self.kind == "radial":
            return np.linalg.norm(points, axis=-1)
        if self.kind == "cylindrical":
            return np.linalg.norm(points[..., :2], axis=-1)
        return None

    def values(self, points: np.ndarray, n_target: int) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (n_target,))
        if self.kind == "constant":
            out[..., self.axis] = 1.0
        elif self.kind == "radial":
            if n_target != pts.shape[-1]:
                raise GridError("radial initializer needs N == m")
            norm = np.linalg.norm(pts, axis=-1, keepdims=True)
            safe = np.where(norm > 0, norm, 1.0)
            out = pts / safe
        elif self.kind == "cylindrical":
            if n_target != 2:
                raise GridError("cylindrical initializer needs N == 2")
            if pts.shape[-1] < 2:
                raise GridError("cylindrical initializer needs m >= 2")
            rho = np.linalg.norm(pts[..., :2], axis=-1, keepdims=True)
            safe = np.where(rho > 0, rho, 1.0)
            out = pts[..., :2] / safe
        elif self.kind == "geodesic":
            if n_target < 2:
                raise GridError("geodesic initializer needs N >= 2")
            t = self.rate * pts[..., 0]
            out[..., 0] = np.cos(t)
            out[..., 1] = np.sin(t)
        elif self.kind == "random":
            rng = np.random.default_rng(self.seed)
            raw = rng.normal(size=pts.shape[:-1] + (n_target,))
            norm = np.linalg.norm(raw, axis=-1, keepdims=True)
            out = raw / np.where(norm > 0, norm, 1.0)
        return out


# ---------------------------------------------------------------------------
# maps and gradients
# ---------------------------------------------------------------------------

@dataclass
class DiscretizedMap:
    """Lattice-sampled unit-vector field with fixed (boundary) nodes."""

    domain: GridDomain
    n_target: int
    p: float
    values: np.ndarray          # shape (*domain.shape, N)
    boundary_mask: np.ndarray   # shape domain.shape, True = fixed
    singular_nodes: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 1), dtype=np.intp))
    meta: dict = field(default_factory=dict)

    _grad_cache: "GradientField | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n_target < 2:
            raise GridError(f"target dimension N={self.n_target} must be >= 2")
        if not self.p < self.domain.m:
            raise GridError(f"exponent p={self.p} must satisfy p < m={self.domain.m}")
        if self.p <= 1:
            raise GridError(f"exponent p={self.p} must satisfy p > 1")

    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def h(self) -> float:
        return self.domain.h

    def check_unit_norm(self, tol: float = UNIT_NORM_TOL):
        err = np.abs(np.linalg.norm(self.values, axis=-1) - 1.0).max()
        if err > tol:
            raise GridError(f"unit-norm violation {err:.3e} > {tol:.1e}")

    def gradient_field(self) -> "GradientField":
        if self._grad_cache is None:
            self._grad_cache = gradient(self)
        return self._grad_cache

    def copy_with(self, values: np.ndarray, **meta) -> "DiscretizedMap":
        new_meta = dict(self.meta)
        new_meta.update(meta)
        return DiscretizedMap(self.domain, self.n_target, self.p, values,
                              self.boundary_mask.copy(),
                              self.singular_nodes.copy(), new_meta)


@dataclass
class GradientField:
    """Per-node first differences and the derived energy densities."""

    grad: np.ndarray        # shape (*grid, m, N), grad[..., j, a] = d_j u^a
    norm_sq: np.ndarray     # |grad u|^2
    density_p: np.ndarray   # |grad u|^p


def build_map(domain: GridDomain, n_target: int, p: float,
              initializer: Initializer, free_radius: float | None = None
              ) -> DiscretizedMap:
    """Sample a catalog analytic map on the lattice.

    Nodes where the analytic argument is shorter than h/2 are singular: they
    receive the fixed unit vector e_1 and are recorded in ``singular_nodes``.
    ``free_radius`` marks nodes with |x| >= free_radius as fixed boundary
    data; by default only the outermost lattice layer is fixed.
    """
    points = domain.node_points().reshape(domain.shape + (domain.m,))
    values = initializer.values(points, n_target)

    sing_arg = initializer.singular_argument(points)
    if sing_arg is not None:
        sing_mask = sing_arg < domain.h / 2
        if sing_mask.any():
            fill = np.zeros(n_target)
            fill[SINGULAR_FILL_AXIS] = 1.0
            values[sing_mask] = fill
        singular_nodes = np.argwhere(sing_mask)
    else:
        singular_nodes = np.zeros((0, domain.m), dtype=np.intp)

    if free_radius is not None:
        radii = np.linalg.norm(points, axis=-1)
        boundary = radii >= free_radius - 1e-12
    else:
        boundary = domain.boundary_shell_mask()

    mp = DiscretizedMap(domain, n_target, p, values, boundary, singular_nodes,
                        meta={"initializer": initializer.kind})
    mp.check_unit_norm()
    return mp


def _edge_aware_gradient(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    # identical stencil to np.gradient(f, h, axis=axis, edge_order=1)
    return np.gradient(f, h, axis=axis, edge_order=1)


def gradient(mp: DiscretizedMap) -> GradientField:
    """Central differences in the interior, one-sided at the lattice edge."""
    m, n = mp.m, mp.n_target
    grad = np.empty(mp.domain.shape + (m, n))
    for j in range(m):
        grad[..., j, :] = _edge_aware_gradient(mp.values, mp.h, j)
    norm_sq = np.einsum("...jn,...jn->...", grad, grad)
    density_p = norm_sq ** (mp.p / 2.0)
    return GradientField(grad, norm_sq, density_p)


def total_energy(mp: DiscretizedMap, region: tuple | None = None) -> float:
    """Midpoint-rule integral of |grad u|^p over a ball or the whole domain.

    ``region`` is (center, radius) or None.  Singular-node cells contribute
    their finite sampled density like any other node.
    """
    density = mp.gradient_field().density_p
    cell = mp.h ** mp.m
    if region is None:
        return float(density.sum() * cell)
    center, radius = region
    if not mp.domain.contains_ball(center, radius):
        raise GridError(f"region ball (|c|={np.linalg.norm(center):.3f}, r={radius}) "
                        f"exits the domain of half-extent {mp.domain.r_dom}")
    slices, mask = mp.domain.ball_mask(center, radius)
    return float(density[slices][mask].sum() * cell)


def blow_up(mp: DiscretizedMap, x, r: float, half_extent: float = 1.0,
            spacing: float | None = None) -> DiscretizedMap:
    """Recenter-and-rescale resample  y -> u(x + r y)  by nearest node.

    The output lattice has spacing h/r by default, so that when x is itself a
    lattice point every sample lands exactly on an input node.  Nearest-node
    sampling keeps values on the unit sphere; they are renormalized anyway.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (mp.m,):
        raise GridError(f"blow-up center must be a point in R^{mp.m}")
    if r <= 0:
        raise GridError("blow-up scale r must be > 0")
    h_out = mp.h / r if spacing is None else spacing
    out_dom = GridDomain(mp.m, h_out, half_extent)

    pts = out_dom.node_points()                     # (P, m)
    src = x[None, :] + r * pts                      # image points in the input
    idx = np.rint(src / mp.h).astype(np.int64)
    n_in = mp.domain.n
    if np.abs(idx).max() > n_in:
        raise GridError("blow-up image lattice exits the source domain")
    flat = np.zeros(len(pts), dtype=np.int64)
    for j in range(mp.m):
        flat = flat * mp.domain.side + (idx[:, j] + n_in)

    vals = mp.values.reshape(-1, mp.n_target)[flat]
    norm = np.linalg.norm(vals, axis=-1, keepdims=True)
    vals = vals / np.where(norm > 0, norm, 1.0)
    vals = vals.reshape(out_dom.shape + (mp.n_target,))

    if len(mp.singular_nodes):
        sing_flat = np.zeros(len(mp.singular_nodes), dtype=np.int64)
        for j in range(mp.m):
            sing_flat = sing_flat * mp.domain.side + mp.singular_nodes[:, j]
        hit = np.isin(flat, sing_flat).reshape(out_dom.shape)
        singular = np.argwhere(hit)
    else:
        singular = np.zeros((0, mp.m), dtype=np.intp)

    out = DiscretizedMap(out_dom, mp.n_target, mp.p, vals,
                         out_dom.boundary_shell_mask(), singular,
                         meta={"blow_up_of": mp.meta.get("initializer", "?"),
                               "center": [float(c) for c in x], "scale": float(r)})
    out.check_unit_norm()
    return out


def directional_energy(mp: DiscretizedMap, frame: np.ndarray,
                       region: tuple) -> float:
    """Integral of (sum_i |<grad u, v_i>|^2)^{p/2} over a ball.

    ``frame`` holds the orthonormal direction vectors as rows (k, m); k = 0
    returns 0 by convention.
    """
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    if frame.size == 0:
        return 0.0
    k = frame.shape[0]
    if frame.shape[1] != mp.m:
        raise GridError("frame vectors must live in R^m")
    gram = frame @ frame.T
    if np.abs(gram - np.eye(k)).max() > 1e-10:
        raise GridError("frame is not orthonormal")
    center, radius = region
    if not mp.domain.contains_ball(center, radius):
        raise GridError("directional-energy ball exits the domain")
    slices, mask = mp.domain.ball_mask(center, radius)
    grad = mp.gradient_field().grad[slices][mask]        # (nodes, m, N)
    proj = np.einsum("bjn,kj->bkn", grad, frame)
    s = np.einsum("bkn,bkn->b", proj, proj)
    return float((s ** (mp.p / 2.0)).sum() * mp.h ** mp.m)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_snapshot(mp: DiscretizedMap, path: str, extra_meta: dict | None = None):
    """Write the binary snapshot and its JSON sidecar (layout in module doc)."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", mp.m, mp.n_target))
        fh.write(struct.pack("<ddd", mp.p, mp.h, mp.domain.r_dom))
        fh.write(struct.pack(f"<{mp.m}I", *([mp.domain.side] * mp.m)))
        fh.write(np.ascontiguousarray(mp.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mp.boundary_mask, dtype=np.uint8).tobytes())
    meta = {
        "schema_version": SCHEMA_VERSION,
        "m": mp.m, "N": mp.n_target, "p": mp.p, "h": mp.h,
        "R_dom": mp.domain.r_dom, "sides": [mp.domain.side] * mp.m,
        "singular_nodes": [[int(i) for i in row] for row in mp.singular_nodes],
        "meta": {k: v for k, v in mp.meta.items()},
    }
    if extra_meta:
        meta["meta"].update(extra_meta)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_snapshot(path: str) -> DiscretizedMap:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != SNAPSHOT_MAGIC:
            raise GridError(f"bad snapshot magic {magic!r}")
        m, n_target = struct.unpack("<II", fh.read(8))
        p, h, r_dom = struct.unpack("<ddd", fh.read(24))
        sides = struct.unpack(f"<{m}I", fh.read(4 * m))
        dom = GridDomain(m, h, r_dom)
        if dom.shape != tuple(sides):
            raise GridError("snapshot lattice shape mismatch")
        count = int(np.prod(sides)) * n_target
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(
            dom.shape + (n_target,)).copy()
        boundary = np.frombuffer(fh.read(int(np.prod(sides))), dtype=np.uint8)
        boundary = boundary.reshape(dom.shape).astype(bool)
    try:
        with open(path + ".json") as fh:
            meta = json.load(fh)
        singular = np.asarray(meta.get("singular_nodes", []), dtype=np.intp)
        if singular.size == 0:
            singular = np.zeros((0, m), dtype=np.intp)
        extra = meta.get("meta", {})
    except FileNotFoundError:
        singular = np.zeros((0, m), dtype=np.intp)
        extra = {}
    mp = DiscretizedMap(dom, n_target, p, values, boundary, singular, extra)
    mp.check_unit_norm()
    return mp
