"""Affine planes, general position, effective spans, fattenings.

Plain point-set geometry in R^m (m <= 4): the predicates consumed by the
covering constructions.  Everything here is stateless and exact up to
floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAM_TOL = 1e-12


class SpanError(ValueError):
    pass


@dataclass(frozen=True)
class AffinePlane:
    """base point + orthonormal k-frame (rows of ``frame``); k may be 0."""

    base: np.ndarray
    frame: np.ndarray   # shape (k, m)

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        frame = np.asarray(self.frame, dtype=float).reshape(-1, base.shape[0])
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "frame", frame)
        k = frame.shape[0]
        if k:
            gram = frame @ frame.T
            if np.abs(gram - np.eye(k)).max() > 1e-9:
                raise SpanError("frame Gram matrix deviates from identity")

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    def project(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.base
        if self.dim == 0:
            return np.broadcast_to(self.base, pts.shape).copy()
        return self.base + (rel @ self.frame.T) @ self.frame

    def distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.base
        if self.dim:
            rel = rel - (rel @ self.frame.T) @ self.frame
        return np.linalg.norm(rel, axis=-1)


def _orthonormalize(vectors: np.ndarray) -> np.ndarray:
    """Gram-Schmidt with one re-orthogonalization pass; rows in, rows out."""
    out = []
    for v in np.atleast_2d(vectors):
        w = v.astype(float).copy()
        for _ in range(2):
            for u in out:
                w -= (w @ u) * u
        norm = np.linalg.norm(w)
        if norm < 1e-14:
            raise SpanError("degenerate vector set")
        out.append(w / norm)
    return np.asarray(out)


def general_position(points, rho: float) -> bool:
    """True iff each point is >= rho away from the span of the previous ones.

    Matches the incremental definition: for j = 1..k,
    dist(x_j, x_0 + span{x_1-x_0, ..., x_{j-1}-x_0}) >= rho.
    """
    if rho <= 0:
        raise SpanError("rho must be > 0")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x0 = pts[0]
    frame: list = []
    for xj in pts[1:]:
        w = xj - x0
        for _ in range(2):
            for u in frame:
                w = w - (w @ u) * u
        dist = np.linalg.norm(w)
        if dist < rho:
            return False
        frame.append(w / dist)
    return True


def _lex_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort(points.T[::-1])


def greedy_span(points, rho: float, k: int):
    """Greedy farthest-point selection of up to k+1 points in rho-general
    position.

    Returns (selected_indices, plane); the plane spans the selected points
    (its dim is len(selected) - 1, possibly < k when the set is too flat).
    The first point is the lexicographically smallest; every later pick is
    the point farthest from the current affine span, ties broken by
    lexicographic order.  Empty input returns ([], None).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        return [], None
    order = _lex_order(pts)
    first = int(order[0])
    chosen = [first]
    base = pts[first]
    frame = np.zeros((0, pts.shape[1]))
    while len(chosen) < k + 1:
        plane = AffinePlane(base, frame)
        dists = plane.distance(pts)
        best = -1.0
        best_i = -1
        for i in order:          # lexicographic tie-break
            if int(i) in chosen:
                continue
            if dists[i] > best + 1e-15:
                best = float(dists[i])
                best_i = int(i)
        if best_i < 0 or best < rho:
            break
        chosen.append(best_i)
        frame = _orthonormalize(np.vstack([frame, (pts[best_i] - base)[None, :]]))
    return chosen, AffinePlane(base, frame)


def effective_span(points, rho: float, k: int) -> AffinePlane | None:
    """The k-plane spanned by k+1 greedily chosen points in rho-general
    position, or None if no such points exist in the set."""
    if rho <= 0:
        raise SpanError("rho must be > 0")
    chosen, plane = greedy_span(points, rho, k)
    if plane is None or len(chosen) < k + 1:
        return None
    return plane


def fattening_test(plane: AffinePlane, rho: float, points):
    """Partition points by distance to the plane: (inside, outside) with the
    rho-fattening closed (distance <= rho is inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        empty = pts.reshape(0, pts.shape[-1])
        return empty, empty
    dist = plane.distance(pts)
    mask = dist <= rho + 1e-12
    return pts[mask], pts[~mask]


def fattening_mask(plane: AffinePlane | None, rho: float, points) -> np.ndarray:
    """Boolean inside-mask form of fattening_test; None plane means dim 0 at
    the origin is NOT assumed -- a None plane puts nothing inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if plane is None:
        return np.zeros(pts.shape[0], dtype=bool)
    return plane.distance(pts) <= rho + 1e-12
