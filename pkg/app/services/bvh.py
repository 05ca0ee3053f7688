"""
Bounding volume hierarchy over a triangle soup, with batched ray queries.

Queries traverse the tree with packets: each node is visited once per query
call together with the subset of rays whose slab test passes, so the Python
overhead scales with the node count rather than the ray count. The leaf test
and the tie-breaking rule (nearest distance, then lowest face id) are shared
with the brute-force scan, which makes both paths return identical hits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Hits", "BVH", "build_bvh", "intersect", "intersect_brute_force", "MIN_DISTANCE"]

MIN_DISTANCE = 1e-6  # m; hits closer than this are ignored (self-intersection guard)
LEAF_SIZE = 4
_DET_EPS = 1e-14
_BOX_PAD = 1e-9


@dataclass(frozen=True)
class Hits:
    """Per-ray nearest hit; ``face == -1`` and ``t == inf`` on a miss."""

    face: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.face >= 0

    def __len__(self) -> int:
        return len(self.face)


def _empty_hits(n: int) -> Hits:
    return Hits(
        face=np.full(n, -1, dtype=np.int64),
        t=np.full(n, np.inf),
        u=np.zeros(n),
        v=np.zeros(n),
    )


def _moller_trumbore(origins, directions, v0, e1, e2):
    """
    Pairwise ray/triangle test, shapes broadcast as (rays, tris).

    Double-sided; returns (t, u, v, valid).
    """
    o = origins[:, None, :]
    d = directions[:, None, :]
    pvec = np.cross(d, e2[None])
    det = (e1[None] * pvec).sum(axis=-1)
    usable = np.abs(det) > _DET_EPS
    inv = np.where(usable, 1.0 / np.where(usable, det, 1.0), 0.0)
    tvec = o - v0[None]
    u = (tvec * pvec).sum(axis=-1) * inv
    qvec = np.cross(tvec, e1[None])
    v = (d * qvec).sum(axis=-1) * inv
    t = (e2[None] * qvec).sum(axis=-1) * inv
    valid = usable & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > MIN_DISTANCE)
    return t, u, v, valid


def _update_nearest(best: Hits, rays: np.ndarray, faces: np.ndarray, t, u, v, valid, t_max) -> None:
    """Fold candidate hits of ``faces`` (ascending ids) into ``best`` for ``rays``."""
    t = np.where(valid & (t < t_max[rays, None]), t, np.inf)
    # argmin picks the first minimum, i.e. the lowest face id among exact ties.
    col = np.argmin(t, axis=1)
    row = np.arange(len(rays))
    cand_t = t[row, col]
    cand_face = faces[col]
    cur_t = best.t[rays]
    cur_face = best.face[rays]
    better = (cand_t < cur_t) | ((cand_t == cur_t) & np.isfinite(cand_t) & (cand_face < cur_face))
    if not better.any():
        return
    sel = rays[better]
    best.t[sel] = cand_t[better]
    best.face[sel] = cand_face[better]
    best.u[sel] = u[row, col][better]
    best.v[sel] = v[row, col][better]


def _prepare(origins, directions, t_max):
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    n = len(origins)
    if t_max is None:
        t_max = np.full(n, np.inf)
    else:
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
    return origins, directions, t_max


def intersect_brute_force(triangles: np.ndarray, origins, directions, t_max=None, *, chunk: int = 2048) -> Hits:
    """Nearest hit of every ray against every triangle; the oracle for the BVH."""
    origins, directions, t_max = _prepare(origins, directions, t_max)
    best = _empty_hits(len(origins))
    triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    if len(triangles) == 0 or len(origins) == 0:
        return best
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    faces = np.arange(len(triangles))
    ray_step = max(1, chunk)
    tri_step = max(1, 1_000_000 // ray_step)
    for r0 in range(0, len(origins), ray_step):
        rays = np.arange(r0, min(r0 + ray_step, len(origins)))
        for f0 in range(0, len(triangles), tri_step):
            sl = slice(f0, f0 + tri_step)
            t, u, v, valid = _moller_trumbore(origins[rays], directions[rays], v0[sl], e1[sl], e2[sl])
            _update_nearest(best, rays, faces[sl], t, u, v, valid, t_max)
    return best


@dataclass(frozen=True)
class BVH:
    """Flattened tree. Leaves own ``order[start:start + count]``; inner nodes have count 0."""

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    @property
    def n_triangles(self) -> int:
        return len(self.v0)

    def intersect(self, origins, directions, t_max=None) -> Hits:
        """Nearest hits with distance in (MIN_DISTANCE, t_max)."""
        origins, directions, t_max = _prepare(origins, directions, t_max)
        best = _empty_hits(len(origins))
        if self.n_nodes == 0 or len(origins) == 0:
            return best

        with np.errstate(divide="ignore", invalid="ignore"):
            inv_d = 1.0 / directions

        stack = [(0, np.arange(len(origins)))]
        while stack:
            node, rays = stack.pop()
            with np.errstate(invalid="ignore"):
                t1 = (self.lo[node] - origins[rays]) * inv_d[rays]
                t2 = (self.hi[node] - origins[rays]) * inv_d[rays]
            # fmin/fmax skip the NaNs produced by 0 * inf on slab boundaries.
            t_near = np.fmax.reduce(np.fmin(t1, t2), axis=1)
            t_far = np.fmin.reduce(np.fmax(t1, t2), axis=1)
            keep = (t_near <= t_far) & (t_far >= MIN_DISTANCE) & (t_near <= best.t[rays]) & (t_near <= t_max[rays])
            rays = rays[keep]
            if len(rays) == 0:
                continue
            if self.count[node] > 0:
                faces = np.sort(self.order[self.start[node] : self.start[node] + self.count[node]])
                t, u, v, valid = _moller_trumbore(
                    origins[rays], directions[rays], self.v0[faces], self.e1[faces], self.e2[faces]
                )
                _update_nearest(best, rays, faces, t, u, v, valid, t_max)
            else:
                stack.append((self.right[node], rays))
                stack.append((self.left[node], rays))
        return best

    def occluded(self, origins, directions, distances) -> np.ndarray:
        """True where something lies strictly between the origin and ``distances - MIN_DISTANCE``."""
        distances = np.asarray(distances, dtype=np.float64)
        return self.intersect(origins, directions, t_max=distances - MIN_DISTANCE).hit


def build_bvh(triangles: np.ndarray) -> BVH:
    """
    Median-split BVH over (F, 3, 3) triangles.

    Splits the longest centroid extent at the median (argpartition), so
    construction is O(F log F). Boxes are padded by 1e-9 m so the slab test
    never culls a ray that the exact triangle test would accept.
    """
    triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    n = len(triangles)
    v0 = triangles[:, 0].copy()
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    if n == 0:
        empty = np.zeros((0, 3))
        none = np.zeros(0, dtype=np.int64)
        return BVH(empty, empty, none, none, none, none, none, v0, e1, e2)

    tri_lo = triangles.min(axis=1)
    tri_hi = triangles.max(axis=1)
    centroids = triangles.mean(axis=1)
    order = np.arange(n, dtype=np.int64)

    lo: list[np.ndarray] = []
    hi: list[np.ndarray] = []
    left: list[int] = []
    right: list[int] = []
    start: list[int] = []
    count: list[int] = []

    def new_node() -> int:
        lo.append(np.zeros(3))
        hi.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    stack = [(new_node(), 0, n)]
    while stack:
        node, s, e = stack.pop()
        idx = order[s:e]
        box_lo = tri_lo[idx].min(axis=0)
        box_hi = tri_hi[idx].max(axis=0)
        pad = _BOX_PAD * (1.0 + np.abs(box_lo).max() + np.abs(box_hi).max())
        lo[node] = box_lo - pad
        hi[node] = box_hi + pad

        c = centroids[idx]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if e - s <= LEAF_SIZE or extent[axis] == 0.0:
            start[node] = s
            count[node] = e - s
            continue

        mid = (e - s) // 2
        part = np.argpartition(c[:, axis], mid)
        order[s:e] = idx[part]
        l_node = new_node()
        r_node = new_node()
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, s + mid, e))
        stack.append((l_node, s, s + mid))

    return BVH(
        lo=np.array(lo),
        hi=np.array(hi),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order,
        v0=v0,
        e1=e1,
        e2=e2,
    )


def intersect(bvh: BVH, origin, direction, t_max: float | None = None) -> tuple[int, float, float, float] | None:
    """Single-ray convenience wrapper: (face, distance, u, v) or None on a miss."""
    hits = bvh.intersect(np.asarray(origin)[None], np.asarray(direction)[None], t_max)
    if not hits.hit[0]:
        return None
    return int(hits.face[0]), float(hits.t[0]), float(hits.u[0]), float(hits.v[0])
