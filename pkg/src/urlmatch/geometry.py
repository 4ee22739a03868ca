"""Graph construction from 2-D keypoints.

Triangulations come from Qhull and are then legalized with exact
predicates (float filter, ``Fraction`` fallback), so the returned edge
set satisfies the empty-circumcircle property exactly. Cocircular
quadrilaterals take the diagonal with the lexicographically smaller
endpoint pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DimensionError, ValidationError

_EPS = 2.0**-53
_CCW_BOUND = (3.0 + 16.0 * _EPS) * _EPS
_ICC_BOUND = (10.0 + 96.0 * _EPS) * _EPS


def _sign(x) -> int:
    return int(x > 0) - int(x < 0)


def orient2d(a, b, c) -> int:
    """+1 if ``a, b, c`` turn counter-clockwise, -1 if clockwise, 0 if collinear (exact)."""
    detleft = (a[0] - c[0]) * (b[1] - c[1])
    detright = (a[1] - c[1]) * (b[0] - c[0])
    det = detleft - detright
    if abs(det) > _CCW_BOUND * (abs(detleft) + abs(detright)):
        return _sign(det)
    ax, ay, bx, by, cx, cy = (Fraction(float(v)) for v in (a[0], a[1], b[0], b[1], c[0], c[1]))
    return _sign((ax - cx) * (by - cy) - (ay - cy) * (bx - cx))


def incircle(a, b, c, d) -> int:
    """+1 if ``d`` lies inside the circle through counter-clockwise ``a, b, c``; 0 on it (exact)."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = (
        alift * (bdx * cdy - cdx * bdy)
        + blift * (cdx * ady - adx * cdy)
        + clift * (adx * bdy - bdx * ady)
    )
    permanent = (
        (abs(bdx * cdy) + abs(cdx * bdy)) * alift
        + (abs(cdx * ady) + abs(adx * cdy)) * blift
        + (abs(adx * bdy) + abs(bdx * ady)) * clift
    )
    if abs(det) > _ICC_BOUND * permanent:
        return _sign(det)
    fa, fb, fc, fd = ([Fraction(float(v)) for v in p[:2]] for p in (a, b, c, d))
    adx, ady = fa[0] - fd[0], fa[1] - fd[1]
    bdx, bdy = fb[0] - fd[0], fb[1] - fd[1]
    cdx, cdy = fc[0] - fd[0], fc[1] - fd[1]
    exact = (
        (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
    )
    return _sign(exact)


def _chain_edges(pts: np.ndarray, nodes: np.ndarray) -> list[tuple[int, int]]:
    """Nearest-neighbour chain of collinear points along the axis of larger extent."""
    sub = pts[nodes]
    extent = sub.max(axis=0) - sub.min(axis=0)
    major = 0 if extent[0] >= extent[1] else 1
    order = np.lexsort((nodes, sub[:, 1 - major], sub[:, major]))
    chain = nodes[order]
    return [(int(min(a, b)), int(max(a, b))) for a, b in zip(chain[:-1], chain[1:])]


def _all_collinear(pts: np.ndarray, nodes: np.ndarray) -> bool:
    a = pts[nodes[0]]
    others = [pts[v] for v in nodes[1:] if not np.array_equal(pts[v], a)]
    if not others:
        return True
    b = others[0]
    return all(orient2d(a, b, c) == 0 for c in others[1:])


def _legalize(pts: np.ndarray, triangles: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    # directed edge (u, v) -> apex w of the ccw triangle (u, v, w)
    apex: dict[tuple[int, int], int] = {}
    for a, b, c in triangles:
        apex[(a, b)] = c
        apex[(b, c)] = a
        apex[(c, a)] = b
    stack = [(u, v) for (u, v) in apex if u < v and (v, u) in apex]
    while stack:
        u, v = stack.pop()
        w1 = apex.get((u, v))
        w2 = apex.get((v, u))
        if w1 is None or w2 is None or w1 == w2:
            continue
        test = incircle(pts[u], pts[v], pts[w1], pts[w2])
        if test < 0:
            continue
        if test == 0 and (min(w1, w2), max(w1, w2)) >= (min(u, v), max(u, v)):
            continue
        # flip (u, v) -> (w1, w2); the quad is u, w2, v, w1 in ccw order
        for e in ((u, v), (v, w1), (w1, u), (v, u), (u, w2), (w2, v)):
            del apex[e]
        for a, b, c in ((u, w2, w1), (w2, v, w1)):
            apex[(a, b)] = c
            apex[(b, c)] = a
            apex[(c, a)] = b
        stack.extend([(u, w2), (w2, v), (v, w1), (w1, u)])
    tris = set()
    for (a, b), c in apex.items():
        rot = min((a, b, c), (b, c, a), (c, a, b))
        tris.add(rot)
    return sorted(tris)


def delaunay_triangles(coords) -> list[tuple[int, int, int]]:
    """Counter-clockwise Delaunay triangles of a non-degenerate point set."""
    pts = np.asarray(coords, dtype=np.float64)
    tri = Delaunay(pts)
    triangles = []
    for a, b, c in tri.simplices.tolist():
        o = orient2d(pts[a], pts[b], pts[c])
        if o > 0:
            triangles.append((a, b, c))
        elif o < 0:
            triangles.append((a, c, b))
    return _legalize(pts, triangles)


def delaunay_edges(coords) -> list[tuple[int, int]]:
    """Undirected Delaunay edges ``(a, b)`` with ``a < b``, sorted.

    One point gives no edges, two give a single edge, and collinear sets
    fall back to a nearest-neighbour chain. Points duplicated exactly are
    attached to their first copy.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError(f"coords must be m x 2, got {pts.shape}")
    m = len(pts)
    if m <= 1:
        return []
    if m == 2:
        return [(0, 1)]

    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    reps = np.sort(first)
    edges: set[tuple[int, int]] = set()
    for v in range(m):
        r = int(first[inverse[v]])
        if r != v:
            edges.add((min(r, v), max(r, v)))

    if len(reps) == 2:
        edges.add((int(reps[0]), int(reps[1])))
    elif len(reps) > 2:
        if _all_collinear(pts, reps):
            edges.update(_chain_edges(pts, reps))
        else:
            try:
                triangles = delaunay_triangles(pts[reps])
            except QhullError as exc:  # pragma: no cover - guarded by the collinearity test
                raise ValidationError(f"triangulation failed: {exc}") from None
            covered = np.zeros(len(reps), dtype=bool)
            for a, b, c in triangles:
                covered[[a, b, c]] = True
                for u, v in ((a, b), (b, c), (c, a)):
                    u, v = int(reps[u]), int(reps[v])
                    edges.add((min(u, v), max(u, v)))
            # Qhull may drop near-coincident points; tie them to their nearest vertex
            for i in np.flatnonzero(~covered):
                dist = np.linalg.norm(pts[reps] - pts[reps[i]], axis=1)
                dist[i] = np.inf
                u, v = int(reps[i]), int(reps[int(np.argmin(dist))])
                edges.add((min(u, v), max(u, v)))
    return sorted(edges)


def directed(edges: list[tuple[int, int]]) -> np.ndarray:
    """Both orientations of each undirected edge as an ``E x 2`` array of ``(center, neighbour)``."""
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    und = np.asarray(edges, dtype=np.int64)
    both = np.concatenate([und, und[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    return both[order]


@dataclass
class Graph:
    """Keypoint graph.

    ``edges[e] = (v, w)`` is the directed edge that carries neighbour
    ``w``'s features into center ``v``; ``edge_attr[e] = p_w - p_v``.
    """

    coords: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    edges: np.ndarray = field(default=None)
    edge_attr: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or len(self.features) != len(self.coords):
            raise DimensionError("features must be m x f with one row per keypoint")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != self.m:
                raise DimensionError("one label per node required")
            if np.unique(self.labels).size != self.m or (self.labels < 0).any():
                raise ValidationError("labels must be distinct non-negative universe indices")
        if self.edges is None:
            self.edges = directed(delaunay_edges(self.coords))
        else:
            self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
            if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= self.m):
                raise ValidationError("edge endpoint out of range")
            if (self.edges[:, 0] == self.edges[:, 1]).any():
                raise ValidationError("self-loops are not allowed")
        if self.edge_attr is None:
            self.edge_attr = self.coords[self.edges[:, 1]] - self.coords[self.edges[:, 0]]

    @property
    def m(self) -> int:
        return len(self.coords)

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def undirected_edges(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in self.edges if a < b]

    def scale(self) -> float:
        """Graph-local normalization ``R``: largest per-axis edge offset, 1 if none."""
        if len(self.edge_attr) == 0:
            return 1.0
        r = float(np.abs(self.edge_attr).max())
        return r if r > 0 else 1.0

    def permuted(self, perm) -> Graph:
        """Graph with node ``perm[a]`` of ``self`` renamed to ``a``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = inv[self.edges]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        return Graph(
            self.coords[perm],
            self.features[perm],
            None if self.labels is None else self.labels[perm],
            edges=edges[order],
        )

    def subgraph(self, nodes) -> Graph:
        """Induced node subset in the given order, with edges recomputed by Delaunay."""
        nodes = np.asarray(nodes, dtype=np.int64)
        return Graph(
            self.coords[nodes],
            self.features[nodes],
            None if self.labels is None else self.labels[nodes],
        )


def pseudo_coords(graph: Graph, z=None) -> np.ndarray:
    """Per directed edge, ``clamp(delta / (2R) + 0.5, 0, 1)`` with ``delta = p_w - p_v``.

    When ``z`` (one value per node) is given a third column uses
    ``z_w - z_v`` under the same 2-D scale ``R``.
    """
    r = graph.scale()
    delta = graph.edge_attr
    if z is not None:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if len(z) != graph.m:
            raise DimensionError(f"need one virtual coordinate per node ({graph.m}), got {len(z)}")
        dz = z[graph.edges[:, 1]] - z[graph.edges[:, 0]]
        delta = np.concatenate([delta, dz[:, None]], axis=1)
    return np.clip(delta / (2.0 * r) + 0.5, 0.0, 1.0)
