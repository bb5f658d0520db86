"""Workspace geometry and the shared grid planning graph."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

Point = tuple[float, float]


class EmptyGraph(ValueError):
    pass


def _orient(a, b, c) -> float:
    # exact for grid-rational (dyadic) coordinates of modest size
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(p, q, a, b) -> bool:
    """Closed-segment intersection test, touching counts."""
    d1 = _orient(a, b, p)
    d2 = _orient(a, b, q)
    d3 = _orient(p, q, a)
    d4 = _orient(p, q, b)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(a, b, p):
        return True
    if d2 == 0 and _on_segment(a, b, q):
        return True
    if d3 == 0 and _on_segment(p, q, a):
        return True
    if d4 == 0 and _on_segment(p, q, b):
        return True
    return False


def point_in_polygon(p, poly) -> bool:
    """Even-odd ray cast; points on the boundary count as inside."""
    n = len(poly)
    for k in range(n):
        a, b = poly[k - 1], poly[k]
        if _orient(a, b, p) == 0 and _on_segment(a, b, p):
            return True
    px, py = p
    inside = False
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        if (y1 > py) != (y0 > py):
            # x-coordinate of the edge at height py, compared without division
            lhs = (px - x1) * (y0 - y1)
            rhs = (x0 - x1) * (py - y1)
            if (lhs < rhs) == (y0 > y1):
                inside = not inside
        x0, y0 = x1, y1
    return inside


def segment_intersects_polygon(p, q, poly) -> bool:
    """True if segment ``pq`` touches the boundary or enters the interior of ``poly``."""
    n = len(poly)
    for k in range(n):
        if segments_intersect(p, q, poly[k - 1], poly[k]):
            return True
    mid = (0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]))
    return point_in_polygon(p, poly) or point_in_polygon(q, poly) or point_in_polygon(mid, poly)


def polygon_is_simple(poly) -> bool:
    n = len(poly)
    edges = [(poly[k - 1], poly[k]) for k in range(n)]
    for a in range(n):
        for b in range(a + 1, n):
            # neighbouring edges share exactly one vertex
            if b == a + 1 or (a == 0 and b == n - 1):
                continue
            if segments_intersect(*edges[a], *edges[b]):
                return False
    return True


@dataclass(frozen=True)
class Workspace:
    bounds: tuple[float, float, float, float]
    obstacles: tuple[tuple[Point, ...], ...] = ()

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.bounds)
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bounds {self.bounds}")
        polys = []
        for poly in self.obstacles:
            verts = tuple((float(x), float(y)) for x, y in poly)
            if len(verts) < 3:
                raise ValueError("obstacle polygon needs at least 3 vertices")
            if not polygon_is_simple(verts):
                raise ValueError(f"obstacle polygon is not simple: {verts}")
            polys.append(verts)
        object.__setattr__(self, "bounds", (x0, y0, x1, y1))
        object.__setattr__(self, "obstacles", tuple(polys))

    def in_bounds(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def point_free(self, p) -> bool:
        return self.in_bounds(p) and not any(point_in_polygon(p, poly) for poly in self.obstacles)

    def segment_free(self, p, q) -> bool:
        lo = (min(p[0], q[0]), min(p[1], q[1]))
        hi = (max(p[0], q[0]), max(p[1], q[1]))
        for poly, (bl, tr) in zip(self.obstacles, self._boxes):
            if hi[0] < bl[0] or lo[0] > tr[0] or hi[1] < bl[1] or lo[1] > tr[1]:
                continue
            if segment_intersects_polygon(p, q, poly):
                return False
        return True

    @cached_property
    def _boxes(self):
        boxes = []
        for poly in self.obstacles:
            arr = np.asarray(poly)
            boxes.append((tuple(arr.min(axis=0)), tuple(arr.max(axis=0))))
        return boxes


def _grid_counts(workspace: Workspace, spacing: float) -> tuple[int, int]:
    x0, y0, x1, y1 = workspace.bounds
    nx = int(math.floor((x1 - x0) / spacing + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / spacing + 1e-9)) + 1
    return nx, ny


def sample_grid(workspace: Workspace, spacing: float) -> list[Point]:
    """Grid points anchored at the lower-left corner, rows of increasing y."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    x0, y0, _, _ = workspace.bounds
    nx, ny = _grid_counts(workspace, spacing)
    points = []
    for b in range(ny):
        for a in range(nx):
            p = (x0 + a * spacing, y0 + b * spacing)
            if not any(point_in_polygon(p, poly) for poly in workspace.obstacles):
                points.append(p)
    return points


@dataclass(frozen=True, eq=False)
class PlanningGraph:
    nodes: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]
    spacing: float
    connect_radius: float
    origin: Point = (0.0, 0.0)
    _index: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.nodes)

    def position(self, node: int) -> np.ndarray:
        return self.nodes[node]

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self.adjacency[node]

    def edges(self):
        for u, adj in enumerate(self.adjacency):
            for v in adj:
                if u < v:
                    yield u, v

    def node_at(self, p, tol: float = 1e-9) -> int | None:
        """Node id whose position is ``p`` (within ``tol``), else ``None``."""
        a = (p[0] - self.origin[0]) / self.spacing
        b = (p[1] - self.origin[1]) / self.spacing
        ka, kb = round(a), round(b)
        if abs(a - ka) * self.spacing > tol or abs(b - kb) * self.spacing > tol:
            return None
        return self._index.get((ka, kb))

    @cached_property
    def cells(self) -> np.ndarray:
        """Integer grid coordinates of every node, shape ``(N, 2)``."""
        out = np.empty((len(self.nodes), 2), dtype=int)
        for cell, k in self._index.items():
            out[k] = cell
        return out

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.nodes)

    def nodes_within(self, p, radius: float) -> list[int]:
        """Node ids within ``radius`` of ``p`` (inclusive, 1e-12 relative slack)."""
        return sorted(self._tree.query_ball_point(p, radius * (1.0 + 1e-12)))

    @cached_property
    def hop_distances(self) -> np.ndarray:
        n = len(self.nodes)
        rows = [u for u, adj in enumerate(self.adjacency) for _ in adj]
        cols = [v for adj in self.adjacency for v in adj]
        mat = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return shortest_path(mat, unweighted=True, directed=False)

    def diameter(self) -> int:
        """Longest finite shortest-path length in steps."""
        d = self.hop_distances
        finite = d[np.isfinite(d)]
        return int(finite.max()) if finite.size else 0


def build_planning_graph(workspace: Workspace, spacing: float = 1.0,
                         connect_radius: float = 2.0) -> PlanningGraph:
    """Grid nodes joined to every other node within ``connect_radius`` by a free segment."""
    if connect_radius <= 0:
        raise ValueError("connect_radius must be positive")
    points = sample_grid(workspace, spacing)
    if not points:
        raise EmptyGraph("no grid node survives obstacle removal")
    nodes = np.asarray(points, dtype=float)
    limit = connect_radius * connect_radius * (1.0 + 1e-12)
    adjacency: list[list[int]] = [[] for _ in points]
    pairs = sorted(cKDTree(nodes).query_pairs(connect_radius * (1.0 + 1e-12)))
    for u, v in pairs:
        d = nodes[u] - nodes[v]
        if d @ d > limit:
            continue
        if not workspace.segment_free(points[u], points[v]):
            continue
        adjacency[u].append(v)
        adjacency[v].append(u)
    x0, y0, _, _ = workspace.bounds
    index = {}
    for k, (x, y) in enumerate(points):
        index[(round((x - x0) / spacing), round((y - y0) / spacing))] = k
    return PlanningGraph(
        nodes=nodes,
        adjacency=tuple(tuple(sorted(a)) for a in adjacency),
        spacing=float(spacing),
        connect_radius=float(connect_radius),
        origin=(x0, y0),
        _index=index,
    )
