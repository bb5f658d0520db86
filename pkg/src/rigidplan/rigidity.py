"""Fisher information and rigidity eigenvalue of 2-D range-measurement networks.

A network is a set of node positions plus the pairs of nodes that measure
their mutual range. Each measurement contributes one row to a sensitivity
matrix ``A``; the Fisher information is ``F = A.T @ A``. In the plane, ``F``
always has three zero eigenvalues (two translations and one rotation). The
fourth-smallest eigenvalue is the rigidity eigenvalue: zero means the network
can flex without changing any measured range.
"""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

DIM = 2
TRIVIAL_DOF = 3
ZERO_TOL = 1e-9
SYMMETRY_TOL = 1e-9


class RigidityError(ValueError):
    pass


class CoincidentNodes(RigidityError):
    """Two measured nodes share a position, so the range gradient is undefined."""


class NotSymmetric(RigidityError):
    pass


class TooFewNodes(RigidityError):
    pass


class NoiseKind(str, enum.Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"

    @property
    def alpha(self) -> int:
        return 1 if self is NoiseKind.ADDITIVE else 2


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.ADDITIVE
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")


@dataclass(frozen=True)
class MeasurementGraph:
    """Undirected measurement pairs sharing one noise model.

    Edges are stored normalized as ``(min, max)`` and sorted.
    """

    edges: tuple[tuple[int, int], ...]
    noise: NoiseModel = NoiseModel()

    def __post_init__(self):
        normalized = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if i < 0 or j < 0:
                raise ValueError(f"negative node id in edge ({i}, {j})")
            normalized.append((min(i, j), max(i, j)))
        if len(set(normalized)) != len(normalized):
            raise ValueError("duplicate edges in measurement graph")
        object.__setattr__(self, "edges", tuple(sorted(normalized)))

    def __len__(self):
        return len(self.edges)

    def with_edge(self, i: int, j: int) -> "MeasurementGraph":
        return MeasurementGraph(self.edges + ((i, j),), self.noise)


@dataclass(frozen=True)
class RigidityVerdict:
    rigidity_eigenvalue: float
    is_rigid: bool
    threshold: float


def as_configuration(positions) -> np.ndarray:
    """Validate and convert positions to a float ``(n, 2)`` array."""
    config = np.asarray(positions, dtype=float)
    if config.ndim != 2 or config.shape[1] != DIM:
        raise ValueError(f"configuration must have shape (n, 2), got {config.shape}")
    if config.shape[0] == 0:
        raise ValueError("configuration is empty")
    if not np.all(np.isfinite(config)):
        raise ValueError("configuration has non-finite coordinates")
    return config


def _zero_tol(eigs: np.ndarray) -> float:
    return ZERO_TOL * max(1.0, float(eigs[-1])) if len(eigs) else ZERO_TOL


def fim_row(config, i: int, j: int, noise: NoiseModel) -> np.ndarray:
    """Sensitivity of the range between nodes ``i`` and ``j`` to all coordinates."""
    config = as_configuration(config)
    n = len(config)
    if i == j:
        raise ValueError("a measurement needs two distinct nodes")
    delta = config[i] - config[j]
    length = float(np.hypot(*delta))
    if length == 0.0:
        raise CoincidentNodes(f"nodes {i} and {j} coincide at {tuple(config[i])}")
    scale = 1.0 / (noise.sigma * length ** noise.kind.alpha)
    row = np.zeros(DIM * n)
    row[2 * i:2 * i + 2] = delta * scale
    row[2 * j:2 * j + 2] = -delta * scale
    return row


def measurement_matrix(config, graph: MeasurementGraph) -> np.ndarray:
    """Stack one :func:`fim_row` per edge into the ``(m, 2n)`` matrix ``A``."""
    config = as_configuration(config)
    n = len(config)
    if not graph.edges:
        return np.zeros((0, DIM * n))
    e = np.asarray(graph.edges, dtype=int)
    if e.max() >= n:
        raise ValueError(f"edge references node {e.max()} but configuration has {n} nodes")
    delta = config[e[:, 0]] - config[e[:, 1]]
    length = np.hypot(delta[:, 0], delta[:, 1])
    if np.any(length == 0.0):
        k = int(np.argmax(length == 0.0))
        raise CoincidentNodes(f"nodes {e[k, 0]} and {e[k, 1]} coincide")
    scaled = delta / (graph.noise.sigma * length ** graph.noise.kind.alpha)[:, None]
    rows = np.arange(len(e))
    A = np.zeros((len(e), DIM * n))
    A[rows, 2 * e[:, 0]] = scaled[:, 0]
    A[rows, 2 * e[:, 0] + 1] = scaled[:, 1]
    A[rows, 2 * e[:, 1]] = -scaled[:, 0]
    A[rows, 2 * e[:, 1] + 1] = -scaled[:, 1]
    return A


def build_fim(config, graph: MeasurementGraph) -> np.ndarray:
    """Fisher information matrix ``A.T @ A`` of shape ``(2n, 2n)``."""
    A = measurement_matrix(config, graph)
    F = A.T @ A
    # enforce exact symmetry against BLAS rounding
    return 0.5 * (F + F.T)


def eigenvalues_symmetric(matrix) -> np.ndarray:
    """Ascending real spectrum of a symmetric matrix.

    Backed by LAPACK's symmetric driver (``numpy.linalg.eigvalsh``), which
    tridiagonalizes and then iterates; results are deterministic for
    identical input.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0:
        return np.zeros(0)
    scale = max(1.0, float(np.max(np.abs(M))))
    asym = float(np.max(np.abs(M - M.T)))
    if asym > SYMMETRY_TOL * scale:
        raise NotSymmetric(f"asymmetry {asym:.3g} exceeds tolerance")
    return np.linalg.eigvalsh(0.5 * (M + M.T))


def spectrum(config, graph: MeasurementGraph) -> np.ndarray:
    return eigenvalues_symmetric(build_fim(config, graph))


def rigidity_eigenvalue(config, graph: MeasurementGraph) -> float:
    """Fourth-smallest eigenvalue of the FIM, with round-off near zero clamped to 0."""
    config = as_configuration(config)
    if len(config) < 3:
        raise TooFewNodes(f"rigidity needs at least 3 nodes, got {len(config)}")
    eigs = spectrum(config, graph)
    value = float(eigs[TRIVIAL_DOF])
    if abs(value) < _zero_tol(eigs):
        return 0.0
    return max(value, 0.0)


def check_rigidity(config, graph: MeasurementGraph, threshold: float) -> RigidityVerdict:
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    try:
        value = rigidity_eigenvalue(config, graph)
    except CoincidentNodes:
        return RigidityVerdict(0.0, False, threshold)
    return RigidityVerdict(value, value >= threshold, threshold)


def sensing_edges(config, sensing_radius: float) -> tuple[tuple[int, int], ...]:
    """All node pairs within ``sensing_radius`` of each other (boundary inclusive).

    A relative slack of 1e-12 on the squared radius absorbs round-off so that
    pairs lying exactly on the boundary in exact arithmetic are kept.
    """
    if sensing_radius <= 0:
        raise ValueError("sensing radius must be positive")
    config = as_configuration(config)
    diff = config[:, None, :] - config[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    limit = sensing_radius * sensing_radius * (1.0 + 1e-12)
    ii, jj = np.nonzero(np.triu(d2 <= limit, k=1))
    return tuple(zip(ii.tolist(), jj.tolist()))


def sensing_graph(config, sensing_radius: float, noise: NoiseModel) -> MeasurementGraph:
    return MeasurementGraph(sensing_edges(config, sensing_radius), noise)


def network_rigidity(config, sensing_radius: float, noise: NoiseModel, threshold: float) -> RigidityVerdict:
    """Verdict for the network induced by ``sensing_radius`` over ``config``."""
    return check_rigidity(config, sensing_graph(config, sensing_radius, noise), threshold)


class RigidityCache:
    """Memo of rigidity verdicts keyed by exact, order-insensitive node-id keys.

    Keys are built by :meth:`key`; the dictionary is guarded by a lock so
    concurrent callers may share one cache. Equal keys always map to equal
    verdicts, so a lost race only costs a duplicate computation.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._store: dict[Hashable, RigidityVerdict] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(node_ids: Iterable[int], threshold: float, noise: NoiseModel,
            sensing_radius: float) -> tuple:
        return (tuple(sorted(int(k) for k in node_ids)), float(threshold),
                noise.kind.value, float(noise.sigma), float(sensing_radius))

    def get_or_compute(self, key: Hashable, compute: Callable[[], RigidityVerdict]) -> RigidityVerdict:
        if self.enabled:
            with self._lock:
                found = self._store.get(key)
                if found is not None:
                    self.hits += 1
                    return found
        verdict = compute()
        with self._lock:
            self.misses += 1
            if self.enabled:
                self._store[key] = verdict
        return verdict

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def __len__(self):
        return len(self._store)

    def clear(self):
        with self._lock:
            self._store.clear()
            self.hits = self.misses = 0


def cached_check(cache: RigidityCache, key: Hashable,
                 compute: Callable[[], RigidityVerdict]) -> RigidityVerdict:
    return cache.get_or_compute(key, compute)


def check_node_set(positions: np.ndarray, node_ids: Sequence[int], sensing_radius: float,
                   noise: NoiseModel, threshold: float,
                   cache: RigidityCache | None = None) -> RigidityVerdict:
    """Rigidity verdict for agents standing on planning-graph nodes ``node_ids``."""
    ids = sorted(int(k) for k in node_ids)

    def compute():
        return network_rigidity(positions[ids], sensing_radius, noise, threshold)

    if cache is None:
        return compute()
    return cache.get_or_compute(RigidityCache.key(ids, threshold, noise, sensing_radius), compute)


def canonical_cells(cells) -> tuple[tuple[int, int], ...]:
    """Integer grid cells shifted so the smallest x and y are zero, sorted."""
    cells = [(int(a), int(b)) for a, b in cells]
    if not cells:
        return ()
    ax = min(a for a, _ in cells)
    bx = min(b for _, b in cells)
    return tuple(sorted((a - ax, b - bx) for a, b in cells))


def check_grid_cells(cells, spacing: float, sensing_radius: float, noise: NoiseModel,
                     threshold: float, cache: RigidityCache | None = None) -> RigidityVerdict:
    """Rigidity verdict for agents on the integer grid cells ``cells`` (scaled by ``spacing``).

    The verdict only depends on relative positions, so the cells are shifted
    to a canonical corner first and translated copies of one formation share
    a cache entry. The verdict is always computed from the canonical cells,
    which keeps cached and uncached answers bit-identical.
    """
    canon = canonical_cells(cells)

    def compute():
        return network_rigidity(np.asarray(canon, dtype=float) * spacing, sensing_radius,
                                noise, threshold)

    if cache is None:
        return compute()
    key = (canon, float(spacing), float(threshold), noise.kind.value, float(noise.sigma),
           float(sensing_radius))
    return cache.get_or_compute(key, compute)
