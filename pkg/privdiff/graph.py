"""Undirected sparse graphs: edge-list ingestion, edge perturbation and walk products."""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional, TextIO, Tuple

import numpy as np
import scipy.sparse as sps
from absl import logging
from scipy.sparse.csgraph import connected_components

from .errors import EdgeListFormatError, GraphValidationError


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """
    Undirected simple graph in compressed row layout.

    Neighbour lists are sorted ascending, so two graphs are equal exactly when
    their ``indptr`` and ``indices`` arrays are equal.
    """
    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        indptr.flags.writeable = False
        indices.flags.writeable = False
        object.__setattr__(self, 'indptr', indptr)
        object.__setattr__(self, 'indices', indices)
        self._validate()

    @classmethod
    def from_edges(cls, n: int, edges: np.ndarray) -> 'SparseGraph':
        """
        Build the canonical graph from an (m, 2) array of undirected edges.

        Self-loops and duplicate edges (in either orientation) are removed.

        Args:
            n: Number of nodes
            edges: Integer array of node-id pairs

        Returns:
            Canonical SparseGraph
        """
        edges = _canonical_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise GraphValidationError(f"edge endpoint outside [0, {n})")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(indptr=indptr, indices=cols)

    def _validate(self):
        n = len(self.indptr) - 1
        if n < 1:
            raise GraphValidationError("graph must have at least one node")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise GraphValidationError("inconsistent row pointer")
        degrees = np.diff(self.indptr)
        if np.any(degrees < 1):
            isolated = np.flatnonzero(degrees < 1)
            raise GraphValidationError(
                f"{len(isolated)} isolated node(s), first is {int(isolated[0])}"
            )
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n):
            raise GraphValidationError("neighbour id outside node range")
        rows = np.repeat(np.arange(n), degrees)
        if np.any(rows == self.indices):
            raise GraphValidationError("self-loops are not allowed")
        # Within a row, neighbours must be strictly increasing.
        same_row = rows[1:] == rows[:-1]
        if np.any(self.indices[1:][same_row] <= self.indices[:-1][same_row]):
            raise GraphValidationError("neighbour lists must be sorted and duplicate-free")
        adjacency = self.adjacency
        if (adjacency != adjacency.T).nnz:
            raise GraphValidationError("adjacency is not symmetric")

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @cached_property
    def degrees(self) -> np.ndarray:
        degrees = np.diff(self.indptr)
        degrees.flags.writeable = False
        return degrees

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def degree_sum(self) -> int:
        return int(len(self.indices))

    @cached_property
    def adjacency(self) -> sps.csr_matrix:
        """0/1 adjacency matrix sharing this graph's row layout."""
        data = np.ones(len(self.indices), dtype=np.float64)
        return sps.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return bool(pos < len(row) and row[pos] == v)

    def edges(self) -> np.ndarray:
        """Edges as an (m, 2) array with u < v, sorted lexicographically."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseGraph):
            return NotImplemented
        return (np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):
        return hash((self.indptr.tobytes(), self.indices.tobytes()))


class EdgeOp(str, Enum):
    REMOVE = 'remove'
    ADD = 'add'


@dataclass(frozen=True)
class EdgePerturbation:
    """Single-edge change turning a graph into an edge-adjacent graph."""
    u: int
    v: int
    op: EdgeOp

    def __post_init__(self):
        object.__setattr__(self, 'op', EdgeOp(self.op))
        if self.u == self.v:
            raise GraphValidationError("perturbed edge endpoints must differ")


@dataclass
class GraphSummary:
    """Ingestion statistics reported alongside a loaded graph."""
    n: int
    num_edges: int
    degree_sum: int
    min_degree: int
    max_degree: int
    self_loops_dropped: int = 0
    duplicates_dropped: int = 0
    lcc_dropped_nodes: int = 0

    @classmethod
    def of(cls, g: SparseGraph, **counts) -> 'GraphSummary':
        return cls(
            n=g.n,
            num_edges=g.num_edges,
            degree_sum=g.degree_sum,
            min_degree=int(g.degrees.min()),
            max_degree=int(g.degrees.max()),
            **counts,
        )


@dataclass
class LoadedGraph:
    """Result of edge-list ingestion."""
    graph: SparseGraph
    summary: GraphSummary
    # new id -> id as written in the source file; None when ids were kept as-is
    id_map: Optional[np.ndarray] = None


def _canonical_edges(edges: np.ndarray) -> np.ndarray:
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges = np.sort(edges, axis=1)
    if len(edges) == 0:
        return edges.reshape(0, 2)
    return np.unique(edges, axis=0)


def _check_length(g: SparseGraph, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.n,):
        raise GraphValidationError(f"vector length {x.shape} does not match n={g.n}")
    return x


def random_walk_matvec(g: SparseGraph, x: np.ndarray) -> np.ndarray:
    """
    Compute y = P x with P = A D^{-1}, i.e. y_i = sum_{j in N(i)} x_j / d_j.

    Rows are reduced in ascending neighbour order (scipy CSR kernel), so the
    result is deterministic for a given graph and input.

    Args:
        g: Graph
        x: Real vector of length n

    Returns:
        The random-walk product
    """
    x = _check_length(g, x)
    return g.adjacency @ (x / g.degrees)


def lazy_walk_matvec(g: SparseGraph, x: np.ndarray) -> np.ndarray:
    """Compute y = W x with the lazy walk W = (P + I) / 2."""
    x = _check_length(g, x)
    return 0.5 * (x + random_walk_matvec(g, x))


def perturb_edge(g: SparseGraph, p: EdgePerturbation) -> SparseGraph:
    """
    Produce the edge-adjacent graph obtained by removing or adding one edge.

    Args:
        g: Original graph (left unmodified)
        p: Edge change

    Returns:
        New canonical graph differing from g in exactly edge (u, v)
    """
    for node in (p.u, p.v):
        if not 0 <= node < g.n:
            raise GraphValidationError(f"node {node} outside [0, {g.n})")
    present = g.has_edge(p.u, p.v)
    edges = g.edges()
    lo, hi = min(p.u, p.v), max(p.u, p.v)

    if p.op is EdgeOp.REMOVE:
        if not present:
            raise GraphValidationError(f"cannot remove absent edge ({p.u}, {p.v})")
        if g.degrees[p.u] == 1 or g.degrees[p.v] == 1:
            raise GraphValidationError(
                f"removing ({p.u}, {p.v}) would isolate a node"
            )
        keep = ~((edges[:, 0] == lo) & (edges[:, 1] == hi))
        return SparseGraph.from_edges(g.n, edges[keep])

    if present:
        raise GraphValidationError(f"cannot add present edge ({p.u}, {p.v})")
    return SparseGraph.from_edges(g.n, np.vstack([edges, [[lo, hi]]]))


def component_graph(n: int, edges: np.ndarray,
                    node: Optional[int] = None) -> Tuple[SparseGraph, np.ndarray]:
    """
    Restrict an edge set to one connected component.

    Args:
        n: Number of nodes of the full edge set
        edges: (m, 2) undirected edges (need not be canonical)
        node: Keep the component containing this node; the largest component
            when None (ties resolved towards the component holding the smallest id)

    Returns:
        Component graph with dense ids, and the original id of each new node
    """
    edges = _canonical_edges(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    data = np.ones(len(edges), dtype=np.int8)
    matrix = sps.coo_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(matrix, directed=False)

    if node is None:
        sizes = np.bincount(labels)
        # Isolated nodes form singleton components and are never "largest" unless alone.
        target = int(np.argmax(sizes))
    else:
        target = int(labels[node])

    old_ids = np.flatnonzero(labels == target)
    if len(old_ids) < 2:
        raise GraphValidationError("selected component has no edges")
    new_ids = np.full(n, -1, dtype=np.int64)
    new_ids[old_ids] = np.arange(len(old_ids))
    kept = edges[labels[edges[:, 0]] == target]
    return SparseGraph.from_edges(len(old_ids), new_ids[kept]), old_ids


def _parse_edge_lines(source: TextIO) -> Tuple[np.ndarray, int]:
    pairs = []
    for line_number, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if ',' in line:
            raise EdgeListFormatError("node ids must be whitespace-separated, found a comma",
                                      line_number)
        tokens = line.split()
        if len(tokens) != 2:
            raise EdgeListFormatError(
                f"expected two node ids, found {len(tokens)} token(s)", line_number
            )
        try:
            pairs.append((int(tokens[0]), int(tokens[1])))
        except ValueError as e:
            raise EdgeListFormatError(f"non-integer node id in {line!r}", line_number) from e
    if not pairs:
        raise GraphValidationError("edge list is empty")
    return np.asarray(pairs, dtype=np.int64), len(pairs)


def load_edge_list(source: TextIO, one_indexed: bool = False,
                   extract_lcc: bool = False) -> LoadedGraph:
    """
    Load an undirected graph from a whitespace-separated edge list.

    Lines starting with '#' and blank lines are ignored. Duplicate edges are
    merged and self-loops dropped (both counted in the summary).

    Args:
        source: Text stream with one "u v" pair per line
        one_indexed: Node ids in the file start at 1
        extract_lcc: Keep only the largest connected component instead of
            rejecting isolated nodes

    Returns:
        Canonical graph, ingestion summary and id map
    """
    raw_edges, line_count = _parse_edge_lines(source)
    if one_indexed:
        raw_edges = raw_edges - 1
    if raw_edges.min() < 0:
        raise GraphValidationError(
            "node ids must be >= 1 for one-indexed input" if one_indexed
            else "node ids must be non-negative"
        )

    self_loops = int(np.sum(raw_edges[:, 0] == raw_edges[:, 1]))
    edges = _canonical_edges(raw_edges)
    duplicates = line_count - self_loops - len(edges)
    if self_loops:
        logging.warning('Dropped %d self-loop(s) while loading edge list', self_loops)
    if len(edges) == 0:
        raise GraphValidationError("edge list contains no edges besides self-loops")

    n = int(raw_edges.max()) + 1
    offset = 1 if one_indexed else 0
    if extract_lcc:
        graph, old_ids = component_graph(n, edges)
        dropped = n - graph.n
        if dropped:
            logging.warning('LCC extraction dropped %d of %d nodes', dropped, n)
        summary = GraphSummary.of(graph, self_loops_dropped=self_loops,
                                  duplicates_dropped=duplicates, lcc_dropped_nodes=dropped)
        return LoadedGraph(graph=graph, summary=summary, id_map=old_ids + offset)

    degrees = np.bincount(edges.ravel(), minlength=n)
    if np.any(degrees == 0):
        isolated = np.flatnonzero(degrees == 0)
        raise GraphValidationError(
            f"{len(isolated)} isolated node(s) (first id {int(isolated[0]) + offset}); "
            "use LCC extraction to drop them"
        )
    graph = SparseGraph.from_edges(n, edges)
    summary = GraphSummary.of(graph, self_loops_dropped=self_loops,
                              duplicates_dropped=duplicates)
    id_map = np.arange(n, dtype=np.int64) + offset if one_indexed else None
    return LoadedGraph(graph=graph, summary=summary, id_map=id_map)


def write_edge_list(g: SparseGraph, sink: TextIO) -> int:
    """Write the canonical edge list (u < v, sorted); returns the edge count."""
    edges = g.edges()
    for u, v in edges:
        sink.write(f"{u} {v}\n")
    return len(edges)


def write_id_map(id_map: Iterable[int], sink: TextIO):
    """Write "original new" id pairs, one per line."""
    sink.write("# original new\n")
    for new_id, old_id in enumerate(id_map):
        sink.write(f"{old_id} {new_id}\n")
