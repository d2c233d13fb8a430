"""Graph topology, incidence matrices, and the lifted incidence operator.

The diffusive coupling convention is fixed here once: for edge k = (i, j)
the incidence matrix E has E[i, k] = -1 (tail) and E[j, k] = +1 (head),
and the lifted operator is E kron I_d acting on stacked node vectors
(node-major layout: coordinates of node 0, then node 1, ...).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, Disconnected, IndexOutOfRange, SelfLoop


@dataclass(frozen=True)
class DirectedGraph:
    """A connected graph on nodes 0..node_count-1 with oriented edges.

    Orientation is taken exactly as listed; it only fixes signs, the
    coupling itself is undirected. Connectivity is enforced because the
    kernel of the lifted transpose must be exactly the agreement space.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class IncidenceOperator:
    """Incidence matrix of a graph together with its Kronecker lift.

    Attributes
    ----------
    base : (n, m) ndarray with entries in {-1, 0, +1}
    dim : per-node signal dimension d
    lifted : (n*d, m*d) ndarray, equal to kron(base, eye(d))
    """

    graph: DirectedGraph
    base: np.ndarray
    dim: int
    lifted: np.ndarray

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    @property
    def node_size(self) -> int:
        return self.node_count * self.dim

    @property
    def edge_size(self) -> int:
        return self.edge_count * self.dim

    def agreement_basis(self) -> np.ndarray:
        """Orthonormal basis of Ker(lifted^T), shape (n*d, d).

        Column c is (1 kron e_c) / sqrt(n): all nodes share the same
        d-vector.
        """
        n, d = self.node_count, self.dim
        return np.kron(np.ones((n, 1)), np.eye(d)) / np.sqrt(n)

    def cycle_basis(self) -> np.ndarray:
        """Orthonormal basis of Ker(lifted), shape (m*d, r)."""
        return _null_space(self.lifted)


def _null_space(mat: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    u, s, vt = np.linalg.svd(mat, full_matrices=True)
    cutoff = rtol * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > cutoff))
    return vt[rank:].T.copy()


def build_graph(node_count: int, edges) -> DirectedGraph:
    """Validate and return a connected directed graph.

    Raises SelfLoop, IndexOutOfRange, or Disconnected.
    """
    if node_count < 1:
        raise IndexOutOfRange(f"node_count must be positive, got {node_count}")
    normalized = []
    for tail, head in edges:
        tail, head = int(tail), int(head)
        if not (0 <= tail < node_count and 0 <= head < node_count):
            raise IndexOutOfRange(f"edge ({tail}, {head}) outside [0, {node_count})")
        if tail == head:
            raise SelfLoop(f"self-loop at node {tail}")
        normalized.append((tail, head))

    # union-find connectivity over the undirected skeleton
    parent = list(range(node_count))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for tail, head in normalized:
        ra, rb = find(tail), find(head)
        if ra != rb:
            parent[ra] = rb
    roots = {find(i) for i in range(node_count)}
    if len(roots) > 1:
        raise Disconnected(f"graph has {len(roots)} components")

    return DirectedGraph(node_count=node_count, edges=tuple(normalized))


def incidence(graph: DirectedGraph, d: int) -> IncidenceOperator:
    """Incidence matrix (tail -1, head +1 per edge column) lifted by kron with I_d."""
    if d < 1:
        raise DimensionMismatch(f"dim must be positive, got {d}")
    n, m = graph.node_count, graph.edge_count
    base = np.zeros((n, m))
    for k, (tail, head) in enumerate(graph.edges):
        base[tail, k] = -1.0
        base[head, k] = 1.0
    lifted = np.kron(base, np.eye(d))
    return IncidenceOperator(graph=graph, base=base, dim=d, lifted=lifted)


def _check_node_vector(op: IncidenceOperator, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != op.node_size:
        raise DimensionMismatch(
            f"expected stacked node vector of length {op.node_size}, got {u.size}"
        )
    return u


def project_agreement(op: IncidenceOperator, u) -> np.ndarray:
    """Project a stacked node vector onto Ker(lifted^T).

    Equals the per-node mean of the d-blocks, copied to every node.
    """
    u = _check_node_vector(op, u)
    blocks = u.reshape(op.node_count, op.dim)
    mean = blocks.mean(axis=0)
    return np.tile(mean, op.node_count)


def in_cut_space(op: IncidenceOperator, u, tol: float = 1e-9) -> bool:
    """True iff the blockwise sum of the node vectors has norm <= tol."""
    u = _check_node_vector(op, u)
    blocks = u.reshape(op.node_count, op.dim)
    return bool(np.linalg.norm(blocks.sum(axis=0)) <= tol)
