"""Directed communication topologies and column-stochastic weights."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    """Invalid topology parameters or a topology that breaks a precondition."""


@dataclass(frozen=True)
class Digraph:
    """Directed graph over nodes ``0 .. node_count - 1`` without self-edges.

    Edges are stored as ``(receiver, sender)`` pairs, i.e. ``(l, i)`` means
    node ``i`` transmits to node ``l``.
    """

    node_count: int
    edges: frozenset[tuple[int, int]]
    in_neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    out_neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise GraphError(f"node_count must be positive, got {self.node_count}")
        ins: list[list[int]] = [[] for _ in range(self.node_count)]
        outs: list[list[int]] = [[] for _ in range(self.node_count)]
        for receiver, sender in self.edges:
            if not (0 <= receiver < self.node_count and 0 <= sender < self.node_count):
                raise GraphError(f"edge {(receiver, sender)} out of range")
            if receiver == sender:
                raise GraphError(f"self-edge on node {receiver}")
            ins[receiver].append(sender)
            outs[sender].append(receiver)
        object.__setattr__(self, "in_neighbors", tuple(tuple(sorted(n)) for n in ins))
        object.__setattr__(self, "out_neighbors", tuple(tuple(sorted(n)) for n in outs))

    @classmethod
    def from_edges(cls, node_count: int, edges) -> "Digraph":
        return cls(node_count, frozenset((int(l), int(i)) for l, i in edges))

    @property
    def in_degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.in_neighbors], dtype=int)

    @property
    def out_degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.out_neighbors], dtype=int)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``A[l, i]`` true iff ``i`` sends to ``l``."""
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for receiver, sender in self.edges:
            adj[receiver, sender] = True
        return adj

    def fingerprint(self) -> str:
        """Stable short hash of the edge set, used in run metadata."""
        import hashlib

        text = to_edge_list(self)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _reachable(adjacency_lists, start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nxt in adjacency_lists[node]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def is_strongly_connected(g: Digraph) -> bool:
    """Forward and reverse reachability from node 0 both cover the graph."""
    if g.node_count == 1:
        return True
    forward = _reachable(g.out_neighbors, 0)
    if len(forward) != g.node_count:
        return False
    return len(_reachable(g.in_neighbors, 0)) == g.node_count


def random_strongly_connected(node_count: int, edge_density: float, rng_seed) -> Digraph:
    """Random digraph built on a directed Hamiltonian cycle.

    The cycle visits the nodes in a random order, so the result is strongly
    connected by construction. Every other ordered pair gets an extra edge
    independently with probability ``edge_density``.
    """
    if node_count < 2:
        raise GraphError(f"node_count must be at least 2, got {node_count}")
    if not 0.0 <= edge_density <= 1.0:
        raise GraphError(f"edge_density must lie in [0, 1], got {edge_density}")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(node_count)
    edges = {(int(order[(k + 1) % node_count]), int(order[k])) for k in range(node_count)}
    coins = rng.random((node_count, node_count))
    for receiver in range(node_count):
        for sender in range(node_count):
            if receiver != sender and coins[receiver, sender] < edge_density:
                edges.add((receiver, sender))
    return Digraph(node_count, frozenset(edges))


def default_weights(g: Digraph) -> np.ndarray:
    """Column-stochastic weights ``p_lj = 1 / (1 + D+_j)`` on out-links and self-loop."""
    if not is_strongly_connected(g):
        raise GraphError("default_weights requires a strongly connected digraph")
    n = g.node_count
    P = np.zeros((n, n))
    for j, outs in enumerate(g.out_neighbors):
        w = 1.0 / (1 + len(outs))
        P[j, j] = w
        for l in outs:
            P[l, j] = w
    return P


def check_weights(P: np.ndarray, g: Digraph, atol: float = 1e-12) -> None:
    """Raise ``GraphError`` unless ``P`` is column-stochastic and conforms to ``g``."""
    n = g.node_count
    if P.shape != (n, n):
        raise GraphError(f"weight matrix shape {P.shape} does not match {n} nodes")
    if np.any(P < 0):
        raise GraphError("weights must be nonnegative")
    if np.max(np.abs(P.sum(axis=0) - 1.0)) > atol:
        raise GraphError("weight matrix is not column-stochastic")
    if np.any(np.diag(P) <= 0):
        raise GraphError("every node needs a positive self-weight")
    allowed = g.adjacency() | np.eye(n, dtype=bool)
    if np.any((P > 0) & ~allowed):
        raise GraphError("weight matrix has support outside the graph")


def diameter_upper_bound(n_prime: int) -> int:
    """Steps after which max-consensus is guaranteed to settle on any N <= n' digraph."""
    if n_prime < 2:
        raise GraphError(f"n_prime must be at least 2, got {n_prime}")
    return n_prime - 1


def diameter(g: Digraph) -> int:
    """Exact diameter by BFS from every node (strongly connected input)."""
    best = 0
    for s in range(g.node_count):
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.out_neighbors[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        if len(dist) != g.node_count:
            raise GraphError("diameter is infinite: graph is not strongly connected")
        best = max(best, max(dist.values()))
    return best


# -- edge-list text format: "N" then one "receiver sender" pair per line, 1-indexed


def to_edge_list(g: Digraph) -> str:
    lines = [str(g.node_count)]
    lines += [f"{l + 1} {i + 1}" for l, i in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def from_edge_list(text: str) -> Digraph:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 1:
        raise GraphError("edge list must start with a line holding the node count")
    n = int(rows[0][0])
    edges = []
    for row in rows[1:]:
        if len(row) != 2:
            raise GraphError(f"malformed edge line: {' '.join(row)!r}")
        edges.append((int(row[0]) - 1, int(row[1]) - 1))
    return Digraph.from_edges(n, edges)


def save_edge_list(g: Digraph, path: str | Path) -> None:
    Path(path).write_text(to_edge_list(g))


def load_edge_list(path: str | Path) -> Digraph:
    return from_edge_list(Path(path).read_text())
