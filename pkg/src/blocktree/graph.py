"""Undirected graphs over dense integer node ids.

Nodes are ``0..n-1`` internally; original labels from input files are kept in
``Graph.labels``. Edges are stored as ordered pairs ``(u, v)`` with ``u < v``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np


class GraphError(ValueError):
    """Invalid graph input or an operation that needs a property the graph lacks."""


class ParseError(GraphError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset
    weights: Mapping[tuple[int, int], float] | None = None
    labels: tuple[str, ...] = ()
    adj: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nbrs: list[set[int]] = [set() for _ in range(self.n)]
        for u, v in self.edges:
            if u == v:
                raise GraphError(f"self-loop on node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) outside 0..{self.n - 1}")
            if u > v:
                raise GraphError(f"edge ({u}, {v}) is not in (low, high) order")
            nbrs[u].add(v)
            nbrs[v].add(u)
        if self.weights is not None and set(self.weights) != set(self.edges):
            raise GraphError("weights must be given for exactly the edge set")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.n)))
        elif len(self.labels) != self.n:
            raise GraphError("label count does not match node count")
        object.__setattr__(self, "adj", tuple(tuple(sorted(s)) for s in nbrs))

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as an ``(m, 2)`` integer array, rows sorted."""
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        return np.array(sorted(self.edges), dtype=np.int64)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]],
                   weights: Mapping[tuple[int, int], float] | None = None,
                   labels: Iterable[str] | None = None) -> "Graph":
        """Build a graph from pairs in any orientation; weights keyed either way."""
        keyed = set()
        for u, v in edges:
            if u == v:
                raise GraphError(f"self-loop on node {u}")
            keyed.add(edge_key(u, v))
        w = None
        if weights is not None:
            w = {edge_key(*e): float(x) for e, x in weights.items()}
        return cls(n, frozenset(keyed), w, tuple(labels) if labels is not None else ())

    def weight(self, u: int, v: int) -> float:
        """Edge weight; unweighted graphs report 1 for every edge."""
        key = edge_key(u, v)
        if key not in self.edges:
            raise GraphError(f"({u}, {v}) is not an edge")
        if self.weights is None:
            return 1.0
        return self.weights[key]

    def weight_map(self) -> dict[tuple[int, int], float]:
        if self.weights is None:
            return {e: 1.0 for e in self.edges}
        return dict(self.weights)

    def with_weights(self, weights: Mapping[tuple[int, int], float]) -> "Graph":
        return Graph.from_edges(self.n, self.edges, weights, self.labels)

    def subgraph_edges(self, edges: Iterable[tuple[int, int]]) -> "Graph":
        """Same node set, restricted edge set (weights carried over)."""
        keep = frozenset(edge_key(u, v) for u, v in edges)
        missing = keep - self.edges
        if missing:
            raise GraphError(f"edges not in graph: {sorted(missing)[:5]}")
        w = None if self.weights is None else {e: self.weights[e] for e in keep}
        return Graph(self.n, keep, w, self.labels)

    def has_edge(self, u: int, v: int) -> bool:
        return edge_key(u, v) in self.edges

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def ids_for(self, labels: Iterable[str]) -> list[int]:
        index = self.label_index()
        out = []
        for lab in labels:
            lab = str(lab)
            if lab not in index:
                raise GraphError(f"unknown node label {lab!r}")
            out.append(index[lab])
        return out

    def __len__(self) -> int:
        return self.n


def parse_graph(text: str) -> Graph:
    """Parse the whitespace-separated edge-list format.

    Each non-comment line is ``a b [weight]`` or a single label declaring an
    isolated node. Labels get dense ids in order of first appearance;
    repeated edges collapse with the last weight winning.
    """
    index: dict[str, int] = {}
    labels: list[str] = []
    edges: dict[tuple[int, int], float | None] = {}

    def node(label: str) -> int:
        if label not in index:
            index[label] = len(labels)
            labels.append(label)
        return index[label]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 1:
            node(parts[0])
            continue
        if len(parts) > 3:
            raise ParseError(f"expected '<a> <b> [weight]', got {len(parts)} fields", lineno)
        a, b = parts[0], parts[1]
        if a == b:
            raise ParseError(f"self-loop on {a!r}", lineno)
        w = None
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise ParseError(f"weight {parts[2]!r} is not a number", lineno) from None
        edges[edge_key(node(a), node(b))] = w

    if not labels:
        raise ParseError("graph has no nodes")
    given = [w for w in edges.values() if w is not None]
    weights = None
    if given:
        if len(given) != len(edges):
            raise ParseError("either every edge carries a weight or none does")
        weights = {e: float(w) for e, w in edges.items()}
    return Graph(len(labels), frozenset(edges), weights, tuple(labels))


def serialize_graph(g: Graph) -> str:
    """Inverse of :func:`parse_graph`; every label is declared first to pin id order."""
    lines = [g.labels[i] for i in range(g.n)]
    for u, v in sorted(g.edges):
        if g.weights is None:
            lines.append(f"{g.labels[u]} {g.labels[v]}")
        else:
            lines.append(f"{g.labels[u]} {g.labels[v]} {g.weights[(u, v)]!r}")
    return "\n".join(lines) + "\n"


def neighbors_of_set(g: Graph, s: Iterable[int]) -> set[int]:
    """Union of the neighborhoods of the nodes in ``s``."""
    out: set[int] = set()
    for v in s:
        if not 0 <= v < g.n:
            raise GraphError(f"node {v} not in graph")
        out.update(g.adj[v])
    return out


def bfs_order(g: Graph, start: int) -> list[int]:
    seen = [False] * g.n
    seen[start] = True
    order = [start]
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in g.adj[u]:
            if not seen[v]:
                seen[v] = True
                order.append(v)
                queue.append(v)
    return order


def is_connected(g: Graph) -> bool:
    if g.n <= 1:
        return True
    return len(bfs_order(g, 0)) == g.n


def connected_components(g: Graph, nodes: Iterable[int] | None = None) -> list[list[int]]:
    """Components of the subgraph induced on ``nodes`` (all nodes by default).

    Components are returned sorted by their smallest node, nodes ascending.
    """
    if nodes is None:
        member = None
        todo = range(g.n)
    else:
        todo = sorted(set(nodes))
        member = set(todo)
    seen: set[int] = set()
    comps = []
    for s in todo:
        if s in seen:
            continue
        seen.add(s)
        comp = [s]
        stack = [s]
        while stack:
            u = stack.pop()
            for v in g.adj[u]:
                if v not in seen and (member is None or v in member):
                    seen.add(v)
                    comp.append(v)
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


def grid_graph(rows: int, cols: int | None = None) -> Graph:
    """4-connected grid; node ``r * cols + c`` is labelled ``r,c``."""
    cols = rows if cols is None else cols
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    labels = [f"{r},{c}" for r in range(rows) for c in range(cols)]
    return Graph.from_edges(rows * cols, edges, labels=labels)


def hub_grid_graph(size: int, hubs: int = 2) -> Graph:
    """Grid with ``hubs`` extra nodes joined to every grid node and to each other."""
    base = grid_graph(size)
    n = base.n + hubs
    edges = set(base.edges)
    for h in range(base.n, n):
        for v in range(h):
            edges.add((v, h))
    labels = list(base.labels) + [f"hub{i}" for i in range(hubs)]
    return Graph(n, frozenset(edges), None, tuple(labels))


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def random_connected_graph(n: int, extra_edge_prob: float, rng) -> Graph:
    """Random spanning tree on ``n`` nodes plus each other pair with the given probability."""
    edges = set()
    order = rng.permutation(n)
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.add(edge_key(int(order[i]), int(order[j])))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < extra_edge_prob:
                edges.add((u, v))
    return Graph(n, frozenset(edges))
