"""Block-tree graphs: disjoint clusters of nodes arranged in a tree.

A block-tree is grown from a root cluster by breadth-first neighbor layers,
each layer split into its connected components, followed by a backward pass
that merges components of a layer whenever they share a neighbor component in
the layer below. The result is unique for a given (graph, root cluster).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .graph import Graph, GraphError, edge_key, is_connected


class BlockTreeError(GraphError):
    pass


class SearchCapError(BlockTreeError):
    """Exhaustive search refused because the graph is too large."""


@dataclass(frozen=True)
class BlockTree:
    """Clusters ``C_0..C_{l-1}`` (``C_0`` is the root) joined by tree edges.

    ``parent[k]`` is -1 for the root. Edges are ``(i, j)`` with ``i < j``.
    """
    clusters: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    parent: tuple[int, ...] = field(default=(), compare=False)
    children: tuple[tuple[int, ...], ...] = field(default=(), compare=False)
    scale: tuple[int, ...] = field(default=(), compare=False)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def width(self) -> int:
        return max(len(c) for c in self.clusters)

    def cluster_of(self) -> dict[int, int]:
        out = {}
        for k, c in enumerate(self.clusters):
            for v in c:
                out[v] = k
        return out

    def neighbors(self, k: int) -> list[int]:
        nb = list(self.children[k])
        if self.parent[k] >= 0:
            nb.append(self.parent[k])
        return nb

    def postorder(self) -> list[int]:
        """Clusters ordered so that every child precedes its parent."""
        order = []
        stack = [(self.root, False)]
        while stack:
            k, done = stack.pop()
            if done:
                order.append(k)
                continue
            stack.append((k, True))
            for c in reversed(self.children[k]):
                stack.append((c, False))
        return order

    def preorder(self) -> list[int]:
        return list(reversed(self.postorder()))

    def partition(self) -> frozenset:
        return frozenset(frozenset(c) for c in self.clusters)

    def edge_sets(self) -> frozenset:
        """Tree edges expressed by cluster contents, independent of indexing."""
        return frozenset(frozenset((frozenset(self.clusters[i]), frozenset(self.clusters[j])))
                         for i, j in self.edges)

    def same_structure(self, other: "BlockTree") -> bool:
        """Equal as unrooted trees over the same clusters."""
        return self.partition() == other.partition() and self.edge_sets() == other.edge_sets()

    def to_json(self, g: Graph | None = None) -> dict:
        lab = (lambda v: g.labels[v]) if g is not None else (lambda v: v)
        return {
            "clusters": [[lab(v) for v in c] for c in self.clusters],
            "edges": [list(e) for e in self.edges],
            "root": self.root,
        }

    def dumps(self, g: Graph | None = None) -> str:
        return json.dumps(self.to_json(g))


def make_block_tree(clusters: Iterable[Iterable[int]], edges: Iterable[tuple[int, int]],
                    root: int = 0, canonical: bool = True) -> BlockTree:
    """Assemble a BlockTree, deriving parent/children/scale by BFS from ``root``.

    No validation happens here; use :func:`validate_block_tree`. With
    ``canonical`` the clusters are reindexed by (scale, smallest node) and
    nodes are sorted inside clusters.
    """
    cl = [tuple(sorted(c)) for c in clusters]
    ed = sorted({edge_key(i, j) for i, j in edges})
    l = len(cl)
    nbrs: list[list[int]] = [[] for _ in range(l)]
    for i, j in ed:
        nbrs[i].append(j)
        nbrs[j].append(i)
    parent = [-1] * l
    scale = [-1] * l
    if l:
        scale[root] = 0
        frontier = [root]
        while frontier:
            nxt = []
            for k in frontier:
                for m in sorted(nbrs[k]):
                    if scale[m] < 0:
                        scale[m] = scale[k] + 1
                        parent[m] = k
                        nxt.append(m)
            frontier = nxt
    if canonical and l:
        order = sorted(range(l), key=lambda k: (scale[k] if scale[k] >= 0 else math.inf,
                                                cl[k][0] if cl[k] else -1, k))
        new = {old: i for i, old in enumerate(order)}
        cl = [cl[k] for k in order]
        ed = sorted(edge_key(new[i], new[j]) for i, j in ed)
        parent = [new[parent[k]] if parent[k] >= 0 else -1 for k in order]
        scale = [scale[k] for k in order]
        root = new[root]
    children: list[list[int]] = [[] for _ in range(l)]
    for k, p in enumerate(parent):
        if p >= 0:
            children[p].append(k)
    return BlockTree(tuple(cl), tuple(ed), root, tuple(parent),
                     tuple(tuple(sorted(c)) for c in children), tuple(scale))


def _layers(g: Graph, root: Sequence[int]):
    """Forward pass: BFS layers; returns (layer index per node, list of layers)."""
    layer = [-1] * g.n
    for v in root:
        layer[v] = 0
    layers = [list(root)]
    assigned = len(root)
    adj = g.adj
    while assigned < g.n:
        r = len(layers)
        nxt = []
        for u in layers[-1]:
            for v in adj[u]:
                if layer[v] < 0:
                    layer[v] = r
                    nxt.append(v)
        if not nxt:
            raise BlockTreeError("graph not connected; build one block-tree per connected component")
        layers.append(nxt)
        assigned += len(nxt)
    return layer, layers


# above this size the array-based construction is used; plain Python loops
# degrade beyond linear once the working set leaves cache
VECTORIZE_MIN_NODES = 5000


def construct_block_tree(g: Graph, root_cluster: Iterable[int], limit: int | None = None
                         ) -> BlockTree | None:
    """Build the block-tree of ``g`` grown from ``root_cluster``.

    With ``limit`` set, construction stops early and returns None as soon as
    some cluster is known to exceed ``limit`` nodes (used by the searches).
    """
    root = sorted(set(root_cluster))
    if not root:
        raise BlockTreeError("root cluster must be non-empty")
    for v in root:
        if not 0 <= v < g.n:
            raise BlockTreeError(f"root node {v} not in graph")
    if limit is not None and len(root) > limit:
        return None
    if g.n >= VECTORIZE_MIN_NODES and limit is None:
        return _construct_arrays(g, root)
    return _construct_loops(g, root, limit)


def _construct_loops(g: Graph, root: list[int], limit: int | None) -> BlockTree | None:
    layer, layers = _layers(g, root)
    adj = g.adj

    # split each non-root layer into connected components of the induced subgraph
    comp = [-1] * g.n
    comp_nodes: list[list[int]] = [root]
    comp_layer = [0]
    for v in root:
        comp[v] = 0
    for r in range(1, len(layers)):
        for s in layers[r]:
            if comp[s] >= 0:
                continue
            cid = len(comp_nodes)
            comp[s] = cid
            nodes = [s]
            stack = [s]
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if comp[v] < 0 and layer[v] == r:
                        comp[v] = cid
                        nodes.append(v)
                        stack.append(v)
            if limit is not None and len(nodes) > limit:
                return None
            comp_nodes.append(nodes)
            comp_layer.append(r)

    # backward pass: union components of layer r-1 touched by one (merged) cluster of layer r
    uf = list(range(len(comp_nodes)))
    size = [len(c) for c in comp_nodes]

    def find(x: int) -> int:
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    layer_comps: list[list[int]] = [[] for _ in layers]
    for cid, r in enumerate(comp_layer):
        layer_comps[r].append(cid)
    for r in range(len(layers) - 1, 1, -1):
        anchor: dict[int, int] = {}
        for cid in layer_comps[r]:
            rep = find(cid)
            for u in comp_nodes[cid]:
                for v in adj[u]:
                    if layer[v] == r - 1:
                        p = find(comp[v])
                        a = anchor.get(rep)
                        if a is None:
                            anchor[rep] = p
                            continue
                        a = find(a)
                        if a != p:
                            if size[a] < size[p]:
                                a, p = p, a
                            uf[p] = a
                            size[a] += size[p]
                            if limit is not None and size[a] > limit:
                                return None
                            anchor[rep] = a

    # final clusters and their parent links
    cluster_index: dict[int, int] = {}
    clusters: list[list[int]] = []
    for cid in range(len(comp_nodes)):
        rep = find(cid)
        if rep not in cluster_index:
            cluster_index[rep] = len(clusters)
            clusters.append([])
        clusters[cluster_index[rep]].extend(comp_nodes[cid])
    edges = set()
    for cid in range(1, len(comp_nodes)):
        r = comp_layer[cid]
        k = cluster_index[find(cid)]
        u = comp_nodes[cid][0]
        for v in adj[u]:
            if layer[v] == r - 1:
                edges.add(edge_key(k, cluster_index[find(comp[v])]))
                break
    return make_block_tree(clusters, edges, root=0)


def _construct_arrays(g: Graph, root: list[int]) -> BlockTree:
    """Same construction as the loop version, with per-layer work done by scipy."""
    n = g.n
    E = g.edge_array
    u, v = E[:, 0], E[:, 1]
    A = sp.csr_matrix((np.ones(2 * len(u)), (np.r_[u, v], np.r_[v, u])), shape=(n, n))
    dist = csgraph.dijkstra(A, indices=root, unweighted=True, min_only=True)
    if not np.all(np.isfinite(dist)):
        raise BlockTreeError("graph not connected; build one block-tree per connected component")
    layer = dist.astype(np.int64)

    # components inside each layer; the root nodes form one component
    same = layer[u] == layer[v]
    ru = np.full(len(root) - 1, root[0], dtype=np.int64)
    rv = np.asarray(root[1:], dtype=np.int64)
    su, sv = np.r_[u[same], ru], np.r_[v[same], rv]
    S = sp.csr_matrix((np.ones(len(su)), (su, sv)), shape=(n, n))
    ncomp, comp = csgraph.connected_components(S, directed=False)
    comp_layer = np.empty(ncomp, dtype=np.int64)
    comp_layer[comp] = layer

    # cross edges oriented from layer r (a) down to layer r-1 (b), grouped by r
    a, b = np.where(layer[u] > layer[v], u, v)[~same], np.where(layer[u] > layer[v], v, u)[~same]
    ca, cb = comp[a], comp[b]
    order = np.argsort(layer[a], kind="stable")
    ca, cb = ca[order], cb[order]
    bounds = np.searchsorted(layer[a][order], np.arange(layer.max() + 2))
    rep = np.arange(ncomp)
    for r in range(int(layer.max()), 1, -1):
        lo, hi = bounds[r], bounds[r + 1]
        if lo == hi:
            continue
        x, y = rep[ca[lo:hi]], cb[lo:hi]
        ys, yi = np.unique(y, return_inverse=True)
        xs, xi = np.unique(x, return_inverse=True)
        k = len(ys)
        G = sp.csr_matrix((np.ones(hi - lo), (yi, k + xi)), shape=(k + len(xs),) * 2)
        _, lab = csgraph.connected_components(G, directed=False)
        first = np.full(lab.max() + 1, np.iinfo(np.int64).max)
        np.minimum.at(first, lab[:k], ys)
        rep[ys] = first[lab[:k]]

    cluster_of_node = rep[comp]
    keys, cidx = np.unique(cluster_of_node, return_inverse=True)
    node_order = np.argsort(cidx, kind="stable")
    splits = np.searchsorted(cidx[node_order], np.arange(1, len(keys)))
    clusters = [c.tolist() for c in np.split(node_order, splits)]
    pa, pb = cidx[a], cidx[b]
    pairs = np.unique(np.minimum(pa, pb) * len(keys) + np.maximum(pa, pb))
    edges = [(int(p // len(keys)), int(p % len(keys))) for p in pairs]
    root_idx = int(cidx[root[0]])
    return make_block_tree(clusters, edges, root=root_idx)


def block_width(bt: BlockTree) -> int:
    return bt.width


@dataclass
class Check:
    name: str
    ok: bool
    offenders: list = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [f"{c.name}: {'PASS' if c.ok else 'FAIL'}"
                + ("" if c.ok else f" {c.offenders[:10]}") for c in self.checks]


def validate_block_tree(g: Graph, bt: BlockTree) -> ValidationReport:
    """Check every BlockTree invariant against ``g``; failures become report entries."""
    checks = []
    seen: dict[int, int] = {}
    dup = []
    for k, c in enumerate(bt.clusters):
        for v in c:
            if v in seen:
                dup.append((v, seen[v], k))
            else:
                seen[v] = k
    checks.append(Check("disjoint", not dup, dup))
    missing = sorted(set(range(g.n)) - set(seen))
    extra = sorted(set(seen) - set(range(g.n)))
    checks.append(Check("covers", not missing and not extra, missing + extra))

    l = bt.n_clusters
    bad_edges = [e for e in bt.edges if not (0 <= e[0] < l and 0 <= e[1] < l) or e[0] == e[1]]
    nbrs: list[set[int]] = [set() for _ in range(l)]
    for i, j in bt.edges:
        if (i, j) not in bad_edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
    reach = {bt.root} if l else set()
    stack = list(reach)
    while stack:
        k = stack.pop()
        for m in nbrs[k]:
            if m not in reach:
                reach.add(m)
                stack.append(m)
    unreached = sorted(set(range(l)) - reach)
    tree_ok = not bad_edges and len(set(bt.edges)) == l - 1 and not unreached
    offenders = bad_edges + unreached
    if len(set(bt.edges)) != l - 1:
        offenders = [f"{len(set(bt.edges))} edges for {l} clusters"] + offenders
    checks.append(Check("tree", tree_ok, offenders))

    scale_bad = []
    if len(bt.scale) != l or len(bt.parent) != l:
        scale_bad.append("missing parent/scale data")
    else:
        if l and bt.scale[bt.root] != 0:
            scale_bad.append(("root", bt.scale[bt.root]))
        for k in range(l):
            p = bt.parent[k]
            if k == bt.root:
                if p != -1:
                    scale_bad.append((k, "root has parent"))
                continue
            if p < 0 or edge_key(k, p) not in set(bt.edges) or bt.scale[k] != bt.scale[p] + 1:
                scale_bad.append(k)
    checks.append(Check("scale", not scale_bad, scale_bad))

    owner = {v: k for k, c in enumerate(bt.clusters) for v in c}
    tree_edges = set(bt.edges)
    uncovered = []
    for u, v in sorted(g.edges):
        a, b = owner.get(u), owner.get(v)
        if a is None or b is None:
            uncovered.append((u, v))
        elif a != b and edge_key(a, b) not in tree_edges:
            uncovered.append((u, v))
    checks.append(Check("edge_coverage", not uncovered, uncovered))
    return ValidationReport(checks)


def _root_candidates(n: int, max_size: int):
    for k in range(1, max_size + 1):
        yield from itertools.combinations(range(n), k)


def exhaustive_block_treewidth(g: Graph, cap: int = 16) -> tuple[int, tuple[int, ...]]:
    """Minimum block-width over every root cluster of size at most ceil(n/2).

    Ties go to the lexicographically smallest root. Refuses graphs above ``cap``.
    """
    if g.n > cap:
        raise SearchCapError(f"exhaustive search limited to n <= {cap} (got {g.n}); "
                             "use heuristic_root_search")
    if not is_connected(g):
        raise BlockTreeError("graph not connected; build one block-tree per connected component")
    best_w = g.n + 1
    best_root: tuple[int, ...] = ()
    for root in _root_candidates(g.n, max(1, math.ceil(g.n / 2))):
        bt = construct_block_tree(g, root, limit=best_w)
        if bt is None:
            continue
        w = bt.width
        if (w, root) < (best_w, best_root or (g.n,)):
            best_w, best_root = w, root
    return best_w, best_root


def heuristic_root_search(g: Graph, size_threshold: int = 300) -> tuple[tuple[int, ...], int]:
    """Upper bound on block-treewidth from small roots plus greedy augmentation.

    Graphs with ``n <= size_threshold`` try every root of one or two nodes,
    larger graphs every single-node root. The best root is then grown one node
    at a time while the block-width strictly drops.
    """
    if not is_connected(g):
        raise BlockTreeError("graph not connected; build one block-tree per connected component")
    max_size = 2 if g.n <= size_threshold else 1
    best_w = g.n + 1
    best_root: tuple[int, ...] = (0,)
    for root in _root_candidates(g.n, min(max_size, g.n)):
        bt = construct_block_tree(g, root, limit=best_w - 1)
        if bt is None:
            continue
        if bt.width < best_w:
            best_w, best_root = bt.width, root
    while True:
        members = set(best_root)
        round_w, round_k = best_w, None
        for k in range(g.n):
            if k in members:
                continue
            bt = construct_block_tree(g, members | {k}, limit=round_w - 1)
            if bt is not None and bt.width < round_w:
                round_w, round_k = bt.width, k
        if round_k is None:
            break
        best_root = tuple(sorted(members | {round_k}))
        best_w = round_w
    return best_root, best_w


@dataclass(frozen=True)
class InferenceCost:
    exponent: int
    cost: int


def inference_cost(bt: BlockTree, domain_size: int) -> InferenceCost:
    """Largest adjacent-cluster size sum and ``domain_size`` raised to it."""
    if domain_size < 2:
        raise ValueError("domain size must be at least 2")
    if bt.edges:
        e = max(len(bt.clusters[i]) + len(bt.clusters[j]) for i, j in bt.edges)
    else:
        e = bt.width
    return InferenceCost(e, domain_size ** e)


def block_tree_from_json(doc: dict, g: Graph) -> BlockTree:
    index = g.label_index()
    clusters = [[index[str(v)] for v in c] for c in doc["clusters"]]
    edges = [tuple(e) for e in doc["edges"]]
    return make_block_tree(clusters, edges, root=int(doc.get("root", 0)))
