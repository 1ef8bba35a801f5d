"""Maximum-weight spanning block-trees of bounded cluster size.

Start from a low-width block-tree of the whole graph, cut every cluster larger
than ``B`` into pieces of at most ``B`` nodes (greedy on pair affinities), then
connect the pieces with a maximum-weight spanning tree of the cluster graph.
Edges of the original graph that fall between non-adjacent pieces are dropped.
"""
from __future__ import annotations

import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from .blocktree import BlockTree, construct_block_tree, heuristic_root_search, make_block_tree
from .graph import Graph, GraphError, edge_key


class DisconnectedClusterGraph(GraphError):
    pass


@dataclass(frozen=True)
class SpanningConfig:
    B: int
    weights: Mapping[tuple[int, int], float] | None = None

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")


@dataclass
class SpanningBlockTree:
    block_tree: BlockTree
    retained_edges: frozenset
    total_weight: float
    dropped_weight: float

    def to_json(self, g: Graph) -> dict:
        doc = self.block_tree.to_json(g)
        doc["retained_edges"] = [[g.labels[u], g.labels[v]] for u, v in sorted(self.retained_edges)]
        doc["total_weight"] = self.total_weight
        doc["dropped_weight"] = self.dropped_weight
        return doc


def _weights(g: Graph, W: Mapping[tuple[int, int], float] | None) -> Mapping[tuple[int, int], float]:
    return g.weight_map() if W is None else W


def _affinities(g: Graph, W, members: Sequence[int], child_nodes: set[int],
                attach: dict[int, set[int]] | None) -> dict[int, dict[int, float]]:
    """Pair affinities inside one cluster.

    ``attach`` maps each node to the parent pieces it touches; None marks the
    root cluster, where only directly joined pairs are eligible and only their
    own edge weight counts.
    """
    inside = set(members)
    eta: dict[tuple[int, int], float] = {}
    for r in members:
        for s in g.adj[r]:
            if s in inside and r < s:
                eta[(r, s)] = W[(r, s)]
    if attach is not None:
        shared: dict[tuple[int, int], list[float]] = defaultdict(list)
        for t in sorted(child_nodes):
            near = [r for r in g.adj[t] if r in inside]
            for i, r in enumerate(near):
                for s in near[i + 1:]:
                    key = edge_key(r, s)
                    shared[key].append(W[edge_key(r, t)] + W[edge_key(t, s)])
        for key, terms in shared.items():
            eta[key] = eta.get(key, 0.0) + math.fsum(terms)
        eta = {k: v for k, v in eta.items() if attach[k[0]] & attach[k[1]]}
    nbr: dict[int, dict[int, float]] = {v: {} for v in members}
    for (r, s), v in eta.items():
        nbr[r][s] = v
        nbr[s][r] = v
    return nbr


def _greedy_pieces(members: Sequence[int], nbr: dict[int, dict[int, float]], B: int
                   ) -> list[tuple[int, ...]]:
    pairs = sorted(((-v, r, s) for r in nbr for s, v in nbr[r].items() if r < s))
    free = set(members)
    pieces = []
    cursor = 0
    while free:
        while cursor < len(pairs) and not (pairs[cursor][1] in free and pairs[cursor][2] in free):
            cursor += 1
        if cursor == len(pairs):
            pieces.extend((v,) for v in sorted(free))
            break
        _, r, s = pairs[cursor]
        piece = {r, s}
        free -= piece
        score: dict[int, float] = defaultdict(float)
        for m in piece:
            for t, v in nbr[m].items():
                if t in free:
                    score[t] += v
        while len(piece) < B and score:
            x = min(score, key=lambda t: (-score[t], t))
            del score[x]
            piece.add(x)
            free.discard(x)
            for t, v in nbr[x].items():
                if t in free:
                    score[t] += v
        pieces.append(tuple(sorted(piece)))
    return pieces


def split_clusters(g: Graph, bt: BlockTree, W: Mapping[tuple[int, int], float] | None, B: int
                   ) -> list[tuple[int, ...]]:
    """Refine the clusters of ``bt`` into pieces of at most ``B`` nodes.

    Clusters are handled parents first. Two nodes of an oversized cluster may
    share a piece only if both touch a common piece of the parent cluster.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    W = _weights(g, W)
    piece_of: dict[int, int] = {}
    out: list[tuple[int, ...]] = []
    order = sorted(range(bt.n_clusters), key=lambda k: (bt.scale[k], k))
    for k in order:
        members = bt.clusters[k]
        if len(members) <= B:
            pieces = [tuple(members)]
        elif B == 1:
            pieces = [(v,) for v in members]
        else:
            child_nodes = {v for c in bt.children[k] for v in bt.clusters[c]}
            attach = None
            if bt.parent[k] >= 0:
                parent_nodes = set(bt.clusters[bt.parent[k]])
                attach = {r: {piece_of[t] for t in g.adj[r] if t in parent_nodes} for r in members}
            nbr = _affinities(g, W, members, child_nodes, attach)
            pieces = _greedy_pieces(members, nbr, B)
        for p in pieces:
            for v in p:
                piece_of[v] = len(out)
            out.append(p)
    return out


def cluster_graph_weights(clusters: Sequence[Sequence[int]], g: Graph,
                          W: Mapping[tuple[int, int], float] | None = None
                          ) -> dict[tuple[int, int], float]:
    """Sum of edge weights between every pair of clusters joined by an edge."""
    W = _weights(g, W)
    owner = {}
    for i, c in enumerate(clusters):
        for v in c:
            owner[v] = i
    if len(owner) != g.n:
        raise ValueError("clusters must partition the node set")
    terms: dict[tuple[int, int], list[float]] = defaultdict(list)
    for (u, v) in g.edges:
        a, b = owner[u], owner[v]
        if a != b:
            terms[edge_key(a, b)].append(W[(u, v)])
    return {k: math.fsum(t) for k, t in terms.items()}


def mwst(n_clusters: int, weights: Mapping[tuple[int, int], float]) -> list[tuple[int, int]]:
    """Kruskal maximum-weight spanning tree; ties go to the smaller index pair."""
    parent = list(range(n_clusters))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree = []
    for (i, j), w in sorted(weights.items(), key=lambda kv: (-kv[1], kv[0])):
        a, b = find(i), find(j)
        if a != b:
            parent[a] = b
            tree.append((i, j))
            if len(tree) == n_clusters - 1:
                break
    if len(tree) != n_clusters - 1:
        raise DisconnectedClusterGraph("cluster graph is not connected")
    return sorted(tree)


_BASE_CACHE: "OrderedDict[tuple, BlockTree]" = OrderedDict()
_BASE_CACHE_SIZE = 8


def base_block_tree(g: Graph, size_threshold: int = 300) -> BlockTree:
    """Heuristic low-width block-tree of ``g``; memoized per edge set."""
    key = (g.n, g.edges, size_threshold)
    bt = _BASE_CACHE.get(key)
    if bt is None:
        root, _ = heuristic_root_search(g, size_threshold)
        bt = construct_block_tree(g, root)
        _BASE_CACHE[key] = bt
        if len(_BASE_CACHE) > _BASE_CACHE_SIZE:
            _BASE_CACHE.popitem(last=False)
    else:
        _BASE_CACHE.move_to_end(key)
    return bt


def spanning_block_tree(g: Graph, W: Mapping[tuple[int, int], float] | None, B: int,
                        base: BlockTree | None = None, monotone: bool = True) -> SpanningBlockTree:
    """Maximum-weight spanning block-tree with clusters of at most ``B`` nodes.

    ``base`` lets callers reuse the full-graph block-tree across weight
    changes; it only depends on the graph. The greedy split alone can retain
    less weight at ``B`` than at ``B - 1``; with ``monotone`` every width up to
    ``B`` is tried and the heaviest result wins, ties going to the larger width.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    W = _weights(g, W)
    if B > 1 and base is None:
        base = base_block_tree(g)
    best = _greedy_spanning(g, W, B, base)
    for b in range(1, B) if monotone else ():
        cand = _greedy_spanning(g, W, b, base)
        if cand.total_weight > best.total_weight:
            best = cand
    return best


def _greedy_spanning(g: Graph, W: Mapping[tuple[int, int], float], B: int,
                     base: BlockTree | None) -> SpanningBlockTree:
    if B == 1:
        pieces = [(v,) for v in range(g.n)]
        root_node = 0
    else:
        pieces = split_clusters(g, base, W, B)
        root_node = base.clusters[base.root][0]
    cw = cluster_graph_weights(pieces, g, W)
    tree = mwst(len(pieces), cw) if len(pieces) > 1 else []
    root = next(i for i, p in enumerate(pieces) if root_node in p)
    bt = make_block_tree(pieces, tree, root=root)
    owner = bt.cluster_of()
    adjacent = set(bt.edges)
    kept, kept_w, lost_w = [], [], []
    for e in sorted(g.edges):
        a, b = owner[e[0]], owner[e[1]]
        if a == b or edge_key(a, b) in adjacent:
            kept.append(e)
            kept_w.append(W[e])
        else:
            lost_w.append(W[e])
    return SpanningBlockTree(bt, frozenset(kept), math.fsum(kept_w), math.fsum(lost_w))

