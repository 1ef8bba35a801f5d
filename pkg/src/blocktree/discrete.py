"""Exact inference for discrete undirected models on block-trees.

Every clique potential is attached to one block-tree edge; the edge factors
then behave like pairwise potentials between cluster variables and ordinary
two-sweep sum-product gives exact cluster and node marginals.

Tables are numpy arrays with one axis per clique member, members in ascending
node id. Flattened, that is row-major with the last member varying fastest.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .blocktree import BlockTree, construct_block_tree
from .graph import Graph, GraphError, edge_key, is_connected, parse_graph

DEFAULT_BUDGET = 10**8
BRUTE_FORCE_LIMIT = 2 * 10**7


class ModelError(ValueError):
    pass


class CostBudgetError(RuntimeError):
    def __init__(self, exponent: int, entries: int, budget: int):
        self.exponent = exponent
        self.entries = entries
        self.budget = budget
        super().__init__(f"inference needs tables of {entries} entries (exponent {exponent}) "
                         f"above budget {budget}")


def cost_budget() -> int:
    env = os.environ.get("BT_COST_BUDGET")
    return int(float(env)) if env else DEFAULT_BUDGET


@dataclass
class Potential:
    clique: tuple[int, ...]
    table: np.ndarray


@dataclass
class Boundary:
    nodes: tuple[int, ...]
    arcs: tuple[tuple[int, int], ...]
    priors: dict[int, np.ndarray]


@dataclass
class DiscreteModel:
    graph: Graph
    domain_sizes: tuple[int, ...]
    potentials: list[Potential]
    boundary: Boundary | None = None

    def __post_init__(self):
        self.domain_sizes = tuple(int(k) for k in self.domain_sizes)
        if len(self.domain_sizes) != self.graph.n:
            raise ModelError("one domain size per node required")
        fixed = []
        for p in self.potentials:
            clique = tuple(int(v) for v in p.clique)
            if any(not 0 <= v < self.graph.n for v in clique):
                raise ModelError(f"clique {clique} has nodes outside the graph")
            shape = tuple(self.domain_sizes[v] for v in clique)
            table = np.asarray(p.table, dtype=float)
            if table.shape != shape:
                if table.size != int(np.prod(shape)):
                    raise ModelError(f"table for clique {clique} has {table.size} entries, "
                                     f"expected {int(np.prod(shape))}")
                table = table.reshape(shape)
            order = np.argsort(clique, kind="stable")
            fixed.append(Potential(tuple(clique[i] for i in order), np.transpose(table, order)))
        self.potentials = fixed
        self.validate()

    @property
    def n(self) -> int:
        return self.graph.n

    def validate(self) -> None:
        g = self.graph
        if len(self.domain_sizes) != g.n:
            raise ModelError("one domain size per node required")
        if any(k < 2 for k in self.domain_sizes):
            raise ModelError("domain sizes must be at least 2")
        for p in self.potentials:
            if len(set(p.clique)) != len(p.clique):
                raise ModelError(f"repeated node in clique {p.clique}")
            for i, u in enumerate(p.clique):
                if not 0 <= u < g.n:
                    raise ModelError(f"clique node {u} not in graph")
                for v in p.clique[i + 1:]:
                    if not g.has_edge(u, v):
                        raise ModelError(f"clique {p.clique} is not a clique of the graph")
            if not np.all(p.table > 0):
                raise ModelError(f"potential on {p.clique} has non-positive entries")
        if self.boundary is not None:
            b = self.boundary
            bset = set(b.nodes)
            for s, t in b.arcs:
                if s not in bset or t in bset:
                    raise ModelError(f"arc ({s}, {t}) must run from a boundary node into the interior")
            for s in b.nodes:
                pr = b.priors.get(s)
                if pr is None:
                    raise ModelError(f"boundary node {s} has no prior")
                if pr.shape != (self.domain_sizes[s],) or not np.all(pr > 0):
                    raise ModelError(f"prior for boundary node {s} must be positive, "
                                     f"length {self.domain_sizes[s]}")

    def state_count(self) -> int:
        return int(np.prod([float(k) for k in self.domain_sizes]))


@dataclass
class EdgeFactorization:
    """Edge factors keyed ``(parent, child)``; axes are parent nodes then child nodes.

    ``log_scale[e]`` is the constant removed before exponentiating, so
    ``log(factor) + log_scale`` is the exact sum of the assigned log potentials.
    """
    block_tree: BlockTree
    edge_factors: dict[tuple[int, int], np.ndarray]
    assignment: dict[int, tuple[int, int]]
    log_scale: dict[tuple[int, int], float] = field(default_factory=dict)


@dataclass
class MarginalSet:
    nodes: dict[int, np.ndarray]
    clusters: dict[int, np.ndarray]
    edges: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def as_array(self, n: int) -> list[np.ndarray]:
        return [self.nodes[v] for v in range(n)]

    def max_deviation(self, other: "MarginalSet") -> float:
        return max(float(np.max(np.abs(self.nodes[v] - other.nodes[v]))) for v in self.nodes)


def _shape(m: DiscreteModel, nodes: Sequence[int]) -> tuple[int, ...]:
    return tuple(m.domain_sizes[v] for v in nodes)


def _broadcast(table: np.ndarray, clique: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """View ``table`` (axes = clique) broadcastable against axes = ``target``."""
    pos = [target.index(v) for v in clique]
    perm = np.argsort(pos)
    t = np.transpose(table, perm) if len(clique) > 1 else table
    shape = [1] * len(target)
    for v in clique:
        shape[target.index(v)] = table.shape[list(clique).index(v)]
    return t.reshape(shape)


def _edge_of_potential(bt: BlockTree, owner: Mapping[int, int], clique: Sequence[int]
                       ) -> tuple[int, int]:
    ks = sorted({owner[v] for v in clique})
    if len(ks) == 1:
        k = ks[0]
        if bt.parent[k] >= 0:
            return (bt.parent[k], k)
        return (k, bt.children[k][0])
    if len(ks) == 2:
        a, b = ks
        if bt.parent[b] == a:
            return (a, b)
        if bt.parent[a] == b:
            return (b, a)
    raise ModelError(f"clique {tuple(clique)} spans non-adjacent clusters {ks}; "
                     "block-tree does not cover the graph")


def map_potentials(m: DiscreteModel, bt: BlockTree,
                   potentials: Sequence[Potential] | None = None) -> EdgeFactorization:
    """Attach each potential to one tree edge and multiply them into edge factors.

    A clique inside cluster ``k`` goes to the edge to k's parent (the root uses
    its first child); a clique across two clusters goes to their edge.
    """
    pots = m.potentials if potentials is None else potentials
    owner = bt.cluster_of()
    tree_edges = [(bt.parent[k], k) for k in range(bt.n_clusters) if bt.parent[k] >= 0]
    logs: dict[tuple[int, int], np.ndarray] = {}
    for e in tree_edges:
        axes = bt.clusters[e[0]] + bt.clusters[e[1]]
        logs[e] = np.zeros(_shape(m, axes))
    assignment = {}
    for idx, p in enumerate(pots):
        if bt.n_clusters == 1:
            raise ModelError("single-cluster block-tree has no edges to carry potentials")
        e = _edge_of_potential(bt, owner, p.clique)
        assignment[idx] = e
        axes = list(bt.clusters[e[0]] + bt.clusters[e[1]])
        logs[e] = logs[e] + _broadcast(np.log(p.table), p.clique, axes)
    factors, scale = {}, {}
    for e, lt in logs.items():
        c = float(lt.max())
        factors[e] = np.exp(lt - c)
        scale[e] = c
    return EdgeFactorization(bt, factors, assignment, scale)


def _check_budget(m: DiscreteModel, bt: BlockTree, budget: int | None) -> None:
    budget = cost_budget() if budget is None else budget
    for i, j in bt.edges or [(0, 0)]:
        nodes = set(bt.clusters[i]) | set(bt.clusters[j])
        entries = int(np.prod([float(m.domain_sizes[v]) for v in nodes]))
        if entries > budget:
            raise CostBudgetError(len(nodes), entries, budget)


def _node_marginals(m: DiscreteModel, nodes: Sequence[int], joint_flat: np.ndarray
                    ) -> dict[int, np.ndarray]:
    joint = joint_flat.reshape(_shape(m, nodes))
    out = {}
    for ax, v in enumerate(nodes):
        other = tuple(a for a in range(len(nodes)) if a != ax)
        out[v] = joint.sum(axis=other) if other else joint.copy()
    return out


def _upward(bt: BlockTree, fact: EdgeFactorization, sizes: list[int], normalize: bool):
    """Leaves-to-root messages; returns (messages to parents, incoming products)."""
    up: dict[int, np.ndarray] = {}
    for k in bt.postorder():
        if k == bt.root:
            continue
        inc = np.ones(sizes[k])
        for c in bt.children[k]:
            inc = inc * up[c]
        F = fact.edge_factors[(bt.parent[k], k)].reshape(sizes[bt.parent[k]], sizes[k])
        msg = F @ inc
        if normalize:
            msg = msg / msg.sum()
        up[k] = msg
    return up


def bt_marginals(m: DiscreteModel, bt: BlockTree, fact: EdgeFactorization | None = None,
                 normalize: bool = True, budget: int | None = None) -> MarginalSet:
    """Exact marginals by two-sweep message passing over the block-tree."""
    for p in m.potentials:
        if not np.all(p.table > 0):
            raise ModelError(f"potential on {p.clique} has non-positive entries")
    _check_budget(m, bt, budget)
    if bt.n_clusters == 1:
        nodes = bt.clusters[0]
        lt = np.zeros(_shape(m, nodes))
        for p in m.potentials:
            lt = lt + _broadcast(np.log(p.table), p.clique, list(nodes))
        joint = np.exp(lt - lt.max()).ravel()
        joint /= joint.sum()
        return MarginalSet(_node_marginals(m, nodes, joint), {0: joint})
    if fact is None:
        fact = map_potentials(m, bt)
    sizes = [int(np.prod(_shape(m, c))) for c in bt.clusters]
    up = _upward(bt, fact, sizes, normalize)
    down: dict[int, np.ndarray] = {}
    for k in bt.preorder():
        for c in bt.children[k]:
            inc = np.ones(sizes[k])
            if k != bt.root:
                inc = inc * down[k]
            for s in bt.children[k]:
                if s != c:
                    inc = inc * up[s]
            F = fact.edge_factors[(k, c)].reshape(sizes[k], sizes[c])
            msg = F.T @ inc
            if normalize:
                msg = msg / msg.sum()
            down[c] = msg
    clusters, nodes, edges = {}, {}, {}
    for k in range(bt.n_clusters):
        b = np.ones(sizes[k])
        if k != bt.root:
            b = b * down[k]
        for c in bt.children[k]:
            b = b * up[c]
        b = b / b.sum()
        clusters[k] = b
        for v, dist in _node_marginals(m, bt.clusters[k], b).items():
            nodes[v] = dist
    for k in range(bt.n_clusters):
        p = bt.parent[k]
        if p < 0:
            continue
        inc_p = np.ones(sizes[p]) if p == bt.root else down[p].copy()
        for s in bt.children[p]:
            if s != k:
                inc_p = inc_p * up[s]
        inc_k = np.ones(sizes[k])
        for c in bt.children[k]:
            inc_k = inc_k * up[c]
        F = fact.edge_factors[(p, k)].reshape(sizes[p], sizes[k])
        pair = F * inc_p[:, None] * inc_k[None, :]
        edges[(p, k)] = pair / pair.sum()
    return MarginalSet(nodes, clusters, edges)


def _joint_log_table(m: DiscreteModel, potentials: Sequence[Potential]) -> np.ndarray:
    nodes = list(range(m.n))
    lt = np.zeros(_shape(m, nodes))
    for p in potentials:
        lt = lt + _broadcast(np.log(p.table), p.clique, nodes)
    return lt


def _split_boundary_potentials(m: DiscreteModel):
    bset = set(m.boundary.nodes)
    inner, edge_only = [], []
    for p in m.potentials:
        (edge_only if set(p.clique) <= bset else inner).append(p)
    return inner, edge_only


def brute_force_marginals(m: DiscreteModel, limit: int = BRUTE_FORCE_LIMIT) -> MarginalSet:
    """Exact marginals by summing the full joint table (small models only)."""
    states = m.state_count()
    if states > limit:
        raise CostBudgetError(m.n, states, limit)
    nodes = list(range(m.n))
    if m.boundary is None:
        lt = _joint_log_table(m, m.potentials)
    else:
        inner, bnd = _split_boundary_potentials(m)
        cond = _joint_log_table(m, inner)
        interior_axes = tuple(v for v in nodes if v not in set(m.boundary.nodes))
        log_z = logsumexp(cond, axis=interior_axes, keepdims=True)
        lt = cond - log_z + _joint_log_table(m, bnd)
        for s in m.boundary.nodes:
            lt = lt + _broadcast(np.log(m.boundary.priors[s]), [s], nodes)
    joint = np.exp(lt - lt.max())
    joint /= joint.sum()
    out = {}
    for v in nodes:
        other = tuple(a for a in nodes if a != v)
        out[v] = joint.sum(axis=other) if other else joint.copy()
    return MarginalSet(out, {0: joint.ravel()})


def moral_graph(m: DiscreteModel) -> Graph:
    """Model graph with co-parents of every interior node married."""
    if m.boundary is None:
        return m.graph
    edges = set(m.graph.edges)
    parents: dict[int, list[int]] = {}
    for s, t in m.boundary.arcs:
        edges.add(edge_key(s, t))
        parents.setdefault(t, []).append(s)
    for ps in parents.values():
        for i, a in enumerate(ps):
            for b in ps[i + 1:]:
                if a != b:
                    edges.add(edge_key(a, b))
    return Graph(m.n, frozenset(edges), None, m.graph.labels)


def boundary_block_tree(m: DiscreteModel) -> tuple[BlockTree, EdgeFactorization]:
    """Block-tree rooted at the boundary with boundary priors folded into the root edge.

    The conditional normalizer of the interior given the boundary is computed
    by an upward sweep and divided out of the root's first edge factor.
    """
    if m.boundary is None or not m.boundary.nodes:
        raise ModelError("model has no boundary; use construct_block_tree")
    g = moral_graph(m)
    if not is_connected(g):
        raise GraphError("graph not connected once the boundary is attached")
    bt = construct_block_tree(g, m.boundary.nodes)
    if bt.n_clusters == 1:
        raise ModelError("boundary model has no interior nodes")
    inner, bnd = _split_boundary_potentials(m)
    fact = map_potentials(m, bt, inner)
    sizes = [int(np.prod(_shape(m, c))) for c in bt.clusters]
    up = _upward(bt, fact, sizes, normalize=True)
    root = bt.root
    root_nodes = list(bt.clusters[root])
    log_z = np.zeros(sizes[root])
    for c in bt.children[root]:
        log_z = log_z + np.log(up[c])
    log_prior = np.zeros(_shape(m, root_nodes))
    for s in m.boundary.nodes:
        log_prior = log_prior + _broadcast(np.log(m.boundary.priors[s]), [s], root_nodes)
    for p in bnd:
        log_prior = log_prior + _broadcast(np.log(p.table), p.clique, root_nodes)
    e = (root, bt.children[root][0])
    lt = np.log(fact.edge_factors[e]).reshape(sizes[root], -1)
    lt = lt + (log_prior.ravel() - log_z)[:, None]
    c = float(lt.max())
    fact.edge_factors[e] = np.exp(lt - c).reshape(fact.edge_factors[e].shape)
    fact.log_scale[e] += c
    return bt, fact


def random_pairwise_model(g: Graph, rng, k: int = 2, unary: bool = True,
                          low: float = 0.1, high: float = 2.0) -> DiscreteModel:
    """Positive uniform-random pairwise (and optionally unary) potentials on every edge."""
    pots = []
    for u, v in sorted(g.edges):
        pots.append(Potential((u, v), rng.uniform(low, high, size=(k, k))))
    if unary:
        for v in range(g.n):
            pots.append(Potential((v,), rng.uniform(low, high, size=(k,))))
    return DiscreteModel(g, (k,) * g.n, pots)


def _ids(g_index: dict[str, int], labels) -> list[int]:
    out = []
    for lab in labels:
        lab = str(lab)
        if lab not in g_index:
            raise ModelError(f"unknown node label {lab!r}")
        out.append(g_index[lab])
    return out


def model_from_json(doc: dict) -> DiscreteModel:
    """Build a model from the JSON document format (labels are strings or ints)."""
    graph_doc = doc["graph"]
    if isinstance(graph_doc, str):
        g = parse_graph(graph_doc)
    else:
        g = parse_graph("\n".join(" ".join(str(x) for x in e) for e in graph_doc))
    labels = list(g.labels)
    edges = set(g.edges)
    bdoc = doc.get("boundary")
    if bdoc:
        index = {lab: i for i, lab in enumerate(labels)}
        for lab in list(bdoc.get("nodes", [])) + [x for arc in bdoc.get("arcs", []) for x in arc]:
            lab = str(lab)
            if lab not in index:
                index[lab] = len(labels)
                labels.append(lab)
        for s, t in bdoc.get("arcs", []):
            edges.add(edge_key(index[str(s)], index[str(t)]))
        g = Graph(len(labels), frozenset(edges), None, tuple(labels))
    index = g.label_index()
    domains = doc.get("domains", 2)
    if isinstance(domains, int):
        sizes = [domains] * g.n
    else:
        default = int(domains.get("*", 2))
        sizes = [int(domains.get(lab, default)) for lab in g.labels]
    pots = []
    for p in doc.get("potentials", []):
        # tables are row-major over the clique as listed; DiscreteModel sorts and transposes
        clique = _ids(index, p["clique"])
        table = np.asarray(p["table"], dtype=float)
        if table.size != int(np.prod([sizes[v] for v in clique])):
            raise ModelError(f"table for clique {p['clique']} has {table.size} entries")
        pots.append(Potential(tuple(clique), table.reshape([sizes[v] for v in clique])))
    boundary = None
    if bdoc:
        bnodes = tuple(_ids(index, bdoc["nodes"]))
        arcs = tuple((index[str(s)], index[str(t)]) for s, t in bdoc.get("arcs", []))
        priors = {}
        for lab, tbl in bdoc.get("priors", {}).items():
            s = _ids(index, [lab])[0]
            arr = np.asarray(tbl, dtype=float)
            priors[s] = arr / arr.sum()
        for s in bnodes:
            priors.setdefault(s, np.full(sizes[s], 1.0 / sizes[s]))
        boundary = Boundary(bnodes, arcs, priors)
    return DiscreteModel(g, tuple(sizes), pots, boundary)


def load_model(path: str) -> DiscreteModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))


def model_to_json(m: DiscreteModel) -> dict:
    g = m.graph
    doc: dict = {
        "graph": [[g.labels[u], g.labels[v]] for u, v in sorted(g.edges)
                  if m.boundary is None or not ((u in m.boundary.nodes) != (v in m.boundary.nodes))],
        "domains": {g.labels[v]: m.domain_sizes[v] for v in range(g.n)},
        "potentials": [{"clique": [g.labels[v] for v in p.clique], "table": p.table.ravel().tolist()}
                       for p in m.potentials],
    }
    if m.boundary is not None:
        b = m.boundary
        doc["boundary"] = {
            "nodes": [g.labels[s] for s in b.nodes],
            "arcs": [[g.labels[s], g.labels[t]] for s, t in b.arcs],
            "priors": {g.labels[s]: b.priors[s].tolist() for s in b.nodes},
        }
    return doc


def marginals_to_json(ms: MarginalSet, g: Graph) -> dict:
    return {g.labels[v]: ms.nodes[v].tolist() for v in sorted(ms.nodes)}
