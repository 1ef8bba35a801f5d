"""Gaussian graphical models on block-trees.

The information matrix ``J`` carries the graph in its off-diagonal nonzeros.
Exact MMSE estimation runs block Gaussian elimination up the block-tree of
``V = J + H' R^-1 H`` and back-substitution down it; the covariance form and a
dense solve are kept as cross-checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .blocktree import BlockTree, validate_block_tree
from .graph import Graph, edge_key


class NumericalError(ArithmeticError):
    pass


def _as_sparse(J) -> sp.csr_matrix:
    if sp.issparse(J):
        return sp.csr_matrix(J, dtype=float)
    return sp.csr_matrix(np.asarray(J, dtype=float))


def graph_of_matrix(J, labels=None) -> Graph:
    coo = sp.coo_matrix(J)
    edges = {edge_key(int(i), int(j)) for i, j, v in zip(coo.row, coo.col, coo.data)
             if i != j and v != 0}
    return Graph(J.shape[0], frozenset(edges), None, tuple(labels) if labels else ())


@dataclass
class GaussianModel:
    J: sp.csr_matrix
    graph: Graph = None
    _sigma: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.J = _as_sparse(self.J)
        n, m = self.J.shape
        if n != m:
            raise ValueError("information matrix must be square")
        asym = abs(self.J - self.J.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("information matrix is not symmetric")
        if self.graph is None:
            self.graph = graph_of_matrix(self.J)

    @property
    def n(self) -> int:
        return self.J.shape[0]

    def check_positive_definite(self) -> None:
        try:
            sla.cho_factor(self.J.toarray())
        except sla.LinAlgError as exc:
            raise NumericalError("information matrix is not positive definite") from exc

    @property
    def Sigma(self) -> np.ndarray:
        if self._sigma is None:
            try:
                c = sla.cho_factor(self.J.toarray())
            except sla.LinAlgError as exc:
                raise NumericalError("information matrix is not positive definite") from exc
            self._sigma = sla.cho_solve(c, np.eye(self.n))
        return self._sigma


@dataclass
class Observation:
    y: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.size
        self.H = np.broadcast_to(np.asarray(self.H, dtype=float), (n,)).copy()
        self.R = np.broadcast_to(np.asarray(self.R, dtype=float), (n,)).copy()
        if np.any(self.R <= 0):
            raise ValueError("observation noise variances must be positive")

    @classmethod
    def from_json(cls, doc: dict) -> "Observation":
        return cls(doc["y"], doc.get("H", 1.0), doc.get("R", 1.0))

    def to_json(self) -> dict:
        return {"y": self.y.tolist(), "H": self.H.tolist(), "R": self.R.tolist()}


class BlockCovariance:
    """Covariance blocks ``Sigma[C_i, C_j]`` for the clusters of a block-tree."""

    def __init__(self, bt: BlockTree, sigma: np.ndarray):
        self.block_tree = bt
        self.sigma = sigma
        self._idx = [np.asarray(c, dtype=int) for c in bt.clusters]

    def __getitem__(self, ij: tuple[int, int]) -> np.ndarray:
        i, j = ij
        return self.sigma[np.ix_(self._idx[i], self._idx[j])]

    @property
    def blocks(self) -> dict[tuple[int, int], np.ndarray]:
        l = self.block_tree.n_clusters
        return {(i, j): self[i, j] for i in range(l) for j in range(l)}


def permuted_block_covariance(m: GaussianModel, bt: BlockTree) -> BlockCovariance:
    return BlockCovariance(bt, m.Sigma)


@dataclass
class StateSpaceRep:
    """Per non-root cluster ``k``: downward ``x_k = A_k x_parent + u_k`` and upward
    ``x_parent = F_k x_k + w_k`` with noise covariances ``Qu[k]`` and ``Qw[k]``."""
    A: dict[int, np.ndarray]
    Qu: dict[int, np.ndarray]
    F: dict[int, np.ndarray]
    Qw: dict[int, np.ndarray]


def _factor(block: np.ndarray, k: int):
    try:
        return sla.cho_factor(block)
    except sla.LinAlgError as exc:
        raise NumericalError(f"covariance block of cluster {k} is singular or indefinite") from exc


def state_space(bc: BlockCovariance) -> StateSpaceRep:
    bt = bc.block_tree
    A, Qu, F, Qw = {}, {}, {}, {}
    for k in range(bt.n_clusters):
        p = bt.parent[k]
        if p < 0:
            continue
        S_kk, S_pp, S_kp = bc[k, k], bc[p, p], bc[k, p]
        A[k] = sla.cho_solve(_factor(S_pp, p), S_kp.T).T
        Qu[k] = S_kk - A[k] @ S_kp.T
        F[k] = sla.cho_solve(_factor(S_kk, k), S_kp).T
        Qw[k] = S_pp - F[k] @ S_kp
    return StateSpaceRep(A, Qu, F, Qw)


def orthogonality_residual(bc: BlockCovariance, ss: StateSpaceRep) -> float:
    """Largest entry of ``E[u_k x_parent']`` over clusters (zero in exact arithmetic)."""
    bt = bc.block_tree
    worst = 0.0
    for k, A in ss.A.items():
        p = bt.parent[k]
        worst = max(worst, float(np.max(np.abs(bc[k, p] - A @ bc[p, p]))))
    return worst


def reconstruction_residual(bc: BlockCovariance, ss: StateSpaceRep) -> float:
    """Largest deviation of ``A_k Sigma_pp A_k' + Qu_k`` from ``Sigma_kk``."""
    bt = bc.block_tree
    worst = 0.0
    for k, A in ss.A.items():
        p = bt.parent[k]
        worst = max(worst, float(np.max(np.abs(A @ bc[p, p] @ A.T + ss.Qu[k] - bc[k, k]))))
    return worst


def noise_cross_covariance(bc: BlockCovariance, ss: StateSpaceRep, k: int, m: int) -> np.ndarray:
    """``E[u_k u_m']`` reconstructed from the covariance and the representation."""
    bt = bc.block_tree
    pk, pm = bt.parent[k], bt.parent[m]
    Ak, Am = ss.A[k], ss.A[m]
    return (bc[k, m] - Ak @ bc[pk, m] - bc[k, pm] @ Am.T + Ak @ bc[pk, pm] @ Am.T)


def information_form(m: GaussianModel, obs: Observation) -> tuple[sp.csr_matrix, np.ndarray]:
    if obs.y.size != m.n:
        raise ValueError(f"observation length {obs.y.size} does not match model size {m.n}")
    V = (m.J + sp.diags(obs.H * obs.H / obs.R)).tocsr()
    b = obs.H * obs.y / obs.R
    return V, b


class BlockTreeFactor:
    """Block Cholesky-style elimination of a symmetric PD matrix along a block-tree.

    ``diag_blocks[k]`` is ``V[C_k, C_k]`` and ``parent_blocks[k]`` is
    ``V[C_k, C_parent]`` (None at the root). Entries of ``V`` between clusters
    that are not tree-adjacent are assumed zero.
    """

    def __init__(self, bt: BlockTree, diag_blocks, parent_blocks):
        self.bt = bt
        self.idx = [np.asarray(c, dtype=int) for c in bt.clusters]
        self.P = parent_blocks
        self.order = bt.postorder()
        D = [np.array(d, dtype=float) for d in diag_blocks]
        self.L: list = [None] * bt.n_clusters
        self.G: list = [None] * bt.n_clusters
        for k in self.order:
            self.L[k] = _factor_v(D[k], k)
            p = bt.parent[k]
            if p >= 0:
                self.G[k] = sla.cho_solve(self.L[k], self.P[k])
                D[p] -= self.P[k].T @ self.G[k]

    @classmethod
    def from_matrix(cls, V, bt: BlockTree) -> "BlockTreeFactor":
        dense = V.toarray() if sp.issparse(V) else np.asarray(V)
        idx = [np.asarray(c, dtype=int) for c in bt.clusters]
        diag = [dense[np.ix_(i, i)] for i in idx]
        par = [None if bt.parent[k] < 0 else dense[np.ix_(idx[k], idx[bt.parent[k]])]
               for k in range(bt.n_clusters)]
        return cls(bt, diag, par)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        parts = [b[i].copy() for i in self.idx]
        z = [None] * len(parts)
        for k in self.order:
            z[k] = sla.cho_solve(self.L[k], parts[k])
            p = self.bt.parent[k]
            if p >= 0:
                parts[p] -= self.P[k].T @ z[k]
        x = np.empty_like(b)
        xs = [None] * len(parts)
        for k in reversed(self.order):
            p = self.bt.parent[k]
            xs[k] = z[k] if p < 0 else z[k] - self.G[k] @ xs[p]
            x[self.idx[k]] = xs[k]
        return x

    def marginal_variances(self) -> np.ndarray:
        n = sum(len(i) for i in self.idx)
        out = np.empty(n)
        cov = [None] * len(self.idx)
        for k in reversed(self.order):
            inv = sla.cho_solve(self.L[k], np.eye(len(self.idx[k])))
            p = self.bt.parent[k]
            cov[k] = inv if p < 0 else inv + self.G[k] @ cov[p] @ self.G[k].T
            out[self.idx[k]] = np.diag(cov[k])
        return out


def _factor_v(block: np.ndarray, k: int):
    try:
        return sla.cho_factor(block)
    except sla.LinAlgError as exc:
        raise NumericalError(f"elimination failed at cluster {k}: matrix not positive definite") from exc


def exact_estimate(m: GaussianModel, obs: Observation, bt: BlockTree | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """MMSE estimate and posterior variances.

    With ``bt`` the information-form system is solved by block-tree
    elimination; otherwise by a dense Cholesky solve.
    """
    V, b = information_form(m, obs)
    if bt is not None:
        report = validate_block_tree(m.graph, bt)
        if not report.ok:
            raise ValueError("block-tree is not valid for the model graph: "
                             + "; ".join(report.lines()))
        fac = BlockTreeFactor.from_matrix(V, bt)
        return fac.solve(b), fac.marginal_variances()
    try:
        c = sla.cho_factor(V.toarray())
    except sla.LinAlgError as exc:
        raise NumericalError("V is not positive definite") from exc
    xhat = sla.cho_solve(c, b)
    P = sla.cho_solve(c, np.eye(m.n))
    return xhat, np.diag(P).copy()


def covariance_form_estimate(m: GaussianModel, obs: Observation) -> np.ndarray:
    """``Sigma H' (H Sigma H' + R)^-1 y``, dense; an oracle for small models."""
    S = m.Sigma
    H = np.diag(obs.H)
    return S @ H.T @ np.linalg.solve(H @ S @ H.T + np.diag(obs.R), obs.y)


def parse_triplets(text: str, n: int | None = None) -> sp.csr_matrix:
    """Read ``i j value`` lines (0-based); an entry given once is mirrored."""
    entries: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'i j value'")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ValueError(f"line {lineno}: malformed triplet {line!r}") from None
        if i < 0 or j < 0:
            raise ValueError(f"line {lineno}: negative index")
        entries[(i, j)] = v
    if not entries:
        raise ValueError("no matrix entries")
    size = max(max(i, j) for i, j in entries) + 1
    n = size if n is None else n
    full: dict[tuple[int, int], float] = {}
    for (i, j), v in entries.items():
        full[(i, j)] = v
        if (j, i) not in entries:
            full[(j, i)] = v
    rows, cols = zip(*full)
    return sp.csr_matrix((list(full.values()), (rows, cols)), shape=(n, n))


def format_triplets(J) -> str:
    coo = sp.triu(sp.coo_matrix(J)).tocoo()
    lines = [f"{i} {j} {v!r}" for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(),
                                                         coo.data.tolist()))]
    return "\n".join(lines) + "\n"


def load_observation(path: str) -> Observation:
    with open(path) as fh:
        return Observation.from_json(json.load(fh))
