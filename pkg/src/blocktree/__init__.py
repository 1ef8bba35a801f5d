"""Block-tree graphs: construction, exact inference and spanning block-tree solvers."""
from .graph import Graph, GraphError, ParseError, parse_graph, serialize_graph, neighbors_of_set, is_connected
from .blocktree import (BlockTree, construct_block_tree, validate_block_tree, block_width,
                        exhaustive_block_treewidth, heuristic_root_search, inference_cost)
from .discrete import DiscreteModel, Potential, Boundary, bt_marginals, brute_force_marginals, map_potentials
from .gaussian import GaussianModel, Observation, exact_estimate, state_space, information_form
from .spanning import split_clusters, mwst, spanning_block_tree
from .approx import GeneratorSpec, generate_model, matrix_split, adaptive_weights, iterate_estimate, \
    error_covariance_diag, Strategy, IterationTrace

__all__ = [
    "Graph", "GraphError", "ParseError", "parse_graph", "serialize_graph", "neighbors_of_set",
    "is_connected", "BlockTree", "construct_block_tree", "validate_block_tree", "block_width",
    "exhaustive_block_treewidth", "heuristic_root_search", "inference_cost", "DiscreteModel",
    "Potential", "Boundary", "bt_marginals", "brute_force_marginals", "map_potentials",
    "GaussianModel", "Observation", "exact_estimate", "state_space", "information_form",
    "split_clusters", "mwst", "spanning_block_tree", "GeneratorSpec", "generate_model",
    "matrix_split", "adaptive_weights", "iterate_estimate", "error_covariance_diag", "Strategy",
    "IterationTrace",
]
__version__ = "0.1.0"
