"""Unsupervised attributed graph alignment with learned multi-view structure."""

__version__ = "0.1.0"

from .aligner import AlignConfig, Aligner, AlignState, ConfigError, InitMode, initialize, run, step
from .bases import StructureBasisSet, build_bases
from .graph import AnchorSet, Graph, GraphFormatError, load_anchors, load_graph
from .matching import extract_one_to_one, hit_at_k, knn_align, rank_candidates
from .objective import Coupling, GWProblem, Weights, grad_alpha, grad_pi, objective
from .perturb import FeatureOp, PerturbSpec, apply_spec, make_target
from .solvers import SinkhornSettings, kl_prox_step, project_simplex

__all__ = [
    "AlignConfig", "Aligner", "AlignState", "AnchorSet", "ConfigError", "Coupling", "FeatureOp",
    "GWProblem", "Graph", "GraphFormatError", "InitMode", "PerturbSpec", "SinkhornSettings",
    "StructureBasisSet", "Weights", "apply_spec", "build_bases", "extract_one_to_one", "grad_alpha",
    "grad_pi", "hit_at_k", "initialize", "kl_prox_step", "knn_align", "load_anchors", "load_graph",
    "make_target", "objective", "project_simplex", "rank_candidates", "run", "step",
]
