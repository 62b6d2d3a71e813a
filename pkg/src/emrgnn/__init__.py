"""Ensemble multi-relational graph propagation with learned relation weights."""

from .kernels import BACKEND
from .graph import RelationalGraph, SparseAdj, NormalizedRelation, build_graph, normalize, spmm, smoothness_score
from .coefficients import RclSettings, emda_solve, qp_oracle, limit_case, lipschitz_constant
from .enmp import (EnmpHyper, PropagationTrace, enmp_layer, propagate, closed_form_solve, ppr_matrix,
                   appnp_averaged, gcn_averaged)

__version__ = "0.1.0"
