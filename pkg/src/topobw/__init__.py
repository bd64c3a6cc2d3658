"""Topology-driven bandwidth selection for Gaussian kernel density estimates."""

from .estimators import BandwidthSelector, TopoKDE
from .grid import GridSpec, NormalizedField, ScalarField, build_grid_spec, unit_normalize
from .kde import kde_at_cells, kde_dh, kde_evaluate, kde_score_samples
from .loss import LossConfig, evaluate_loss, loss_gradient_h, loss_landscape, loss_value
from .optimizer import OptimizationTrace, OptimizerConfig, select_bandwidth_tda
from .persistence import (PersistenceDiagram, PersistencePair, betti_at_level, superlevel_full,
                          superlevel_h0)
from .selectors import SelectorResult, cross_validate, isj_1d, reference_rule, select

__version__ = "0.1.0"

__all__ = [
    "BandwidthSelector", "GridSpec", "LossConfig", "NormalizedField", "OptimizationTrace",
    "OptimizerConfig", "PersistenceDiagram", "PersistencePair", "ScalarField", "SelectorResult",
    "TopoKDE", "betti_at_level", "build_grid_spec", "cross_validate", "evaluate_loss",
    "isj_1d", "kde_at_cells", "kde_dh", "kde_evaluate", "kde_score_samples", "loss_gradient_h",
    "loss_landscape", "loss_value", "reference_rule", "select", "select_bandwidth_tda",
    "superlevel_full", "superlevel_h0", "unit_normalize",
]
