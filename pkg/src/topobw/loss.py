"""Topological loss of a bandwidth and its derivative with respect to ``h``.

The KDE is unit-normalized before its superlevel persistence diagram is taken,
so every life lies in ``[0, 1]``. With lives ``l_i`` the loss is

    L(h) = alpha_count * sum(sigmoid(l_i)) - alpha_tp * sum(l_i).

Its derivative routes through the critical cells of each pair and through the
cell holding the maximum of the raw field, all held fixed at the current
``h``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import check_bandwidth, check_points
from .grid import unit_normalize
from .kde import kde_at_cells, kde_dh, kde_evaluate, resolve_mode
from .persistence import ESSENTIAL_POLICIES, superlevel_full, superlevel_h0

VARIANTS = ("full", "no_tp", "no_count", "all_hp")

#: Marker for "every homology dimension of the data".
ALL_DIMS = "all"

_PRESETS = {
    "full": (1.0, 1.0, frozenset({0})),
    "no_tp": (1.0, 0.0, frozenset({0})),
    "no_count": (0.0, 1.0, frozenset({0})),
    "all_hp": (1.0, 1.0, ALL_DIMS),
}


@dataclass(frozen=True)
class LossConfig:
    """Weights and homology dimensions of the topological loss.

    Parameters
    ----------
    alpha_count, alpha_tp : float
        Weights of the soft feature count and of the total persistence.
    hom_dims : frozenset of int or ``"all"``
        Homology dimensions entering the loss. ``"all"`` expands to
        ``{0, ..., d}`` for ``d``-dimensional data.
    essential_policy : str
        How the surviving component is reported, see
        :func:`topobw.persistence.superlevel_h0`.
    variant : str, optional
        One of :data:`VARIANTS`. When given it overrides the weights and
        dimensions with the preset values.
    kde_mode : str
        KDE evaluation path used for both the loss and its gradient.
    """

    alpha_count: float = 1.0
    alpha_tp: float = 1.0
    hom_dims: object = frozenset({0})
    essential_policy: str = "pair_with_min"
    variant: str | None = None
    kde_mode: str = "auto"

    def __post_init__(self):
        if self.variant is not None:
            if self.variant not in _PRESETS:
                raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
            a_c, a_tp, dims = _PRESETS[self.variant]
            object.__setattr__(self, "alpha_count", a_c)
            object.__setattr__(self, "alpha_tp", a_tp)
            object.__setattr__(self, "hom_dims", dims)
        if self.hom_dims != ALL_DIMS:
            dims = frozenset(int(p) for p in np.atleast_1d(list(self.hom_dims)))
            if not dims or min(dims) < 0:
                raise ValueError("hom_dims must be a non-empty set of non-negative integers")
            object.__setattr__(self, "hom_dims", dims)
        for name in ("alpha_count", "alpha_tp"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
            object.__setattr__(self, name, value)
        if self.alpha_count == 0 and self.alpha_tp == 0:
            raise ValueError("alpha_count and alpha_tp cannot both be zero")
        if self.essential_policy not in ESSENTIAL_POLICIES:
            raise ValueError(f"essential_policy must be one of {ESSENTIAL_POLICIES}")

    @classmethod
    def preset(cls, variant, **kwargs):
        return cls(variant=variant, **kwargs)

    def dims_for(self, dim):
        """Homology dimensions for ``dim``-dimensional data."""
        if self.hom_dims == ALL_DIMS:
            return frozenset(range(dim + 1))
        return self.hom_dims


@dataclass(frozen=True)
class LossEvaluation:
    """Everything computed while evaluating the loss at one bandwidth."""

    h: float
    loss: float
    count: float
    tp: float
    diagram: object
    normalized: object = field(repr=False)
    mode: str = "direct"

    @property
    def n_pairs(self):
        return len(self.diagram)


def soft_count(diagram, hom_dims=None):
    """Sum of ``sigmoid(life)`` over the pairs in ``hom_dims`` (all pairs if None)."""
    life = _lives(diagram, hom_dims)
    return float(np.sum(expit(life)))


def total_persistence(diagram, hom_dims=None):
    return float(np.sum(_lives(diagram, hom_dims)))


def _lives(diagram, hom_dims):
    if hom_dims is None:
        return diagram.life
    return diagram.life[diagram.select(hom_dims)]


def _diagram(normalized, dims, essential_policy):
    # H_d of a subset of R^d is trivial, so dimension d never needs reducing.
    ndim = normalized.field.spec.dim
    top = min(max(dims), ndim - 1)
    if top == 0:
        diagram = superlevel_h0(normalized.field, essential_policy)
    else:
        diagram = superlevel_full(normalized.field, top, essential_policy)
    return diagram.restrict(dims)


def evaluate_loss(points, spec, h, cfg=None):
    """Evaluate the loss at ``h`` and keep the intermediate objects.

    Returns
    -------
    LossEvaluation
    """
    cfg = cfg or LossConfig()
    X = check_points(points, dim=spec.dim)
    h = check_bandwidth(h)
    mode = resolve_mode(cfg.kde_mode, X.shape[0], spec)
    normalized = unit_normalize(kde_evaluate(X, spec, h, mode=mode))
    diagram = _diagram(normalized, cfg.dims_for(spec.dim), cfg.essential_policy)
    count = soft_count(diagram)
    tp = total_persistence(diagram)
    loss = cfg.alpha_count * count - cfg.alpha_tp * tp
    return LossEvaluation(h, float(loss), count, tp, diagram, normalized, mode)


def loss_value(points, spec, h, cfg=None):
    """Topological loss at ``h``.

    Returns
    -------
    loss : float
    diagram : PersistenceDiagram
        The pairs that entered the loss.
    """
    ev = evaluate_loss(points, spec, h, cfg)
    return ev.loss, ev.diagram


def gradient_from_evaluation(points, spec, ev, cfg=None):
    """``dL/dh`` at an already evaluated bandwidth."""
    cfg = cfg or LossConfig()
    diagram = ev.diagram
    if len(diagram) == 0:
        return 0.0
    X = check_points(points, dim=spec.dim)
    argmax = ev.normalized.argmax_cell
    cells = np.concatenate([[argmax], diagram.birth_cell, diagram.death_cell])
    if ev.mode == "direct":
        uniq, inverse = np.unique(cells, return_inverse=True)
        _, df_uniq = kde_at_cells(X, spec, ev.h, uniq)
        df = df_uniq[inverse]
    else:
        df = kde_dh(X, spec, ev.h, mode=ev.mode).flat[cells]
    k = len(diagram)
    df_max, df_b, df_d = df[0], df[1:k + 1], df[k + 1:]
    life = diagram.life
    dlife = (df_b - df_d - life * df_max) / ev.normalized.max_raw
    s = expit(life)
    weight = cfg.alpha_count * s * (1.0 - s) - cfg.alpha_tp
    return float(np.sum(weight * dlife))


def loss_gradient_h(points, spec, h, cfg=None):
    """Analytic ``dL/dh`` with critical cells and the argmax cell held fixed."""
    cfg = cfg or LossConfig()
    ev = evaluate_loss(points, spec, h, cfg)
    return gradient_from_evaluation(points, spec, ev, cfg)


def loss_landscape(points, spec, h_values, cfg=None):
    """Evaluate the loss on each bandwidth in ``h_values``.

    Returns a list of dicts with keys ``h, loss, count, tp, n_pairs``.
    """
    rows = []
    for h in h_values:
        ev = evaluate_loss(points, spec, float(h), cfg)
        rows.append({"h": ev.h, "loss": ev.loss, "count": ev.count, "tp": ev.tp,
                     "n_pairs": ev.n_pairs})
    return rows


def write_landscape_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["h", "loss", "count", "tp", "n_pairs"])
        for r in rows:
            writer.writerow([repr(r["h"]), repr(r["loss"]), repr(r["count"]), repr(r["tp"]),
                             r["n_pairs"]])
