"""Gradient descent on the topological loss over the bandwidth.

The update runs on ``theta = log h`` by default, so the bandwidth stays
positive. Every full-sample gradient step is checked against the loss: a step
that raises the loss by more than ``overshoot_tol`` is retried with half the
step, up to ``max_halvings`` times, and is otherwise rejected (``h`` stays
put for that epoch). The loss therefore never increases over a run.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_points
from .loss import LossConfig, evaluate_loss, gradient_from_evaluation
from .selectors import reference_rule, sigma_pool

PARAMETRIZATIONS = ("log_h", "raw_h")


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`select_bandwidth_tda`.

    Parameters
    ----------
    init : ``"silverman"`` or float
        Starting bandwidth.
    learning_rate : float
        Step size on ``theta``.
    epochs : int
        Number of update epochs.
    parametrization : ``"log_h"`` or ``"raw_h"``
    h_bounds : (float, float), optional
        Clamp interval. Defaults to ``[1e-3, 10] * sigma_pool``.
    record_trace : bool
        Keep one record per epoch.
    early_stop : bool
        Stop once ``|delta log h| < stop_tol`` for ``stop_patience`` epochs in a row.
    overshoot_tol : float
        Largest loss increase accepted for a step.
    max_halvings : int
        Retries with half the step before a step is rejected.
    """

    init: object = "silverman"
    learning_rate: float = 0.05
    epochs: int = 300
    parametrization: str = "log_h"
    h_bounds: tuple | None = None
    record_trace: bool = True
    early_stop: bool = False
    stop_tol: float = 1e-5
    stop_patience: int = 20
    overshoot_tol: float = 0.0
    max_halvings: int = 5

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        object.__setattr__(self, "epochs", int(self.epochs))
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}")
        if self.init != "silverman":
            init = float(self.init)
            if not (np.isfinite(init) and init > 0):
                raise ValueError("fixed init must be a positive bandwidth")
            object.__setattr__(self, "init", init)
        if self.h_bounds is not None:
            lo, hi = (float(v) for v in self.h_bounds)
            if not (0 < lo < hi and np.isfinite(hi)):
                raise ValueError("h_bounds must satisfy 0 < lower < upper < inf")
            object.__setattr__(self, "h_bounds", (lo, hi))
        if self.overshoot_tol < 0 or self.max_halvings < 0:
            raise ValueError("overshoot_tol and max_halvings must be non-negative")

    def bounds_for(self, points):
        if self.h_bounds is not None:
            return self.h_bounds
        s = sigma_pool(points)
        return (1e-3 * s, 10.0 * s)

    def initial_h(self, points):
        if self.init == "silverman":
            return reference_rule("silverman", points).h
        return float(self.init)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    h: float
    loss: float
    grad: float
    n_pairs: int


@dataclass
class OptimizationTrace:
    """Result of one bandwidth optimisation.

    ``records[k]`` holds the bandwidth, loss, gradient ``dL/dh`` and pair count
    at the start of epoch ``k``; ``final_h`` is the bandwidth after the last
    epoch.
    """

    records: list = field(default_factory=list)
    final_h: float = float("nan")
    final_loss: float = float("nan")
    initial_h: float = float("nan")
    initial_loss: float = float("nan")
    epochs_run: int = 0
    rejected_steps: int = 0
    pinned_at_bound: bool = False
    h_bounds: tuple = (0.0, float("inf"))
    wall_time_seconds: float = 0.0

    @property
    def h_path(self):
        return np.array([r.h for r in self.records])

    def same_path(self, other):
        """Equality of everything except the wall time."""
        a, b = asdict(self), asdict(other)
        a.pop("wall_time_seconds")
        b.pop("wall_time_seconds")
        return a == b

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "h", "loss", "grad", "n_pairs"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.h), repr(r.loss), repr(r.grad), r.n_pairs])

    def summary(self):
        return {"final_h": self.final_h, "final_loss": self.final_loss,
                "initial_h": self.initial_h, "initial_loss": self.initial_loss,
                "epochs_run": self.epochs_run, "rejected_steps": self.rejected_steps,
                "pinned_at_bound": self.pinned_at_bound,
                "wall_time_seconds": self.wall_time_seconds}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


class _Evaluator:
    """Loss and gradient at a bandwidth, memoised on the exact float value."""

    def __init__(self, X, spec, cfg):
        self.X, self.spec, self.cfg = X, spec, cfg
        self.cache = {}

    def __call__(self, h):
        if h not in self.cache:
            ev = evaluate_loss(self.X, self.spec, h, self.cfg)
            grad = gradient_from_evaluation(self.X, self.spec, ev, self.cfg)
            self.cache[h] = (ev, grad)
        return self.cache[h]


def select_bandwidth_tda(points, spec, loss_cfg=None, opt_cfg=None):
    """Minimise the topological loss over ``h`` by gradient descent.

    Returns
    -------
    OptimizationTrace

    Raises
    ------
    OptimizationError
        If the gradient is not finite; the message names the bandwidth.
    """
    start = time.perf_counter()
    loss_cfg = loss_cfg or LossConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    X = check_points(points, dim=spec.dim, min_samples=2)
    lo, hi = opt_cfg.bounds_for(X)
    h = opt_cfg.initial_h(X)
    if not lo <= h <= hi:
        raise ValueError(f"initial bandwidth {h:.6g} outside bounds [{lo:.6g}, {hi:.6g}]")
    log_param = opt_cfg.parametrization == "log_h"
    evaluate = _Evaluator(X, spec, loss_cfg)
    ev, grad = evaluate(h)
    trace = OptimizationTrace(initial_h=h, initial_loss=ev.loss, h_bounds=(lo, hi))
    pinned = 0
    still = 0
    for epoch in range(opt_cfg.epochs):
        if not np.isfinite(grad):
            raise OptimizationError(f"non-finite gradient {grad!r} at h={h!r} (epoch {epoch})")
        if opt_cfg.record_trace:
            trace.records.append(EpochRecord(epoch, h, ev.loss, grad, ev.n_pairs))
        step = -opt_cfg.learning_rate * (grad * h if log_param else grad)
        new_h = h
        for _ in range(opt_cfg.max_halvings + 1):
            if step == 0:
                break
            cand = float(np.exp(np.log(h) + step)) if log_param else h + step
            cand = float(min(max(cand, lo), hi))
            if cand == h:
                break
            cand_ev, cand_grad = evaluate(cand)
            if cand_ev.loss <= ev.loss + opt_cfg.overshoot_tol:
                new_h, ev, grad = cand, cand_ev, cand_grad
                break
            step *= 0.5
        else:
            trace.rejected_steps += 1
        moved = abs(np.log(new_h) - np.log(h))
        h = new_h
        trace.epochs_run = epoch + 1
        if h in (lo, hi):
            pinned += 1
        still = still + 1 if moved < opt_cfg.stop_tol else 0
        if opt_cfg.early_stop and still >= opt_cfg.stop_patience:
            break
    trace.final_h = h
    trace.final_loss = ev.loss
    trace.pinned_at_bound = pinned > 0.5 * trace.epochs_run
    trace.wall_time_seconds = time.perf_counter() - start
    return trace
