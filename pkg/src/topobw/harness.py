"""Benchmark trials, sensitivity sweeps and loss ablations.

Every trial draws one sample, builds one grid from it, and runs each
bandwidth selector on that same sample and grid. The KDE at each selected
bandwidth is compared with the true density on the grid. Trial seeds come from
``numpy.random.SeedSequence([base_seed, trial_index])``, so a trial is
reproducible on its own and independent of how trials are scheduled.

Metric conventions: KLD is ``KL(truth || estimate)`` with a floor of 1e-12 on
the estimate; EMD is reported in domain units and in grid-index units; EMD is
only computed for 1D and 2D data.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .datasets import DatasetSpec, mnist_dataset, mnist_grid, sample_dataset, true_density_on_grid
from .grid import build_grid_spec, unit_normalize
from .kde import kde_evaluate, resolve_mode
from .loss import LossConfig
from .metrics import emd_1d, emd_2d, kld, to_distribution
from .optimizer import OptimizerConfig, select_bandwidth_tda
from .persistence import betti_at_level, superlevel_h0
from .selectors import CV_KINDS, REFERENCE_RULES, select

METHOD_ORDER = REFERENCE_RULES + CV_KINDS + ("isj", "tda")
METRICS = ("kld", "emd")
SWEEP_PARAMETERS = ("alpha_count", "alpha_tp", "grid_resolution")
RESULT_HEADER = ("dataset", "trial", "seed", "method", "h", "kld", "emd_domain", "emd_grid",
                 "time_s", "diagnostics")
CONVENTIONS = {"kld": "KL(truth || estimate), estimate floored at 1e-12",
               "emd_domain": "Wasserstein-1 with cell-centre coordinates",
               "emd_grid": "Wasserstein-1 with grid-index coordinates",
               "std": "sample standard deviation (ddof=1); null for fewer than 2 values"}


class ConfigError(ValueError):
    pass


def trial_seed(base_seed, trial_index):
    """Seed of one trial: first 32-bit word of ``SeedSequence([base_seed, trial_index])``."""
    ss = np.random.SeedSequence([int(base_seed), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _method_key(method):
    base, _, variant = method.partition(":")
    return (METHOD_ORDER.index(base) if base in METHOD_ORDER else len(METHOD_ORDER), variant)


@dataclass
class ExperimentConfig:
    """One benchmark protocol.

    ``grid`` is a per-axis resolution (int or sequence). ``metrics`` defaults
    to KLD and EMD for 1D/2D data and to KLD alone otherwise. Synthetic grids span
    the sample's bounding box padded by ``padding`` of its range per side;
    MNIST uses the fixed 28x28 pixel grid on the unit square.
    """

    dataset: DatasetSpec
    n_points: int = 1000
    n_trials: int = 10
    base_seed: int = 0
    grid: object = 100
    padding: float = 0.1
    methods: tuple = ("scott", "silverman", "nrr", "tda")
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    opt_cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    metrics: tuple | None = None
    emd_reg: float = 1.0
    emd_tol: float = 1e-6
    emd_max_cells: int = 625
    kde_mode: str = "auto"
    record_timing: bool = False
    n_jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.dataset, str):
            self.dataset = DatasetSpec(self.dataset)
        self.methods = tuple(self.methods)
        if self.metrics is None:
            self.metrics = ("kld", "emd") if self.dataset.dim <= 2 else ("kld",)
        self.metrics = tuple(self.metrics)
        unknown = set(self.methods) - set(METHOD_ORDER)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if set(self.metrics) - set(METRICS):
            raise ConfigError(f"metrics must be a subset of {METRICS}")
        d = self.dataset.dim
        if "isj" in self.methods and d != 1:
            raise ConfigError("isj is only available for 1D datasets")
        if "emd" in self.metrics and d > 2:
            raise ConfigError("emd is only computed for 1D and 2D datasets")
        if int(self.n_points) < 2 or int(self.n_trials) < 1:
            raise ConfigError("need n_points >= 2 and n_trials >= 1")
        self.n_points, self.n_trials = int(self.n_points), int(self.n_trials)
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")

    @property
    def resolution(self):
        g = np.atleast_1d(self.grid).astype(int)
        return tuple(int(v) for v in (np.repeat(g, self.dataset.dim) if g.size == 1 else g))

    def to_dict(self):
        return {"dataset": self.dataset.to_dict(), "n_points": self.n_points,
                "n_trials": self.n_trials, "base_seed": self.base_seed,
                "grid": list(self.resolution), "padding": self.padding,
                "methods": list(self.methods), "loss_cfg": _loss_to_dict(self.loss_cfg),
                "opt_cfg": _opt_to_dict(self.opt_cfg), "metrics": list(self.metrics),
                "emd_reg": self.emd_reg, "emd_tol": self.emd_tol,
                "emd_max_cells": self.emd_max_cells, "kde_mode": self.kde_mode,
                "record_timing": self.record_timing, "n_jobs": self.n_jobs, "out": self.out}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kwargs = {"dataset": dataset_from_dict(data.pop("dataset"))}
        names = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in names:
                raise ConfigError(f"unknown config field {key!r}")
            if key == "loss_cfg":
                value = _loss_from_dict(value)
            elif key == "opt_cfg":
                value = _opt_from_dict(value)
            kwargs[key] = value
        return cls(**kwargs)


def dataset_from_dict(data):
    """``DatasetSpec`` from a kind name or a dict with kind, params and domain.

    ``mnist_digit`` params may name ``images`` and ``labels`` IDX files, which
    are loaded here.
    """
    if isinstance(data, DatasetSpec):
        return data
    if isinstance(data, str):
        data = {"kind": data}
    params = dict(data.get("params", {}))
    if data["kind"] == "mnist_digit" and "images" in params:
        return mnist_dataset(params["images"], params["labels"], int(params.get("digit", 1)))
    domain = data.get("domain")
    return DatasetSpec(data["kind"], params, tuple(tuple(b) for b in domain) if domain else None)


def _loss_to_dict(cfg):
    dims = cfg.hom_dims if isinstance(cfg.hom_dims, str) else sorted(cfg.hom_dims)
    return {"alpha_count": cfg.alpha_count, "alpha_tp": cfg.alpha_tp, "hom_dims": dims,
            "essential_policy": cfg.essential_policy, "kde_mode": cfg.kde_mode}


def _loss_from_dict(data):
    if isinstance(data, LossConfig):
        return data
    data = dict(data)
    if "hom_dims" in data and not isinstance(data["hom_dims"], str):
        data["hom_dims"] = frozenset(data["hom_dims"])
    return LossConfig(**data)


def _opt_to_dict(cfg):
    out = asdict(cfg)
    if out["h_bounds"] is not None:
        out["h_bounds"] = list(out["h_bounds"])
    return out


def _opt_from_dict(data):
    if isinstance(data, OptimizerConfig):
        return data
    data = dict(data)
    if data.get("h_bounds") is not None:
        data["h_bounds"] = tuple(data["h_bounds"])
    return OptimizerConfig(**data)


@dataclass(frozen=True)
class TrialRecord:
    """One (trial, method) row. Missing values are ``None``, never zero."""

    dataset: str
    trial: int
    seed: int
    method: str
    h: float | None
    kld: float | None
    emd_domain: float | None
    emd_grid: float | None
    time_s: float | None
    diagnostics: str | None

    def sort_key(self):
        return (self.dataset, self.trial, _method_key(self.method))


@dataclass(frozen=True)
class TrialContext:
    """Shared inputs of one trial: the sample, its grid, and the truth on it."""

    seed: int
    points: np.ndarray
    spec: object
    truth: object


def trial_context(cfg, trial_index):
    seed = trial_seed(cfg.base_seed, trial_index)
    X = sample_dataset(cfg.dataset, cfg.n_points, seed)
    if cfg.dataset.kind == "mnist_digit":
        spec = mnist_grid()
    else:
        spec = build_grid_spec(X, cfg.resolution, cfg.padding)
    truth = true_density_on_grid(cfg.dataset, spec).distribution
    return TrialContext(seed, X, spec, truth)


def _emd_pair(cfg, truth, est):
    if truth.spec.dim == 1:
        return emd_1d(truth, est, "domain"), emd_1d(truth, est, "grid_index")
    kw = dict(reg=cfg.emd_reg, tol=cfg.emd_tol, max_cells=cfg.emd_max_cells)
    grid_value = emd_2d(truth, est, units="grid_index", **kw)
    widths = truth.spec.cell_widths
    if np.isclose(widths[0], widths[1], rtol=1e-12):
        return grid_value * float(widths[0]), grid_value
    return emd_2d(truth, est, units="domain", **kw), grid_value


def score_bandwidth(cfg, ctx, h):
    """KLD and EMD of the KDE at ``h`` against the truth; ``None`` where not requested."""
    mode = resolve_mode(cfg.kde_mode, ctx.points.shape[0], ctx.spec)
    est = to_distribution(kde_evaluate(ctx.points, ctx.spec, h, mode=mode))
    k = kld(ctx.truth, est) if "kld" in cfg.metrics else None
    e_dom = e_grid = None
    if "emd" in cfg.metrics:
        e_dom, e_grid = _emd_pair(cfg, ctx.truth, est)
    return k, e_dom, e_grid


def _tda_diagnostics(trace):
    notes = [f"epochs_run={trace.epochs_run}", f"rejected_steps={trace.rejected_steps}"]
    if trace.pinned_at_bound:
        notes.append("pinned_at_bound")
    return ";".join(notes)


def _select(cfg, ctx, method, loss_cfg=None):
    """Run one selector; returns (h, seconds, diagnostics)."""
    start = time.perf_counter()
    if method == "tda":
        trace = select_bandwidth_tda(ctx.points, ctx.spec, loss_cfg or cfg.loss_cfg, cfg.opt_cfg)
        return trace.final_h, time.perf_counter() - start, _tda_diagnostics(trace)
    res = select(method, ctx.points)
    return res.h, time.perf_counter() - start, res.diagnostics


def _record(cfg, ctx, trial_index, method, loss_cfg=None, label=None):
    label = label or method
    try:
        h, seconds, diag = _select(cfg, ctx, method, loss_cfg)
    except Exception as exc:  # a failing selector must not stop the run
        return TrialRecord(cfg.dataset.name, trial_index, ctx.seed, label, None, None, None,
                           None, None, f"{type(exc).__name__}: {exc}")
    try:
        k, e_dom, e_grid = score_bandwidth(cfg, ctx, h)
    except Exception as exc:
        k = e_dom = e_grid = None
        diag = "; ".join(filter(None, [diag, f"metric failure {type(exc).__name__}: {exc}"]))
    return TrialRecord(cfg.dataset.name, trial_index, ctx.seed, label, float(h),
                       k, e_dom, e_grid, seconds if cfg.record_timing else None, diag)


def run_trial(cfg, trial_index):
    """All selectors of ``cfg`` on trial ``trial_index``; one record per method."""
    ctx = trial_context(cfg, trial_index)
    methods = sorted(cfg.methods, key=_method_key)
    return [_record(cfg, ctx, trial_index, m) for m in methods]


def _run_trials(cfg, worker):
    indices = range(cfg.n_trials)
    if cfg.n_jobs == 1:
        chunks = [worker(cfg, t) for t in indices]
    else:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            chunks = list(pool.map(worker, [cfg] * cfg.n_trials, indices))
    records = [r for chunk in chunks for r in chunk]
    return sorted(records, key=TrialRecord.sort_key)


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return mean, std


def summarize(records, group_key=lambda r: r.method):
    """Mean and standard deviation per group of records, ordered by method."""
    groups = {}
    for r in records:
        groups.setdefault(group_key(r), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: _method_key(k) if isinstance(k, str) else k):
        rs = groups[key]
        row = {"group": key, "n": len(rs), "n_failed": sum(r.h is None for r in rs)}
        for name in ("h", "kld", "emd_domain", "emd_grid", "time_s"):
            row[f"{name}_mean"], row[f"{name}_std"] = _mean_std([getattr(r, name) for r in rs])
        rows.append(row)
    return rows


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summary: list

    def by_method(self, method):
        return [r for r in self.records if r.method == method]

    def mean(self, method, metric="kld"):
        return next(row[f"{metric}_mean"] for row in self.summary if row["group"] == method)


def run_experiment(cfg):
    """Run every trial and aggregate per method.

    Failures are recorded per trial and never abort the remaining trials.
    """
    records = _run_trials(cfg, run_trial)
    result = ExperimentResult(cfg, records, summarize(records))
    if cfg.out:
        emit_results(records, "csv", cfg.out)
    return result


# ---------------------------------------------------------------- sweeps and ablations


@dataclass
class SweepConfig:
    parameter: str
    values: list
    base: ExperimentConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"parameter must be one of {SWEEP_PARAMETERS}")
        if not len(self.values):
            raise ConfigError("sweep values must be non-empty")

    def config_for(self, value):
        base = self.base
        if self.parameter == "grid_resolution":
            value = int(value)
            if value < 2:
                raise ConfigError("grid resolution must be >= 2")
            return replace(base, grid=value, out=None)
        lc = base.loss_cfg
        weights = {"alpha_count": lc.alpha_count, "alpha_tp": lc.alpha_tp,
                   self.parameter: float(value)}
        loss_cfg = LossConfig(hom_dims=lc.hom_dims, essential_policy=lc.essential_policy,
                              kde_mode=lc.kde_mode, **weights)
        return replace(base, loss_cfg=loss_cfg, out=None)


@dataclass
class SweepResult:
    sweep: SweepConfig
    results: list  # one ExperimentResult per value, in sweep order

    def rows(self):
        out = []
        for value, res in zip(self.sweep.values, self.results):
            for row in res.summary:
                out.append({"parameter": self.sweep.parameter, "value": value, **row})
        return out


def run_sensitivity_sweep(sweep):
    """One :func:`run_experiment` per sweep value, same seeds for every value."""
    return SweepResult(sweep, [run_experiment(sweep.config_for(v)) for v in sweep.values])


def _ablation_trial(cfg, trial_index, variants):
    ctx = trial_context(cfg, trial_index)
    return [_record(cfg, ctx, trial_index, "tda", LossConfig(
        variant=v, essential_policy=cfg.loss_cfg.essential_policy,
        kde_mode=cfg.loss_cfg.kde_mode), label=f"tda:{v}") for v in variants]


class _AblationWorker:
    def __init__(self, variants):
        self.variants = tuple(variants)

    def __call__(self, cfg, trial_index):
        return _ablation_trial(cfg, trial_index, self.variants)


def run_ablation(cfg, variants=("full", "all_hp", "no_tp", "no_count")):
    """TDA under each loss variant on shared per-trial samples.

    Records are labelled ``tda:<variant>``.
    """
    variants = tuple(variants)
    if not variants:
        raise ConfigError("variants must be non-empty")
    for v in variants:
        LossConfig(variant=v)
    records = _run_trials(cfg, _AblationWorker(variants))
    order = {f"tda:{v}": i for i, v in enumerate(variants)}
    records.sort(key=lambda r: (r.dataset, r.trial, order[r.method]))
    summary = summarize(records)
    summary.sort(key=lambda row: order[row["group"]])
    return ExperimentResult(cfg, records, summary)


# ---------------------------------------------------------------- output


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(records, fmt, path):
    """Write records as CSV (fixed header) or as a JSON array, in sorted order."""
    if not records:
        raise ValueError("no records to write")
    records = sorted(records, key=TrialRecord.sort_key)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(RESULT_HEADER)
        for r in records:
            writer.writerow([_fmt(getattr(r, name)) for name in _FIELD_NAMES])
        text = buf.getvalue()
    elif fmt == "json":
        rows = [{col: getattr(r, name) for col, name in zip(RESULT_HEADER, _FIELD_NAMES)}
                for r in records]
        text = json.dumps(rows, indent=2) + "\n"
    else:
        raise ValueError("format must be 'csv' or 'json'")
    with open(path, "w", newline="") as fh:
        fh.write(text)


_FIELD_NAMES = ("dataset", "trial", "seed", "method", "h", "kld", "emd_domain", "emd_grid",
                "time_s", "diagnostics")


def _parse(col, text):
    if text == "" or text is None:
        return None
    if col in ("trial", "seed"):
        return int(text)
    if col in ("dataset", "method", "diagnostics"):
        return text
    return float(text)


def read_results(path):
    """Inverse of :func:`emit_results` for either format."""
    with open(path, newline="") as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        rows = json.loads(text)
        return [TrialRecord(**{name: row[col] for col, name in zip(RESULT_HEADER, _FIELD_NAMES)})
                for row in rows]
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != RESULT_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [TrialRecord(*[_parse(c, v) for c, v in zip(RESULT_HEADER, row)]) for row in reader]


SUMMARY_COLUMNS = ("group", "n", "n_failed", "h_mean", "h_std", "kld_mean", "kld_std",
                   "emd_domain_mean", "emd_domain_std", "emd_grid_mean", "emd_grid_std",
                   "time_s_mean", "time_s_std")


def write_summary_csv(rows, path, leading=()):
    cols = tuple(leading) + SUMMARY_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in cols])


# ---------------------------------------------------------------- presets

_DESK_OPT = OptimizerConfig(early_stop=True)


def desk_preset(name, **overrides):
    """Scaled-down versions of the published protocols.

    Trial counts shrink (500 -> 10..50) and 3D/4D grids shrink (70^3 -> 32^3,
    40^4 -> 16^4) while sample sizes stay as published. The optimizer stops
    early once the bandwidth has not moved for 20 epochs.
    """
    presets = {
        "bimodal1d": dict(dataset="bimodal1d", n_points=5000, n_trials=50, grid=200,
                          methods=METHOD_ORDER),
        "complex1d": dict(dataset="complex1d", n_points=5000, n_trials=50, grid=200,
                          methods=METHOD_ORDER),
        "clusters2d": dict(dataset="clusters2d", n_points=2000, n_trials=25, grid=100,
                           methods=tuple(m for m in METHOD_ORDER if m != "isj")),
        "annulus2d": dict(dataset="annulus2d", n_points=2000, n_trials=25, grid=100,
                          methods=tuple(m for m in METHOD_ORDER if m != "isj")),
        "heavytail3d": dict(dataset="heavytail3d", n_points=1000, n_trials=20, grid=32,
                            methods=tuple(m for m in METHOD_ORDER if m != "isj")),
        "gauss4d": dict(dataset="gauss4d", n_points=1000, n_trials=10, grid=16,
                        methods=tuple(m for m in METHOD_ORDER if m != "isj")),
    }
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(presets)}")
    kwargs = {"opt_cfg": _DESK_OPT, **presets[name], **overrides}
    return ExperimentConfig(**kwargs)


def betti_at_half_max(points, spec, h):
    """Number of superlevel components of the normalised KDE at level 0.5."""
    field_ = unit_normalize(kde_evaluate(points, spec, h)).field
    return betti_at_level(superlevel_h0(field_), 0.5, 0)
