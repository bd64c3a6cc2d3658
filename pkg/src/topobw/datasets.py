"""Synthetic test densities, their samplers, and MNIST digit densities.

Every synthetic kind is an unnormalised density restricted to a finite box.
Mixtures of Gaussians (and the truncated Cauchy spike) are sampled component
first; the remaining kinds use uniform-proposal rejection sampling against an
analytic bound of the density over the box.

Fixed parameters for kinds whose formula leaves them open:

* ``clusters2d``: centres (-2, -2), (0, 2), (2.5, -1); isotropic variances
  0.3, 0.6, 0.2.
* ``weibull2d``: alpha = 1.5, beta = 1.
* ``annulus2d``: ``exp(-(r - 1.5)**2 / 0.08)``.
* ``gauss3d`` / ``gauss4d``: shape constant ``c = 0.5``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ._validation import check_points
from .grid import GridSpec, ScalarField
from .metrics import DiscreteDistribution, to_distribution

KINDS = ("bimodal1d", "complex1d", "clusters2d", "elliptical2d", "weibull2d", "annulus2d",
         "gauss3d", "heavytail3d", "manifold3d", "gauss4d", "heavymix4d", "heavytailspike4d",
         "mnist_digit")

_MIN_ACCEPTANCE = 1e-4


class DatasetError(ValueError):
    pass


class IDXFormatError(ValueError):
    """Malformed MNIST IDX file; the message names the byte offset involved."""


# ---------------------------------------------------------------- densities


def _gauss_nd(X, mean, var):
    """Isotropic or diagonal Gaussian density (normalised) at rows of X."""
    var = np.broadcast_to(np.asarray(var, dtype=float), (X.shape[1],))
    z = (X - np.asarray(mean, dtype=float)) ** 2 / var
    return np.exp(-0.5 * z.sum(axis=1)) / np.sqrt(np.prod(2 * np.pi * var))


def _cauchy(x, loc, scale):
    return scale / (np.pi * (scale ** 2 + (x - loc) ** 2))


def _d_bimodal(X, p):
    x = X[:, 0]
    return stats.norm.pdf(x, -1, 0.2) + stats.norm.pdf(x, 1, 0.2)


def _d_complex(X, p):
    x = X[:, 0]
    return stats.norm.pdf(x, -4, 0.4) + stats.norm.pdf(x, 0, 1) + 0.2 * _cauchy(x, 6, 0.1)


def _d_clusters(X, p):
    # Each term is exp(-q/2) / sqrt(det Sigma), i.e. 2*pi times a normal density.
    return sum(2 * np.pi * _gauss_nd(X, mu, v) for mu, v in zip(p["means"], p["variances"]))


def _d_elliptical(X, p):
    x, y = X[:, 0], X[:, 1]
    return (np.exp(-(x + 1) ** 2 / 0.2 - (y + 1) ** 2 / 5)
            + np.exp(-(x - 1) ** 2 / 5 - (y - 1) ** 2 / 0.1 ** 2))


def _d_weibull(X, p):
    a, b = p["alpha"], p["beta"]
    r = np.sqrt((X ** 2).sum(axis=1))
    return (a / b) * (r / b) ** (a - 1) * np.exp(-(r / b) ** a)


def _b_weibull(p):
    a, b = p["alpha"], p["beta"]
    if a <= 1:
        raise DatasetError("weibull2d needs alpha > 1 for a bounded density")
    r = b * ((a - 1) / a) ** (1 / a)
    return float(_d_weibull(np.array([[r, 0.0]]), p)[0])


def _d_annulus(X, p):
    r = np.sqrt((X ** 2).sum(axis=1))
    return np.exp(-(r - p["radius"]) ** 2 / p["width"])


def _d_gauss(X, p):
    c = p["c"]
    return np.exp(-p["rate"] * ((X ** 2 - c) ** 2).sum(axis=1))


def _d_heavytail3d(X, p):
    r2 = (X ** 2).sum(axis=1)
    return 0.7 / (1 + r2) + 0.3 * np.exp(-500 * r2)


def _d_manifold(X, p):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    return np.exp(-(y - np.sin(5 * x)) ** 2 - (z - np.cos(3 * x)) ** 2)


def _d_heavymix4d(X, p):
    r2 = (X ** 2).sum(axis=1)
    return (0.6 * np.exp(-((X - 2) ** 2).sum(axis=1) / 0.1)
            + 0.4 * np.exp(-((X + 2) ** 2).sum(axis=1) / 0.1)
            + 0.3 / (1 + r2))


def _d_heavytailspike4d(X, p):
    r2 = (X ** 2).sum(axis=1)
    return 0.3 * np.exp(-800 * r2) + 0.7 / (1 + r2)


@dataclass(frozen=True)
class _Kind:
    dim: int
    density: object
    domain: tuple
    defaults: dict
    bound: object = None  # callable(params) -> sup of the density on the box
    mixture: bool = False


_KINDS = {
    "bimodal1d": _Kind(1, _d_bimodal, ((-8.0, 10.0),), {}, mixture=True),
    "complex1d": _Kind(1, _d_complex, ((-8.0, 10.0),), {}, mixture=True),
    "clusters2d": _Kind(2, _d_clusters, ((-4.0, 4.0),) * 2,
                        {"means": ((-2.0, -2.0), (0.0, 2.0), (2.5, -1.0)),
                         "variances": (0.3, 0.6, 0.2)}, mixture=True),
    "elliptical2d": _Kind(2, _d_elliptical, ((-4.0, 4.0),) * 2, {}, mixture=True),
    "weibull2d": _Kind(2, _d_weibull, ((-4.0, 4.0),) * 2, {"alpha": 1.5, "beta": 1.0},
                       bound=_b_weibull),
    "annulus2d": _Kind(2, _d_annulus, ((-4.0, 4.0),) * 2, {"radius": 1.5, "width": 0.08},
                       bound=lambda p: 1.0),
    "gauss3d": _Kind(3, _d_gauss, ((-2.0, 2.0),) * 3, {"c": 0.5, "rate": 10.0},
                     bound=lambda p: 1.0),
    "heavytail3d": _Kind(3, _d_heavytail3d, ((-4.0, 4.0),) * 3, {}, bound=lambda p: 1.0),
    "manifold3d": _Kind(3, _d_manifold, ((-4.0, 4.0),) * 3, {}, bound=lambda p: 1.0),
    "gauss4d": _Kind(4, _d_gauss, ((-2.0, 2.0),) * 4, {"c": 0.5, "rate": 1.0},
                     bound=lambda p: 1.0),
    "heavymix4d": _Kind(4, _d_heavymix4d, ((-4.0, 4.0),) * 4, {},
                        bound=lambda p: 0.6 + 0.4 + 0.3),
    "heavytailspike4d": _Kind(4, _d_heavytailspike4d, ((-4.0, 4.0),) * 4, {},
                              bound=lambda p: 1.0),
}


@dataclass
class DatasetSpec:
    """A named test density with its parameters and truncation box.

    For ``mnist_digit`` the params hold ``digit`` and, once loaded, the
    ``density`` (a :class:`DiscreteDistribution` on the unit square).
    """

    kind: str
    params: dict = field(default_factory=dict)
    domain: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "mnist_digit":
            digit = int(self.params.get("digit", 1))
            if not 0 <= digit <= 9:
                raise DatasetError(f"digit must be in 0..9, got {digit}")
            self.params = {**self.params, "digit": digit}
            self.domain = ((0.0, 1.0), (0.0, 1.0))
            return
        info = _KINDS[self.kind]
        self.params = {**info.defaults, **self.params}
        domain = info.domain if self.domain is None else self.domain
        domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        if len(domain) != info.dim:
            raise DatasetError(f"{self.kind} needs a {info.dim}-dimensional box")
        if any(not (np.isfinite(lo) and np.isfinite(hi) and lo < hi) for lo, hi in domain):
            raise DatasetError(f"invalid box {domain}")
        self.domain = domain

    @property
    def dim(self):
        return 2 if self.kind == "mnist_digit" else _KINDS[self.kind].dim

    @property
    def name(self):
        if self.kind == "mnist_digit":
            return f"mnist_digit{self.params['digit']}"
        return self.kind

    def density(self, X):
        """Unnormalised density at rows of ``X``; zero outside the box."""
        if self.kind == "mnist_digit":
            raise DatasetError("mnist_digit has a discrete density; use its distribution")
        X = check_points(X, dim=self.dim)
        lo = np.array([d[0] for d in self.domain])
        hi = np.array([d[1] for d in self.domain])
        inside = np.all((X >= lo) & (X <= hi), axis=1)
        out = np.zeros(X.shape[0])
        out[inside] = _KINDS[self.kind].density(X[inside], self.params)
        return out

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if k != "density"}
        return {"kind": self.kind, "params": params,
                "domain": [list(d) for d in self.domain]}


@dataclass(frozen=True)
class TruthDensity:
    field: ScalarField
    distribution: DiscreteDistribution


def true_density_on_grid(ds, spec):
    """Target density at each cell centre of ``spec``, with its normalised form."""
    if spec.dim != ds.dim:
        raise DatasetError(f"{ds.name} is {ds.dim}-dimensional, grid is {spec.dim}-dimensional")
    if ds.kind == "mnist_digit":
        dist = ds.params.get("density")
        if dist is None:
            raise DatasetError("mnist_digit dataset has no density loaded")
        if dist.spec != spec:
            raise DatasetError("MNIST densities are only defined on their 28x28 pixel grid")
        return TruthDensity(ScalarField(spec, dist.mass), dist)
    values = ds.density(spec.cell_centers())
    fld = ScalarField(spec, values)
    if not values.max() > 0:
        raise DatasetError(f"{ds.name} has no mass on this grid")
    return TruthDensity(fld, to_distribution(fld))


# ---------------------------------------------------------------- sampling


def _in_box(X, domain):
    lo = np.array([d[0] for d in domain])
    hi = np.array([d[1] for d in domain])
    return np.all((X >= lo) & (X <= hi), axis=1)


def _truncated_draws(rng, n, draw, domain):
    """Draw until ``n`` in-box points are collected; ``draw(rng, m)`` proposes m."""
    out, have = [], 0
    while have < n:
        m = max(16, int(1.2 * (n - have)) + 16)
        X = draw(rng, m)
        X = X[_in_box(X, domain)]
        out.append(X[: n - have])
        have += out[-1].shape[0]
    return np.concatenate(out, axis=0)


def _box_mass_gauss(mean, sd, domain):
    mass = 1.0
    for m, s, (lo, hi) in zip(mean, sd, domain):
        mass *= stats.norm.cdf(hi, m, s) - stats.norm.cdf(lo, m, s)
    return mass


def _mixture_components(ds):
    """List of (weight, draw, mass_fraction) for the analytic mixture kinds.

    ``weight`` is the component's total mass in the unnormalised formula.
    """
    k, p, dom = ds.kind, ds.params, ds.domain

    def gauss(mean, sd):
        mean, sd = np.asarray(mean, float), np.asarray(sd, float)
        return (lambda rng, m: rng.normal(mean, sd, size=(m, mean.size)),
                _box_mass_gauss(mean, sd, dom))

    comps = []
    if k == "bimodal1d":
        comps = [(1.0, *gauss([-1.0], [0.2])), (1.0, *gauss([1.0], [0.2]))]
    elif k == "complex1d":
        lo, hi = dom[0]
        cmass = (np.arctan((hi - 6) / 0.1) - np.arctan((lo - 6) / 0.1)) / np.pi
        comps = [(1.0, *gauss([-4.0], [0.4])), (1.0, *gauss([0.0], [1.0])),
                 (0.2, lambda rng, m: (6 + 0.1 * np.tan(np.pi * (rng.random((m, 1)) - 0.5))),
                  cmass)]
    elif k == "clusters2d":
        for mu, v in zip(p["means"], p["variances"]):
            comps.append((2 * np.pi, *gauss(mu, [np.sqrt(v)] * 2)))
    elif k == "elliptical2d":
        # exp(-x^2/a - y^2/b) integrates to pi * sqrt(a * b).
        comps = [(np.pi * np.sqrt(0.2 * 5), *gauss([-1.0, -1.0], np.sqrt([0.1, 2.5]))),
                 (np.pi * np.sqrt(5 * 0.01), *gauss([1.0, 1.0], np.sqrt([2.5, 0.005])))]
    return comps


def component_weights(ds):
    """Probability of each mixture component after truncation to the box."""
    comps = _mixture_components(ds)
    w = np.array([c[0] * c[2] for c in comps])
    return w / w.sum()


def _sample_mixture(ds, n, rng, return_labels=False):
    comps = _mixture_components(ds)
    w = component_weights(ds)
    labels = rng.choice(len(comps), size=n, p=w)
    X = np.empty((n, ds.dim))
    for j, (_, draw, _) in enumerate(comps):
        idx = np.flatnonzero(labels == j)
        if idx.size:
            X[idx] = _truncated_draws(rng, idx.size, draw, ds.domain)
    return (X, labels) if return_labels else X


def _sample_rejection(ds, n, rng):
    info = _KINDS[ds.kind]
    bound = float(info.bound(ds.params))
    lo = np.array([d[0] for d in ds.domain])
    hi = np.array([d[1] for d in ds.domain])
    out, have, proposed = [], 0, 0
    batch = max(1024, 4 * n)
    while have < n:
        U = lo + (hi - lo) * rng.random((batch, ds.dim))
        accept = rng.random(batch) * bound < info.density(U, ds.params)
        proposed += batch
        out.append(U[accept][: n - have])
        have += out[-1].shape[0]
        if proposed >= 10 ** 6 and have / proposed < _MIN_ACCEPTANCE:
            raise DatasetError(
                f"rejection acceptance {have / proposed:.2e} below {_MIN_ACCEPTANCE}; "
                f"the box of {ds.name} is mis-truncated")
        batch = int(min(2 * 10 ** 6, max(1024, 1.5 * (n - have) * proposed / max(have, 1))))
    return np.concatenate(out, axis=0)


def sample_dataset(ds, n, seed, return_labels=False):
    """``n`` i.i.d. points from ``ds`` restricted to its box, deterministic in ``seed``.

    With ``return_labels`` (mixture kinds only) also returns the generating
    component of each point.
    """
    n = int(n)
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if ds.kind == "mnist_digit":
        dist = ds.params.get("density")
        if dist is None:
            raise DatasetError("mnist_digit dataset has no density loaded")
        return sample_from_discrete_density(dist, n, rng, jitter=True)
    if _KINDS[ds.kind].mixture:
        return _sample_mixture(ds, n, rng, return_labels)
    if return_labels:
        raise DatasetError(f"{ds.name} is not a mixture")
    return _sample_rejection(ds, n, rng)


def sample_from_discrete_density(dist, n, seed, jitter=True):
    """Categorical draw of cells by mass; with ``jitter``, uniform inside each cell."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cells = rng.choice(dist.spec.n_cells, size=int(n), p=dist.flat)
    X = dist.spec.cell_centers(cells)
    if jitter:
        X = X + (rng.random(X.shape) - 0.5) * dist.spec.cell_widths
    return X


# ---------------------------------------------------------------- MNIST

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, header_words):
    data = Path(path).read_bytes()
    header = 4 * (1 + header_words)
    if len(data) >= 4:
        (found,) = struct.unpack_from(">I", data, 0)
        if found != magic:
            raise IDXFormatError(
                f"{path}: bad magic 0x{found:08x} at byte offset 0, expected 0x{magic:08x}")
    if len(data) < header:
        raise IDXFormatError(
            f"{path}: truncated header, expected {header} bytes, found {len(data)}")
    dims = struct.unpack_from(f">{header_words}I", data, 4)
    expected = header + int(np.prod(dims))
    if len(data) != expected:
        raise IDXFormatError(
            f"{path}: expected {expected} bytes from the header, found {len(data)} "
            f"(payload starts at byte offset {header})")
    return dims, np.frombuffer(data, dtype=np.uint8, offset=header)


def load_mnist_idx(images_path, labels_path):
    """Parse MNIST IDX files and group the images by label.

    Returns
    -------
    dict
        ``digit -> uint8 array of shape (k, rows, cols)``.
    """
    (count, rows, cols), pixels = _read_idx(images_path, _IMAGES_MAGIC, 3)
    (n_labels,), labels = _read_idx(labels_path, _LABELS_MAGIC, 1)
    if n_labels != count:
        raise IDXFormatError(
            f"{labels_path}: {n_labels} labels (count at byte offset 4) for {count} images")
    images = pixels.reshape(count, rows, cols)
    return {int(d): images[labels == d] for d in np.unique(labels)}


def mnist_grid(shape=(28, 28)):
    return GridSpec((0.0, 0.0), (1.0, 1.0), shape)


def mnist_digit_density(images):
    """Mean image of a class as a distribution on the unit-square pixel grid.

    Pixel row ``i`` maps to axis 0 and column ``j`` to axis 1.
    """
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None]
    if images.shape[0] == 0:
        raise DatasetError("digit class has no images")
    mean = images.mean(axis=0)
    if not mean.sum() > 0:
        raise DatasetError("digit class has zero total intensity")
    spec = mnist_grid(mean.shape)
    return to_distribution(ScalarField(spec, mean))


def mnist_dataset(images_path, labels_path, digit):
    groups = load_mnist_idx(images_path, labels_path)
    if digit not in groups:
        raise DatasetError(f"no images with label {digit}")
    return DatasetSpec("mnist_digit", {"digit": digit, "images": str(images_path),
                                       "labels": str(labels_path),
                                       "density": mnist_digit_density(groups[digit])})
