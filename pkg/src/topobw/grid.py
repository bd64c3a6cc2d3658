"""Evaluation grids and the scalar fields sampled on them.

Cells are addressed row-major (C order, axis 0 slowest) and every field value
is sampled at the cell centre.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_points, check_resolution


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box split into ``resolution[k]`` cells along axis ``k``."""

    lower: tuple
    upper: tuple
    resolution: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        resolution = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if not (len(lower) == len(upper) == len(resolution)):
            raise ValueError("lower, upper and resolution must have equal length")
        if not all(np.isfinite(lower + upper)):
            raise ValueError("grid bounds must be finite")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError(f"need lower < upper on every axis, got {lower}, {upper}")
        if any(r < 1 for r in resolution):
            raise ValueError("resolution entries must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self):
        return len(self.resolution)

    @property
    def shape(self):
        return self.resolution

    @property
    def n_cells(self):
        return int(np.prod(self.resolution))

    @property
    def cell_widths(self):
        return np.array([(hi - lo) / r for lo, hi, r in
                         zip(self.lower, self.upper, self.resolution)])

    @property
    def cell_volume(self):
        return float(np.prod(self.cell_widths))

    def axis_centers(self, axis):
        lo, hi, r = self.lower[axis], self.upper[axis], self.resolution[axis]
        return lo + (np.arange(r) + 0.5) * ((hi - lo) / r)

    def cell_centers(self, cells=None):
        """Coordinates of cell centres, shape ``(n, d)``.

        ``cells`` is an optional array of linear indices; all cells otherwise.
        """
        if cells is None:
            cells = np.arange(self.n_cells)
        idx = np.unravel_index(np.asarray(cells, dtype=np.intp), self.resolution)
        return np.stack([self.axis_centers(k)[idx[k]] for k in range(self.dim)], axis=-1)

    def translated(self, shift):
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        return GridSpec(tuple(np.add(self.lower, shift)), tuple(np.add(self.upper, shift)),
                        self.resolution)

    def scaled(self, factor):
        return GridSpec(tuple(np.multiply(self.lower, factor)),
                        tuple(np.multiply(self.upper, factor)), self.resolution)


@dataclass(frozen=True)
class ScalarField:
    """Dense values on a :class:`GridSpec`, stored with shape ``spec.shape``."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.size != self.spec.n_cells:
            raise ValueError(
                f"field has {values.size} values for a grid of {self.spec.n_cells} cells")
        values = values.reshape(self.spec.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def flat(self):
        return self.values.reshape(-1)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class NormalizedField:
    """A field rescaled so that its maximum is exactly one."""

    field: ScalarField
    max_raw: float
    argmax_cell: int

    @property
    def values(self):
        return self.field.values

    def raw(self):
        return ScalarField(self.field.spec, self.field.values * self.max_raw)


def build_grid_spec(points, resolution, padding_fraction=0.1):
    """Bounding box of ``points`` padded by ``padding_fraction`` of the range per side.

    Axes with zero range use a range of one. The result depends only on the
    sample, so it stays fixed while the bandwidth changes.
    """
    X = check_points(points)
    if not np.isfinite(padding_fraction) or padding_fraction < 0:
        raise ValueError(f"padding_fraction must be >= 0, got {padding_fraction}")
    resolution = check_resolution(resolution, X.shape[1])
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    return GridSpec(tuple(lo - padding_fraction * span), tuple(hi + padding_fraction * span),
                    resolution)


def unit_normalize(field):
    """Scale ``field`` by its maximum; ties for the argmax go to the lowest index."""
    flat = field.flat
    argmax = int(np.argmax(flat))
    peak = float(flat[argmax])
    if not peak > 0:
        raise ValueError(f"cannot unit-normalize a field with maximum {peak}")
    values = flat / peak
    values[argmax] = 1.0
    return NormalizedField(ScalarField(field.spec, values), peak, argmax)


def write_field(field, path):
    """Write ``field`` in the flat little-endian binary layout.

    Layout: u64 dim, dim x u64 resolution, dim x f64 lower, dim x f64 upper,
    then the values row-major as f64.
    """
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", spec.dim))
        fh.write(struct.pack(f"<{spec.dim}Q", *spec.resolution))
        fh.write(struct.pack(f"<{spec.dim}d", *spec.lower))
        fh.write(struct.pack(f"<{spec.dim}d", *spec.upper))
        fh.write(np.ascontiguousarray(field.flat, dtype="<f8").tobytes())


def read_field(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<Q", data, 0)
    header = 8 + 24 * dim
    if len(data) < header:
        raise ValueError(f"{path}: truncated header, expected {header} bytes")
    resolution = struct.unpack_from(f"<{dim}Q", data, 8)
    lower = struct.unpack_from(f"<{dim}d", data, 8 + 8 * dim)
    upper = struct.unpack_from(f"<{dim}d", data, 8 + 16 * dim)
    spec = GridSpec(lower, upper, resolution)
    expected = header + 8 * spec.n_cells
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=header)
    return ScalarField(spec, values)


def read_points_csv(path, dim=None):
    """Load one point per row, comma separated, no header."""
    X = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    return check_points(X, dim=dim)


def write_points_csv(points, path):
    np.savetxt(path, np.atleast_2d(points), delimiter=",", fmt="%.17g")
