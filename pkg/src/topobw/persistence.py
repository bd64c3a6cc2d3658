"""Superlevel-set persistent homology of scalar fields on cubical grids.

Each grid value is assigned to a top-dimensional cube and every lower
dimensional face takes the maximum over the cubes containing it, so the
superlevel set ``{f >= a}`` is a union of closed cubes. Two cells are then
connected when they share any face, including a single vertex.

Cells are processed in a strict total order (value descending, linear index
ascending). Pairs with zero persistence are not reported. Critical cells
(``birth_cell``, ``death_cell``) are linear indices of the grid cells whose
values realise the birth and death of each pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _cubical
from .grid import ScalarField

ESSENTIAL_POLICIES = ("pair_with_min", "drop")

#: Largest grid (cells per axis) accepted by :func:`superlevel_full`, by dimension.
FULL_REDUCTION_LIMITS = {1: 4096, 2: 128, 3: 24, 4: 10}


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float
    birth_cell: int
    death_cell: int
    hom_dim: int
    essential: bool = False

    @property
    def life(self):
        return self.birth - self.death


class PersistenceDiagram:
    """Multiset of persistence pairs, held as parallel arrays.

    Pairs are ordered by homology dimension, then by decreasing life, then by
    birth and death cell.
    """

    _fields = ("hom_dim", "birth", "death", "birth_cell", "death_cell", "essential")

    def __init__(self, hom_dim, birth, death, birth_cell, death_cell, essential,
                 max_dim_computed):
        hom_dim = np.asarray(hom_dim, dtype=np.int64)
        birth = np.asarray(birth, dtype=np.float64)
        death = np.asarray(death, dtype=np.float64)
        birth_cell = np.asarray(birth_cell, dtype=np.int64)
        death_cell = np.asarray(death_cell, dtype=np.int64)
        essential = np.asarray(essential, dtype=bool)
        if np.any(birth < death):
            raise ValueError("superlevel pairs need birth >= death")
        order = np.lexsort((death_cell, birth_cell, -(birth - death), hom_dim))
        for name, arr in zip(self._fields,
                             (hom_dim, birth, death, birth_cell, death_cell, essential)):
            arr = arr[order]
            arr.flags.writeable = False
            setattr(self, name, arr)
        self.max_dim_computed = int(max_dim_computed)

    @property
    def life(self):
        return self.birth - self.death

    def __len__(self):
        return self.birth.size

    @property
    def pairs(self):
        return [PersistencePair(float(b), float(d), int(bc), int(dc), int(p), bool(e))
                for p, b, d, bc, dc, e in zip(self.hom_dim, self.birth, self.death,
                                               self.birth_cell, self.death_cell,
                                               self.essential)]

    def __iter__(self):
        return iter(self.pairs)

    def select(self, hom_dims):
        """Boolean mask of pairs whose dimension is in ``hom_dims``."""
        return np.isin(self.hom_dim, np.fromiter(hom_dims, dtype=np.int64))

    def restrict(self, hom_dims):
        mask = self.select(hom_dims)
        return PersistenceDiagram(self.hom_dim[mask], self.birth[mask], self.death[mask],
                                  self.birth_cell[mask], self.death_cell[mask],
                                  self.essential[mask], self.max_dim_computed)

    def cell_signature(self):
        """Hashable summary of the critical cells, to detect pairing changes."""
        return tuple(zip(self.hom_dim.tolist(), self.birth_cell.tolist(),
                         self.death_cell.tolist(), self.essential.tolist()))

    def same_pairs(self, other):
        """True when both diagrams hold identical pairs, ignoring metadata."""
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in self._fields)

    def __eq__(self, other):
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return self.max_dim_computed == other.max_dim_computed and self.same_pairs(other)

    def __repr__(self):
        return (f"PersistenceDiagram(n_pairs={len(self)}, "
                f"max_dim_computed={self.max_dim_computed})")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["hom_dim", "birth", "death", "life", "birth_cell",
                             "death_cell", "essential"])
            for p in self.pairs:
                writer.writerow([p.hom_dim, repr(p.birth), repr(p.death), repr(p.life),
                                 p.birth_cell, p.death_cell, int(p.essential)])

    @classmethod
    def from_csv(cls, path, max_dim_computed=None):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = {f: [r[f] for r in rows] for f in cls._fields}
        hom_dim = np.array(cols["hom_dim"], dtype=np.int64)
        if max_dim_computed is None:
            max_dim_computed = int(hom_dim.max()) if hom_dim.size else 0
        return cls(hom_dim, np.array(cols["birth"], dtype=float),
                   np.array(cols["death"], dtype=float),
                   np.array(cols["birth_cell"], dtype=np.int64),
                   np.array(cols["death_cell"], dtype=np.int64),
                   np.array(cols["essential"], dtype=int).astype(bool), max_dim_computed)


def _field_values(field):
    values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("persistence needs finite field values")
    return np.ascontiguousarray(values, dtype=np.float64)


def _check_policy(essential_policy):
    if essential_policy not in ESSENTIAL_POLICIES:
        raise ValueError(f"essential_policy must be one of {ESSENTIAL_POLICIES}")


def _assemble(flat, hom_dim, births, deaths, order, essential_policy, max_dim):
    b = flat[births]
    d = flat[deaths]
    keep = b > d
    hom_dim, births, deaths = hom_dim[keep], births[keep], deaths[keep]
    essential = np.zeros(births.size, dtype=bool)
    if essential_policy == "pair_with_min":
        hom_dim = np.append(hom_dim, 0)
        births = np.append(births, order[0])
        deaths = np.append(deaths, order[-1])
        essential = np.append(essential, True)
    return PersistenceDiagram(hom_dim, flat[births], flat[deaths], births, deaths,
                              essential, max_dim)


def superlevel_h0(field, essential_policy="pair_with_min"):
    """Connected-component persistence of the superlevel filtration.

    Union-find with the elder rule: when components meet, the one born at the
    lower value dies (equal births: the later-visited one dies). With
    ``pair_with_min`` the surviving component is reported as an essential pair
    dying at the global minimum (the last cell visited).
    """
    _check_policy(essential_policy)
    values = _field_values(field)
    shape = np.array(values.shape, dtype=np.int64)
    order = _cubical.processing_order(values)
    births, deaths = _cubical.h0_union_find(order, shape,
                                            _cubical.neighbor_offsets(values.ndim))
    return _assemble(values.reshape(-1), np.zeros(births.size, dtype=np.int64), births,
                     deaths, order, essential_policy, 0)


def _realizing_ranks(rank_grid):
    """Rank of the first-visited top cell containing each cubical cell.

    Works on the doubled grid of shape ``2 * R + 1`` in which a cell's
    coordinate is odd along the axes it spans.
    """
    shape = tuple(2 * r + 1 for r in rank_grid.shape)
    big = np.iinfo(np.int64).max
    out = np.full(shape, big, dtype=np.int64)
    out[tuple(slice(1, None, 2) for _ in shape)] = rank_grid
    for axis, r in enumerate(rank_grid.shape):
        moved = np.moveaxis(out, axis, 0)
        odd = moved[1::2]
        even = moved[0::2]
        even[:r] = np.minimum(even[:r], odd)
        even[1:] = np.minimum(even[1:], odd)
    return out


def superlevel_full(field, max_dim=None, essential_policy="pair_with_min"):
    """Superlevel persistence in dimensions ``0..max_dim`` by boundary-matrix reduction.

    The full cubical complex of the grid is reduced over the two-element
    field, clearing the columns of cells already known to be creators. The
    H0 part equals :func:`superlevel_h0` exactly. Grids larger than
    :data:`FULL_REDUCTION_LIMITS` are refused.
    """
    _check_policy(essential_policy)
    values = _field_values(field)
    ndim = values.ndim
    if max_dim is None:
        max_dim = ndim - 1
    if not 0 <= max_dim <= ndim:
        raise ValueError(f"max_dim must lie in [0, {ndim}], got {max_dim}")
    limit = FULL_REDUCTION_LIMITS.get(ndim)
    if limit is None or max(values.shape) > limit:
        raise ValueError(
            f"grid {values.shape} exceeds the full-reduction limit "
            f"({limit} cells per axis in {ndim}D)")
    flat = values.reshape(-1)
    order = _cubical.processing_order(values)
    rank = np.empty(flat.size, dtype=np.int64)
    rank[order] = np.arange(flat.size)
    realizing = _realizing_ranks(rank.reshape(values.shape))
    cshape = realizing.shape
    parity = np.indices(cshape).reshape(ndim, -1) % 2
    cell_dim = parity.sum(axis=0)
    realizing = realizing.reshape(-1)
    cells = np.flatnonzero(cell_dim <= max_dim + 1)
    cells = cells[np.lexsort((cells, cell_dim[cells], realizing[cells]))]
    dims = cell_dim[cells].astype(np.int64)
    lows, cols = _cubical.reduce_boundary(cells.astype(np.int64), dims,
                                          np.array(cshape, dtype=np.int64), max_dim)
    birth_px = order[realizing[cells[lows]]]
    death_px = order[realizing[cells[cols]]]
    hom_dim = dims[lows]
    unpaired = np.ones(cells.size, dtype=bool)
    unpaired[lows] = False
    unpaired[cols] = False
    unpaired &= dims <= max_dim
    extra = np.flatnonzero(unpaired & (dims > 0))
    if np.count_nonzero(unpaired & (dims == 0)) != 1 or extra.size:
        raise RuntimeError("unexpected essential classes in a contractible complex")
    return _assemble(flat, hom_dim, birth_px, death_px, order, essential_policy, max_dim)


def betti_at_level(diagram, a, p):
    """Number of ``p``-dimensional features of the superlevel set at level ``a``."""
    if p > diagram.max_dim_computed:
        raise ValueError(
            f"diagram has dimensions up to {diagram.max_dim_computed}, asked for {p}")
    mask = (diagram.hom_dim == p) & (diagram.birth >= a)
    mask &= diagram.essential | (a > diagram.death)
    return int(np.count_nonzero(mask))
