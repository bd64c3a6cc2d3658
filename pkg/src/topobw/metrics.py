"""Dissimilarity between an estimated density and the ground truth on a grid.

Both densities are discretised to probability masses per cell before any
comparison. KLD is taken as ``KL(truth || estimate)``. Transport distances use
either domain units (cell-centre coordinates) or grid-index units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, ScalarField

UNITS = ("domain", "grid_index")


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability mass per cell of ``spec``."""

    spec: GridSpec
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64, copy=True).reshape(self.spec.shape)
        if np.any(~np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("mass must be finite and non-negative")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError(f"mass sums to {mass.sum()!r}, expected 1")
        mass.flags.writeable = False
        object.__setattr__(self, "mass", mass)

    @property
    def flat(self):
        return self.mass.reshape(-1)


class TransportError(RuntimeError):
    """Sinkhorn iterations did not reach the requested marginal tolerance."""


def to_distribution(fld):
    """Normalise a non-negative field (or a :class:`DiscreteDistribution`) to unit mass."""
    if isinstance(fld, DiscreteDistribution):
        return fld
    if not isinstance(fld, ScalarField):
        raise TypeError("expected a ScalarField")
    values = fld.values
    if np.any(values < 0):
        raise ValueError("density field has negative values")
    total = values.sum()
    if not total > 0:
        raise ValueError("density field has zero total mass")
    mass = values / total
    # One correction pass keeps the sum within rounding of 1.
    return DiscreteDistribution(fld.spec, mass / mass.sum())


def _same_spec(p, q):
    if p.spec != q.spec:
        raise ValueError("distributions live on different grids")


def kld(p, q, floor=1e-12):
    """``sum p_i log(p_i / max(q_i, floor))`` over cells with ``p_i > 0``.

    ``p`` is the truth and ``q`` the estimate.
    """
    _same_spec(p, q)
    if not floor > 0:
        raise ValueError("floor must be positive")
    pf, qf = p.flat, q.flat
    mask = pf > 0
    return float(np.sum(pf[mask] * (np.log(pf[mask]) - np.log(np.maximum(qf[mask], floor)))))


def _check_units(units):
    if units not in UNITS:
        raise ValueError(f"units must be one of {UNITS}")


def emd_1d(p, q, units="domain"):
    """Earth mover's distance on a 1D grid through the CDF difference."""
    _same_spec(p, q)
    _check_units(units)
    if p.spec.dim != 1:
        raise ValueError("emd_1d needs a 1D grid")
    step = p.spec.cell_widths[0] if units == "domain" else 1.0
    diff = np.cumsum(p.flat - q.flat)
    return float(np.sum(np.abs(diff[:-1])) * step)


def _pool(mass, factors):
    r0, r1 = mass.shape
    f0, f1 = factors
    return mass.reshape(r0 // f0, f0, r1 // f1, f1).sum(axis=(1, 3))


def _pool_factors(shape, max_cells):
    f = [1, 1]
    while (shape[0] // f[0]) * (shape[1] // f[1]) > max_cells:
        k = 0 if shape[0] // f[0] >= shape[1] // f[1] else 1
        nxt = f[k] + 1
        while shape[k] % nxt:
            nxt += 1
        f[k] = nxt
    return tuple(f)


def sinkhorn_cost(a, b, cost, reg, tol=1e-9, max_iter=20000, scaling_steps=6, absorb=50.0):
    """Entropic transport cost between histograms ``a`` and ``b``.

    Stabilised Sinkhorn: scalings act on a kernel that carries the running
    dual potentials, and are absorbed into the potentials whenever their log
    exceeds ``absorb``. Epsilon is scaled from ``10 * reg`` down to ``reg``.
    Returns ``(cost, iterations, violation)``, the cost excluding the entropy
    term; ``violation`` is the L1 row-marginal error.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ia, ib = a > 0, b > 0
    a, b, cost = a[ia], b[ib], np.asarray(cost, dtype=float)[np.ix_(ia, ib)]
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    iters = 0
    violation = np.inf
    kernel = u = v = None
    for eps in np.geomspace(10 * reg, reg, scaling_steps):
        last = eps == reg
        budget = max_iter if last else max(200, max_iter // (4 * scaling_steps))
        kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
        u, v = np.ones(a.size), np.ones(b.size)
        for k in range(budget):
            u = a / (kernel @ v)
            v = b / (kernel.T @ u)
            iters += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise TransportError(f"Sinkhorn scalings overflowed after {iters} iterations")
            if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > absorb:
                f += eps * np.log(u)
                g += eps * np.log(v)
                kernel = np.exp((f[:, None] + g[None, :] - cost) / eps)
                u, v = np.ones(a.size), np.ones(b.size)
                continue
            if k % 10 == 9 or k == budget - 1:
                violation = float(np.abs(u * (kernel @ v) - a).sum())
                if violation < tol:
                    break
        if not last:
            f += eps * np.log(u)
            g += eps * np.log(v)
    if violation >= tol:
        raise TransportError(
            f"Sinkhorn stopped after {iters} iterations with marginal violation {violation:.3g}")
    return float(u @ (kernel * cost) @ v), iters, violation


def emd_2d(p, q, reg=0.05, tol=1e-7, units="grid_index", max_cells=2500, max_iter=20000):
    """Sinkhorn approximation of the earth mover's distance on a 2D grid.

    ``reg`` is measured in grid-index units whatever ``units`` is, so the same
    value gives the same relative blur on any grid. Grids with more than
    ``max_cells`` cells are first pooled into blocks of whole cells (block
    centres become the support points), which keeps the dense cost matrix
    small.
    """
    _same_spec(p, q)
    _check_units(units)
    if p.spec.dim != 2:
        raise ValueError("emd_2d needs a 2D grid")
    if not reg > 0:
        raise ValueError("reg must be positive")
    shape = p.spec.shape
    factors = _pool_factors(shape, max_cells)
    pm, qm = _pool(p.mass, factors), _pool(q.mass, factors)
    coarse = pm.shape
    # Block centres in grid-index units of the original grid.
    axes = [np.arange(coarse[k]) * factors[k] + (factors[k] - 1) / 2 for k in range(2)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    cost = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    value, _, _ = sinkhorn_cost(pm.reshape(-1), qm.reshape(-1), cost, reg, tol, max_iter)
    if units == "domain":
        widths = p.spec.cell_widths
        if not np.isclose(widths[0], widths[1], rtol=1e-12):
            # Non-square cells: recompute the cost in domain coordinates.
            dom = pts * widths[None, :]
            cost_d = np.sqrt(((dom[:, None, :] - dom[None, :, :]) ** 2).sum(axis=-1))
            value, _, _ = sinkhorn_cost(pm.reshape(-1), qm.reshape(-1), cost_d,
                                        reg * widths.mean(), tol, max_iter)
            return value
        return value * widths[0]
    return value
