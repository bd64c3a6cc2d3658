"""Shared synthetic fields for the persistence and loss tests."""

import numpy as np

from topobw.grid import GridSpec, ScalarField

QUAD_CENTERS = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))
QUAD_WEIGHTS = (1.0, 0.8, 0.4, 0.2)


def quadmodal_field(n=48, half_width=2.5, sigma=0.5):
    """Unit-normalised sum of four Gaussian bumps on the corners of a square.

    Unequal weights make the components appear one at a time as the level
    drops, and the ring of bumps encloses a loop at low levels.
    """
    spec = GridSpec((-half_width, -half_width), (half_width, half_width), (n, n))
    c = spec.cell_centers()
    f = np.zeros(spec.n_cells)
    for w, (a, b) in zip(QUAD_WEIGHTS, QUAD_CENTERS):
        f += w * np.exp(-((c[:, 0] - a) ** 2 + (c[:, 1] - b) ** 2) / (2 * sigma ** 2))
    return ScalarField(spec, f / f.max())
