"""Closed-form reference values shared by the test modules."""

import numpy as np


def poisson_series(x, y, terms=801):
    """-lap u = 1 on the unit square, u = 0 on the boundary, by double sine series."""
    m = np.arange(1, terms, 2)[:, None]
    n = np.arange(1, terms, 2)[None, :]
    coef = 16.0 / (np.pi**4 * m * n * (m * m + n * n))
    return float(np.sum(coef * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)))


def poisson_center():
    return poisson_series(0.5, 0.5)
