"""Reconstruction quality measures for two-valued conductivities."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .mesh import ScalarField

MIDPOINT = 1.5


class Metrics(NamedTuple):
    misclassified_fraction: float
    l2_error: float
    jaccard_distance: float


def _check(rec: ScalarField, truth: ScalarField) -> None:
    if rec.grid != truth.grid or rec.centering != truth.centering:
        raise ValueError("reconstruction and truth live on different grids")


def misclassified_fraction(rec: ScalarField, truth: ScalarField) -> float:
    """Area fraction where the two fields fall on different sides of 1.5."""
    _check(rec, truth)
    return float(np.mean((rec.values > MIDPOINT) != (truth.values > MIDPOINT)))


def metrics(rec: ScalarField, truth: ScalarField) -> Metrics:
    """Misclassified area, relative L2 error and Jaccard distance of the P-regions.

    The P-region is where the conductivity is below 1.5.
    """
    _check(rec, truth)
    mis = misclassified_fraction(rec, truth)
    diff = np.sqrt(np.sum((rec.values - truth.values) ** 2))
    l2 = float(diff / np.sqrt(np.sum(truth.values**2)))
    a = rec.values < MIDPOINT
    b = truth.values < MIDPOINT
    union = np.count_nonzero(a | b)
    jac = 0.0 if union == 0 else 1.0 - np.count_nonzero(a & b) / union
    return Metrics(mis, l2, float(jac))
