"""Distances between path ensembles and between Gaussian laws."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .coefficients import sqrt_psd
from .hilbert import check_symmetric, nuclear_norm

MAX_ASSIGNMENT = 2048


@dataclass
class DistanceReport:
    value: float
    n_samples: int
    ground_metric: str
    baseline: float | None = None
    seeds: list = field(default_factory=list)
    hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_paths(e):
    return (e.times, e.values) if hasattr(e, "values") else (None, np.asarray(e, dtype=float))


def _check_grids(ta, tb, shape_a, shape_b):
    if shape_a[1:] != shape_b[1:]:
        raise ValueError(f"path grids differ: {shape_a[1:]} vs {shape_b[1:]}")
    if ta is not None and tb is not None and not np.array_equal(ta, tb):
        raise ValueError("ensembles are recorded on different time grids")


def path_sup_distance(p1, p2, times1=None, times2=None) -> float:
    """``max_t |p1(t) - p2(t)|`` for two paths of shape ``(T, d)``."""
    a = np.asarray(p1, dtype=float)
    b = np.asarray(p2, dtype=float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    _check_grids(times1, times2, (1,) + a.shape, (1,) + b.shape)
    return float(np.sqrt(np.max(np.sum((a - b) ** 2, axis=-1))))


def sup_cost_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared path-sup distances between all pairs of paths."""
    return kernels.sup_sq_cost(np.ascontiguousarray(A, dtype=float), np.ascontiguousarray(B, dtype=float))


def empirical_w2(ensA, ensB, time_index: int | None = None) -> DistanceReport:
    """Exact W2 between two equal-size empirical laws.

    With ``time_index`` the ground cost is the state norm at that grid
    point (``"state"``); otherwise it is the sup over the grid
    (``"path-sup"``).
    """
    ta, A = _as_paths(ensA)
    tb, B = _as_paths(ensB)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"ensembles have different sizes {A.shape[0]} and {B.shape[0]}")
    _check_grids(ta, tb, A.shape, B.shape)
    n = A.shape[0]
    if n > MAX_ASSIGNMENT:
        raise ValueError(f"exact assignment is capped at {MAX_ASSIGNMENT} samples, got {n}")
    if time_index is None:
        cost = sup_cost_matrix(A, B)
        tag = "path-sup"
    else:
        a, b = A[:, time_index], B[:, time_index]
        cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        tag = "state"
    rows, cols = linear_sum_assignment(cost)
    if rows.size != n:
        raise RuntimeError("assignment solver returned an incomplete matching")
    value = math.sqrt(max(cost[rows, cols].sum() / n, 0.0))
    hashes = {}
    for name, e in (("a", ensA), ("b", ensB)):
        if hasattr(e, "provenance"):
            hashes[name] = e.provenance
    return DistanceReport(value, n, tag, hashes=hashes)


def gaussian_w2(m1, S1, m2, S2) -> float:
    """Closed-form W2 between ``N(m1, S1)`` and ``N(m2, S2)``."""
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    S1, S2 = np.atleast_2d(np.asarray(S1, float)), np.atleast_2d(np.asarray(S2, float))
    r1 = sqrt_psd(S1)
    cross = sqrt_psd(0.5 * ((r1 @ S2 @ r1) + (r1 @ S2 @ r1).T))
    sqrt_psd(S2)  # validates S2
    bures = np.trace(S1) + np.trace(S2) - 2.0 * np.trace(cross)
    return float(math.sqrt(max(float(np.sum((m1 - m2) ** 2)) + bures, 0.0)))


def covariance_nuclear_distance(S1, S2) -> float:
    S1 = check_symmetric(S1, name="S1")
    S2 = check_symmetric(S2, name="S2")
    return nuclear_norm(S1 - S2)


def self_distance_baseline(generator, N: int, seeds) -> float:
    """Empirical W2 between two independent ensembles of one law.

    ``generator(seed, N)`` must return an ensemble drawn with ``seed``.
    """
    s1, s2 = seeds
    if s1 == s2:
        raise ValueError("self-distance needs two distinct seeds")
    return empirical_w2(generator(s1, N), generator(s2, N)).value
