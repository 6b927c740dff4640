"""Seeded k-means for clustering raw features or instance projections.

Standard Lloyd iterations with k-means++ seeding, run as several
restarts keeping the lowest-inertia solution. Deterministic given the
seed. Clusters that empty out mid-run are reseeded to the point
farthest from its assigned center.
"""

from __future__ import annotations

import numpy as np

from .autodiff import as_matrix
from .errors import ConfigError, ContractError

__all__ = ["kmeans"]

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
CONVERGENCE_TOL = 1e-10


def _squared_distances(x, centers):
    # ||x - c||^2 expanded; clip tiny negatives from cancellation.
    sq = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ centers.T)
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(sq, 0.0)


def _plus_plus_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _squared_distances(x, centers[:1]).ravel()
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_distances(x, centers[i : i + 1]).ravel())
    return centers


def _lloyd(x, centers, max_iter):
    for _ in range(max_iter):
        distances = _squared_distances(x, centers)
        labels = distances.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
            else:
                farthest = distances[np.arange(x.shape[0]), labels].argmax()
                new_centers[j] = x[farthest]
        shift = np.linalg.norm(new_centers - centers)
        centers = new_centers
        if shift <= CONVERGENCE_TOL:
            break
    distances = _squared_distances(x, centers)
    labels = distances.argmin(axis=1)
    inertia = float(distances[np.arange(x.shape[0]), labels].sum())
    return labels, centers, inertia


def kmeans(x, k, seed, n_restarts: int = DEFAULT_RESTARTS, max_iter: int = DEFAULT_MAX_ITER):
    """Cluster rows of x into k groups; returns (labels, centers, inertia)
    of the best restart by inertia."""
    x = as_matrix(x)
    if k < 1:
        raise ConfigError(f"kmeans: k must be >= 1, got {k}")
    if n_restarts < 1:
        raise ConfigError(f"kmeans: n_restarts must be >= 1, got {n_restarts}")
    if x.shape[0] < k:
        raise ContractError(f"kmeans: {x.shape[0]} samples cannot form {k} clusters")
    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng(np.random.SeedSequence((seed, restart)))
        centers = _plus_plus_init(x, k, rng)
        labels, centers, inertia = _lloyd(x, centers, max_iter)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best
