import logging

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

ASSIGN_CHUNK = 8192


@dataclass
class KMeansResult:
    """
    attributes:
        - centroids         <np.ndarray>    (n_clusters, d) float32
        - labels            <np.ndarray>    cluster id of every training point
        - objective_trace   <list<float>>   sum of squared distances after every assignment
    """
    centroids: np.ndarray
    labels: np.ndarray
    objective_trace: List[float] = field(default_factory=list)


def assign(points: np.ndarray,
           centroids: np.ndarray,
           chunk: int = ASSIGN_CHUNK) -> Tuple[np.ndarray, np.ndarray]:
    """
    :returns:       nearest centroid per point (ties -> lowest index) and its squared distance
    """
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)

    centroid_norms = np.sum(centroids ** 2, axis=1)

    labels = np.empty(len(points), dtype=np.int64)
    distances = np.empty(len(points), dtype=np.float64)

    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]

        d = np.sum(block ** 2, axis=1, keepdims=True) - 2 * block @ centroids.T + centroid_norms
        np.maximum(d, 0, out=d)

        best = np.argmin(d, axis=1)

        labels[start:start + chunk] = best
        distances[start:start + chunk] = d[np.arange(len(block)), best]

    return labels, distances


def _initial_centroids(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """
    Samples distinct training points; when fewer distinct points exist than clusters,
    every distinct point becomes a centroid and the rest repeat them.
    """
    distinct = np.unique(points, axis=0)

    if len(distinct) >= n_clusters:
        chosen = np.sort(rng.choice(len(distinct), n_clusters, replace=False))

        return distinct[chosen].copy()

    repeats = np.arange(n_clusters) % len(distinct)

    return distinct[repeats].copy()


def _update(points: np.ndarray,
            labels: np.ndarray,
            distances: np.ndarray,
            centroids: np.ndarray) -> np.ndarray:
    n_clusters = len(centroids)

    counts = np.bincount(labels, minlength=n_clusters)

    sums = np.stack([
        np.bincount(labels, weights=points[:, j], minlength=n_clusters)
        for j in range(points.shape[1])
    ], axis=1)

    updated = centroids.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]

    empty = np.flatnonzero(~filled)

    if len(empty):
        # re-seed empty clusters with the points farthest from their centroids
        farthest = np.argsort(-distances, kind='stable')[:len(empty)]

        for cluster, point in zip(empty, farthest):
            if distances[point] > 0:
                updated[cluster] = points[point]

    return updated


def train_kmeans(points: np.ndarray,
                 n_clusters: int,
                 iters: int = 25,
                 seed: int = 0,
                 max_points: Optional[int] = None) -> KMeansResult:
    """
    Lloyd's k-means with distinct-sample initialization.

    :param points:          (n, d) training vectors
    :param n_clusters:      number of centroids
    :param iters:           maximum number of update steps
    :param max_points:      train on a seeded subsample of at most this many points

    :return:                centroids, labels of the (sub)sample and the objective trace,
                            which is non-increasing
    """
    points = np.asarray(points, dtype=np.float64)

    if len(points) == 0:
        raise ValueError('k-means needs at least one training point')

    if n_clusters < 1:
        raise ValueError(f'n_clusters must be >= 1, got {n_clusters}')

    rng = np.random.default_rng(seed)

    if max_points is not None and len(points) > max_points:
        points = points[np.sort(rng.choice(len(points), max_points, replace=False))]

    centroids = _initial_centroids(points, n_clusters, rng)

    labels, distances = assign(points, centroids)
    trace = [float(distances.sum())]

    for _ in range(iters):
        updated = _update(points, labels, distances, centroids)

        if np.array_equal(updated, centroids):
            break

        centroids = updated

        labels, distances = assign(points, centroids)
        trace.append(float(distances.sum()))

    logging.debug(
        f'k-means: {len(points)} points, {n_clusters} clusters, '
        f'{len(trace) - 1} iterations, objective {trace[0]:.4f} -> {trace[-1]:.4f}'
    )

    return KMeansResult(
        centroids=centroids.astype(np.float32),
        labels=labels,
        objective_trace=trace
    )
