"""Chunk clustering on model-agnostic features, with designated centroids.

K-means over z-normalized chunk feature vectors; k is sized so centroid
chunks cover a configured fraction of the video. The centroid chunk of each
cluster is the member nearest the cluster mean; it is the chunk profiled
with full inference at query time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterAssignment:
    k: int
    labels: list[int]  # cluster id per chunk
    centroid_chunks: list[int]  # chunk id per cluster
    means: np.ndarray  # (k, dims) in normalized space
    norm_mean: np.ndarray
    norm_std: np.ndarray
    seed: int
    coverage: float
    objective_log: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "labels": self.labels,
            "centroid_chunks": self.centroid_chunks,
            "means": self.means.tolist(),
            "norm_mean": self.norm_mean.tolist(),
            "norm_std": self.norm_std.tolist(),
            "seed": self.seed,
            "coverage": self.coverage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterAssignment":
        return cls(
            k=d["k"],
            labels=list(d["labels"]),
            centroid_chunks=list(d["centroid_chunks"]),
            means=np.asarray(d["means"], dtype=np.float64),
            norm_mean=np.asarray(d["norm_mean"], dtype=np.float64),
            norm_std=np.asarray(d["norm_std"], dtype=np.float64),
            seed=d["seed"],
            coverage=d["coverage"],
        )

    def normalize(self, vec: np.ndarray) -> np.ndarray:
        return (vec - self.norm_mean) / self.norm_std


def cluster_chunks(
    features: list[np.ndarray], coverage: float = 0.02, seed: int = 13, max_iter: int = 100
) -> ClusterAssignment:
    n = len(features)
    if n < 1:
        raise ValueError("need at least one chunk")
    x = np.asarray(features, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    z = (x - mean) / std

    k = max(1, math.ceil(coverage * n))
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(z, k, rng)

    log: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        log.append(float(d2[np.arange(n), labels].sum()))
        new_centers = centers.copy()
        for c in range(k):
            members = z[labels == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
            else:
                # adopt the point farthest from its current center
                far = int(d2[np.arange(n), labels].argmax())
                new_centers[c] = z[far]
        if np.allclose(new_centers, centers, atol=1e-12):
            break
        centers = new_centers

    d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    log.append(float(d2[np.arange(n), labels].sum()))

    centroid_chunks = []
    for c in range(k):
        members = np.nonzero(labels == c)[0]
        if not len(members):
            members = np.array([int(d2[:, c].argmin())])
        dist = ((z[members] - centers[c]) ** 2).sum(axis=1)
        centroid_chunks.append(int(members[dist.argmin()]))

    return ClusterAssignment(
        k=k,
        labels=[int(v) for v in labels],
        centroid_chunks=centroid_chunks,
        means=centers,
        norm_mean=mean,
        norm_std=std,
        seed=seed,
        coverage=coverage,
        objective_log=log,
    )


def _kmeans_pp_init(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(z)
    first = int(rng.integers(n))
    centers = [z[first]]
    for _ in range(1, k):
        d2 = np.min(((z[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(z[int(rng.integers(n))])
            continue
        probs = d2 / total
        centers.append(z[int(rng.choice(n, p=probs))])
    return np.asarray(centers)


def nearest_centroid(features: np.ndarray, assignment: ClusterAssignment) -> int:
    """Cluster whose mean is nearest in normalized space; ties pick the lower id."""
    zv = assignment.normalize(np.asarray(features, dtype=np.float64))
    d2 = ((assignment.means - zv[None, :]) ** 2).sum(axis=1)
    return int(d2.argmin())
