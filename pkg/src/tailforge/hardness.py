"""Hardness conditioning: K-means over text embeddings, distance profiles,
and entropy-based curriculum ordering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import EmbeddingStore, store_read, store_write


@dataclass(frozen=True)
class KMeansModel:
    centers: np.ndarray  # (k, width) float64
    iterations: int
    inertia: float
    seed: int
    inertia_history: tuple[float, ...]

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def width(self) -> int:
        return self.centers.shape[1]


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) via ||p||^2 - 2 p.c + ||c||^2, clipped against tiny negatives
    d2 = (
        np.sum(points**2, axis=1, keepdims=True)
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    if k == 1:
        return centers
    d2 = _squared_distances(points, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all points coincide with chosen centers; any pick is optimal
            idx = int(rng.integers(n))
        else:
            probs = d2 / total
            idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, _squared_distances(points, centers[j : j + 1]).ravel())
    return centers


def fit_kmeans(
    points: np.ndarray,
    k: int,
    rng_seed: int,
    max_iters: int = 100,
    tol: float = 1e-6,
    n_init: int = 10,
) -> KMeansModel:
    """Best of ``n_init`` Lloyd runs, each with its own k-means++ initialization.

    Deterministic given ``rng_seed``: the restarts draw from one seeded
    generator and ties keep the earliest run.  Restarts are what make tiny
    instances reach the global optimum; single-init Lloyd stalls in local
    minima even at 6 points.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not np.all(np.isfinite(points)):
        raise ValueError("non-finite values in clustering input")
    if k < 1:
        raise ValueError("k must be >= 1")
    if points.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got {points.shape[0]}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    rng = np.random.default_rng(rng_seed)
    best: KMeansModel | None = None
    for _ in range(n_init):
        model = _lloyd_run(points, k, rng, max_iters, tol, rng_seed)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def _lloyd_run(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iters: int,
    tol: float,
    rng_seed: int,
) -> KMeansModel:
    """One k-means++ initialization followed by Lloyd iterations.

    Empty clusters are re-seeded at the point currently farthest from its
    assigned center, which keeps the recorded inertia sequence non-increasing.
    """
    n = points.shape[0]
    centers = _kmeanspp_init(points, k, rng)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        d2 = _squared_distances(points, centers)
        labels = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(n), labels]
        for j in range(k):
            if not np.any(labels == j):
                far = int(np.argmax(point_cost))
                labels[far] = j
                centers[j] = points[far]
                d2[:, j] = _squared_distances(points, centers[j : j + 1]).ravel()
                point_cost = d2[np.arange(n), labels]
        history.append(float(point_cost.sum()))
        new_centers = centers.copy()
        for j in range(k):
            members = points[labels == j]
            new_centers[j] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift < tol:
            break
    d2 = _squared_distances(points, centers)
    final_inertia = float(d2.min(axis=1).sum())
    history.append(final_inertia)
    return KMeansModel(
        centers=centers,
        iterations=iterations,
        inertia=final_inertia,
        seed=rng_seed,
        inertia_history=tuple(history),
    )


def hardness_vector(embedding: np.ndarray, model: KMeansModel) -> np.ndarray:
    """L1-normalized Euclidean distance profile to the cluster centers.

    A zero distance sum (embedding equal to every center) yields the uniform
    1/k vector, the maximal-uncertainty reading.
    """
    emb = np.asarray(embedding, dtype=np.float64).reshape(-1)
    if emb.shape[0] != model.width:
        raise ValueError(f"embedding width {emb.shape[0]} != model width {model.width}")
    d = np.sqrt(_squared_distances(emb[None, :], model.centers).ravel())
    total = d.sum()
    if total == 0.0:
        return np.full(model.k, 1.0 / model.k)
    return d / total


def hardness_matrix(embeddings: np.ndarray, model: KMeansModel) -> np.ndarray:
    """Row-wise :func:`hardness_vector` over a (n, width) matrix."""
    pts = np.asarray(embeddings, dtype=np.float64)
    if pts.shape[1] != model.width:
        raise ValueError(f"embedding width {pts.shape[1]} != model width {model.width}")
    d = np.sqrt(_squared_distances(pts, model.centers))
    totals = d.sum(axis=1, keepdims=True)
    out = np.full_like(d, 1.0 / model.k)
    np.divide(d, totals, out=out, where=totals > 0)
    return out


def hardness_entropy(h: np.ndarray) -> float:
    """Shannon entropy -sum h ln h with 0 ln 0 := 0."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    pos = h[h > 0]
    return float(-(pos * np.log(pos)).sum())


def split_by_entropy(entropies: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices with entropy <= lower median go easy, the rest hard."""
    ent = np.asarray(entropies, dtype=np.float64).reshape(-1)
    if ent.size == 0:
        raise ValueError("empty sample set")
    median = float(np.sort(ent)[(ent.size - 1) // 2])
    easy = np.flatnonzero(ent <= median)
    hard = np.flatnonzero(ent > median)
    return easy, hard


def curriculum_split(hardness_vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split samples into (easy, hard) index arrays by hardness entropy.

    Uses the lower median as the threshold; ties at the median are easy.
    """
    vecs = np.asarray(hardness_vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] < 2:
        raise ValueError("need a (n >= 2, k) matrix of hardness vectors")
    entropies = np.apply_along_axis(hardness_entropy, 1, vecs)
    return split_by_entropy(entropies)


# -- checkpointing -------------------------------------------------------------


def save_kmeans(model: KMeansModel, path: str | Path) -> None:
    store = EmbeddingStore(width=model.width, kind="text")
    for j in range(model.k):
        store.add(f"center:{j:05d}", model.centers[j])
    store_write(store, path)
    meta = {
        "k": model.k,
        "seed": model.seed,
        "iterations": model.iterations,
        "inertia": model.inertia,
        "inertia_history": list(model.inertia_history),
    }
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_kmeans(path: str | Path) -> KMeansModel:
    store = store_read(path, expect_kind="text")
    meta = json.loads(Path(str(path) + ".meta.json").read_text(encoding="utf-8"))
    centers = store.matrix.astype(np.float64)
    if centers.shape[0] != meta["k"]:
        raise ValueError(f"{path}: {centers.shape[0]} centers but metadata says k={meta['k']}")
    return KMeansModel(
        centers=centers,
        iterations=int(meta["iterations"]),
        inertia=float(meta["inertia"]),
        seed=int(meta["seed"]),
        inertia_history=tuple(float(x) for x in meta["inertia_history"]),
    )
