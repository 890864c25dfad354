"""Content-based spectral clustering of users and cluster-to-SCBS association.

Users are compared through the cosine similarity of their request
histograms. The symmetric normalized Laplacian of that similarity graph is
diagonalized, the number of clusters is picked at the largest eigengap, and
k-means groups the rows of the leading eigenvectors.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import EigensolverFailure, InvalidConfig
from .radio import rssi_dbm

__all__ = [
    "ClusteringConfig",
    "SpectralDecomposition",
    "ContentSpectralClustering",
    "cosine_similarity",
    "build_similarity",
    "spectral_decompose",
    "choose_k",
    "kmeans",
    "cluster_users",
    "associate_clusters",
    "strongest_cell",
    "best_permutation_accuracy",
    "dump_debug_csv",
]

# exhaustive matching above this many small cells gets expensive
EXHAUSTIVE_MATCHING_LIMIT = 8


@dataclass(frozen=True)
class ClusteringConfig:
    k_min: int = 2
    k_max: int | None = None
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 100

    def resolve(self, n_users: int) -> tuple[int, int]:
        """Concrete ``(k_min, k_max)`` for ``n_users``; ``k_max`` defaults to ``n_users // 2``."""
        k_max = n_users // 2 if self.k_max is None else self.k_max
        k_min = self.k_min
        # never ask for a gap past the last eigenvalue
        k_max = min(k_max, n_users - 1)
        k_min = min(k_min, k_max)
        if not 1 <= k_min <= k_max <= n_users:
            raise InvalidConfig(f"need 1 <= k_min <= k_max <= {n_users}, got {k_min}, {k_max}")
        return k_min, k_max


@dataclass
class SpectralDecomposition:
    degree: np.ndarray
    laplacian: np.ndarray
    normalized_laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def cosine_similarity(n_i, n_j) -> float:
    n_i = np.asarray(n_i, dtype=float)
    n_j = np.asarray(n_j, dtype=float)
    if n_i.shape != n_j.shape:
        raise ValueError("histograms must have the same length")
    denom = np.linalg.norm(n_i) * np.linalg.norm(n_j)
    if denom == 0:
        return 0.0
    return float(np.clip(n_i @ n_j / denom, 0.0, 1.0))


def build_similarity(histograms) -> np.ndarray:
    """Pairwise cosine similarity of request histograms (users in rows).

    Users without any request are similar to nobody, themselves included.
    """
    X = np.asarray(histograms, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = X / safe[:, None]
    S = np.clip(unit @ unit.T, 0.0, 1.0)
    active = norms > 0
    S[~active, :] = 0.0
    S[:, ~active] = 0.0
    np.fill_diagonal(S, active.astype(float))
    # exact symmetry regardless of rounding in the product
    return np.triu(S) + np.triu(S, 1).T


def spectral_decompose(S) -> SpectralDecomposition:
    """Eigen-decompose ``D^-1/2 (D - S) D^-1/2`` with eigenvalues ascending.

    Zero-degree rows get a unit degree so the normalization stays finite.
    """
    S = np.asarray(S, dtype=float)
    degree = S.sum(axis=1)
    degree = np.where(degree > 0, degree, 1.0)
    laplacian = np.diag(degree) - S
    inv_sqrt = 1.0 / np.sqrt(degree)
    l_norm = inv_sqrt[:, None] * laplacian * inv_sqrt[None, :]
    l_norm = 0.5 * (l_norm + l_norm.T)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(l_norm)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    return SpectralDecomposition(degree, laplacian, l_norm, eigenvalues, eigenvectors)


def choose_k(eigenvalues, k_min: int, k_max: int) -> int:
    """Eigengap heuristic.

    With 1-based eigenvalues ``l_1 <= l_2 <= ...``, return the ``i`` in
    ``[k_min, k_max]`` maximizing ``l_{i+1} - l_i``; ties go to the smallest ``i``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if k_max + 1 > lam.size:
        raise ValueError(f"k_max={k_max} needs at least {k_max + 1} eigenvalues, got {lam.size}")
    idx = np.arange(k_min, k_max + 1)
    gaps = lam[idx] - lam[idx - 1]
    return int(idx[np.argmax(gaps)])


def _kmeans_pp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, centers, max_iter):
    K = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        counts = np.bincount(new_labels, minlength=K)
        for k in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the worst-served point
            far = int(d2[np.arange(len(X)), new_labels].argmax())
            new_labels[far] = k
            d2[far] = 0.0
            counts = np.bincount(new_labels, minlength=K)
        centers = np.array([X[new_labels == k].mean(axis=0) for k in range(K)])
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(X, K: int, rng: np.random.Generator, n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts by inertia."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must lie in [1, {n}], got {K}")
    if K == 1:
        return np.zeros(n, dtype=int)
    best_labels, best_inertia = None, np.inf
    for sub in rng.spawn(n_init):
        labels, _, inertia = _lloyd(X, _kmeans_pp(X, K, sub), max_iter)
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return _canonical_labels(best_labels)


def _canonical_labels(labels):
    # relabel by first appearance so equal partitions compare equal
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=int)
    remap[order] = np.arange(order.size)
    _, inverse = np.unique(labels, return_inverse=True)
    return remap[inverse]


class ContentSpectralClustering(ClusterMixin, BaseEstimator):
    """Spectral clustering of users by the content they request.

    Parameters
    ----------
    k_min, k_max : int
        Range searched by the eigengap heuristic. ``k_max=None`` means half
        the number of active users.
    n_init : int
        k-means restarts.
    max_iter : int
        Lloyd iterations per restart.
    random_state : None, int or numpy Generator

    Attributes
    ----------
    labels_ : ndarray of shape (n_users,)
        Cluster per user; ``-1`` for users that made no request.
    n_clusters_ : int
    affinity_matrix_ : ndarray of shape (n_users, n_users)
    eigenvalues_ : ndarray
        Spectrum of the normalized Laplacian over the active users.
    embedding_ : ndarray of shape (n_active, n_clusters_)
    cluster_centers_ : ndarray of shape (n_clusters_, n_contents)
        Mean unit-normalized histogram of each cluster, used by :meth:`predict`.
    """

    def __init__(self, k_min=2, k_max=None, n_init=10, max_iter=100, random_state=None):
        self.k_min = k_min
        self.k_max = k_max
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if np.any(X < 0):
            raise ValueError("request histograms must be non-negative")
        if X.shape[0] < 2:
            raise ValueError("need at least two users to cluster")
        rng = np.random.default_rng(self.random_state)

        self.affinity_matrix_ = build_similarity(X)
        active = np.flatnonzero(X.sum(axis=1) > 0)
        labels = np.full(X.shape[0], -1, dtype=int)
        if active.size < 2:
            labels[active] = 0
            self.n_clusters_ = int(active.size > 0)
            self.eigenvalues_ = np.zeros(active.size)
            self.embedding_ = np.zeros((active.size, self.n_clusters_))
            self.labels_ = labels
            self.cluster_centers_ = self._centers(X, labels)
            return self

        S = self.affinity_matrix_[np.ix_(active, active)]
        decomp = spectral_decompose(S)
        cfg = ClusteringConfig(self.k_min, self.k_max, self.n_init, self.max_iter)
        k_min, k_max = cfg.resolve(active.size)
        K = choose_k(decomp.eigenvalues, k_min, k_max)
        Y = decomp.eigenvectors[:, :K]
        labels[active] = kmeans(Y, K, rng, self.n_init, self.max_iter)

        self.decomposition_ = decomp
        self.eigenvalues_ = decomp.eigenvalues
        self.embedding_ = Y
        self.n_clusters_ = K
        self.labels_ = labels
        self.cluster_centers_ = self._centers(X, labels)
        return self

    def _centers(self, X, labels):
        K = self.n_clusters_
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        unit = X / np.where(norms > 0, norms, 1.0)
        return np.array([unit[labels == k].mean(axis=0) for k in range(K)]).reshape(K, X.shape[1])

    def predict(self, X):
        """Cluster of the most cosine-similar center; ``-1`` for empty histograms."""
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.cluster_centers_.shape[1]:
            raise ValueError(f"expected {self.cluster_centers_.shape[1]} contents, got {X.shape[1]}")
        if self.n_clusters_ == 0:
            return np.full(X.shape[0], -1, dtype=int)
        norms = np.linalg.norm(X, axis=1)
        scores = X @ self.cluster_centers_.T
        return np.where(norms > 0, scores.argmax(axis=1), -1)


def cluster_users(histograms, cfg: ClusteringConfig | None = None, rng=None):
    """Run the full clustering pipeline; returns ``(K, labels)``."""
    cfg = cfg or ClusteringConfig()
    est = ContentSpectralClustering(
        k_min=cfg.k_min, k_max=cfg.k_max, n_init=cfg.kmeans_restarts,
        max_iter=cfg.kmeans_max_iters, random_state=rng,
    ).fit(histograms)
    return est.n_clusters_, est.labels_


def strongest_cell(small_cells, positions) -> np.ndarray:
    """Id of the highest-RSSI small cell for each position (first on ties)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    rssi = np.vstack([np.atleast_1d(rssi_dbm(bs, positions)) for bs in small_cells])
    ids = np.array([bs.bs_id for bs in small_cells])
    return ids[rssi.argmax(axis=0)]


def _merge_clusters(labels, K, B, histograms):
    labels = labels.copy()
    clusters = list(range(K))
    while len(clusters) > B:
        if histograms is not None:
            cent = np.array([np.asarray(histograms, dtype=float)[labels == k].mean(axis=0) for k in clusters])
            sim = build_similarity(cent)
            np.fill_diagonal(sim, -np.inf)
            i, j = np.unravel_index(np.argmax(sim), sim.shape)
        else:
            sizes = [(labels == k).sum() for k in clusters]
            i, j = np.argsort(sizes, kind="stable")[:2]
        keep, drop = clusters[min(i, j)], clusters[max(i, j)]
        labels[labels == drop] = keep
        clusters.remove(drop)
    remap = {k: n for n, k in enumerate(clusters)}
    return np.array([remap.get(l, -1) for l in labels])


def associate_clusters(labels, K: int, sue_positions, small_cells, histograms=None) -> np.ndarray:
    """Map each cluster to a distinct small cell and return one SCBS id per SUE.

    Surplus clusters (``K > B``) are merged first, joining the pair whose
    mean histograms are most cosine-similar (or the two smallest clusters
    when ``histograms`` is not given). Clusters are then matched to cells
    maximizing the summed member RSSI. Unclustered users (label ``-1``) go
    to their strongest cell.
    """
    labels = np.asarray(labels, dtype=int)
    positions = np.atleast_2d(np.asarray(sue_positions, dtype=float))
    B = len(small_cells)
    if K < 1 or B < 1:
        raise ValueError("need at least one cluster and one small cell")
    if K > B:
        labels = _merge_clusters(labels, K, B, histograms)
        K = B

    rssi = np.vstack([np.atleast_1d(rssi_dbm(bs, positions)) for bs in small_cells])
    score = np.zeros((K, B))
    for k in range(K):
        score[k] = rssi[:, labels == k].sum(axis=1)

    if B <= EXHAUSTIVE_MATCHING_LIMIT:
        best, best_val = None, -np.inf
        for perm in itertools.permutations(range(B), K):
            val = score[np.arange(K), perm].sum()
            if val > best_val:
                best, best_val = perm, val
        cell_of_cluster = np.array(best)
    else:
        rows, cols = linear_sum_assignment(score, maximize=True)
        cell_of_cluster = cols[np.argsort(rows)]

    ids = np.array([bs.bs_id for bs in small_cells])
    q = np.empty(len(labels), dtype=int)
    clustered = labels >= 0
    q[clustered] = ids[cell_of_cluster[labels[clustered]]]
    if (~clustered).any():
        q[~clustered] = strongest_cell(small_cells, positions[~clustered])
    return q


def best_permutation_accuracy(true_labels, pred_labels) -> float:
    """Fraction of users whose predicted cluster matches the truth under the best relabeling."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    t_vals, t_idx = np.unique(true_labels, return_inverse=True)
    p_vals, p_idx = np.unique(pred_labels, return_inverse=True)
    confusion = np.zeros((p_vals.size, t_vals.size))
    np.add.at(confusion, (p_idx, t_idx), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum() / true_labels.size)


def dump_debug_csv(path, similarity, eigenvalues, labels):
    """Write the similarity matrix, spectrum and labels to one CSV for inspection."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(similarity)
        w.writerow(["section", "index"] + [f"c{j}" for j in range(n)])
        for i, row in enumerate(similarity):
            w.writerow(["similarity", i] + [f"{v:.9g}" for v in row])
        w.writerow(["eigenvalues", ""] + [f"{v:.9g}" for v in eigenvalues])
        w.writerow(["labels", ""] + [int(v) for v in labels])
