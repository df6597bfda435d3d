"""Equal-size point clustering and soft feature-space assignments.

The hard clustering solves k-means under a balance constraint: cluster
sizes may differ by at most one point. Each assignment step relaxes the
constraint to an entropic transport problem (points carry mass 1/N,
clusters capacity 1/J) and rounds the plan greedily under explicit
floor/ceiling capacities, so the size guarantee holds exactly regardless
of how converged the transport plan is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import PointCloud, farthest_point_sample
from .transport import sinkhorn


@dataclass(frozen=True)
class ClusterAssignment:
    """Hard balanced clustering of N items into J groups.

    gamma is the N x J one-hot membership matrix; centroids are the final
    group means; sizes the per-group counts. objective is the summed squared
    distance of each item to its centroid at the last accepted iteration,
    and history the accepted objective sequence (non-increasing).
    """

    gamma: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray
    objective: float
    n_iter: int
    history: tuple

    def __post_init__(self):
        g = np.asarray(self.gamma)
        if g.ndim != 2:
            raise ValueError(f"gamma must be a matrix, got shape {g.shape}")
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("gamma must be binary")
        if not np.all(g.sum(axis=1) == 1):
            raise ValueError("every row of gamma must select exactly one cluster")
        n, j = g.shape
        sizes = np.asarray(self.sizes)
        if sizes.shape != (j,) or not np.array_equal(sizes, g.sum(axis=0)):
            raise ValueError("sizes must equal the gamma column sums")
        if np.max(np.abs(sizes - n / j)) > 1.0 + 1e-12:
            raise ValueError("cluster sizes deviate from N/J by more than one")
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != j or not np.all(np.isfinite(c)):
            raise ValueError("centroids must be a finite (J, dim) matrix")
        g = g.astype(np.uint8).copy()
        g.flags.writeable = False
        sizes = sizes.astype(np.int64).copy()
        sizes.flags.writeable = False
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "history", tuple(float(h) for h in self.history))

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.gamma, axis=1)


def _round_balanced(plan: np.ndarray, n: int, j: int) -> np.ndarray:
    """Greedy rounding of a transport plan to balanced hard labels.

    Entries are visited in decreasing plan mass (flat index breaks ties, so
    the result is deterministic). A cluster never exceeds ceil(N/J); once
    the number of unassigned points equals the total shortfall below
    floor(N/J), only deficit clusters may receive points. Every size then
    lands in {floor(N/J), ceil(N/J)}.
    """
    cap = math.ceil(n / j)
    floor = n // j
    order = np.argsort(-plan.ravel(), kind="stable")
    labels = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(j, dtype=np.int64)
    deficit = floor * j
    unassigned = n
    for flat in order:
        if unassigned == 0:
            break
        i, l = divmod(int(flat), j)
        if labels[i] != -1 or sizes[l] >= cap:
            continue
        needy = sizes[l] < floor
        if unassigned == deficit and not needy:
            continue
        labels[i] = l
        sizes[l] += 1
        unassigned -= 1
        if needy:
            deficit -= 1
    assert unassigned == 0, "rounding failed to place every point"
    return labels


def _repair_empty(labels: np.ndarray, points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Move the globally worst-fitting point into each empty cluster.

    Unreachable when the floor constraint holds (every size >= floor >= 1);
    kept as a guard against future relaxations of the rounding rule.
    """
    j = centroids.shape[0]
    sizes = np.bincount(labels, minlength=j)
    for empty in np.flatnonzero(sizes == 0):
        fit = np.linalg.norm(points - centroids[labels], axis=1)
        fit[sizes[labels] <= 1] = -np.inf  # do not empty another cluster
        worst = int(np.argmax(fit))
        sizes[labels[worst]] -= 1
        labels[worst] = empty
        sizes[empty] = 1
    return labels


def _kmeans_balanced(
    points: np.ndarray,
    n_clusters: int,
    seed: int,
    max_iter: int = 50,
    tol: float = 1e-6,
    sinkhorn_epsilon_scale: float = 0.05,
    sinkhorn_max_iter: int = 200,
    sinkhorn_tol: float = 1e-4,
):
    """Core balanced k-means on an (N, dim) array; dim is arbitrary."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    j = n_clusters
    if not (1 <= j <= n):
        raise ValueError(f"n_clusters must lie in [1, {n}], got {j}")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    centroids = x[farthest_point_sample(x, j, seed)]
    row_mass = np.full(n, 1.0 / n)
    col_mass = np.full(j, 1.0 / j)
    best = None
    prev_obj = np.inf
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        cost = cdist(x, centroids, "sqeuclidean")
        epsilon = max(sinkhorn_epsilon_scale * float(cost.mean()), 1e-12)
        plan = sinkhorn(
            cost, row_mass, col_mass,
            epsilon=epsilon, max_iter=sinkhorn_max_iter, tol=sinkhorn_tol,
        )
        labels = _round_balanced(plan.matrix, n, j)
        labels = _repair_empty(labels, x, centroids)
        gamma = np.zeros((n, j))
        gamma[np.arange(n), labels] = 1.0
        sizes = gamma.sum(axis=0)
        centroids_new = (gamma.T @ x) / sizes[:, None]
        obj = float(np.sum((x - centroids_new[labels]) ** 2))
        if obj > prev_obj:
            # The balanced rounding is a heuristic; if a step regresses,
            # keep the previous state so the reported history is monotone.
            n_iter -= 1
            break
        best = (labels, centroids_new, obj)
        history.append(obj)
        if prev_obj - obj < tol:
            break
        prev_obj = obj
        centroids = centroids_new
    assert best is not None
    labels, centroids, obj = best
    gamma = np.zeros((n, j), dtype=np.uint8)
    gamma[np.arange(n), labels] = 1
    sizes = gamma.sum(axis=0).astype(np.int64)
    return ClusterAssignment(gamma, centroids, sizes, obj, n_iter, tuple(history))


def wasserstein_kmeans(
    cloud: PointCloud,
    n_clusters: int,
    seed: int,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> ClusterAssignment:
    """Balanced k-means on point coordinates.

    Initial centroids come from a seeded farthest-point sample, assignments
    from rounded entropic transport, so the same inputs always produce the
    same clustering. Cluster sizes differ by at most one.
    """
    return _kmeans_balanced(cloud.points, n_clusters, seed, max_iter=max_iter, tol=tol)


@dataclass(frozen=True)
class SoftAssignment:
    """Row-stochastic soft membership of N items over L components."""

    scores: np.ndarray
    centroids: np.ndarray
    temperature: float

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError(f"scores must be a matrix, got shape {s.shape}")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite and non-negative")
        if np.max(np.abs(s.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("score rows must sum to one")
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != s.shape[1]:
            raise ValueError("centroids must have one row per component")
        s = s.copy()
        s.flags.writeable = False
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "centroids", c)


def soft_assignment(
    features: np.ndarray,
    n_components: int,
    seed: int,
    temperature: float = 0.1,
) -> SoftAssignment:
    """Soft membership of feature rows over balanced k-means centroids.

    Scores are the row softmax of -||f_i - c_l||^2 / temperature. Lower
    temperatures sharpen rows toward the nearest centroid; identical
    features yield uniform rows.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"features must be a matrix, got shape {f.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    assignment = _kmeans_balanced(f, n_components, seed)
    logits = -cdist(f, assignment.centroids, "sqeuclidean") / temperature
    logits -= logits.max(axis=1, keepdims=True)
    scores = np.exp(logits)
    scores /= scores.sum(axis=1, keepdims=True)
    return SoftAssignment(scores, assignment.centroids, temperature)
