"""Diagnostic losses: robust alignment error, assignment cross-entropy,
and overlap-score cross-entropy.

These mirror the quantities a training run would minimize, but here they
only grade a finished registration, so everything is a plain evaluable
function with a hand-written derivative where one is worth checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import PointCloud, RigidTransform, nearest_neighbors, transform_points
from .mixture import WeightedGmm

BCE_CLAMP = 1e-7
WELSCH_NU_SYNTHETIC = 0.1
WELSCH_NU_INDOOR = 0.5


def welsch(x, nu: float = WELSCH_NU_SYNTHETIC):
    """Bounded penalty 1 - exp(-x^2 / 2 nu^2); saturates at 1 for outliers."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    values = np.asarray(x, dtype=np.float64)
    out = 1.0 - np.exp(-(values * values) / (2.0 * nu * nu))
    return float(out) if out.ndim == 0 else out


def welsch_derivative(x, nu: float = WELSCH_NU_SYNTHETIC):
    if nu <= 0:
        raise ValueError("nu must be positive")
    values = np.asarray(x, dtype=np.float64)
    out = (values / (nu * nu)) * np.exp(-(values * values) / (2.0 * nu * nu))
    return float(out) if out.ndim == 0 else out


def _clamped(predicted) -> np.ndarray:
    arr = np.asarray(predicted, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("predictions must be finite")
    return np.clip(arr, BCE_CLAMP, 1.0 - BCE_CLAMP)


def binary_cross_entropy(predicted, labels) -> float:
    """Mean BCE with predictions clamped to [1e-7, 1 - 1e-7]."""
    p = _clamped(predicted)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def binary_cross_entropy_derivative(predicted, labels) -> np.ndarray:
    """Gradient of the mean BCE with respect to each prediction."""
    p = _clamped(predicted)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    return (-(y / p) + (1.0 - y) / (1.0 - p)) / p.size


def overlap_score_loss(predicted_p, labels_p, predicted_q, labels_q) -> float:
    """Average of the two per-cloud BCE terms."""
    return 0.5 * (
        binary_cross_entropy(predicted_p, labels_p)
        + binary_cross_entropy(predicted_q, labels_q)
    )


def global_registration_loss(
    source: PointCloud,
    target: PointCloud,
    estimated: RigidTransform,
    gt: RigidTransform,
    nu: float = WELSCH_NU_SYNTHETIC,
) -> float:
    """Robust distance between the estimated placement of each source point
    and its pseudo-correspondence (the target point nearest to the true
    placement), summed over the source cloud."""
    truth = transform_points(gt, source.points)
    idx, _ = nearest_neighbors(truth, target)
    matched = target.points[idx]
    moved = transform_points(estimated, source.points)
    residuals = np.linalg.norm(moved - matched, axis=1)
    return float(np.sum(welsch(residuals, nu)))


def _logsumexp_rows(values: np.ndarray) -> np.ndarray:
    peak = values.max(axis=1, keepdims=True)
    return peak + np.log(np.exp(values - peak).sum(axis=1, keepdims=True))


def clustering_loss(pc: PointCloud, gamma, gmm: WeightedGmm) -> float:
    """Cross-entropy between an assignment and the distance softmax over the
    mixture means, summed over points. gamma rows must sum to one; a hard
    one-hot assignment gives the usual negative log-likelihood."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (len(pc), gmm.n_components):
        raise ValueError(
            f"gamma must have shape ({len(pc)}, {gmm.n_components}), got {g.shape}"
        )
    if np.any(g < 0) or np.max(np.abs(g.sum(axis=1) - 1.0)) > 1e-9:
        raise ValueError("gamma rows must be non-negative and sum to one")
    logits = -cdist(pc.points, gmm.means)
    log_softmax = logits - _logsumexp_rows(logits)
    return float(-np.sum(g * log_softmax))


def gradient_check(fn, point, analytic_grad, h: float = 1e-5) -> float:
    """Max relative error between analytic_grad and central differences of fn.

    The relative denominator is floored at 1 so near-zero gradients are
    compared absolutely.
    """
    x = np.atleast_1d(np.asarray(point, dtype=np.float64))
    analytic = np.atleast_1d(np.asarray(analytic_grad, dtype=np.float64))
    if analytic.shape != x.shape:
        raise ValueError("analytic_grad must match the point's shape")
    worst = 0.0
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        upper = np.asarray(fn(x + step), dtype=np.float64).reshape(-1)
        lower = np.asarray(fn(x - step), dtype=np.float64).reshape(-1)
        if upper.size != 1 or lower.size != 1:
            raise ValueError("fn must return a scalar")
        numeric = (upper[0] - lower[0]) / (2.0 * h)
        scale = max(abs(numeric), abs(analytic[i]), 1.0)
        worst = max(worst, abs(numeric - analytic[i]) / scale)
    return worst


@dataclass(frozen=True)
class LossReport:
    """The three diagnostic losses and their weighted total."""

    overlap_loss: float
    registration_loss: float
    clustering_loss: float
    weights: tuple = (1.0, 1.0, 1.0)
    total: float = field(init=False)

    def __post_init__(self):
        parts = (self.overlap_loss, self.registration_loss, self.clustering_loss)
        for name, value in zip(("overlap_loss", "registration_loss", "clustering_loss"), parts):
            value = float(value)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
            object.__setattr__(self, name, value)
        weights = tuple(float(w) for w in self.weights)
        if len(weights) != 3 or any(w < 0 or not np.isfinite(w) for w in weights):
            raise ValueError("weights must be three non-negative reals")
        object.__setattr__(self, "weights", weights)
        total = (
            weights[0] * self.overlap_loss
            + weights[1] * self.registration_loss
            + weights[2] * self.clustering_loss
        )
        object.__setattr__(self, "total", total)

    def to_json_dict(self) -> dict:
        return {
            "overlap_loss": self.overlap_loss,
            "registration_loss": self.registration_loss,
            "clustering_loss": self.clustering_loss,
            "weights": list(self.weights),
            "total": self.total,
        }
