"""Entropy-regularized optimal transport via log-domain Sinkhorn iterations.

The log-domain form keeps the scaling updates finite for small epsilon,
where the naive kernel exp(-C/eps) underflows. Zero-mass marginal entries
are legal; their plan rows/columns are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TransportPlan:
    """A coupling matrix with convergence diagnostics.

    matrix[i, j] is the mass moved from row atom i to column atom j; rows
    sum to the row marginal and columns to the column marginal, up to
    `marginal_error` (the L1 violation at the last iteration).
    """

    matrix: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"plan must be a matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("plan contains non-finite entries")
        if np.any(m < 0):
            raise ValueError("plan contains negative mass")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def _validate_marginal(w, size: int, name: str) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative mass")
    total = arr.sum()
    if total <= 0:
        raise ValueError(f"{name} carries no mass")
    return arr


def sinkhorn(
    cost: np.ndarray,
    row_marginal: np.ndarray,
    col_marginal: np.ndarray,
    epsilon: float = 0.01,
    max_iter: int = 1000,
    tol: float = 1e-6,
) -> TransportPlan:
    """Solve min_P <P, cost> - epsilon * H(P) over couplings of the marginals.

    Both marginals must carry the same total mass (relative difference below
    1e-8); they are rescaled to probability vectors internally, and the
    returned plan is scaled back, so its total mass matches the inputs.
    Convergence means the summed L1 violation of both marginals is at most
    tol. The plan of the final iteration is returned even when the iteration
    budget runs out (converged=False).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost contains non-finite values")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    n, m = c.shape
    mu = _validate_marginal(row_marginal, n, "row_marginal")
    nu = _validate_marginal(col_marginal, m, "col_marginal")
    mass_mu, mass_nu = mu.sum(), nu.sum()
    if abs(mass_mu - mass_nu) > 1e-8 * max(mass_mu, mass_nu):
        raise ValueError(
            f"marginals must carry equal mass, got {mass_mu!r} vs {mass_nu!r}"
        )
    mu = mu / mass_mu
    nu = nu / mass_nu

    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
        log_nu = np.log(nu)
    kernel = -c / epsilon
    # Scaled dual potentials f/eps, g/eps. Zero-mass atoms get -inf
    # potentials, which zeroes their row/column exactly.
    u = np.zeros(n)
    v = np.zeros(m)
    converged = False
    iterations = 0
    err = np.inf
    # The log-sum-exp reductions are unrolled into the loop body and work in
    # place on one shared scratch buffer: at desk sizes this loop runs tens of
    # thousands of times per registration, so temporary allocations and
    # wrapper dispatch dominate the cost of the reductions themselves. The
    # returned plan is a fresh array, so buffer reuse never leaks out. The
    # max shift keeps exp finite; -inf guards only matter for zero-mass
    # atoms, so they are skipped entirely when every atom carries mass (all
    # quantities stay finite by induction, and the guards would be no-ops).
    scratch = np.empty_like(kernel)
    plan = np.empty_like(kernel)
    row_zero = mu == 0
    col_zero = nu == 0
    has_empty = bool(row_zero.any() or col_zero.any())
    with np.errstate(invalid="ignore", divide="ignore"):
        for iterations in range(1, max_iter + 1):
            np.add(kernel, v[None, :], out=scratch)
            shift = scratch.max(axis=1, keepdims=True)
            if has_empty:
                shift = np.where(np.isfinite(shift), shift, 0.0)
            scratch -= shift
            np.exp(scratch, out=scratch)
            s = scratch.sum(axis=1)
            np.log(s, out=s)
            s += shift[:, 0]
            u = log_mu - s
            if has_empty:
                u[row_zero] = -np.inf

            np.add(kernel, u[:, None], out=scratch)
            shift = scratch.max(axis=0, keepdims=True)
            if has_empty:
                shift = np.where(np.isfinite(shift), shift, 0.0)
            scratch -= shift
            np.exp(scratch, out=scratch)
            s = scratch.sum(axis=0)
            np.log(s, out=s)
            s += shift[0, :]
            v = log_nu - s
            if has_empty:
                v[col_zero] = -np.inf

            np.add(kernel, u[:, None], out=scratch)
            scratch += v[None, :]
            np.exp(scratch, out=plan)
            err = float(
                np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum()
            )
            if err <= tol:
                converged = True
                break
    return TransportPlan(plan * mass_mu, converged, iterations, err)
