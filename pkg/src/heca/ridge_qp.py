"""Exact solver for the per-subset shrinkage regression.

Given a window of targets Y and forecasts F, a fixed member subset of size
c, and a shrinkage intensity lambda, solve

    minimize    sum((Y - F[:, S] b)^2) + lambda * sum((b_j - 1/c)^2, j in S)
    subject to  sum(b) = 1,  b_j >= epsilon on S,  b_j = 0 off S.

The penalty shrinks the selected weights toward the equal split 1/c; weights
are never standardized.  With the default epsilon (the smallest positive
float64, 5e-324) the lower bound is numerically inactive, so the QP is
solved with bound 0 and any selected weight below epsilon is then snapped up
to epsilon, taking the mass from the largest weight; the adjustment is at
most c * epsilon and therefore invisible at every tolerance used here.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InfeasibleError, ValidationError

#: Paper-default lower bound on selected weights: smallest positive float64.
EPSILON_DEFAULT = 5e-324

#: Epsilons at or below this are handled in snap mode (solve with bound 0).
SNAP_THRESHOLD = 1e-12

#: Target tolerance for the solver's KKT certificate at unit data scale.
KKT_TOL = 1e-8


def _as_vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class SubsetRidgeProblem:
    """One (window, subset, lambda) instance.

    targets: length-r window of realized values, oldest first.
    forecasts: r x M forecast matrix over the same window.
    subset: selected expert indices (0-based, size c).
    shrinkage: lambda >= 0.
    epsilon: lower bound on selected weights, > 0.
    """

    targets: np.ndarray
    forecasts: np.ndarray
    subset: tuple
    shrinkage: float
    epsilon: float = EPSILON_DEFAULT

    def __post_init__(self):
        y = _as_vector(self.targets, "targets")
        F = np.asarray(self.forecasts, dtype=np.float64)
        if F.ndim != 2:
            raise ValidationError("forecasts must be a 2-d array")
        if F.shape[0] != y.shape[0]:
            raise ValidationError("targets and forecasts disagree on window length")
        if y.shape[0] < 1:
            raise ValidationError("window must contain at least one period")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(F))):
            raise ValidationError("window data must be finite")
        subset = tuple(sorted(int(j) for j in self.subset))
        if len(set(subset)) != len(subset):
            raise ValidationError("subset contains duplicate indices")
        m = F.shape[1]
        if not subset or subset[0] < 0 or subset[-1] >= m:
            raise ValidationError(f"subset must pick between 1 and {m} experts")
        if not np.isfinite(self.shrinkage) or self.shrinkage < 0:
            raise ValidationError("shrinkage must be finite and >= 0")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if len(subset) * self.epsilon > 1.0:
            raise InfeasibleError(
                f"cardinality {len(subset)} * epsilon {self.epsilon} exceeds 1; "
                "the weight simplex is empty")
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "forecasts", F)
        object.__setattr__(self, "subset", subset)

    @property
    def cardinality(self):
        return len(self.subset)

    @property
    def n_experts(self):
        return self.forecasts.shape[1]


@dataclass(frozen=True)
class SubsetRidgeSolution:
    """Optimal weights (full length-M vector), objective and KKT certificate."""

    weights: np.ndarray
    objective: float
    kkt_residual: float

    def to_json(self):
        import json

        return json.dumps({
            "weights": [float(w) for w in self.weights],
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
        })


def snap_to_epsilon(x, epsilon):
    """Raise sub-epsilon weights to epsilon, paying from the largest weight."""
    out = np.asarray(x, dtype=np.float64).copy()
    low = out < epsilon
    if low.any():
        added = float(np.sum(epsilon - out[low]))
        out[low] = epsilon
        out[int(np.argmax(out))] -= added
    return out


def solve_subset_ridge(problem, x0=None):
    """Globally solve the subset shrinkage QP; see the module docstring.

    ``x0`` optionally warm-starts the active-set iteration with a feasible
    point on the subset (length-c array).
    """
    y = problem.targets
    F = problem.forecasts
    subset = np.asarray(problem.subset, dtype=np.int64)
    c = len(subset)
    lam = float(problem.shrinkage)
    tau = 1.0 / c

    A = F[:, subset]
    H = A.T @ A + lam * np.eye(c)
    a = A.T @ y + lam * tau
    snap = problem.epsilon <= SNAP_THRESHOLD
    lo = 0.0 if snap else problem.epsilon

    x, _nu, kkt, _ = kernels.qp_shrink_simplex(
        H, a, np.full(c, lo), 1.0, x0=x0, tol=kernels.DEFAULT_TOL)
    if snap:
        x = snap_to_epsilon(x, problem.epsilon)

    resid = y - A @ x
    dev = x - tau
    objective = float(resid @ resid + lam * (dev @ dev))

    weights = np.zeros(F.shape[1])
    weights[subset] = x
    return SubsetRidgeSolution(weights=weights, objective=objective,
                               kkt_residual=float(kkt))
