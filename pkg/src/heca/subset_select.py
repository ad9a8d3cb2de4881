"""Optimal expert-subset selection at a fixed cardinality.

Two interchangeable solvers find the cardinality-c subset whose shrinkage
regression (see ridge_qp) attains the smallest objective:

* solve_exhaustive scans every c-subset in colexicographic order, optionally
  partitioned into contiguous rank blocks processed by a thread pool; the
  reduction is a pure (objective, index-tuple) minimum, so the result is
  independent of the schedule and of the block count.
* solve_branch_bound explores an inclusion/exclusion tree.  A node fixes
  some experts in and some out; its lower bound solves the same QP on the
  whole candidate support with the shrinkage target 1/c kept fixed, minus
  the constant lambda * (k - c) / c^2 that separates a k-support relaxation
  from any of its c-support completions.  Nodes are pruned only when their
  bound is strictly worse than the incumbent (beyond a tie tolerance), so
  equal-objective subsets are still enumerated and the deterministic
  tie-break — lexicographically smallest sorted index tuple — matches the
  exhaustive solver exactly.

Both share the per-subset kernel, hence produce bit-identical numbers for
identical subsets.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InfeasibleError, ResourceBudgetError, ValidationError
from .ridge_qp import EPSILON_DEFAULT, SNAP_THRESHOLD, snap_to_epsilon

#: Exhaustive enumeration is refused above this many experts.
ENUMERATION_GUARD = 25

#: Bounds within this (relative) margin of the incumbent are explored, not
#: pruned, so exact objective ties keep their deterministic winner.
TIE_EPS = 1e-12


def resolve_workers(workers=None):
    """Worker count: explicit argument, else HECA_THREADS, else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("HECA_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"HECA_THREADS must be an integer: {env!r}") from exc
    return 1


@dataclass(frozen=True)
class CardinalityProblem:
    """A subset-selection instance: pick ``cardinality`` experts and weights."""

    targets: np.ndarray
    forecasts: np.ndarray
    shrinkage: float
    cardinality: int
    epsilon: float = EPSILON_DEFAULT

    def __post_init__(self):
        y = np.asarray(self.targets, dtype=np.float64)
        F = np.asarray(self.forecasts, dtype=np.float64)
        if y.ndim != 1 or F.ndim != 2 or F.shape[0] != y.shape[0]:
            raise ValidationError("targets must be length-r, forecasts r x M")
        if y.shape[0] < 1:
            raise ValidationError("window must contain at least one period")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(F))):
            raise ValidationError("window data must be finite")
        c = int(self.cardinality)
        m = F.shape[1]
        if not 1 <= c <= m:
            raise ValidationError(f"cardinality must be in 1..{m}, got {c}")
        if not np.isfinite(self.shrinkage) or self.shrinkage < 0:
            raise ValidationError("shrinkage must be finite and >= 0")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if c * self.epsilon > 1.0:
            raise InfeasibleError(
                f"cardinality {c} * epsilon {self.epsilon} exceeds 1")
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "forecasts", F)
        object.__setattr__(self, "cardinality", c)

    @property
    def n_experts(self):
        return self.forecasts.shape[1]


@dataclass
class CardinalitySolution:
    subset: tuple
    weights: np.ndarray
    objective: float
    kkt_residual: float
    nodes_explored: int = 0


@dataclass
class Gram:
    """Precomputed cross-products reused across subsets and lambdas."""

    FtF: np.ndarray
    FtY: np.ndarray

    @classmethod
    def of(cls, problem):
        F = problem.forecasts
        return cls(FtF=F.T @ F, FtY=F.T @ problem.targets)


def _finalize(problem, obj, subset, x, kkt, nodes=0):
    if problem.epsilon <= SNAP_THRESHOLD:
        x = snap_to_epsilon(x, problem.epsilon)
    weights = np.zeros(problem.n_experts)
    weights[np.asarray(subset, dtype=np.int64)] = x
    return CardinalitySolution(subset=tuple(int(j) for j in subset),
                               weights=weights, objective=float(obj),
                               kkt_residual=float(kkt), nodes_explored=nodes)


def _lo_for(problem):
    return 0.0 if problem.epsilon <= SNAP_THRESHOLD else problem.epsilon


def solve_exhaustive(problem, workers=None, gram=None):
    """Scan all C(M, c) subsets; ties go to the smallest sorted index tuple."""
    m = problem.n_experts
    c = problem.cardinality
    if m > ENUMERATION_GUARD:
        raise ResourceBudgetError(
            f"{m} experts exceed the enumeration guard ({ENUMERATION_GUARD}); "
            "use the branch-and-bound solver")
    gram = gram or Gram.of(problem)
    total = math.comb(m, c)
    tau = 1.0 / c
    lo = _lo_for(problem)
    args = (problem.forecasts, problem.targets, gram.FtF, gram.FtY,
            problem.shrinkage, tau, lo, c)

    workers = resolve_workers(workers)
    if workers == 1 or total < 64:
        obj, subset, x, kkt, n = kernels.best_subset_block(*args, 0, total)
        return _finalize(problem, obj, subset, x, kkt)

    n_blocks = min(workers * 4, total)
    edges = [total * i // n_blocks for i in range(n_blocks + 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda se: kernels.best_subset_block(*args, se[0], se[1]),
            zip(edges[:-1], edges[1:])))
    best = None
    kkt = 0.0
    n = 0
    for obj, subset, x, block_kkt, block_n in results:
        key = tuple(int(j) for j in subset)
        if best is None or obj < best[0] or (obj == best[0] and key < best[1]):
            best = (obj, key, x)
        kkt = max(kkt, block_kkt)
        n += block_n
    return _finalize(problem, best[0], best[1], best[2], kkt)


def _solve_leaf(problem, gram, subset_tuple):
    """Single-subset solve through the same kernel path as enumeration."""
    c = problem.cardinality
    rank = kernels.colex_rank(subset_tuple)
    obj, subset, x, kkt, _ = kernels.best_subset_block(
        problem.forecasts, problem.targets, gram.FtF, gram.FtY,
        problem.shrinkage, 1.0 / c, _lo_for(problem), c, rank, rank + 1)
    return obj, tuple(int(j) for j in subset), x, kkt


def solve_branch_bound(problem, hint=None, gram=None, on_node=None,
                       trace_path=None):
    """Branch-and-bound equivalent of solve_exhaustive (same tie-break).

    ``hint`` seeds the incumbent with a subset (e.g. the winner at the
    previous lambda on a warm-started grid).  ``on_node`` is a debug hook
    called as on_node(forced_in, undecided, bound) for every expanded node;
    ``trace_path`` appends one JSON line per expanded node to a file (the
    verbose search-tree dump).
    """
    if trace_path is not None:
        import json

        with open(trace_path, "a", encoding="utf-8") as fh:
            prev = on_node

            def dump(forced, undecided, bound, _fh=fh, _prev=prev):
                _fh.write(json.dumps({"forced_in": list(forced),
                                      "undecided": list(undecided),
                                      "bound": bound}) + "\n")
                if _prev is not None:
                    _prev(forced, undecided, bound)

            return _solve_branch_bound_impl(problem, hint, gram, dump)
    return _solve_branch_bound_impl(problem, hint, gram, on_node)


def _solve_branch_bound_impl(problem, hint, gram, on_node):
    m = problem.n_experts
    c = problem.cardinality
    gram = gram or Gram.of(problem)
    lam = problem.shrinkage
    tau = 1.0 / c
    lo_leaf = _lo_for(problem)
    F = problem.forecasts
    y = problem.targets

    best_obj = math.inf
    best_key = None
    best_x = None
    max_kkt = 0.0

    if hint is not None:
        key = tuple(sorted(int(j) for j in hint))
        if len(key) == c and 0 <= key[0] and key[-1] < m:
            obj, key, x, kkt = _solve_leaf(problem, gram, key)
            best_obj, best_key, best_x = obj, key, x
            max_kkt = max(max_kkt, kkt)

    def relaxation(support, forced_mask):
        """Lower bound over all c-subsets of ``support`` containing the
        forced members; returns (bound, weights-over-support)."""
        k = len(support)
        idx = np.asarray(support, dtype=np.int64)
        H = gram.FtF[np.ix_(idx, idx)].copy()
        H[np.diag_indices(k)] += lam
        a = gram.FtY[idx] + lam * tau
        lo = np.where(forced_mask, lo_leaf, 0.0)
        x, _nu, kkt, _ = kernels.qp_shrink_simplex(H, a, lo, 1.0)
        resid = y - F[:, idx] @ x
        dev = x - tau
        relaxed = float(resid @ resid + lam * (dev @ dev))
        # A c-support completion pays (k - c) fewer (0 - tau)^2 terms than
        # the k-support relaxation, hence the constant correction.
        return relaxed - lam * (k - c) * tau * tau, x, kkt

    # Node: (forced_in tuple, undecided tuple, parent bound)
    stack = [((), tuple(range(m)), -math.inf)]
    nodes = 0
    while stack:
        forced, undecided, parent_bound = stack.pop()
        nodes += 1
        tie_gap = TIE_EPS * (1.0 + abs(best_obj)) if best_key else math.inf
        if parent_bound >= best_obj + tie_gap:
            continue
        k = len(forced) + len(undecided)
        if len(forced) == c or k == c:
            leaf = tuple(sorted(forced + (undecided if k == c else ())))
            obj, key, x, kkt = _solve_leaf(problem, gram, leaf)
            max_kkt = max(max_kkt, kkt)
            if obj < best_obj or (obj == best_obj and key < best_key):
                best_obj, best_key, best_x = obj, key, x
            continue

        support = tuple(sorted(forced + undecided))
        forced_set = frozenset(forced)
        forced_mask = np.array([j in forced_set for j in support])
        bound, relax_x, kkt = relaxation(support, forced_mask)
        max_kkt = max(max_kkt, kkt)
        if on_node is not None:
            on_node(forced, undecided, bound)
        if bound >= best_obj + tie_gap:
            continue

        # Branch on the undecided expert with the largest relaxation weight
        # (ties to the smallest index); include-branch explored first.
        weight_of = dict(zip(support, relax_x))
        branch = max(undecided, key=lambda j: (weight_of[j], -j))
        rest = tuple(j for j in undecided if j != branch)
        if len(forced) + len(rest) >= c:
            stack.append((forced, rest, bound))
        stack.append((forced + (branch,), rest, bound))

    return _finalize(problem, best_obj, best_key, best_x, max_kkt, nodes)


def evaluate_objective(weights, problem, penalty="support"):
    """Objective of an arbitrary weight vector with target 1 / (its support).

    ``penalty="support"`` sums squared deviations over the nonzero entries
    only; ``penalty="full"`` additionally charges every zero entry its
    (0 - 1/k)^2 distance from the shared target, which shifts the value by
    the support-independent constant lambda * (M - k) / k^2.
    """
    b = np.asarray(weights, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != problem.n_experts:
        raise ValidationError("weights must be a length-M vector")
    if not np.all(np.isfinite(b)):
        raise ValidationError("weights must be finite")
    support = b != 0.0
    k = int(support.sum())
    if k == 0:
        raise ValidationError("weights are all zero; the shrinkage target "
                              "1/||b||_0 is undefined")
    tau = 1.0 / k
    resid = problem.targets - problem.forecasts @ b
    dev = b[support] - tau
    value = float(resid @ resid + problem.shrinkage * (dev @ dev))
    if penalty == "full":
        value += problem.shrinkage * (problem.n_experts - k) * tau * tau
    elif penalty != "support":
        raise ValidationError("penalty must be 'support' or 'full'")
    return value


def best_over_cardinalities(targets, forecasts, shrinkage,
                            epsilon=EPSILON_DEFAULT, backend="exhaustive",
                            penalty="support", workers=None):
    """Solve the selection at every cardinality and keep the best objective.

    Convenience driver over the partition of the weight space by support
    size; the online pipeline keeps all cardinalities instead.  Ties across
    cardinalities go to the smaller one.  Returns (cardinality, solution).
    """
    F = np.asarray(forecasts, dtype=np.float64)
    best = None
    for c in range(1, F.shape[1] + 1):
        problem = CardinalityProblem(targets=targets, forecasts=F,
                                     shrinkage=shrinkage, cardinality=c,
                                     epsilon=epsilon)
        sol = (solve_exhaustive(problem, workers=workers)
               if backend == "exhaustive" else solve_branch_bound(problem))
        score = evaluate_objective(sol.weights, problem, penalty=penalty)
        if best is None or score < best[0]:
            best = (score, c, sol)
    return best[1], best[2]
