"""Rolling formation of egalitarian committees and their forecasts.

For every round t and every cardinality c, the committee of size c is the
optimal support of the subset shrinkage regression fitted on the window of
periods t-l-r+1 .. t-l (oldest first), where l is the announcement lag and
r the window length.  The shrinkage intensity is validated per (t, c) by
replaying recent rounds: lambda_hat minimizes the sum over the last
r_lambda rounds of the squared one-step error that the weights fitted *at
those rounds* with that lambda would have produced.  Validation therefore
only ever touches information available at the round being replayed.

Fits are memoized in a FitCache keyed (round, cardinality, lambda); the
cache is pure memoization, so results with and without it are bit-identical.
Grid fits within a round are independent and may be computed by a thread
pool (HECA_THREADS); the (round, cardinality) task order fixes all
tie-breaks, so results do not depend on the schedule.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BurnInError, ValidationError
from .ridge_qp import EPSILON_DEFAULT
from .subset_select import (CardinalityProblem, Gram, resolve_workers,
                            solve_branch_bound, solve_exhaustive)

#: Paper-default tuning: 16-quarter window, 1 validation round,
#: lambda grid 0.01, 0.02, ..., 2.00.
DEFAULT_LAMBDA_GRID = tuple(round(0.01 * g, 10) for g in range(1, 201))


@dataclass(frozen=True)
class CommitteeConfig:
    window: int = 16
    val_window: int = 1
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    lag: int = 2
    epsilon: float = EPSILON_DEFAULT
    backend: str = "exhaustive"
    workers: int = None

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        if self.val_window < 1:
            raise ValidationError("val_window must be >= 1")
        if self.lag not in (1, 2):
            raise ValidationError("lag must be 1 or 2")
        grid = tuple(float(g) for g in self.lambda_grid)
        if not grid:
            raise ValidationError("lambda grid must be non-empty")
        if any(g <= 0 for g in grid):
            raise ValidationError("lambda grid values must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("lambda grid must be strictly ascending")
        if self.backend not in ("exhaustive", "branch-bound"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        object.__setattr__(self, "lambda_grid", grid)


@dataclass
class CommitteeForecasts:
    """Round output: one forecast, member set, lambda and weight row per c."""

    round_index: int
    period: str
    yhat: np.ndarray
    members: list
    lambda_hat: np.ndarray
    weights: np.ndarray


class FitCache:
    """Memoizes window slices, Gram products and per-(t, c, lambda) fits."""

    def __init__(self):
        self.fits = {}
        self.windows = {}

    def window(self, panel, t, config):
        key = t
        if key not in self.windows:
            lo = t - config.lag - config.window + 1
            hi = t - config.lag + 1
            y = panel.target[lo:hi]
            F = panel.values[lo:hi]
            self.windows[key] = (y, F, Gram(FtF=F.T @ F, FtY=F.T @ y))
        return self.windows[key]

    def get(self, key):
        return self.fits.get(key)

    def put(self, key, solution):
        self.fits[key] = solution

    def update(self, mapping):
        self.fits.update(mapping)


def first_feasible_round(config):
    """Smallest 0-based round index with full estimation+validation history."""
    return 2 * config.lag + config.window + config.val_window - 2


def last_feasible_round(panel, config):
    """Largest round index that can still be forecast (lag-delayed targets)."""
    return min(panel.n_periods - 1, panel.last_realized() + config.lag)


def _check_window(panel, t, config, need_validation):
    """Raise BurnInError unless round t has the history it needs."""
    first = (first_feasible_round(config) if need_validation
             else config.lag + config.window - 1)
    ok = t >= first and t - config.lag <= panel.last_realized() and t < panel.n_periods
    if not ok:
        label = (panel.periods[first] if first < panel.n_periods else
                 f"{first - panel.n_periods + 1} periods past the panel end")
        raise BurnInError(
            f"round {t} lacks history: first feasible round is index {first} "
            f"({label}), and targets must be realized through round - "
            f"{config.lag}", first_feasible=first)


def _fit(panel, t, c, lam, config, cache, hint=None):
    y, F, gram = cache.window(panel, t, config)
    problem = CardinalityProblem(targets=y, forecasts=F, shrinkage=lam,
                                 cardinality=c, epsilon=config.epsilon)
    if config.backend == "branch-bound":
        return solve_branch_bound(problem, hint=hint, gram=gram)
    return solve_exhaustive(problem, workers=1, gram=gram)


def fit_committee(panel, t, c, lam, config, cache=None):
    """Fit the size-c committee at round t with a fixed shrinkage intensity."""
    if not panel.is_complete():
        raise ValidationError("panel must be imputed before fitting")
    _check_window(panel, t, config, need_validation=False)
    cache = cache if cache is not None else FitCache()
    key = (t, c, float(lam))
    sol = cache.get(key)
    if sol is None:
        sol = _fit(panel, t, c, lam, config, cache)
        cache.put(key, sol)
    return sol


def _grid_task(panel, t, c, config, cache):
    """Compute the missing lambda-grid fits for one (round, cardinality).

    The grid is walked in ascending order; under the branch-and-bound
    backend each solve seeds the next one's incumbent with its subset.
    """
    out = {}
    hint = None
    for lam in config.lambda_grid:
        key = (t, c, lam)
        sol = cache.get(key)
        if sol is None:
            sol = out.get(key)
        if sol is None:
            sol = _fit(panel, t, c, lam, config, cache, hint=hint)
            out[key] = sol
        hint = sol.subset
    return out


def _ensure_grids(panel, rounds, config, cache):
    tasks = []
    for t in sorted(set(rounds)):
        _check_window(panel, t, config, need_validation=False)
        cache.window(panel, t, config)  # precompute Gram on the main thread
        for c in range(1, panel.n_experts + 1):
            if any(cache.get((t, c, lam)) is None for lam in config.lambda_grid):
                tasks.append((t, c))
    if not tasks:
        return
    workers = resolve_workers(config.workers)
    if workers == 1 or len(tasks) == 1:
        results = [_grid_task(panel, t, c, config, cache) for t, c in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda tc: _grid_task(panel, tc[0], tc[1], config, cache),
                tasks))
    for res in results:
        cache.update(res)


def select_lambda(panel, t, c, config, cache=None):
    """Validated shrinkage intensity for round t, cardinality c.

    Minimizes the recent one-step validation loss over the grid; exact ties
    go to the smallest lambda.  A singleton grid returns immediately.
    """
    grid = config.lambda_grid
    if len(grid) == 1:
        return grid[0]
    if not panel.is_complete():
        raise ValidationError("panel must be imputed before fitting")
    _check_window(panel, t, config, need_validation=True)
    cache = cache if cache is not None else FitCache()
    val_rounds = [t - s for s in range(config.lag,
                                       config.lag + config.val_window)]
    _ensure_grids(panel, val_rounds, config, cache)

    losses = np.zeros(len(grid))
    for v in val_rounds:
        y_v = panel.target[v]
        f_v = panel.values[v]
        for i, lam in enumerate(grid):
            w = cache.get((v, c, lam)).weights
            losses[i] += (y_v - f_v @ w) ** 2
    return grid[int(np.argmin(losses))]


def committee_round(panel, t, config, cache=None):
    """All M committee forecasts for round t (lambda selection included).

    Also fits the full lambda grid at t so later rounds' validations reuse
    the cached paths.  The forecast uses only f_t and windows ending at
    t - lag, never the round's own target.
    """
    if not panel.is_complete():
        raise ValidationError("panel must be imputed before fitting")
    _check_window(panel, t, config, need_validation=True)
    cache = cache if cache is not None else FitCache()
    m = panel.n_experts

    rounds = [t] + [t - s for s in range(config.lag,
                                         config.lag + config.val_window)]
    _ensure_grids(panel, rounds, config, cache)

    f_t = panel.values[t]
    yhat = np.empty(m)
    lambda_hat = np.empty(m)
    members = []
    weights = np.empty((m, m))
    for c in range(1, m + 1):
        lam = select_lambda(panel, t, c, config, cache)
        sol = cache.get((t, c, lam))
        lambda_hat[c - 1] = lam
        members.append(sol.subset)
        weights[c - 1] = sol.weights
        yhat[c - 1] = float(f_t @ sol.weights)
    return CommitteeForecasts(round_index=t, period=panel.periods[t],
                              yhat=yhat, members=members,
                              lambda_hat=lambda_hat, weights=weights)


def committee_run(panel, config, start=None, stop=None, cache=None):
    """committee_round over start..stop (defaults: full feasible range)."""
    cache = cache if cache is not None else FitCache()
    if start is None:
        start = first_feasible_round(config)
    stop = last_feasible_round(panel, config) if stop is None else stop
    if start > stop:
        raise BurnInError(
            f"no feasible rounds: burn-in needs index {start} but the panel "
            f"supports forecasts only through index {stop}",
            first_feasible=start if start < panel.n_periods else None)
    return [committee_round(panel, t, config, cache)
            for t in range(start, stop + 1)]
