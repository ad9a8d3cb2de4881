"""Forecast combination through egalitarian committees and online hedging.

The package forms, for every cardinality c, the committee of c experts whose
constrained ridge weights (shrunk toward the equal split 1/c) best fit a
rolling window, then aggregates the committees' forecasts online with a
family of multiplicative-weights rules whose average regret against the
best committee is guaranteed to vanish.

Modules: ``panel`` (data ingestion and diagnostics), ``ridge_qp`` (the
per-subset QP), ``subset_select`` (exhaustive and branch-and-bound subset
search), ``committees`` (rolling fits and shrinkage validation), ``online``
(aggregators, regret, guarantees), ``synthetic`` (seeded panels), ``cli``
(end-to-end experiments).  ``kernels`` selects the compiled accelerator or
its NumPy twin at import time.
"""

from . import kernels
from .committees import (CommitteeConfig, CommitteeForecasts, FitCache,
                         committee_round, committee_run, fit_committee,
                         first_feasible_round, select_lambda)
from .errors import (BurnInError, HecaError, InfeasibleError, ParseError,
                     ResourceBudgetError, ValidationError)
from .online import (AggregatorRun, AggregatorState, RegretReport,
                     average_regret, efp_step, equal_weight_run,
                     heca_delayed_step, heca_step, init_state, run_aggregator,
                     theorem_bound, vanilla_hedge_run)
from .panel import (ForecastPanel, PanelDiagnostics, diagnostics,
                    filter_experts, impute_missing, load_panel)
from .ridge_qp import (EPSILON_DEFAULT, SubsetRidgeProblem,
                       SubsetRidgeSolution, solve_subset_ridge)
from .subset_select import (CardinalityProblem, CardinalitySolution,
                            best_over_cardinalities, evaluate_objective,
                            solve_branch_bound, solve_exhaustive)

__version__ = "0.1.0"

KERNEL_BACKEND = kernels.BACKEND
