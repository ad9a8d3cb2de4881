"""Online aggregation of committee forecasts and regret accounting.

Four multiplicative-weights aggregators share one state machine:

* hedge with a two-round announcement delay: weights react to the loss from
  two rounds ago, the first two rounds stay uniform, and the learning rate
  is (2 / B_t) * sqrt(log(M) / t) with B_t the running estimate of the
  maximal per-round loss (initialized from the caller's guess B_1);
* hedge with a one-round delay ("delayed announcements"): reacts to the
  previous round's loss with rate (1 / B_t) * sqrt(2 log(M) / t);
* the two fictitious-play variants, which replace the latest loss in the
  exponent by the empirical average of all observed losses.

Two learning-rate schedules are provided.  "pseudocode" applies to the loss
from round s the rate computed after seeing losses through round s - 1,
exactly as the round-by-round recursion runs in real time.  "proof" lets
the rate for round s's loss incorporate that loss's own contribution to the
running maximum, which is the schedule under which the regret guarantees
are stated; the guarantee tests use it.

The average regret over T rounds is the mean squared decision loss minus
the best single column's mean loss.  Its guarantee at horizon T is
coef * Bbar_T * sqrt(log(M) / T), where Bbar_T is the realized maximal
loss and coef depends on how the initial guess B_1 relates to Bbar_T:
1 + 2 * Bbar_T / B_1 when B_1 underestimates, 3 * B_1 / Bbar_T when it
overestimates, and 3 when exact.  The one-round-delay variant divides the
whole bound by sqrt(2).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError

#: Jensen-gap bookkeeping across all runs (acceptance wants zero violations).
JENSEN_STATS = {"checks": 0, "violations": 0}

_HEDGE_VARIANTS = ("heca", "heca-delayed", "efp", "efp-delayed")


def learning_rate(delay, max_loss, m, t):
    """Step-t learning rate for the given announcement delay."""
    if delay == 2:
        return (2.0 / max_loss) * math.sqrt(math.log(m) / t)
    return (1.0 / max_loss) * math.sqrt(2.0 * math.log(m) / t)


@dataclass
class AggregatorState:
    """State carried between rounds; ``t`` is the next round to forecast."""

    m: int
    delay: int
    variant: str            # "hedge" or "efp"
    schedule: str           # "pseudocode" or "proof"
    t: int
    pi: np.ndarray
    omega: np.ndarray       # weight vector computed at round t - 1
    omega_prev: np.ndarray  # round t - 2 (partner chain under delay 2)
    B: float
    eta: float
    loss_history: list
    loss_sum: np.ndarray


def init_state(m, b1, delay, variant="hedge", schedule="pseudocode"):
    if m < 1:
        raise ValidationError("need at least one forecaster")
    if delay not in (1, 2):
        raise ValidationError("delay must be 1 or 2")
    if not (np.isfinite(b1) and b1 > 0):
        raise ValidationError("the initial maximal-loss estimate must be positive")
    if variant not in ("hedge", "efp"):
        raise ValidationError(f"unknown variant {variant!r}")
    if schedule not in ("pseudocode", "proof"):
        raise ValidationError(f"unknown schedule {schedule!r}")
    ones = np.ones(m)
    return AggregatorState(
        m=m, delay=delay, variant=variant, schedule=schedule, t=1,
        pi=ones / m, omega=ones.copy(), omega_prev=ones.copy(),
        B=float(b1), eta=learning_rate(delay, float(b1), m, 1),
        loss_history=[], loss_sum=np.zeros(m))


def _validated_loss(state, new_loss):
    loss = np.asarray(new_loss, dtype=np.float64)
    if loss.shape != (state.m,):
        raise ValidationError(f"loss vector must have length {state.m}")
    if not np.all(np.isfinite(loss)):
        raise ValidationError("loss entries must be finite")
    if (loss < 0).any():
        raise ValidationError("losses are squared errors and cannot be negative")
    return loss


def _step(state, new_loss, yhat_t):
    """One aggregator round; returns (forecast, next_state)."""
    yhat = np.asarray(yhat_t, dtype=np.float64)
    if yhat.shape != (state.m,):
        raise ValidationError(f"expected {state.m} forecasts, got {yhat.shape}")
    if not np.all(np.isfinite(yhat)):
        raise ValidationError("forecasts must be finite")

    t = state.t
    delay = state.delay
    history = state.loss_history
    loss_sum = state.loss_sum
    B_next, eta_next = state.B, state.eta

    if t <= delay:
        if new_loss is not None:
            raise ValidationError(f"round {t} precedes any observable loss")
        omega_t = np.ones(state.m)
    elif new_loss is None:
        # Target not realized yet: carry the chain forward without updating.
        omega_t = (state.omega_prev if delay == 2 else state.omega).copy()
    else:
        loss = _validated_loss(state, new_loss)
        s = t - delay
        history = history + [loss]
        loss_sum = loss_sum + loss
        if state.schedule == "proof":
            B_used = max(state.B, float(loss.max()))
            eta_used = learning_rate(delay, B_used, state.m, s)
        else:
            B_used = None
            eta_used = state.eta
        base = state.omega_prev if delay == 2 else state.omega
        if state.variant == "efp":
            exponent = (eta_used / s) * loss_sum
        else:
            exponent = eta_used * loss
        omega_t = base * np.exp(-exponent)
        omega_t = omega_t / omega_t.max()  # underflow guard; pi-invariant
        B_next = (max(state.B, float(loss.max()))
                  if B_used is None else B_used)
        eta_next = learning_rate(delay, B_next, state.m, s + 1)

    pi_t = omega_t / omega_t.sum()
    forecast = float(pi_t @ yhat)
    next_state = replace(
        state, t=t + 1, pi=pi_t, omega=omega_t, omega_prev=state.omega,
        B=B_next, eta=eta_next, loss_history=history, loss_sum=loss_sum)
    return forecast, next_state


def heca_step(state, new_loss, yhat_t):
    """Two-round-delay hedge step (uniform through round 2)."""
    if state.delay != 2 or state.variant != "hedge":
        raise ValidationError("state was initialized for a different variant")
    return _step(state, new_loss, yhat_t)


def heca_delayed_step(state, new_loss, yhat_t):
    """One-round-delay hedge step (uniform at round 1 only)."""
    if state.delay != 1 or state.variant != "hedge":
        raise ValidationError("state was initialized for a different variant")
    return _step(state, new_loss, yhat_t)


def efp_step(state, new_loss, yhat_t, delayed=False):
    """Fictitious-play step: exponent uses the average of observed losses."""
    expected = 1 if delayed else 2
    if state.delay != expected or state.variant != "efp":
        raise ValidationError("state was initialized for a different variant")
    return _step(state, new_loss, yhat_t)


def jensen_check(target, forecast, pi, losses):
    """Assert the mixture loss never beats its average: (y - pi'yhat)^2 <= pi'l."""
    mix = float(pi @ losses)
    own = (target - forecast) ** 2
    JENSEN_STATS["checks"] += 1
    if own > mix + 1e-12 * (1.0 + mix):
        JENSEN_STATS["violations"] += 1
        raise AssertionError(
            f"convexity violated: own loss {own} > mixture loss {mix}")


@dataclass
class RegretReport:
    """Losses, realized average regret, and the guarantee evaluation."""

    per_round_loss: np.ndarray
    committee_loss: np.ndarray
    avg_regret: float
    best_committee: int
    best_committee_avg_loss: float
    bbar: float
    bound: float
    bound_case: str
    gamma: float


@dataclass
class AggregatorRun:
    """Full trajectory of one online run plus its report."""

    variant: str
    forecasts: np.ndarray
    pis: np.ndarray
    b_path: np.ndarray
    eta_path: np.ndarray
    report: RegretReport


def average_regret(per_round_loss, committee_loss):
    """(mean decision loss) - (best column's mean loss); ties -> smallest c.

    Returns (avg_regret, best_committee) with the committee 1-indexed.
    """
    per = np.asarray(per_round_loss, dtype=np.float64)
    com = np.asarray(committee_loss, dtype=np.float64)
    if per.ndim != 1 or com.ndim != 2 or per.size == 0 or com.size == 0:
        raise ValidationError("need at least one round of losses")
    if com.shape[0] != per.shape[0]:
        raise ValidationError("loss arrays disagree on the number of rounds")
    means = com.mean(axis=0)
    best = int(np.argmin(means))  # first minimum = smallest committee
    return float(per.mean() - means[best]), best + 1


def theorem_bound(m, t, b1, bbar, variant="heca"):
    """Average-regret guarantee at horizon t; see the module docstring.

    Returns (value, case, gamma) where case tags whether b1 under- or
    over-estimated the realized maximum bbar ("underestimate",
    "overestimate", "exact") and gamma is the corresponding ratio.  The
    delayed variant is the plain bound divided by sqrt(2), exactly.
    """
    if m < 1 or t < 1:
        raise ValidationError("need m >= 1 forecasters and t >= 1 rounds")
    if not (np.isfinite(b1) and b1 > 0 and np.isfinite(bbar) and bbar > 0):
        raise ValidationError("loss bounds must be positive and finite")
    if variant not in ("heca", "heca-delayed", "delayed"):
        raise ValidationError(f"no guarantee defined for variant {variant!r}")
    base = math.sqrt(math.log(m) / t)
    if bbar > b1:
        case, gamma = "underestimate", bbar / b1
        value = (1.0 + 2.0 * gamma) * bbar * base
    elif b1 > bbar:
        case, gamma = "overestimate", b1 / bbar
        value = 3.0 * b1 * base  # equals 3 * gamma * bbar * base
    else:
        case, gamma = "exact", 1.0
        value = 3.0 * bbar * base
    if variant != "heca":
        value /= math.sqrt(2.0)
    return value, case, gamma


def _build_report(per_round, committee, b1, delay):
    avg, best = average_regret(per_round, committee)
    bbar = float(np.max(committee))
    if bbar > 0:
        bound, case, gamma = theorem_bound(
            committee.shape[1], committee.shape[0], b1, bbar,
            "heca" if delay == 2 else "heca-delayed")
    else:
        bound, case, gamma = None, None, None
    return RegretReport(per_round_loss=per_round, committee_loss=committee,
                        avg_regret=avg, best_committee=best,
                        best_committee_avg_loss=float(
                            committee[:, best - 1].mean()),
                        bbar=bbar, bound=bound, bound_case=case, gamma=gamma)


def run_aggregator(yhats, targets, b1, variant="heca", schedule="pseudocode",
                   losses=None):
    """Drive an aggregator over a forecast matrix round by round.

    yhats: T x M member forecasts; targets: length T, NaN allowed on a
    trailing unrealized stretch (those rounds still produce forecasts but
    trigger no weight updates and are excluded from the report).  When
    ``losses`` is given it overrides the squared errors computed from the
    targets; with targets absent entirely, decision losses fall back to the
    mixture loss pi' l (used for loss-matrix-only studies).
    """
    if variant not in _HEDGE_VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    yhats = np.asarray(yhats, dtype=np.float64)
    if yhats.ndim != 2:
        raise ValidationError("yhats must be T x M")
    n_rounds, m = yhats.shape
    delay = 1 if variant.endswith("delayed") else 2
    kind = "efp" if variant.startswith("efp") else "hedge"

    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (n_rounds,):
            raise ValidationError("targets must align with yhats rows")
        realized = np.isfinite(targets)
        if realized.any() and not realized[:int(np.flatnonzero(realized)[-1]) + 1].all():
            raise ValidationError("targets may be missing only at the tail")
    else:
        realized = np.ones(n_rounds, dtype=bool)

    if losses is None:
        if targets is None:
            raise ValidationError("need targets or an explicit loss matrix")
        losses = (targets[:, None] - yhats) ** 2
    else:
        losses = np.asarray(losses, dtype=np.float64)
        if losses.shape != yhats.shape:
            raise ValidationError("losses must have the same shape as yhats")
        if not np.all(np.isfinite(losses[realized])):
            raise ValidationError("losses must be finite on realized rounds")
        if (losses[realized] < 0).any():
            raise ValidationError("losses cannot be negative")

    state = init_state(m, b1, delay, kind, schedule)
    forecasts = np.empty(n_rounds)
    pis = np.empty((n_rounds, m))
    b_path = np.empty(n_rounds)
    eta_path = np.empty(n_rounds)
    per_round = []
    for i in range(n_rounds):
        t = i + 1
        s = t - delay  # 1-based index of the newly observable loss
        new_loss = losses[s - 1] if (s >= 1 and realized[s - 1]) else None
        forecast, state = _step(state, new_loss, yhats[i])
        forecasts[i] = forecast
        pis[i] = state.pi
        b_path[i] = state.B
        eta_path[i] = state.eta
        if realized[i]:
            if targets is not None:
                per_round.append((targets[i] - forecast) ** 2)
                jensen_check(targets[i], forecast, state.pi, losses[i])
            else:
                per_round.append(float(state.pi @ losses[i]))

    n_real = len(per_round)
    report = (_build_report(np.asarray(per_round), losses[:n_real], b1, delay)
              if n_real else None)
    return AggregatorRun(variant=variant, forecasts=forecasts, pis=pis,
                         b_path=b_path, eta_path=eta_path, report=report)


def vanilla_hedge_run(losses, yhats, b1, delayed=False, targets=None,
                      schedule="pseudocode"):
    """Hedge over raw expert forecasts (no committees); emits a RegretReport.

    ``losses`` may be None when ``targets`` is given, in which case squared
    errors are computed; otherwise the matrix drives the updates directly.
    """
    yhats = np.asarray(yhats, dtype=np.float64)
    if losses is not None:
        losses = np.asarray(losses, dtype=np.float64)
        if losses.shape != yhats.shape:
            raise ValidationError("losses and yhats must have the same shape")
    run = run_aggregator(yhats, targets, b1,
                         variant="heca-delayed" if delayed else "heca",
                         schedule=schedule, losses=losses)
    return run


def equal_weight_run(panel, span=None):
    """Per-round squared loss of the simple average of all experts."""
    lo, hi = panel.span_indices(span)
    if not panel.mask[lo:hi].all():
        raise ValidationError("equal-weight run requires an imputed panel")
    y = panel.target[lo:hi]
    if not np.all(np.isfinite(y)):
        raise ValidationError("targets must be realized over the span")
    return (y - panel.values[lo:hi].mean(axis=1)) ** 2
