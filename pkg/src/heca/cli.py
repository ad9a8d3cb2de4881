"""Command-line entry point: end-to-end experiments from a config or flags.

Pipeline: load -> filter -> impute -> diagnose -> committees -> aggregate ->
report.  Settings come from an optional flat key=value config file with
command-line flags overriding; every tuning parameter has a flag and the
defaults are the standard ones (window 16, one validation round, lambda grid
0.01:0.01:2.0, epsilon 5e-324).

Exit codes: 0 success, 2 validation error, 3 burn-in error, 4 resource
budget exceeded.  HECA_THREADS caps worker threads.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import online
from .committees import CommitteeConfig, FitCache, committee_run, first_feasible_round
from .errors import BurnInError, ResourceBudgetError, ValidationError
from .panel import diagnostics, filter_experts, impute_missing, load_panel
from .ridge_qp import EPSILON_DEFAULT
from .synthetic import SyntheticSpec, write_panel_csv

ALGORITHMS = ("heca", "heca-delayed", "efp", "efp-delayed",
              "hedge", "hedge-delayed", "equal-weight")

_DELAYED = ("heca-delayed", "efp-delayed", "hedge-delayed")


def parse_lambda_grid(text):
    """Parse a 'lo:step:hi' grid spec into an ascending tuple."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValidationError(f"lambda grid must be lo:step:hi, got {text!r}")
    try:
        lo, step, hi = (float(p) for p in parts)
    except ValueError as exc:
        raise ValidationError(f"non-numeric lambda grid {text!r}") from exc
    if lo <= 0 or step <= 0 or hi < lo:
        raise ValidationError("lambda grid needs lo > 0, step > 0, hi >= lo")
    n = int(math.floor((hi - lo) / step + 0.5)) + 1
    return tuple(round(lo + i * step, 12) for i in range(n))


@dataclass
class ExperimentConfig:
    data: str = None
    span: tuple = None            # (first, last) period labels or None
    algo: str = "heca"
    window: int = 16
    val_window: int = 1
    lambda_grid: tuple = field(default_factory=lambda: parse_lambda_grid("0.01:0.01:2.0"))
    lag: int = None               # default derived from the algorithm
    epsilon: float = EPSILON_DEFAULT
    b1: object = "auto"
    backend: str = "exhaustive"
    schedule: str = "pseudocode"
    out: str = "heca-out"
    pretty: bool = False
    force_lag: bool = False

    def resolved_lag(self):
        if self.lag is not None:
            return self.lag
        return 1 if self.algo in _DELAYED else 2

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algo!r}; "
                                  f"choose from {', '.join(ALGORITHMS)}")
        if self.data is None:
            raise ValidationError("no input data; pass --data or a config file")
        lag = self.resolved_lag()
        if self.algo != "equal-weight" and not self.force_lag:
            want = 1 if self.algo in _DELAYED else 2
            if lag != want:
                raise ValidationError(
                    f"{self.algo} announces with a {want}-round delay and "
                    f"needs lag {want}, got {lag}; pass --force-lag to override")
        if self.b1 != "auto":
            try:
                b1 = float(self.b1)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"b1 must be 'auto' or a number, "
                                      f"got {self.b1!r}") from exc
            if not b1 > 0:
                raise ValidationError("b1 must be positive")
        if self.schedule not in ("pseudocode", "proof"):
            raise ValidationError("schedule must be 'pseudocode' or 'proof'")


def read_config_file(path):
    """Flat key=value file; '#' starts a comment; keys use the flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{i}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def auto_b1(panel, t1):
    """Max individual squared loss over the realized periods before round t1."""
    y = panel.target[:t1]
    realized = np.isfinite(y)
    if not realized.any():
        raise ValidationError("b1=auto needs realized targets before the "
                              "first round; pass an explicit --b1")
    errs = (y[realized, None] - panel.values[:t1][realized]) ** 2
    return float(errs.max())


def _prepare_panel(config):
    panel = load_panel(config.data)
    if config.span is not None:
        lo, hi = panel.span_indices(config.span)
        panel = panel.slice_periods(lo, hi)
    panel = filter_experts(panel)
    panel = impute_missing(panel)
    return panel


@dataclass
class ExperimentResult:
    summary: dict
    rounds: dict
    tables: dict
    out_dir: str


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def _write_pretty(path, header, rows):
    cells = [header] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in cells:
            fh.write("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n")


def _diagnostics_artifacts(panel, out_dir, pretty):
    last = panel.last_realized()
    diag = None
    if last >= 1:
        diag = diagnostics(panel, (panel.periods[0], panel.periods[last]))
        _write_csv(os.path.join(out_dir, "diagnostics_variances.csv"),
                   list(panel.experts),
                   [[_fmt(v) for v in diag.error_variances]])
        _write_csv(os.path.join(out_dir, "diagnostics_correlations.csv"),
                   list(panel.experts),
                   [[_fmt(v) for v in row] for row in diag.error_correlations])
        with open(os.path.join(out_dir, "diagnostics.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"condition_number": diag.condition_number}, fh,
                      sort_keys=True)
            fh.write("\n")
    return diag


def run_experiment(config):
    """Execute the configured experiment; writes artifacts, returns a result."""
    config.validate()
    panel = _prepare_panel(config)
    os.makedirs(config.out, exist_ok=True)
    diag = _diagnostics_artifacts(panel, config.out, config.pretty)

    lag = config.resolved_lag()
    cc = CommitteeConfig(window=config.window, val_window=config.val_window,
                         lambda_grid=config.lambda_grid, lag=lag,
                         epsilon=config.epsilon, backend=config.backend)
    t1 = first_feasible_round(cc)
    if t1 >= panel.n_periods:
        raise BurnInError(
            f"burn-in needs {t1} periods before the first round but the "
            f"panel has only {panel.n_periods}; the evaluation span must "
            f"start at least {t1} periods before its first forecast round",
            first_feasible=None)

    m = panel.n_experts
    b1 = auto_b1(panel, t1) if config.b1 == "auto" else float(config.b1)

    committee_rows = None
    if config.algo in ("heca", "heca-delayed", "efp", "efp-delayed"):
        rounds = committee_run(panel, cc, cache=FitCache())
        yhats = np.vstack([r.yhat for r in rounds])
        labels = [r.period for r in rounds]
        idx = [r.round_index for r in rounds]
        committee_rows = rounds
        run = online.run_aggregator(yhats, panel.target[idx], b1,
                                    variant=config.algo,
                                    schedule=config.schedule)
    elif config.algo in ("hedge", "hedge-delayed"):
        stop = min(panel.n_periods - 1, panel.last_realized() + lag)
        if t1 > stop:
            raise BurnInError("no feasible rounds after burn-in",
                              first_feasible=t1)
        idx = list(range(t1, stop + 1))
        labels = [panel.periods[i] for i in idx]
        yhats = panel.values[idx]
        run = online.vanilla_hedge_run(
            None, yhats, b1, delayed=(config.algo == "hedge-delayed"),
            targets=panel.target[idx], schedule=config.schedule)
    else:  # equal-weight
        stop = panel.last_realized()
        if t1 > stop:
            raise BurnInError("no realized rounds after burn-in",
                              first_feasible=t1)
        idx = list(range(t1, stop + 1))
        labels = [panel.periods[i] for i in idx]
        losses = online.equal_weight_run(
            panel, (panel.periods[t1], panel.periods[stop]))
        forecasts = panel.values[idx].mean(axis=1)
        run = None

    # Per-round table and summary
    if run is not None:
        report = run.report
        targets = panel.target[idx]
        realized = np.isfinite(targets)
        n_real = int(realized.sum())
        loss_col = np.full(len(idx), np.nan)
        if report is not None:
            loss_col[:n_real] = report.per_round_loss
        pis = run.pis
        rounds_rows = []
        for i, label in enumerate(labels):
            rounds_rows.append(
                [i + 1, _fmt(run.forecasts[i]),
                 _fmt(targets[i]) if realized[i] else "",
                 _fmt(loss_col[i]) if realized[i] else ""]
                + [_fmt(p) for p in pis[i]]
                + [_fmt(run.b_path[i]), _fmt(run.eta_path[i])])
        algo_losses = loss_col[:n_real]
        summary = {
            "algorithm": config.algo,
            "rounds": n_real,
            "first_round_period": labels[0] if labels else None,
            "avg_regret": report.avg_regret if report else None,
            "best_committee": report.best_committee if report else None,
            "Bbar_T": report.bbar if report else None,
            "bound": report.bound if report else None,
            "bound_case": report.bound_case if report else None,
            "gamma": report.gamma if report else None,
            "avg_loss": float(np.mean(algo_losses)) if n_real else None,
        }
    else:
        n_real = len(idx)
        rounds_rows = []
        for i, label in enumerate(labels):
            rounds_rows.append(
                [i + 1, _fmt(forecasts[i]), _fmt(panel.target[idx[i]]),
                 _fmt(losses[i])] + [_fmt(1.0 / m)] * m + ["", ""])
        algo_losses = losses
        summary = {
            "algorithm": "equal-weight", "rounds": n_real,
            "first_round_period": labels[0] if labels else None,
            "avg_regret": None, "best_committee": None, "Bbar_T": None,
            "bound": None, "bound_case": None, "gamma": None,
            "avg_loss": float(np.mean(losses)) if n_real else None,
        }
    if diag is not None:
        summary["condition_number"] = diag.condition_number

    header = (["t", "forecast", "target", "loss"]
              + [f"pi_{c}" for c in range(1, m + 1)] + ["B_t", "eta_t"])
    _write_csv(os.path.join(config.out, "rounds.csv"), header, rounds_rows)
    if config.pretty:
        _write_pretty(os.path.join(config.out, "rounds.txt"), header, rounds_rows)

    with open(os.path.join(config.out, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")

    tables = _comparison_tables(config, panel, t1, idx, labels, algo_losses,
                                n_real, b1)
    if committee_rows is not None:
        _write_committee_audit(config.out, committee_rows)

    return ExperimentResult(summary=summary,
                            rounds={"header": header, "rows": rounds_rows},
                            tables=tables, out_dir=config.out)


def _comparison_tables(config, panel, t1, idx, labels, algo_losses, n_real, b1):
    """Loss, cumulative and hedge-comparison tables over realized rounds."""
    out = {}
    real_idx = idx[:n_real]
    real_labels = labels[:n_real]
    if n_real == 0:
        return out
    ew = online.equal_weight_run(
        panel, (panel.periods[real_idx[0]], panel.periods[real_idx[-1]]))

    rows = []
    for i in range(n_real):
        diff = algo_losses[i] - ew[i]
        rows.append([i + 1, real_labels[i], _fmt(algo_losses[i]),
                     _fmt(ew[i]), _fmt(diff)])
    header = ["t", "period", f"{config.algo}_loss", "equal_weight_loss",
              "difference"]
    _write_csv(os.path.join(config.out, "table_losses.csv"), header, rows)
    if config.pretty:
        _write_pretty(os.path.join(config.out, "table_losses.txt"), header, rows)
    out["losses"] = (header, rows)

    cum_a = np.cumsum(algo_losses)
    cum_e = np.cumsum(ew)
    rows = []
    for i in range(n_real):
        rows.append([i + 1, real_labels[i], _fmt(cum_a[i]), _fmt(cum_e[i]),
                     _fmt(cum_a[i] / (i + 1) - cum_e[i] / (i + 1))])
    header = ["t", "period", f"cum_{config.algo}_loss",
              "cum_equal_weight_loss", "avg_loss_difference"]
    _write_csv(os.path.join(config.out, "table_cumulative.csv"), header, rows)
    if config.pretty:
        _write_pretty(os.path.join(config.out, "table_cumulative.txt"),
                      header, rows)
    out["cumulative"] = (header, rows)

    if config.algo in ("heca", "heca-delayed", "efp", "efp-delayed"):
        hedge_run = online.vanilla_hedge_run(
            None, panel.values[real_idx], b1,
            delayed=config.algo.endswith("delayed"),
            targets=panel.target[real_idx], schedule=config.schedule)
        hl = hedge_run.report.per_round_loss
        rows = []
        for i in range(n_real):
            rows.append([i + 1, real_labels[i], _fmt(hl[i]),
                         _fmt(algo_losses[i]), _fmt(algo_losses[i] - hl[i])])
        header = ["t", "period", "hedge_loss", f"{config.algo}_loss",
                  "difference"]
        _write_csv(os.path.join(config.out, "table_hedge.csv"), header, rows)
        if config.pretty:
            _write_pretty(os.path.join(config.out, "table_hedge.txt"),
                          header, rows)
        out["hedge"] = (header, rows)
    return out


def _write_committee_audit(out_dir, rounds):
    path = os.path.join(out_dir, "committees.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for r in rounds:
            fh.write(json.dumps({
                "t": r.round_index, "period": r.period,
                "lambda_hat": [float(v) for v in r.lambda_hat],
                "members": [[int(j) for j in s] for s in r.members],
                "weights": [[float(w) for w in row] for row in r.weights],
                "yhat": [float(v) for v in r.yhat],
            }, sort_keys=True) + "\n")


def build_parser():
    p = argparse.ArgumentParser(
        prog="heca",
        description="Egalitarian-committee forecast combination with online "
                    "hedge aggregation")
    p.add_argument("config", nargs="?", help="flat key=value config file")
    p.add_argument("--data", help="panel CSV (period,target,experts...)")
    p.add_argument("--span", help="evaluation span START:END (period labels)")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--window", type=int, help="estimation window length r")
    p.add_argument("--val-window", type=int, help="validation rounds")
    p.add_argument("--lambda-grid", help="shrinkage grid lo:step:hi")
    p.add_argument("--lag", type=int, choices=(1, 2))
    p.add_argument("--epsilon", type=float, help="selected-weight lower bound")
    p.add_argument("--b1", help="'auto' or a positive number")
    p.add_argument("--backend", choices=("exhaustive", "branch-bound"))
    p.add_argument("--schedule", choices=("pseudocode", "proof"),
                   help="learning-rate schedule")
    p.add_argument("--out", help="output directory (or file for "
                                 "--emit-synthetic)")
    p.add_argument("--emit-synthetic", metavar="SPEC",
                   help="write a synthetic panel CSV and exit")
    p.add_argument("--pretty", action="store_true",
                   help="also write aligned-text tables")
    p.add_argument("--force-lag", action="store_true",
                   help="allow a lag inconsistent with the algorithm delay")
    return p


_CONFIG_COERCERS = {
    "data": str, "algo": str, "backend": str, "schedule": str, "out": str,
    "b1": str, "window": int, "val_window": int, "lag": int,
    "epsilon": float, "lambda_grid": parse_lambda_grid,
    "span": lambda s: tuple(s.split(":", 1)),
    "pretty": lambda s: s.lower() in ("1", "true", "yes"),
    "force_lag": lambda s: s.lower() in ("1", "true", "yes"),
}


def build_config(args):
    config = ExperimentConfig()
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key not in _CONFIG_COERCERS:
                raise ValidationError(f"unknown config key {key!r}")
            setattr(config, key, _CONFIG_COERCERS[key](value))
    for key in ("data", "algo", "window", "val_window", "lag", "epsilon",
                "backend", "schedule", "out"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    if args.span is not None:
        parts = args.span.split(":", 1)
        if len(parts) != 2:
            raise ValidationError("span must be START:END")
        config.span = (parts[0], parts[1])
    if args.lambda_grid is not None:
        config.lambda_grid = parse_lambda_grid(args.lambda_grid)
    if args.b1 is not None:
        config.b1 = args.b1
    if args.pretty:
        config.pretty = True
    if args.force_lag:
        config.force_lag = True
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.emit_synthetic is not None:
            spec = SyntheticSpec.parse(args.emit_synthetic)
            path = args.out or "synthetic_panel.csv"
            write_panel_csv(path, spec)
            print(path)
            return 0
        config = build_config(args)
        result = run_experiment(config)
        print(json.dumps(result.summary, sort_keys=True))
        return 0
    except ResourceBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except BurnInError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
