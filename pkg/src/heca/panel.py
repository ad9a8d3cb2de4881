"""Expert-forecast panels: loading, filtering, imputation, diagnostics.

A panel holds one forecast per (period, expert) cell plus the realized
target series.  Survey panels are typically unbalanced — experts enter,
exit and re-enter — so cells may be missing.  The cleaning rules here:

* experts with two consecutive missing quarters over the evaluation span
  are dropped entirely;
* each remaining missing cell is filled with the simple average of the
  same period's reported forecasts (retained experts only).

All operations are pure: they return new panels and never mutate inputs.

CSV format: header ``period,target,<expert1>,<expert2>,...``, UTF-8, '.'
decimal separator, empty field = missing.  Target cells may be empty only
at the tail (horizons not yet realized).  Period labels of the form
``YYYYQn`` are ordered as calendar quarters; any other labels are accepted
as opaque, in file order.
"""

import csv
import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


def parse_period(label):
    """Quarter label -> integer index (year*4 + quarter - 1), else None."""
    m = _QUARTER_RE.match(label.strip())
    if not m:
        return None
    return int(m.group(1)) * 4 + int(m.group(2)) - 1


@dataclass(frozen=True)
class ForecastPanel:
    """Immutable time-by-expert forecast panel with aligned targets.

    values[t, m] is finite exactly where mask[t, m] is True; target may be
    NaN only on a trailing stretch of unrealized periods.
    """

    periods: tuple
    experts: tuple
    values: np.ndarray
    mask: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        target = np.asarray(self.target, dtype=np.float64)
        t, m = values.shape
        if len(self.periods) != t or len(self.experts) != m:
            raise ValidationError("panel label/array shape mismatch")
        if mask.shape != (t, m) or target.shape != (t,):
            raise ValidationError("panel array shape mismatch")
        if not np.all(np.isfinite(values[mask])):
            raise ValidationError("reported forecasts must be finite")
        if len(set(self.periods)) != t:
            raise ValidationError("duplicate period label")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "periods", tuple(self.periods))
        object.__setattr__(self, "experts", tuple(self.experts))

    @property
    def n_periods(self):
        return len(self.periods)

    @property
    def n_experts(self):
        return len(self.experts)

    def period_index(self, label):
        try:
            return self.periods.index(label)
        except ValueError:
            raise ValidationError(f"period {label!r} not in panel") from None

    def realized(self):
        """Boolean vector: target known at this period."""
        return np.isfinite(self.target)

    def last_realized(self):
        """Index of the last realized target, or -1."""
        idx = np.flatnonzero(self.realized())
        return int(idx[-1]) if idx.size else -1

    def span_indices(self, span=None):
        """(start, stop) half-open index range for a (first, last) label pair."""
        if span is None:
            return 0, self.n_periods
        lo = self.period_index(span[0])
        hi = self.period_index(span[1])
        if hi < lo:
            raise ValidationError(f"span {span[0]}..{span[1]} is reversed")
        return lo, hi + 1

    def is_complete(self):
        return bool(self.mask.all())

    def slice_periods(self, lo, hi):
        """New panel restricted to the half-open period index range [lo, hi)."""
        if not 0 <= lo < hi <= self.n_periods:
            raise ValidationError(f"period range [{lo}, {hi}) out of bounds")
        return ForecastPanel(periods=self.periods[lo:hi], experts=self.experts,
                             values=self.values[lo:hi], mask=self.mask[lo:hi],
                             target=self.target[lo:hi])


@dataclass(frozen=True)
class PanelDiagnostics:
    """Forecast-error second moments and the design condition number."""

    error_variances: np.ndarray
    error_correlations: np.ndarray
    condition_number: float


def load_panel(path, fmt="csv"):
    """Read a panel file; see the module docstring for the CSV layout."""
    if fmt != "csv":
        raise ValidationError(f"unknown panel format {fmt!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise ValidationError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0] != "period" or header[1] != "target":
        raise ValidationError(
            f"{path}: header must be 'period,target,<expert>,...', got {header}")
    experts = tuple(header[2:])

    periods, target, values, mask = [], [], [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i} has {len(row)} cells, "
                             f"expected {len(header)}")
        label = row[0].strip()
        if not label:
            raise ParseError(f"{path}: row {i} has an empty period label")
        periods.append(label)

        def cell(text, col):
            text = text.strip()
            if not text:
                return np.nan
            try:
                return float(text)
            except ValueError:
                raise ParseError(f"{path}: row {i}, column {col!r}: "
                                 f"cannot parse {text!r} as a number") from None

        target.append(cell(row[1], "target"))
        values.append([cell(row[1 + j + 1], experts[j])
                       for j in range(len(experts))])
        mask.append([np.isfinite(v) for v in values[-1]])

    if len(set(periods)) != len(periods):
        dup = sorted({p for p in periods if periods.count(p) > 1})
        raise ValidationError(f"{path}: duplicate period label {dup[0]!r}")

    codes = [parse_period(p) for p in periods]
    if all(c is not None for c in codes):
        if any(b <= a for a, b in zip(codes, codes[1:])):
            raise ValidationError(f"{path}: quarter labels must be strictly "
                                  "increasing")

    target = np.asarray(target, dtype=np.float64)
    realized = np.isfinite(target)
    if realized.any():
        last = int(np.flatnonzero(realized)[-1])
        if not realized[:last + 1].all():
            hole = periods[int(np.flatnonzero(~realized[:last + 1])[0])]
            raise ValidationError(
                f"{path}: target missing in the interior at period {hole}; "
                "only the tail may be unrealized")

    return ForecastPanel(periods=tuple(periods), experts=experts,
                         values=np.asarray(values), mask=np.asarray(mask),
                         target=target)


def filter_experts(panel, span=None):
    """Drop experts missing in two consecutive periods of the span.

    Membership is decided per expert from its own mask column alone; the
    retained columns keep their original order.
    """
    lo, hi = panel.span_indices(span)
    if hi - lo < 1:
        raise ValidationError("span is empty")
    sub = panel.mask[lo:hi]
    missing = ~sub
    if hi - lo == 1:
        keep = np.ones(panel.n_experts, dtype=bool)
    else:
        keep = ~(missing[:-1] & missing[1:]).any(axis=0)
    if not keep.any():
        raise ValidationError("every expert has two consecutive missing "
                              "periods in the span; nothing to retain")
    idx = np.flatnonzero(keep)
    return ForecastPanel(periods=panel.periods,
                         experts=tuple(panel.experts[j] for j in idx),
                         values=panel.values[:, idx],
                         mask=panel.mask[:, idx],
                         target=panel.target)


def impute_missing(panel):
    """Fill each missing cell with the mean of the period's reported cells."""
    values = panel.values.copy()
    mask = panel.mask
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        t = int(np.flatnonzero(counts == 0)[0])
        raise ValidationError(f"period {panel.periods[t]} has no reported "
                              "forecasts; cannot impute")
    sums = np.where(mask, values, 0.0).sum(axis=1)
    row_means = sums / counts
    values = np.where(mask, values, row_means[:, None])
    return ForecastPanel(periods=panel.periods, experts=panel.experts,
                         values=values,
                         mask=np.ones_like(mask), target=panel.target)


def diagnostics(panel, span=None):
    """Error variances/correlations and the design condition number.

    Errors are target minus forecast per expert over the span; variances and
    correlations are the usual sample (ddof=1) and Pearson quantities.  The
    condition number is the ratio of extreme singular values of the raw
    (non-centered, non-standardized) forecast matrix.
    """
    lo, hi = panel.span_indices(span)
    if hi - lo < 2:
        raise ValidationError("diagnostics need a span of at least 2 periods")
    if not panel.mask[lo:hi].all():
        raise ValidationError("diagnostics require an imputed (complete) panel")
    y = panel.target[lo:hi]
    if not np.all(np.isfinite(y)):
        raise ValidationError("diagnostics require realized targets over the span")
    F = panel.values[lo:hi]
    errors = y[:, None] - F

    variances = errors.var(axis=0, ddof=1)
    sd = np.sqrt(variances)
    centered = errors - errors.mean(axis=0)
    cov = (centered.T @ centered) / (errors.shape[0] - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    np.fill_diagonal(corr, 1.0)

    sv = np.linalg.svd(F, compute_uv=False)
    smin = float(sv.min())
    cond = float(sv.max() / smin) if smin > 0 else float("inf")
    return PanelDiagnostics(error_variances=variances,
                            error_correlations=corr,
                            condition_number=cond)
