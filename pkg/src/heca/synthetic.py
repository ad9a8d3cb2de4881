"""Deterministic synthetic panels for experiments and tests.

A generator spec is a comma-separated list of key=value pairs; list values
use '+' between items.  Keys:

    experts     number of forecasters (default 8)
    horizon     number of periods (required, >= 1)
    seed        RNG seed (default 0)
    noise       extra noise on the target itself (default 0.0)
    idio        idiosyncratic spread of expert forecasts (default 1.0)
    breaks      period indices where the regime mean jumps, e.g. 20+40
    mean-of     K > 0 makes the target the mean of experts 1..K (+noise),
                so a size-K committee can fit it exactly when noise = 0
    missing     per-cell missing probability (default 0.0)
    consecutive-missing
                expert indices (1-based) forced to miss two consecutive
                periods, e.g. 2+5 (exercises the filtering rule)
    unrealized  number of trailing periods with no realized target
    start       first period label, default 2000Q1

Example: ``experts=8,horizon=60,seed=42,mean-of=3,missing=0.05``.
The same spec always produces a byte-identical CSV.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .panel import parse_period


@dataclass
class SyntheticSpec:
    experts: int = 8
    horizon: int = 0
    seed: int = 0
    noise: float = 0.0
    idio: float = 1.0
    breaks: tuple = ()
    mean_of: int = 0
    missing: float = 0.0
    consecutive_missing: tuple = ()
    unrealized: int = 0
    start: str = "2000Q1"

    @classmethod
    def parse(cls, text):
        spec = cls()
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ValidationError(f"synthetic spec item {part!r} is not key=value")
            key, _, value = part.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            try:
                if key in ("experts", "horizon", "seed", "mean_of", "unrealized"):
                    setattr(spec, key, int(value))
                elif key in ("noise", "idio", "missing"):
                    setattr(spec, key, float(value))
                elif key in ("breaks", "consecutive_missing"):
                    setattr(spec, key,
                            tuple(int(v) for v in value.split("+") if v))
                elif key == "start":
                    spec.start = value
                else:
                    raise ValidationError(f"unknown synthetic spec key {key!r}")
            except ValueError as exc:
                raise ValidationError(
                    f"bad value for synthetic key {key!r}: {value!r}") from exc
        spec.validate()
        return spec

    def validate(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.experts < 1:
            raise ValidationError("experts must be >= 1")
        if not 0 <= self.mean_of <= self.experts:
            raise ValidationError("mean-of must be between 0 and experts")
        if not 0.0 <= self.missing < 1.0:
            raise ValidationError("missing probability must be in [0, 1)")
        if not 0 <= self.unrealized <= self.horizon:
            raise ValidationError("unrealized tail cannot exceed the horizon")
        if self.idio < 0 or self.noise < 0:
            raise ValidationError("noise levels cannot be negative")
        if any(b < 1 or b >= self.horizon for b in self.breaks):
            raise ValidationError("break indices must lie inside the horizon")
        if any(not 1 <= e <= self.experts for e in self.consecutive_missing):
            raise ValidationError("consecutive-missing expert index out of range")


def period_labels(start, horizon):
    code = parse_period(start)
    if code is None:
        return [f"P{i + 1:04d}" for i in range(horizon)]
    return [f"{c // 4}Q{c % 4 + 1}" for c in (code + i for i in range(horizon))]


def generate(spec):
    """Build (periods, target, values, mask) arrays for a spec."""
    rng = np.random.default_rng(spec.seed)
    T, M = spec.horizon, spec.experts

    # Regime-switching base path: AR(1) around a mean that jumps at breaks.
    mu = np.zeros(T)
    level = 2.0
    jumps = {b: float(rng.normal(0.0, 2.0)) for b in spec.breaks}
    for t in range(T):
        if t in jumps:
            level += jumps[t]
        mu[t] = level
    base = np.zeros(T)
    prev = mu[0]
    for t in range(T):
        prev = mu[t] + 0.7 * (prev - mu[t - 1 if t else 0]) + 0.4 * rng.normal()
        base[t] = prev

    bias = rng.normal(0.0, 0.3, size=M)
    values = base[:, None] + bias[None, :] + spec.idio * rng.normal(size=(T, M))

    if spec.mean_of:
        target = values[:, :spec.mean_of].mean(axis=1)
    else:
        target = base.copy()
    if spec.noise:
        target = target + spec.noise * rng.normal(size=T)

    mask = np.ones((T, M), dtype=bool)
    if spec.missing > 0.0:
        mask = rng.random(size=(T, M)) >= spec.missing
        for t in range(T):
            if not mask[t].any():
                mask[t, int(rng.integers(M))] = True
    for e in spec.consecutive_missing:
        t0 = int(rng.integers(0, max(1, T - 1)))
        mask[t0, e - 1] = False
        mask[min(t0 + 1, T - 1), e - 1] = False

    periods = period_labels(spec.start, T)
    return periods, target, values, mask


def write_panel_csv(path, spec):
    """Generate and write the panel; returns the path."""
    periods, target, values, mask = generate(spec)
    T, M = values.shape
    lines = ["period,target," + ",".join(f"expert{j + 1}" for j in range(M))]
    for t in range(T):
        tgt = "" if t >= T - spec.unrealized else repr(float(target[t]))
        cells = [repr(float(values[t, j])) if mask[t, j] else ""
                 for j in range(M)]
        lines.append(",".join([periods[t], tgt] + cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
