"""Correlation, significance and error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ValidationError

BETACF_TOL = 1e-12
BETACF_MAX_ITER = 300
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t >= 0 else tail


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def p_two_tailed(r: float, n: int) -> float:
    """Two-sided p-value of the t-test on a Pearson r with n-2 degrees of freedom."""
    if n < 3:
        raise ValueError("need n >= 3")
    if abs(r) > 1:
        raise ValueError("|r| must not exceed 1")
    if abs(r) == 1.0:
        return 0.0
    df = n - 2
    t = abs(r) * math.sqrt(df) / math.sqrt(1.0 - r * r)
    # 2 * (1 - T_cdf(|t|)) written directly as the beta tail to avoid cancellation
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass(frozen=True)
class CorrelationResult:
    metric: str
    r: Optional[float]
    p: Optional[float]
    n: int
    reason: Optional[str] = None

    def __post_init__(self):
        if self.r is not None and not -1 <= self.r <= 1:
            raise ValidationError("r outside [-1, 1]", field="r")
        if self.p is not None and not 0 <= self.p <= 1:
            raise ValidationError("p outside [0, 1]", field="p")

    @property
    def absent(self) -> bool:
        return self.r is None

    def to_dict(self) -> dict:
        return {"metric": self.metric, "r": self.r, "p": self.p, "n": self.n, "reason": self.reason}


DEFAULT_METRICS = ("aerobic_s", "endured_interp_s", "hrr30", "hrr60", "hrr120")
METRIC_LABELS = {
    "aerobic_s": "Aerobic Duration",
    "anaerobic_s": "Anaerobic Duration",
    "endured_raw_s": "Endured Duration (raw)",
    "endured_interp_s": "Endured Duration",
    "hrr30": "HRR 30s",
    "hrr60": "HRR 60s",
    "hrr120": "HRR 120s",
    "bmi": "BMI",
    "gender": "Gender",
}


def correlation_table(features, metrics: Sequence[str] = DEFAULT_METRICS) -> list[CorrelationResult]:
    """Pearson r and p of each metric against VO2max, with pairwise deletion."""
    rows = list(features)
    if any(f.vo2max is None for f in rows):
        raise ValidationError("every row needs a vo2max target", field="vo2max")
    out = []
    for metric in metrics:
        pairs = [(f.get(metric), f.vo2max) for f in rows]
        pairs = [(x, y) for x, y in pairs if x is not None and math.isfinite(x)]
        n = len(pairs)
        if n < 3:
            out.append(CorrelationResult(metric, None, None, n, "n < 3"))
            continue
        x, y = zip(*pairs)
        try:
            r = pearson_r(x, y)
        except ValueError as exc:
            out.append(CorrelationResult(metric, None, None, n, str(exc)))
            continue
        out.append(CorrelationResult(metric, r, p_two_tailed(r, n), n))
    return out


def format_correlation_table(results: Sequence[CorrelationResult]) -> str:
    lines = [f"{'Metric':<24} {'Pearson r':>12} {'p-value':>12} {'n':>5}"]
    for res in results:
        label = METRIC_LABELS.get(res.metric, res.metric)
        if res.absent:
            lines.append(f"{label:<24} {'absent':>12} {res.reason or '':>12} {res.n:>5}")
        else:
            lines.append(f"{label:<24} {res.r:>12.6f} {res.p:>12.6f} {res.n:>5}")
    return "\n".join(lines)
