"""Epsilon-insensitive support vector regression solved by SMO.

The dual is written in the combined coefficients beta = alpha - alpha*:

    minimise  1/2 beta^T K beta - y^T beta + eps * |beta|_1
    s.t.      sum(beta) = 0,  -C <= beta_i <= C.

Each step moves one pair (i, j) along e_i - e_j and minimises the
piecewise-quadratic restriction exactly. Optimality is tracked through the
interval of bias values each point admits; the solver stops once the
largest lower end exceeds the smallest upper end by no more than 2 tol.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .core import ValidationError
from .linear import DesignMatrix


@dataclass(frozen=True)
class SvrConfig:
    kernel: str = "rbf"
    gamma: Optional[float] = None
    C: float = 10.0
    epsilon: float = 0.5
    tol: float = 1e-3
    max_passes: int = 10_000

    def __post_init__(self):
        if self.kernel not in ("rbf", "linear"):
            raise ValidationError(f"unknown kernel {self.kernel!r}", field="kernel")
        if self.C <= 0:
            raise ValidationError("C must be positive", field="C")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be non-negative", field="epsilon")
        if self.gamma is not None and self.gamma <= 0:
            raise ValidationError("gamma must be positive", field="gamma")
        if self.tol <= 0:
            raise ValidationError("tol must be positive", field="tol")

    def to_dict(self):
        return asdict(self)


def kernel_matrix(A, B, kernel: str, gamma: float | None = None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if kernel == "linear":
        return A @ B.T
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    return float(0.5 * beta @ K @ beta - y @ beta + epsilon * np.abs(beta).sum())


@dataclass(frozen=True, eq=False)
class SvrFit:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    config: SvrConfig
    converged: bool = True
    passes: int = 0
    columns: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.bias)
        K = kernel_matrix(X, self.support_vectors, self.config.kernel, self.config.gamma)
        return K @ self.dual_coef + self.bias

    def to_dict(self):
        return {"model": "svr", "config": self.config.to_dict(), "columns": list(self.columns),
                "support_vectors": self.support_vectors.tolist(),
                "dual_coef": self.dual_coef.tolist(), "bias": self.bias,
                "converged": self.converged, "passes": self.passes}

    @classmethod
    def from_dict(cls, d):
        sv = np.array(d["support_vectors"], float)
        return cls(sv.reshape(len(d["dual_coef"]), -1), np.array(d["dual_coef"], float),
                   float(d["bias"]), SvrConfig(**d["config"]), d["converged"], d["passes"],
                   tuple(d["columns"]))


def _bias_intervals(beta, F, C, eps):
    """Per-point admissible bias interval [lo_i, hi_i]."""
    upper, lower = -eps - F, eps - F
    at_zero = beta == 0
    free_pos = (beta > 0) & (beta < C)
    at_c = beta >= C
    free_neg = (beta < 0) & (beta > -C)
    cases = [at_zero, free_pos, at_c, free_neg]
    lo = np.select(cases, [upper, upper, -np.inf, lower], default=lower)
    hi = np.select(cases, [lower, upper, upper, lower], default=np.inf)
    return lo, hi


def _moved(b: float, t: float, C: float) -> float:
    # land exactly on 0 or a bound when the step was chosen to reach it
    if t == -b:
        return 0.0
    if t == C - b:
        return C
    if t == -C - b:
        return -C
    v = min(C, max(-C, b + t))
    # rounding residue would otherwise leave a spurious free coefficient
    snap = 1e-12 * C
    if abs(v) <= snap:
        return 0.0
    if abs(v - C) <= snap:
        return C
    if abs(v + C) <= snap:
        return -C
    return v


def _pair_step(i, j, beta, F, K, C, eps) -> float:
    """Exact minimiser t of the dual along beta_i += t, beta_j -= t (0 if none)."""
    bi, bj = beta[i], beta[j]
    eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
    g = F[i] - F[j]
    t_lo = max(-C - bi, bj - C)
    t_hi = min(C - bi, bj + C)
    if t_hi <= t_lo:
        return 0.0

    def phi(t):
        return 0.5 * eta * t * t + g * t + eps * (abs(bi + t) + abs(bj - t))

    points = sorted({t_lo, t_hi, *(p for p in (-bi, bj) if t_lo < p < t_hi)})
    cands = list(points)
    if eta > 1e-12:
        for a, b in zip(points[:-1], points[1:]):
            mid = 0.5 * (a + b)
            slope = g + eps * (np.sign(bi + mid) - np.sign(bj - mid))
            cands.append(min(max(-slope / eta, a), b))
    best = min(cands, key=phi)
    if phi(best) >= phi(0.0) - 1e-15 * (1.0 + abs(phi(0.0))):
        return 0.0
    return best


def smo(K: np.ndarray, y: np.ndarray, C: float, epsilon: float, tol: float = 1e-3,
        max_passes: int = 10_000):
    """Return (beta, bias, converged, passes) for the epsilon-SVR dual."""
    n = len(y)
    beta = np.zeros(n)
    F = -np.asarray(y, dtype=float).copy()  # (K beta - y); bias excluded
    examine_all = True
    passes = 0

    def step(i, j):
        t = _pair_step(i, j, beta, F, K, C, epsilon)
        if t == 0.0:
            return False
        bi, bj = beta[i], beta[j]
        new_i, new_j = _moved(bi, t, C), _moved(bj, -t, C)
        di, dj = new_i - bi, new_j - bj
        beta[i], beta[j] = new_i, new_j
        F[:] += di * K[:, i] + dj * K[:, j]
        return True

    while passes < max_passes:
        passes += 1
        changed = 0
        if examine_all:
            order = range(n)
        else:
            order = [i for i in range(n) if 0 < abs(beta[i]) < C]
        for i in order:
            lo, hi = _bias_intervals(beta, F, C, epsilon)
            j_hi, j_lo = int(np.argmin(hi)), int(np.argmax(lo))
            if lo[i] > hi[j_hi] + 2 * tol:
                changed += step(i, j_hi)
            elif hi[i] < lo[j_lo] - 2 * tol:
                changed += step(i, j_lo)
        if examine_all:
            if changed == 0:
                break
            examine_all = False
        elif changed == 0:
            examine_all = True

    lo, hi = _bias_intervals(beta, F, C, epsilon)
    b_lo, b_hi = lo.max(), hi.min()
    converged = bool(b_lo <= b_hi + 2 * tol)
    if np.isfinite(b_lo) and np.isfinite(b_hi):
        bias = 0.5 * (b_lo + b_hi)
    elif np.isfinite(b_lo):
        bias = b_lo
    elif np.isfinite(b_hi):
        bias = b_hi
    else:
        bias = 0.0
    return beta, float(bias), converged, passes


def resolve_gamma(X: np.ndarray, cfg: SvrConfig) -> SvrConfig:
    if cfg.kernel != "rbf" or cfg.gamma is not None:
        return cfg
    var = float(np.var(X))
    if not var > 0:
        raise ValidationError("cannot derive gamma from constant features", field="gamma")
    return replace(cfg, gamma=1.0 / (X.shape[1] * var))


def svr_fit(D: DesignMatrix, cfg: SvrConfig | None = None) -> SvrFit:
    """Fit on ``D`` as given; callers standardize features beforehand."""
    cfg = cfg or SvrConfig()
    if D.n < 2:
        raise ValidationError("SVR needs at least 2 rows")
    cfg = resolve_gamma(D.X, cfg)
    K = kernel_matrix(D.X, D.X, cfg.kernel, cfg.gamma)
    beta, bias, converged, passes = smo(K, D.y, cfg.C, cfg.epsilon, cfg.tol, cfg.max_passes)
    sv = beta != 0
    return SvrFit(D.X[sv].copy(), beta[sv].copy(), bias, cfg, converged, passes, D.columns)


def svr_predict(fit: SvrFit, X) -> np.ndarray:
    return fit.predict(X)
