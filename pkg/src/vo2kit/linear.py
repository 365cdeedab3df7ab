"""Least squares, ridge, lasso and elastic net on standardized features.

All fits share one objective scaling,

    RSS / (2 n) + l1 * |beta|_1 + (l2 / 2) * |beta|_2^2,

with the intercept left unpenalized. Coefficients are estimated on
standardized columns and reported both in that space and in original units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core import ValidationError

RIDGE_L2 = 0.1
LASSO_L1 = 0.1
ENET_L1, ENET_L2 = 0.1, 0.05
CD_TOL = 1e-7
CD_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple
    ids: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(X) != len(y):
            raise ValidationError("X and y row counts differ")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("design matrix contains absent or non-finite values")
        columns = tuple(self.columns) if self.columns else tuple(f"x{j}" for j in range(X.shape[1]))
        if len(columns) != X.shape[1]:
            raise ValidationError("column names do not match X")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(len(y)))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "DesignMatrix":
        idx = np.asarray(idx, dtype=int)
        return DesignMatrix(self.X[idx], self.y[idx], self.columns, tuple(self.ids[i] for i in idx))

    @classmethod
    def from_features(cls, rows, columns: Sequence[str] = ("gender", "bmi", "aerobic_s", "anaerobic_s")):
        rows = list(rows)
        if any(r.vo2max is None for r in rows):
            raise ValidationError("every row needs a vo2max target", field="vo2max")
        X = [[r.get(c) for c in columns] for r in rows]
        if any(v is None for row in X for v in row):
            raise ValidationError("design matrix contains absent values")
        return cls(np.array(X, dtype=float), [r.vo2max for r in rows], tuple(columns),
                   tuple(r.id for r in rows))


@dataclass(frozen=True, eq=False)
class Standardization:
    mean: np.ndarray
    sd: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["sd"], float))


def standardize_fit(X, columns: Sequence[str] | None = None) -> Standardization:
    """Column means and sample (ddof=1) standard deviations."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValidationError("need at least two rows to standardize")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    for j in np.flatnonzero(~(sd > 0)):
        name = columns[j] if columns is not None else f"column {j}"
        raise ValidationError(f"zero-variance column: {name}", field=name)
    return Standardization(mean, sd)


def standardize_apply(params: Standardization, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return (X - params.mean) / params.sd


@dataclass(frozen=True, eq=False)
class LinearFit:
    model: str
    columns: tuple
    intercept: float
    coef: np.ndarray
    coef_std: np.ndarray
    y_mean: float
    scaler: Standardization
    l1: float = 0.0
    l2: float = 0.0
    converged: bool = True
    iterations: int = 0
    objective_history: tuple = field(default=(), repr=False)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.intercept + X @ self.coef

    def predict_standardized(self, Z) -> np.ndarray:
        return self.y_mean + np.asarray(Z, dtype=float) @ self.coef_std

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "columns": list(self.columns),
            "intercept": self.intercept,
            "coefficients": dict(zip(self.columns, self.coef.tolist())),
            "standardized_coefficients": dict(zip(self.columns, self.coef_std.tolist())),
            "y_mean": self.y_mean,
            "standardization": self.scaler.to_dict(),
            "hyperparameters": {"l1": self.l1, "l2": self.l2},
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearFit":
        cols = tuple(d["columns"])
        return cls(
            model=d["model"], columns=cols, intercept=float(d["intercept"]),
            coef=np.array([d["coefficients"][c] for c in cols], float),
            coef_std=np.array([d["standardized_coefficients"][c] for c in cols], float),
            y_mean=float(d["y_mean"]), scaler=Standardization.from_dict(d["standardization"]),
            l1=d["hyperparameters"]["l1"], l2=d["hyperparameters"]["l2"],
            converged=d["converged"], iterations=d["iterations"],
        )


def _prepare(D: DesignMatrix):
    scaler = standardize_fit(D.X, D.columns)
    Z = standardize_apply(scaler, D.X)
    y_mean = float(D.y.mean())
    return scaler, Z, D.y - y_mean, y_mean


def _finish(model, D, scaler, beta_std, y_mean, **kw) -> LinearFit:
    coef = beta_std / scaler.sd
    intercept = y_mean - float(scaler.mean @ coef)
    return LinearFit(model, D.columns, intercept, coef, np.asarray(beta_std, float), y_mean,
                     scaler, **kw)


def enet_objective(Z, yc, beta, l1, l2) -> float:
    r = yc - Z @ beta
    n = len(yc)
    return float(r @ r / (2 * n) + l1 * np.abs(beta).sum() + 0.5 * l2 * beta @ beta)


def ols_fit(D: DesignMatrix) -> LinearFit:
    if D.n <= D.d:
        raise ValidationError(f"ordinary least squares needs n > d (n={D.n}, d={D.d})")
    scaler, Z, yc, y_mean = _prepare(D)
    Q, R = np.linalg.qr(Z)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise ValidationError("singular design")
    beta = solve_triangular(R, Q.T @ yc)
    return _finish("linear", D, scaler, beta, y_mean)


def ridge_fit(D: DesignMatrix, l2: float = RIDGE_L2) -> LinearFit:
    if l2 < 0:
        raise ValidationError("l2 must be non-negative", field="l2")
    scaler, Z, yc, y_mean = _prepare(D)
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    shrink = s**2 + D.n * l2
    if np.any(shrink <= 1e-10 * max(s.max() ** 2, 1.0)):
        raise ValidationError("singular design")
    beta = Vt.T @ ((s / shrink) * (U.T @ yc))
    return _finish("ridge", D, scaler, beta, y_mean, l2=l2)


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def elastic_net_fit(D: DesignMatrix, l1: float = ENET_L1, l2: float = ENET_L2,
                    tol: float = CD_TOL, max_iter: int = CD_MAX_ITER,
                    model: str = "elasticnet") -> LinearFit:
    """Cyclic coordinate descent with soft-thresholded updates.

    Stops once a full sweep moves no coefficient by ``tol`` or more; if
    ``max_iter`` sweeps pass first the fit is returned with
    ``converged=False``.
    """
    if l1 < 0 or l2 < 0:
        raise ValidationError("penalties must be non-negative")
    scaler, Z, yc, y_mean = _prepare(D)
    n, d = Z.shape
    col_sq = np.einsum("ij,ij->j", Z, Z) / n
    beta = np.zeros(d)
    resid = yc.copy()
    history = [enet_objective(Z, yc, beta, l1, l2)]
    converged = False
    sweeps = 0
    while sweeps < max_iter:
        sweeps += 1
        max_change = 0.0
        for j in range(d):
            old = beta[j]
            rho = float(Z[:, j] @ resid) / n + col_sq[j] * old
            new = soft_threshold(rho, l1) / (col_sq[j] + l2)
            if new != old:
                resid -= Z[:, j] * (new - old)
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        history.append(enet_objective(Z, yc, beta, l1, l2))
        if max_change < tol:
            converged = True
            break
    return _finish(model, D, scaler, beta, y_mean, l1=l1, l2=l2, converged=converged,
                   iterations=sweeps, objective_history=tuple(history))


def lasso_fit(D: DesignMatrix, l1: float = LASSO_L1, **kw) -> LinearFit:
    return elastic_net_fit(D, l1, 0.0, model="lasso", **kw)


def coefficient_report(fit: LinearFit) -> str:
    lines = [f"{fit.model} fit (intercept {fit.intercept:.6f})",
             f"{'feature':<14} {'coef':>14} {'std coef':>14}"]
    order = np.argsort(-np.abs(fit.coef_std), kind="stable")
    for j in order:
        lines.append(f"{fit.columns[j]:<14} {fit.coef[j]:>14.6f} {fit.coef_std[j]:>14.6f}")
    return "\n".join(lines)
