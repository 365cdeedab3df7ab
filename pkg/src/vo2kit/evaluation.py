"""Cross-validation harnesses and report assembly.

Two schemes are supported: stratified k-fold (stratified on gender) and
leave-one-out. Every fit sees only its training rows; standardization
parameters are estimated inside each fit.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linear
from .core import ValidationError
from .forest import ForestConfig, rf_fit
from .linear import DesignMatrix, Standardization, standardize_apply, standardize_fit
from .stats import pearson_r, rmse
from .svr import SvrConfig, svr_fit

MODEL_NAMES = ("linear", "ridge", "lasso", "elasticnet", "rf", "svr")


# -- models -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeanModel:
    value: float

    def predict(self, X):
        return np.full(len(np.atleast_2d(X)), self.value)

    def to_dict(self):
        return {"model": "mean", "value": self.value}


@dataclass(frozen=True, eq=False)
class ScaledModel:
    """A model fitted on standardized inputs, applying the same scaling at predict time."""

    scaler: Standardization
    inner: object

    def predict(self, X):
        return self.inner.predict(standardize_apply(self.scaler, X))

    def to_dict(self):
        return {**self.inner.to_dict(), "input_standardization": self.scaler.to_dict()}


def default_params(name: str) -> dict:
    return {
        "linear": {},
        "ridge": {"l2": linear.RIDGE_L2},
        "lasso": {"l1": linear.LASSO_L1},
        "elasticnet": {"l1": linear.ENET_L1, "l2": linear.ENET_L2},
        "rf": ForestConfig().to_dict(),
        "svr": SvrConfig().to_dict(),
        "mean": {},
    }[name]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in MODEL_NAMES + ("mean",):
            raise ValidationError(f"unknown model {self.name!r}", field="model")
        object.__setattr__(self, "params", {**default_params(self.name), **dict(self.params)})

    def fit(self, D: DesignMatrix, threads: int = 1):
        p = self.params
        if self.name == "linear":
            return linear.ols_fit(D)
        if self.name == "ridge":
            return linear.ridge_fit(D, p["l2"])
        if self.name == "lasso":
            return linear.lasso_fit(D, p["l1"])
        if self.name == "elasticnet":
            return linear.elastic_net_fit(D, p["l1"], p["l2"])
        if self.name == "rf":
            return rf_fit(D, ForestConfig(**p), threads=threads)
        if self.name == "svr":
            scaler = standardize_fit(D.X, D.columns)
            Z = DesignMatrix(standardize_apply(scaler, D.X), D.y, D.columns, D.ids)
            return ScaledModel(scaler, svr_fit(Z, SvrConfig(**p)))
        return MeanModel(float(D.y.mean()))

    def to_dict(self):
        return {"name": self.name, "params": self.params}


def parse_models(arg: str, seed: int | None = None) -> list[ModelSpec]:
    names = MODEL_NAMES if arg == "all" else tuple(a.strip() for a in arg.split(","))
    specs = []
    for name in names:
        params = {"seed": int(seed)} if name == "rf" and seed is not None else {}
        specs.append(ModelSpec(name, params))
    return specs


# -- fold plans -------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    labels: tuple
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(tuple(int(i) for i in f) for f in self.folds))
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def k(self) -> int:
        return len(self.folds)

    def validate(self, n: int) -> None:
        seen: dict[int, int] = {}
        for f, fold in enumerate(self.folds):
            for i in fold:
                if not 0 <= i < n:
                    raise ValidationError(f"fold plan index {i} outside 0..{n - 1}")
                if i in seen:
                    raise ValidationError(f"fold plan leaks index {i} into folds {seen[i]} and {f}")
                seen[i] = f
        missing = sorted(set(range(n)) - set(seen))
        if missing:
            raise ValidationError(f"fold plan misses indices {missing[:5]}")

    def counts(self) -> list[dict]:
        return [{lab: sum(1 for i in fold if self.labels[i] == lab) for lab in sorted(set(self.labels))}
                for fold in self.folds]

    def digest(self) -> str:
        blob = json.dumps([list(f) for f in self.folds], separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def stratified_kfold(labels: Sequence, k: int, seed: int) -> FoldPlan:
    """Shuffle each label class, then deal members round-robin into ``k`` folds.

    The dealer position carries over between classes, so fold sizes stay
    within one of each other overall.
    """
    labels = list(labels)
    n = len(labels)
    if k < 2:
        raise ValidationError("k must be at least 2", field="k")
    if k > n:
        raise ValidationError(f"k={k} exceeds n={n}", field="k")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for lab in sorted(set(labels), key=str):
        members = np.array([i for i, l in enumerate(labels) if l == lab])
        for i in rng.permutation(members):
            folds[pos % k].append(int(i))
            pos += 1
    return FoldPlan(tuple(tuple(sorted(f)) for f in folds), tuple(labels), seed)


def loocv_plan(n: int) -> FoldPlan:
    return FoldPlan(tuple((i,) for i in range(n)), tuple(range(n)))


# -- runs -------------------------------------------------------------------


@dataclass(frozen=True)
class FoldRecord:
    fold: int
    test_idx: tuple
    predictions: tuple
    rmse: float
    train_corr: Optional[float]
    test_corr: Optional[float]

    def to_dict(self):
        return {"fold": self.fold, "n_test": len(self.test_idx), "rmse": self.rmse,
                "train_corr": self.train_corr, "test_corr": self.test_corr}


def _corr_or_none(pred, truth) -> Optional[float]:
    try:
        return pearson_r(pred, truth)
    except ValueError:
        return None


def _check_training_variance(D: DesignMatrix, train_idx, fold: int):
    sd = D.X[train_idx].std(axis=0)
    for j in np.flatnonzero(~(sd > 0)):
        raise ValidationError(f"fold {fold}: zero-variance feature {D.columns[j]} in training rows",
                              field=D.columns[j])


def _run_fold(D: DesignMatrix, spec: ModelSpec, train_idx, test_idx, fold: int, threads: int):
    _check_training_variance(D, train_idx, fold)
    model = spec.fit(D.subset(train_idx), threads=threads)
    pred_train = model.predict(D.X[train_idx])
    pred_test = model.predict(D.X[test_idx])
    return FoldRecord(
        fold=fold,
        test_idx=tuple(int(i) for i in test_idx),
        predictions=tuple(float(v) for v in pred_test),
        rmse=rmse(pred_test, D.y[test_idx]),
        train_corr=_corr_or_none(pred_train, D.y[train_idx]),
        test_corr=_corr_or_none(pred_test, D.y[test_idx]) if len(test_idx) >= 3 else None,
    )


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cross_validate(D: DesignMatrix, spec: ModelSpec, plan: FoldPlan, threads: int = 1) -> list[FoldRecord]:
    plan.validate(D.n)
    everything = np.arange(D.n)

    def one(f):
        test = np.array(plan.folds[f], dtype=int)
        train = np.setdiff1d(everything, test)
        return _run_fold(D, spec, train, test, f, 1)

    return _map(one, range(plan.k), threads)


@dataclass(frozen=True)
class ParticipantError:
    id: str
    actual: float
    predicted: float
    error: float

    def to_dict(self):
        return {"id": self.id, "actual": self.actual, "predicted": self.predicted, "error": self.error}


@dataclass(frozen=True)
class LoocvResult:
    rmse: float
    errors: tuple

    def to_dict(self):
        return {"rmse": self.rmse, "errors": [e.to_dict() for e in self.errors]}


def participant_error(pid: str, actual: float, predicted: float) -> ParticipantError:
    """Error is actual minus predicted, positive when the model underestimates."""
    return ParticipantError(pid, float(actual), float(predicted), float(actual) - float(predicted))


def loocv(D: DesignMatrix, spec: ModelSpec, threads: int = 1) -> LoocvResult:
    if D.n < 3:
        raise ValidationError("leave-one-out needs n >= 3")
    records = cross_validate(D, spec, loocv_plan(D.n), threads)
    preds = np.array([r.predictions[0] for r in records])
    errors = tuple(participant_error(D.ids[i], D.y[i], preds[i]) for i in range(D.n))
    return LoocvResult(rmse(preds, D.y), errors)


# -- reporting --------------------------------------------------------------


def _mean_defined(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class ModelReport:
    model: str
    params: dict
    k: Optional[int] = None
    mean_rmse: Optional[float] = None
    pooled_rmse: Optional[float] = None
    mean_train_corr: Optional[float] = None
    mean_test_corr: Optional[float] = None
    pooled_test_corr: Optional[float] = None
    folds: tuple = ()
    loocv_rmse: Optional[float] = None
    loocv_errors: tuple = ()

    def to_dict(self):
        return {
            "model": self.model, "params": self.params,
            "stratified": None if self.k is None else {
                "k": self.k, "mean_rmse": self.mean_rmse, "pooled_rmse": self.pooled_rmse,
                "mean_train_corr": self.mean_train_corr, "mean_test_corr": self.mean_test_corr,
                "pooled_test_corr": self.pooled_test_corr, "folds": list(self.folds),
            },
            "loocv": None if self.loocv_rmse is None else {
                "rmse": self.loocv_rmse, "errors": list(self.loocv_errors),
            },
        }

    @classmethod
    def from_dict(cls, d):
        s = d.get("stratified") or {}
        lo = d.get("loocv") or {}
        return cls(d["model"], d["params"], s.get("k"), s.get("mean_rmse"), s.get("pooled_rmse"),
                   s.get("mean_train_corr"), s.get("mean_test_corr"), s.get("pooled_test_corr"),
                   tuple(s.get("folds", ())), lo.get("rmse"), tuple(lo.get("errors", ())))


def summarize(spec: ModelSpec, D: DesignMatrix, folds: Optional[list[FoldRecord]],
              loo: Optional[LoocvResult]) -> ModelReport:
    kw = {}
    if folds:
        pred = np.empty(D.n)
        for r in folds:
            pred[list(r.test_idx)] = r.predictions
        kw = dict(
            k=len(folds),
            mean_rmse=float(np.mean([r.rmse for r in folds])),
            pooled_rmse=rmse(pred, D.y),
            mean_train_corr=_mean_defined(r.train_corr for r in folds),
            mean_test_corr=_mean_defined(r.test_corr for r in folds),
            pooled_test_corr=_corr_or_none(pred, D.y),
            folds=tuple(r.to_dict() for r in folds),
        )
    if loo is not None:
        kw.update(loocv_rmse=loo.rmse, loocv_errors=tuple(e.to_dict() for e in loo.errors))
    return ModelReport(spec.name, spec.params, **kw)


@dataclass(frozen=True)
class EvalReport:
    models: tuple
    seed: Optional[int]
    plan_hash: Optional[str]
    n: int
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"n": self.n, "seed": self.seed, "plan_hash": self.plan_hash, "config": self.config,
                "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ModelReport.from_dict(m) for m in d["models"]), d["seed"], d["plan_hash"],
                   d["n"], d.get("config", {}))

    def model(self, name: str) -> ModelReport:
        return next(m for m in self.models if m.model == name)

    def format_table(self) -> str:
        def cell(v):
            return f"{v:>12.6f}" if v is not None else f"{'-':>12}"

        head = f"{'Model':<12} {'RMSE':>12} {'Train corr':>12} {'Test corr':>12} {'LOOCV RMSE':>12}"
        lines = [head]
        for m in self.models:
            lines.append(f"{m.model:<12} {cell(m.mean_rmse)} {cell(m.mean_train_corr)} "
                         f"{cell(m.mean_test_corr)} {cell(m.loocv_rmse)}")
        return "\n".join(lines)


def report(D: DesignMatrix, runs: Sequence[tuple], plan: Optional[FoldPlan] = None,
           config: Optional[dict] = None) -> EvalReport:
    """Assemble an EvalReport from (spec, fold records or None, loocv result or None) triples."""
    if not runs:
        raise ValidationError("no models evaluated")
    models = tuple(summarize(spec, D, folds, loo) for spec, folds, loo in runs)
    return EvalReport(models, plan.seed if plan else None, plan.digest() if plan else None,
                      D.n, dict(config or {}))


def evaluate(D: DesignMatrix, specs: Sequence[ModelSpec], labels: Sequence, k: Optional[int] = 5,
             do_loocv: bool = True, seed: int = 0, threads: int = 1) -> EvalReport:
    plan = stratified_kfold(labels, k, seed) if k else None
    runs = []
    for spec in specs:
        folds = cross_validate(D, spec, plan, threads) if plan else None
        loo = loocv(D, spec, threads) if do_loocv else None
        runs.append((spec, folds, loo))
    cfg = {"k": k, "loocv": do_loocv, "columns": list(D.columns)}
    rep = report(D, runs, plan, cfg)
    if plan is None:
        rep = EvalReport(rep.models, seed, None, rep.n, rep.config)
    return rep


def grid_search(D: DesignMatrix, name: str, grid: dict, plan: FoldPlan, threads: int = 1):
    """Mean fold RMSE for every point of ``grid``; returns (best params, all scores)."""
    keys = sorted(grid)
    scores = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        folds = cross_validate(D, ModelSpec(name, params), plan, threads)
        scores.append((params, float(np.mean([r.rmse for r in folds]))))
    best = min(scores, key=lambda s: (s[1], json.dumps(s[0], sort_keys=True)))
    return best[0], scores


def load_model(d: dict):
    """Rebuild a fitted model from its ``to_dict`` form."""
    from .forest import Forest
    from .svr import SvrFit

    kind = d.get("model")
    if kind in ("linear", "ridge", "lasso", "elasticnet"):
        return linear.LinearFit.from_dict(d)
    if kind == "rf":
        return Forest.from_dict(d)
    if kind == "svr":
        inner = SvrFit.from_dict(d)
        if "input_standardization" in d:
            return ScaledModel(Standardization.from_dict(d["input_standardization"]), inner)
        return inner
    if kind == "mean":
        return MeanModel(float(d["value"]))
    raise ValidationError(f"unknown model kind {kind!r}", field="model")
