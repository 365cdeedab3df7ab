import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ols_rational
from vo2kit.core import ValidationError
from vo2kit.evaluation import (
    EvalReport,
    FoldPlan,
    ModelSpec,
    cross_validate,
    evaluate,
    grid_search,
    load_model,
    loocv,
    loocv_plan,
    parse_models,
    participant_error,
    stratified_kfold,
)
from vo2kit.linear import DesignMatrix

COHORT_LABELS = [1] * 30 + [0] * 14


def cohort_like(seed, n=44, noise=1.0):
    rng = np.random.default_rng(seed)
    g = np.array(COHORT_LABELS if n == 44 else rng.integers(0, 2, n), float)
    X = np.column_stack([g, rng.normal(23, 3, n), rng.uniform(100, 600, n), rng.uniform(0, 200, n)])
    y = 46 + 6 * g - 0.8 * X[:, 1] + 0.05 * X[:, 2] + 0.02 * X[:, 3] + rng.normal(0, noise, n)
    return DesignMatrix(X, y, ("gender", "bmi", "aerobic_s", "anaerobic_s"))


@given(st.integers(0, 2**32 - 1))
def test_cohort_split_counts(seed):
    plan = stratified_kfold(COHORT_LABELS, 5, seed)
    plan.validate(44)
    counts = plan.counts()
    assert [c[1] for c in counts] == [6] * 5
    assert sorted(c[0] for c in counts) == [2, 3, 3, 3, 3]


@settings(max_examples=40)
@given(st.lists(st.sampled_from("abc"), min_size=6, max_size=60), st.integers(2, 6), st.integers(0, 999))
def test_plan_proportionality(labels, k, seed):
    k = min(k, len(labels))
    plan = stratified_kfold(labels, k, seed)
    plan.validate(len(labels))
    for lab in set(labels):
        share = labels.count(lab) / k
        for c in plan.counts():
            assert abs(c.get(lab, 0) - share) < 1
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1


def test_plan_determinism_and_seed_sensitivity():
    a, b = stratified_kfold(COHORT_LABELS, 5, 1), stratified_kfold(COHORT_LABELS, 5, 1)
    c = stratified_kfold(COHORT_LABELS, 5, 2)
    assert a.folds == b.folds and a.digest() == b.digest()
    assert a.folds != c.folds
    assert sorted(map(sorted, (x.items() for x in a.counts()))) == sorted(
        map(sorted, (x.items() for x in c.counts())))


def test_k_equals_n_is_leave_one_out_shape():
    plan = stratified_kfold(list(range(7)), 7, 0)
    assert sorted(plan.folds) == sorted(loocv_plan(7).folds)


def test_plan_errors():
    with pytest.raises(ValidationError):
        stratified_kfold([0, 1, 0], 4, 0)
    with pytest.raises(ValidationError):
        stratified_kfold([0, 1, 0], 1, 0)
    with pytest.raises(ValidationError, match="leaks"):
        FoldPlan(((0, 1), (1, 2)), (0, 0, 0)).validate(3)
    with pytest.raises(ValidationError, match="misses"):
        FoldPlan(((0,), (1,)), (0, 0, 0)).validate(3)


def test_leaked_plan_rejected_before_fitting():
    D = cohort_like(0)
    calls = []

    class Spy(ModelSpec):
        def fit(self, D, threads=1):
            calls.append(1)
            return super().fit(D, threads)

    bad = FoldPlan((tuple(range(0, 23)), tuple(range(22, 44))), COHORT_LABELS)
    with pytest.raises(ValidationError):
        cross_validate(D, Spy("linear"), bad)
    assert calls == []


def test_noiseless_ols_folds_exact():
    D = cohort_like(1, noise=0.0)
    folds = cross_validate(D, ModelSpec("linear"), stratified_kfold(COHORT_LABELS, 5, 3))
    for r in folds:
        assert r.rmse < 1e-9
        assert r.train_corr == pytest.approx(1.0) and r.test_corr == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["linear", "ridge", "lasso", "elasticnet", "svr"])
def test_held_out_targets_never_reach_fit(name):
    D = cohort_like(2)
    plan = stratified_kfold(COHORT_LABELS, 5, 4)
    base = cross_validate(D, ModelSpec(name), plan)
    for f, fold in enumerate(plan.folds):
        y = D.y.copy()
        y[list(fold)] = 1e6  # sentinel
        rec = cross_validate(DesignMatrix(D.X, y, D.columns), ModelSpec(name), plan)[f]
        assert rec.predictions == base[f].predictions


def test_zero_variance_training_fold_named():
    X = np.column_stack([np.r_[np.zeros(8), 1.0, 1.0], np.arange(10.0)])
    D = DesignMatrix(X, np.arange(10.0), ("gender", "bmi"))
    plan = FoldPlan(((8, 9, 0, 1, 2), (3, 4, 5, 6, 7)), tuple(range(10)))
    with pytest.raises(ValidationError, match="fold 0.*gender"):
        cross_validate(D, ModelSpec("linear"), plan)


def test_loocv_constant_target():
    X = np.random.default_rng(0).normal(size=(6, 2))
    res = loocv(DesignMatrix(X, np.full(6, 50.0), ()), ModelSpec("mean"))
    assert res.rmse == 0.0


def test_loocv_matches_rational_hand_run():
    X = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 3.0], [6.0, 4.0]])
    y = np.array([3.0, 4.5, 8.0, 7.2, 11.5])
    errs = []
    for i in range(5):
        keep = [j for j in range(5) if j != i]
        b0, b = ols_rational(X[keep][:, :1], y[keep])
        errs.append(y[i] - (b0 + X[i, :1] @ b))
    expected = float(np.sqrt(np.mean(np.square(errs))))
    res = loocv(DesignMatrix(X[:, :1], y, ()), ModelSpec("linear"))
    assert res.rmse == pytest.approx(expected, abs=1e-10)
    np.testing.assert_allclose([e.error for e in res.errors], errs, atol=1e-10)


def test_loocv_permutation_invariant():
    D = cohort_like(5, n=20)
    perm = np.random.default_rng(1).permutation(20)
    a = loocv(D, ModelSpec("ridge"))
    b = loocv(D.subset(perm), ModelSpec("ridge"))
    assert a.rmse == pytest.approx(b.rmse, rel=1e-12)
    by_id = {e.id: e.error for e in a.errors}
    for e in b.errors:
        assert e.error == pytest.approx(by_id[e.id], abs=1e-10)


def test_error_sign_convention():
    e = participant_error("P07", 61.9, 49.51)
    assert e.error == pytest.approx(12.39)


def test_loocv_needs_three_rows():
    with pytest.raises(ValidationError):
        loocv(DesignMatrix([[1.0], [2.0]], [1.0, 2.0], ()), ModelSpec("mean"))


def test_report_shape_and_round_trip():
    D = cohort_like(6)
    specs = [ModelSpec("linear"), ModelSpec("mean"), ModelSpec("rf", {"n_trees": 10, "seed": 3})]
    rep = evaluate(D, specs, COHORT_LABELS, k=5, do_loocv=True, seed=11)
    again = EvalReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert again.to_dict() == rep.to_dict()
    mean = rep.model("mean")
    # each fold predicts a constant, so per-fold test correlation is undefined
    assert mean.mean_test_corr is None
    assert all(f["test_corr"] is None for f in mean.folds)
    for m in rep.models:
        assert m.mean_rmse >= 0 and m.loocv_rmse >= 0
        assert len(m.loocv_errors) == 44 and len(m.folds) == 5
        for v in (m.mean_train_corr, m.mean_test_corr):
            assert v is None or -1 <= v <= 1
    assert rep.plan_hash == stratified_kfold(COHORT_LABELS, 5, 11).digest()
    table = rep.format_table().splitlines()
    assert len(table) == 1 + len(specs)
    assert "LOOCV RMSE" in table[0]


def test_noisy_recovery_near_sigma():
    D = cohort_like(7, n=400, noise=5.0)
    specs = [ModelSpec("linear"), ModelSpec("ridge", {"l2": 0.01}), ModelSpec("lasso"),
             ModelSpec("elasticnet", {"l1": 0.05, "l2": 0.05})]
    rep = evaluate(D, specs, D.X[:, 0], k=5,
                   do_loocv=False, seed=1)
    for m in rep.models:
        assert abs(m.mean_rmse - 5.0) < 0.75


def test_threads_do_not_change_report():
    D = cohort_like(8)
    specs = parse_models("linear,rf,svr", seed=2)
    specs = [s if s.name != "rf" else ModelSpec("rf", {**s.params, "n_trees": 8}) for s in specs]
    a = evaluate(D, specs, COHORT_LABELS, seed=2, threads=1)
    b = evaluate(D, specs, COHORT_LABELS, seed=2, threads=6)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_model_round_trip_via_load():
    D = cohort_like(9)
    for spec in parse_models("all", seed=1) + [ModelSpec("mean")]:
        if spec.name == "rf":
            spec = ModelSpec("rf", {"n_trees": 5})
        model = spec.fit(D)
        again = load_model(json.loads(json.dumps(model.to_dict())))
        np.testing.assert_array_equal(again.predict(D.X), model.predict(D.X))


def test_grid_search_picks_minimum():
    D = cohort_like(10)
    plan = stratified_kfold(COHORT_LABELS, 5, 0)
    best, scores = grid_search(D, "ridge", {"l2": [0.0, 0.1, 100.0]}, plan)
    assert best == min(scores, key=lambda s: s[1])[0]
    assert len(scores) == 3


def test_unknown_model():
    with pytest.raises(ValidationError):
        ModelSpec("xgboost")
