"""Mean stratified k-fold RMSE of the linear models on synthetic cohorts.

With noise sigma, a well-specified model should score close to sigma; the
gap for each penalized model shows how much its default penalty costs.
"""
import argparse

import numpy as np

from vo2kit.evaluation import ModelSpec, cross_validate, stratified_kfold
from vo2kit.linear import DesignMatrix
from vo2kit.synth import CohortSpec, generate_cohort

MODELS = ("linear", "ridge", "lasso", "elasticnet")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--sigma", type=float, default=5.0)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    spec = CohortSpec(sigma=args.sigma).scaled(args.n)
    print(f"n={args.n} sigma={args.sigma} k={args.k}")
    print(f"{'seed':>4} " + " ".join(f"{m:>11}" for m in MODELS))
    table = []
    for seed in range(1, args.seeds + 1):
        cohort = generate_cohort(spec, seed, threads=args.threads)
        D = DesignMatrix.from_features(cohort.features)
        plan = stratified_kfold(D.X[:, 0], args.k, seed)
        row = [np.mean([r.rmse for r in cross_validate(D, ModelSpec(m), plan)]) for m in MODELS]
        table.append(row)
        print(f"{seed:>4} " + " ".join(f"{v:>11.4f}" for v in row), flush=True)
    mean = np.mean(table, axis=0)
    print(f"{'mean':>4} " + " ".join(f"{v:>11.4f}" for v in mean))
    print(f"{'/sd':>4} " + " ".join(f"{v / args.sigma:>11.4f}" for v in mean))


if __name__ == "__main__":
    main()
