"""Command-line entry point.

Subcommands follow the processing chain: simulate, ingest, features,
stats, train, predict, eval, plus ``pipeline`` which runs them in order.
Exit status is 0 on success, 1 on data or validation errors and 2 on
usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .core import ValidationError
from .evaluation import (
    MODEL_NAMES,
    EvalReport,
    ModelSpec,
    cross_validate,
    default_params,
    load_model,
    loocv,
    parse_models,
    report,
    stratified_kfold,
)
from .features import FeatureVector, build_feature_vector
from .ingest import (
    CohortManifest,
    ParseError,
    atomic_write_text,
    read_feature_table,
    read_json,
    read_manifest,
    write_feature_table,
    write_json,
)
from .linear import DesignMatrix
from .protocol import CpsjtConfig, TerminationMode, run_cpsjt
from .seeding import fresh_seed
from .stats import correlation_table, format_correlation_table
from .synth import CohortSpec, generate_cohort, write_cohort

FEATURE_COLUMNS = ("gender", "bmi", "aerobic_s", "anaerobic_s")


class CliError(Exception):
    pass


# -- argument helpers -------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def parse_cv(text: str) -> tuple[Optional[int], bool]:
    """``stratified:k``, ``stratified`` (k=5), ``loocv`` or ``both`` -> (k or None, loocv?)."""
    if text == "loocv":
        return None, True
    if text == "both":
        return 5, True
    if text == "stratified":
        return 5, False
    head, _, k = text.partition(":")
    if head == "stratified" and k.isdigit() and int(k) >= 2:
        return int(k), False
    raise argparse.ArgumentTypeError(f"invalid --cv {text!r}; use stratified:k, loocv or both")


def _model_arg(text: str) -> str:
    names = MODEL_NAMES if text == "all" else text.split(",")
    bad = [n for n in names if n not in MODEL_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown model {','.join(bad)!r}; choose from "
                                         f"{'|'.join(MODEL_NAMES)}|all")
    return text


def _param(text: str) -> tuple[str, str, object]:
    key, eq, raw = text.partition("=")
    name, dot, field = key.partition(".")
    if not (eq and dot and name in MODEL_NAMES and field):
        raise argparse.ArgumentTypeError(f"expected model.key=value, got {text!r}")
    if field not in default_params(name):
        raise argparse.ArgumentTypeError(f"{name} has no parameter {field!r}; "
                                         f"known: {', '.join(default_params(name))}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return name, field, value


def _add_models(p: argparse.ArgumentParser, default: str, single=False):
    names = "|".join(MODEL_NAMES)
    p.add_argument("--model", type=_model_arg, default=default, help=names if single else names + "|all")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="MODEL.KEY=VALUE",
                   help="override a hyperparameter, e.g. ridge.l2=0.5 or rf.n_trees=100 (repeatable)")


def _add_common(p: argparse.ArgumentParser, seed=True, threads=True):
    if seed:
        p.add_argument("--seed", type=_seed, default=None,
                       help="root seed (drawn from entropy and echoed when omitted)")
    if threads:
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")


def _add_protocol(p: argparse.ArgumentParser):
    g = p.add_argument_group("session logic")
    g.add_argument("--termination-mode", choices=[m.value for m in TerminationMode],
                   default=TerminationMode.CPET_MAX_HR.value, help="how the HR stop limit is derived")
    g.add_argument("--hr-allowance", type=float, default=10.0,
                   help="bpm below CPET max HR at which the game stops (default 10)")
    g.add_argument("--interp-factor", type=float, default=0.75,
                   help="fraction of the projected time credited after movement failure (default 0.75)")


def _add_source(p: argparse.ArgumentParser, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--manifest", type=Path, help="cohort manifest JSON")
    g.add_argument("--features", type=Path, help="feature table CSV")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vo2kit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"vo2kit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="generate a synthetic cohort")
    p.add_argument("--spec", default="default", help="cohort spec JSON, or 'default'")
    p.add_argument("--n", type=_positive_int, default=None, help="rescale the cohort to N participants")
    p.add_argument("--sigma", type=float, default=None, help="override the VO2max noise SD")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("ingest", help="validate a manifest and all referenced recordings")
    p.add_argument("--manifest", type=Path, required=True, help="cohort manifest JSON")
    p.add_argument("--out", type=Path, default=None, help="optional summary JSON")
    _add_common(p, seed=False)

    p = sub.add_parser("features", help="run the session logic and write the feature table")
    p.add_argument("--manifest", type=Path, required=True, help="cohort manifest JSON")
    p.add_argument("--out", type=Path, default=None, help="feature CSV (default: features.csv beside the manifest)")
    _add_protocol(p)
    _add_common(p, seed=False)

    p = sub.add_parser("stats", help="correlate session metrics with VO2max")
    _add_source(p)
    p.add_argument("--out", type=Path, default=None, help="stats JSON (text table written beside it)")
    _add_protocol(p)
    _add_common(p, seed=False)

    p = sub.add_parser("train", help="fit one model on the whole cohort")
    _add_source(p)
    _add_models(p, "linear", single=True)
    p.add_argument("--out", type=Path, default=None, help="fit JSON (default: fit_<model>.json beside the input)")
    _add_protocol(p)
    _add_common(p)

    p = sub.add_parser("predict", help="apply a saved fit to a feature table")
    p.add_argument("--fit", type=Path, required=True, help="fit JSON written by train")
    p.add_argument("--features", type=Path, required=True, help="feature table CSV")
    p.add_argument("--out", type=Path, default=None, help="predictions CSV (default: stdout)")
    _add_common(p, seed=False, threads=False)

    p = sub.add_parser("eval", help="cross-validate models")
    _add_source(p)
    _add_models(p, "all")
    p.add_argument("--cv", type=parse_cv, default=(5, True), help="stratified:k | loocv | both (default both)")
    p.add_argument("--out", type=Path, default=None, help="report JSON (default: report.json beside the input)")
    _add_protocol(p)
    _add_common(p)

    p = sub.add_parser("pipeline", help="simulate (optional), features, stats, train and eval in one go")
    p.add_argument("--spec", default=None, help="cohort spec JSON or 'default'; omit to use --manifest")
    p.add_argument("--manifest", type=Path, default=None, help="existing cohort manifest")
    p.add_argument("--n", type=_positive_int, default=None, help="rescale a simulated cohort to N")
    p.add_argument("--sigma", type=float, default=None, help="override the simulated VO2max noise SD")
    _add_models(p, "all")
    p.add_argument("--cv", type=parse_cv, default=(5, True), help="stratified:k | loocv | both (default both)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_protocol(p)
    _add_common(p)
    return ap


# -- shared steps -----------------------------------------------------------


def _provenance(args, argv, seed=None) -> dict:
    return {"tool": "vo2kit", "version": __version__,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "argv": list(argv), "threads": getattr(args, "threads", 1), "seed": seed}


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def _cpsjt_config(args) -> CpsjtConfig:
    return CpsjtConfig(hr_allowance=args.hr_allowance, termination_mode=args.termination_mode,
                       interp_factor=args.interp_factor)


def _cohort_spec(args) -> CohortSpec:
    if args.spec in (None, "default"):
        spec = CohortSpec()
    else:
        path = Path(args.spec)
        try:
            spec = CohortSpec.from_dict(read_json(path))
        except (TypeError, KeyError) as exc:
            raise ValidationError(f"{path}: invalid cohort spec ({exc})") from None
    if args.sigma is not None:
        spec = CohortSpec(**{**spec.__dict__, "sigma": args.sigma})
    if args.n is not None:
        spec = spec.scaled(args.n)
    return spec


def manifest_features(manifest: CohortManifest, cfg: CpsjtConfig, threads: int = 1) -> list[FeatureVector]:
    def one(entry):
        rec = manifest.load_cpsjt(entry)
        try:
            outcome = run_cpsjt(rec, entry.participant, cfg)
        except ValidationError as exc:
            raise ValidationError(f"participant {entry.participant.id}: {exc}") from None
        return build_feature_vector(entry.participant, outcome, rec)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, manifest.entries))
    return [one(e) for e in manifest.entries]


def _load_features(args) -> tuple[list[FeatureVector], Path]:
    """Features at full precision from a manifest, or as stored in a table."""
    if args.manifest is not None:
        manifest = read_manifest(args.manifest)
        return manifest_features(manifest, _cpsjt_config(args), getattr(args, "threads", 1)), args.manifest.parent
    return read_feature_table(args.features), args.features.parent


def _design(rows: Sequence[FeatureVector]) -> DesignMatrix:
    return DesignMatrix.from_features(rows, FEATURE_COLUMNS)


def _seed_of(args) -> int:
    if args.seed is None:
        args.seed = fresh_seed()
    _say(args, f"seed: {args.seed}")
    return args.seed


def _write_with_provenance(path: Path, payload: dict, args, argv, seed=None):
    write_json(path, {**payload, "provenance": _provenance(args, argv, seed)})


def _stats_payload(rows) -> tuple[dict, str]:
    results = correlation_table(rows)
    return {"n": len(rows), "metrics": [r.to_dict() for r in results]}, format_correlation_table(results)


def model_specs(models: str, seed: int, overrides=()) -> list[ModelSpec]:
    extra: dict[str, dict] = {}
    for name, key, value in overrides:
        extra.setdefault(name, {})[key] = value
    try:
        return [ModelSpec(s.name, {**s.params, **extra.get(s.name, {})}) for s in parse_models(models, seed)]
    except TypeError as exc:
        raise ValidationError(f"bad model parameter: {exc}") from None


def _fit_payload(rows, model: str, seed: int, threads: int, overrides=()) -> dict:
    D = _design(rows)
    spec = model_specs(model, seed, overrides)[0]
    fit = spec.fit(D, threads=threads)
    return {"model": spec.to_dict(), "columns": list(D.columns), "n": D.n, "fit": fit.to_dict()}


def _eval_report(rows, models: str, cv, seed: int, threads: int, cfg: Optional[CpsjtConfig],
                 overrides=()) -> EvalReport:
    D = _design(rows)
    k, do_loo = cv
    specs = model_specs(models, seed, overrides)
    labels = [r.gender_code for r in rows]
    plan = stratified_kfold(labels, k, seed) if k else None
    runs = []
    for spec in specs:
        folds = cross_validate(D, spec, plan, threads) if plan else None
        loo = loocv(D, spec, threads) if do_loo else None
        runs.append((spec, folds, loo))
    config = {"k": k, "loocv": do_loo, "columns": list(D.columns),
              "cpsjt": cfg.to_dict() if cfg is not None else None}
    rep = report(D, runs, plan, config)
    return EvalReport(rep.models, seed, rep.plan_hash, rep.n, rep.config)


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args, argv) -> int:
    seed = _seed_of(args)
    spec = _cohort_spec(args)
    cohort = generate_cohort(spec, seed, threads=args.threads)
    manifest = write_cohort(cohort, args.out)
    write_json(args.out / "provenance.json", _provenance(args, argv, seed))
    _say(args, f"wrote {len(cohort.members)} participants to {manifest}")
    return 0


def cmd_ingest(args, argv) -> int:
    manifest = read_manifest(args.manifest)
    summary = []
    for e in manifest.entries:
        cpsjt, cpet = manifest.load_cpsjt(e), manifest.load_cpet(e)
        summary.append({"id": e.participant.id, "cpsjt_hr_samples": len(cpsjt.hr),
                        "cpsjt_accel_samples": len(cpsjt.accel), "cpet_hr_samples": len(cpet.hr)})
    _say(args, f"{len(manifest)} participants validated")
    if args.out is not None:
        _write_with_provenance(args.out, {"participants": summary}, args, argv)
    return 0


def cmd_features(args, argv) -> int:
    manifest = read_manifest(args.manifest)
    rows = manifest_features(manifest, _cpsjt_config(args), args.threads)
    out = args.out or args.manifest.parent / "features.csv"
    write_feature_table(rows, out)
    _say(args, f"wrote {len(rows)} feature rows to {out}")
    return 0


def cmd_stats(args, argv) -> int:
    rows, base = _load_features(args)
    payload, text = _stats_payload(rows)
    out = args.out or base / "stats.json"
    _write_with_provenance(out, payload, args, argv)
    atomic_write_text(out.with_suffix(".txt"), text + "\n")
    _say(args, text)
    return 0


def cmd_train(args, argv) -> int:
    if "," in args.model or args.model == "all":
        raise CliError("train fits a single model; pass one of " + "|".join(MODEL_NAMES))
    seed = _seed_of(args)
    rows, base = _load_features(args)
    payload = _fit_payload(rows, args.model, seed, args.threads, args.param)
    out = args.out or base / f"fit_{args.model}.json"
    _write_with_provenance(out, payload, args, argv, seed)
    _say(args, f"wrote {args.model} fit to {out}")
    return 0


def cmd_predict(args, argv) -> int:
    saved = read_json(args.fit)
    try:
        model, columns = load_model(saved["fit"]), saved["columns"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{args.fit}: not a fit file ({exc})") from None
    rows = read_feature_table(args.features)
    X = [[r.get(c) for c in columns] for r in rows]
    if any(v is None for row in X for v in row):
        raise ValidationError(f"{args.features}: absent values in model inputs")
    pred = model.predict(X)
    lines = ["id,predicted,actual"]
    for r, p in zip(rows, pred):
        lines.append(f"{r.id},{p:.6f},{'' if r.vo2max is None else f'{r.vo2max:.6f}'}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(args.out, text)
        _say(args, f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_eval(args, argv) -> int:
    seed = _seed_of(args)
    rows, base = _load_features(args)
    cfg = _cpsjt_config(args) if args.manifest is not None else None
    rep = _eval_report(rows, args.model, args.cv, seed, args.threads, cfg, args.param)
    out = args.out or base / "report.json"
    _write_with_provenance(out, rep.to_dict(), args, argv, seed)
    _say(args, rep.format_table())
    _say(args, f"wrote report to {out}")
    return 0


def cmd_pipeline(args, argv) -> int:
    if (args.spec is None) == (args.manifest is None):
        raise CliError("pipeline needs exactly one of --spec or --manifest")
    seed = _seed_of(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.spec is not None:
        cohort = generate_cohort(_cohort_spec(args), seed, threads=args.threads)
        manifest_path = write_cohort(cohort, out / "cohort")
        _say(args, f"simulated {len(cohort.members)} participants")
    else:
        manifest_path = args.manifest
    manifest = read_manifest(manifest_path)
    cfg = _cpsjt_config(args)
    rows = manifest_features(manifest, cfg, args.threads)
    write_feature_table(rows, out / "features.csv")

    payload, text = _stats_payload(rows)
    _write_with_provenance(out / "stats.json", payload, args, argv, seed)
    atomic_write_text(out / "stats.txt", text + "\n")
    _say(args, text)

    names = [s.name for s in parse_models(args.model, seed)]
    for name in dict.fromkeys(["linear", *names]):
        _write_with_provenance(out / f"fit_{name}.json", _fit_payload(rows, name, seed, args.threads, args.param),
                               args, argv, seed)
    rep = _eval_report(rows, args.model, args.cv, seed, args.threads, cfg, args.param)
    _write_with_provenance(out / "report.json", rep.to_dict(), args, argv, seed)
    _say(args, rep.format_table())
    _say(args, f"artifacts in {out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "features": cmd_features, "stats": cmd_stats,
            "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "pipeline": cmd_pipeline}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            return COMMANDS[args.command](args, argv)
    except CliError as exc:
        print(f"vo2kit {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ParseError, ValueError) as exc:
        print(f"vo2kit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        name = exc.filename or ""
        print(f"vo2kit {args.command}: error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
