"""Command-line entry point: ``divprune {train,analyze,prune,sweep,bench,replay}``.

Every command writes a run manifest next to its output (resolved flags,
tool version, seed, SHA-256 digests of the inputs). ``divprune replay
MANIFEST`` checks the digests and reruns the command with the recorded
flags, which reproduces the outputs byte for byte.

Exit codes: 0 success, 2 usage, 3 input data, 4 internal consistency,
5 benchmark produced no result at all.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._fmt import fmt, rounded
from .data import _BUNDLED_DIR, DataError, Dataset, bundled_names, resolve_dataset
from .diversity import (
    ConsistencyError,
    DomainError,
    RiskParams,
    classify_interval,
    critical_points,
    decompose,
    estimated_risk,
    gamma_margin,
    kappa_of,
    margin_threshold,
    risk_bound,
    sweep_curve,
    sweep_to_csv,
)
from .evaluation import ExperimentConfig, cross_validate
from .learners import LearnerSpec, load_model, prediction_matrix, save_model, train_ensemble
from .pruning import METHODS, PruneConfig, prune

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONSISTENCY, EXIT_BENCH_FAILED = 0, 2, 3, 4, 5

DEFAULT_BENCH_DATA = tuple(f"bundled:{n}" for n in bundled_names())


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest helpers


def _sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def data_digest(spec: str, d: Dataset) -> str:
    """Digest of a dataset argument: file bytes when it names a file,
    otherwise the generated arrays."""
    if spec.startswith("bundled:"):
        return _sha256_bytes((_BUNDLED_DIR / f"{spec[8:]}.csv").read_bytes())
    if spec.startswith("synthetic:"):
        return _sha256_bytes(np.ascontiguousarray(d.features, dtype="<f8").tobytes()
                             + np.ascontiguousarray(d.labels, dtype="i1").tobytes())
    return _sha256_bytes(Path(spec).read_bytes())


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _manifest_path(args) -> str | None:
    if args.manifest:
        return args.manifest
    out = getattr(args, "out", None)
    if out and out != "-":
        return str(out) + ".manifest.json"
    return None


def build_manifest(args, digests: dict) -> dict:
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "manifest", "command")}
    return {
        "tool": "divprune",
        "version": __version__,
        "command": args.command,
        "seed": config.get("seed"),
        "config": config,
        "inputs": dict(sorted(digests.items())),
    }


def _emit_manifest(args, digests: dict) -> None:
    path = _manifest_path(args)
    if path:
        Path(path).write_text(_dump_json(build_manifest(args, digests)), encoding="utf-8")


def _load_data(spec: str) -> tuple[Dataset, str]:
    try:
        d = resolve_dataset(spec)
    except ValueError as exc:
        raise DataError(f"--data {spec!r}: {exc}") from None
    return d, data_digest(spec, d)


def _load_model(path: str):
    """Model plus the digest of its file; malformed documents are data errors."""
    try:
        raw = Path(path).read_bytes()
        return load_model(path), _sha256_bytes(raw)
    except OSError as exc:
        raise DataError(f"--model: cannot read {path}: {exc.strerror or exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"--model {path}: malformed model file: {exc}") from None


def _risk_params(args, n: int | None = None) -> RiskParams:
    samples = getattr(args, "samples", None) or n
    return RiskParams(delta=args.delta, epsilon=args.epsilon,
                      sample_size=int(samples), confidence=args.xi)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    d, digest = _load_data(args.data)
    ens = train_ensemble(d, args.ensemble, args.size, LearnerSpec.parse(args.base), args.seed)
    save_model(ens, args.out, extra={"trained_on": {"name": d.name, "sha256": digest,
                                                    "seed": args.seed}})
    _emit_manifest(args, {"data": digest})
    print(f"trained {len(ens)} members ({args.ensemble}, {ens.base.descriptor}) on "
          f"{d.name}: n={d.n_instances}, p={d.n_features} -> {args.out}")
    return EXIT_OK


def analyze_report(ens, d: Dataset, params: RiskParams) -> dict:
    """Decomposition, ensemble margin, bound and interval diagnosis."""
    pm = prediction_matrix(ens, d)
    prof = decompose(pm, ens.weights)
    warnings: list[str] = []
    report = {
        "dataset": d.name,
        "n_instances": d.n_instances,
        "n_members": len(ens),
        "params": {"delta": params.delta, "epsilon": params.epsilon,
                   "sample_size": params.sample_size, "xi": params.confidence},
        "decomposition": {"G": prof.g_bar, "A": prof.a_bar, "D": prof.d_bar,
                          "identity_residual": prof.g_bar - (prof.a_bar - prof.d_bar)},
        "n_ties": prof.n_ties,
    }
    if prof.n_ties:
        warnings.append(f"{prof.n_ties} tied vote(s) excluded from the margin")
    cp = critical_points(params)
    report["critical_points"] = cp.to_dict()
    if not cp.implied_condition_ok:
        warnings.append("epsilon lies outside the range assumed by the interval table")
    margin = None
    try:
        g = gamma_margin(pm, ens.weights, params)
        margin = {"gamma": g.gamma, "x_star": g.argmin_index, "div_star": g.div_at_argmin,
                  "lambda_star": g.lambda_at_argmin, "excluded": g.n_excluded}
    except DomainError as exc:
        warnings.append(f"margin: {exc}")
    report["margin"] = margin
    risk = {"kappa": None, "bound": None, "bound_threshold": margin_threshold(params),
            "risk_estimate": None, "interval": None, "diversity_helps": None}
    if margin is not None:
        try:
            risk["kappa"] = kappa_of(margin["gamma"], params.delta)
        except DomainError as exc:
            warnings.append(f"kappa: {exc}")
        try:
            risk["bound"] = risk_bound(margin["gamma"], params)
        except DomainError as exc:
            warnings.append(f"bound: {exc}")
        if margin["div_star"] == 0:
            # unanimous at x*: div carries no information there
            warnings.append("risk estimate: div(x*) = 0, decomposition degenerate at x*; "
                            "risk estimate not evaluated")
        else:
            try:
                risk["risk_estimate"] = estimated_risk(margin["div_star"],
                                                       margin["lambda_star"], params)
            except DomainError as exc:
                warnings.append(f"risk estimate: {type(exc).__name__}: {exc}")
        try:
            row = classify_interval(margin["div_star"], cp)
            risk["interval"] = row.label
            risk["diversity_helps"] = row.diversity_helps
        except DomainError as exc:
            warnings.append(f"interval: {exc}")
    report["risk"] = risk
    report["warnings"] = warnings
    return report


def _text_lines(report: dict, prefix: str = "") -> list[str]:
    lines = []
    for key, value in report.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            lines += _text_lines(value, name + ".")
        elif isinstance(value, list):
            for i, v in enumerate(value):
                lines.append(f"{name}[{i}]: {v}")
        elif isinstance(value, float):
            lines.append(f"{name}: {fmt(value)}")
        elif value is None:
            lines.append(f"{name}: n/a")
        else:
            lines.append(f"{name}: {value}")
    return lines


def cmd_analyze(args) -> int:
    d, digest = _load_data(args.data)
    ens, model_digest = _load_model(args.model)
    if args.samples is None:
        args.samples = d.n_instances
    report = analyze_report(ens, d, _risk_params(args, d.n_instances))
    sys.stdout.write("\n".join(_text_lines(report)) + "\n")
    if args.out:
        _write(args.out, _dump_json(rounded(report)))
    _emit_manifest(args, {"data": digest, "model": model_digest})
    return EXIT_OK


def cmd_prune(args) -> int:
    d, digest = _load_data(args.data)
    ens, model_digest = _load_model(args.model)
    cfg = PruneConfig(args.method, args.alpha, args.beta, args.rho, args.epsilon)
    res = prune(ens, d, cfg)
    _write(args.out, _dump_json(rounded(res.to_dict())))
    if args.save_model:
        save_model(res.sub_ensemble, args.save_model)
    _emit_manifest(args, {"data": digest, "model": model_digest})
    return EXIT_OK


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:n`` (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return np.linspace(float(lo), float(hi), n)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise UsageError(f"--grid: expected 'lo:hi:n' or a comma list, got {text!r}") from None


def cmd_sweep(args) -> int:
    params = _risk_params(args)
    lam = None if args.lam == "auto" else int(args.lam)
    rows = sweep_curve(params, parse_grid(args.grid), lam)
    _write(args.out, sweep_to_csv(rows))
    _emit_manifest(args, {})
    return EXIT_OK


def _parse_methods(text: str) -> list[str]:
    methods = sorted({m.strip() for m in text.split(",") if m.strip()})
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"--methods: unknown {bad}; choose from {','.join(METHODS)}")
    return methods


def cmd_bench(args) -> int:
    specs = args.data or list(DEFAULT_BENCH_DATA)
    loaded = [_load_data(s) for s in specs]
    digests = {f"data:{d.name}": h for d, h in loaded}
    cfg = ExperimentConfig(
        datasets=tuple(d for d, _ in loaded),
        prune_configs=tuple(PruneConfig(m, args.alpha, args.beta, args.rho, args.epsilon)
                            for m in _parse_methods(args.methods)),
        ensemble_method=args.ensemble,
        base=LearnerSpec.parse(args.base),
        size=args.size,
        folds=args.folds,
        seed=args.seed,
    )
    table = cross_validate(cfg)
    report = {"config": cfg.describe(), **table.report()}
    _write(args.out, table.to_csv())
    if args.report:
        _write(args.report, _dump_json(rounded(report)))
    _emit_manifest(args, digests)
    failed = [(d, m) for (d, m), c in sorted(table.cells.items()) if c.absent]
    for d, m in failed:
        print(f"warning: {d}/{m} absent: {table.cell(d, m).error}", file=sys.stderr)
    if len(failed) == len(table.cells):
        print("error: every benchmark cell failed", file=sys.stderr)
        return EXIT_BENCH_FAILED
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.manifest_file)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        recorded = doc["config"]
        command = doc["command"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from None
    ns = argparse.Namespace(**recorded, command=command, manifest=None,
                            func=_COMMANDS[command])
    if args.check_inputs:
        _verify_inputs(ns, doc.get("inputs", {}))
    return ns.func(ns)


def _verify_inputs(ns, inputs: dict) -> None:
    actual = {}
    if ns.command in ("train", "analyze", "prune"):
        actual["data"] = _load_data(ns.data)[1]
    if ns.command in ("analyze", "prune"):
        actual["model"] = _load_model(ns.model)[1]
    if ns.command == "bench":
        for s in ns.data or DEFAULT_BENCH_DATA:
            d, h = _load_data(s)
            actual[f"data:{d.name}"] = h
    for key, want in inputs.items():
        if actual.get(key) != want:
            raise DataError(f"input {key!r} changed since the manifest was written")


_COMMANDS = {"train": cmd_train, "analyze": cmd_analyze, "prune": cmd_prune,
             "sweep": cmd_sweep, "bench": cmd_bench}


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_risk_flags(p, samples: bool = False) -> None:
    g = p.add_argument_group("risk parameters")
    g.add_argument("--delta", type=float, default=1.0, help="margin scale delta (default: 1.0)")
    g.add_argument("--epsilon", type=float, default=0.01,
                   help="label-noise rate epsilon (default: 0.01)")
    g.add_argument("--xi", type=float, default=0.05,
                   help="confidence parameter xi of the bound (default: 0.05)")
    if samples:
        g.add_argument("--samples", type=_positive_int, default=200,
                       help="sample size |S| (default: 200)")
    else:
        g.add_argument("--samples", type=_positive_int, default=None,
                       help="sample size |S| (default: number of rows in --data)")


def _add_prune_flags(p) -> None:
    g = p.add_argument_group("pruning")
    g.add_argument("--alpha", type=float, default=0.6,
                   help="kept fraction cap, at most ceil(alpha*|F|) members (default: 0.6)")
    g.add_argument("--beta", type=float, default=1.0,
                   help="diversity weight in the EPBD score (default: 1.0)")
    g.add_argument("--rho", type=float, default=0.5,
                   help="DREP candidate fraction (default: 0.5)")
    g.add_argument("--epsilon", type=float, default=0.01,
                   help="label-noise rate used by EPBD's margin (default: 0.01)")


def _add_ensemble_flags(p, base: str) -> None:
    p.add_argument("--ensemble", choices=("bagging", "adaboost"), default="bagging",
                   help="ensemble constructor (default: bagging)")
    p.add_argument("--base", default=base,
                   help="base learner: stump, tree or tree:DEPTH (default: %(default)s)")
    p.add_argument("--size", type=_positive_int, default=21,
                   help="number of members (default: 21)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divprune",
        description="Diversity analysis and diversity-based pruning of voting ensembles.")
    parser.add_argument("--version", action="version", version=f"divprune {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    data_help = ("dataset: CSV path (label in last column), bundled:NAME "
                 f"({', '.join(bundled_names())}) or synthetic:two_gaussians[:n[:sep[:seed]]]")
    manifest_help = "run manifest path (default: OUT.manifest.json when OUT is a file)"

    p = sub.add_parser("train", help="train an ensemble and save it as JSON")
    p.add_argument("--data", required=True, help=data_help)
    _add_ensemble_flags(p, "stump")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--manifest", help=manifest_help)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="error decomposition, margin, bound and risk intervals")
    p.add_argument("--model", required=True, help="model JSON from 'train'")
    p.add_argument("--data", required=True, help=data_help)
    _add_risk_flags(p)
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--manifest", help=manifest_help)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prune", help="prune a saved ensemble on a pruning set")
    p.add_argument("--model", required=True, help="model JSON from 'train'")
    p.add_argument("--data", required=True, help=data_help)
    p.add_argument("--method", choices=METHODS, default="epbd",
                   help="pruning method (default: epbd)")
    _add_prune_flags(p)
    p.add_argument("--out", default="-", help="selection trace JSON (default: stdout)")
    p.add_argument("--save-model", help="also write the pruned sub-ensemble as a model")
    p.add_argument("--manifest", help=manifest_help)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sweep", help="risk estimate curve over a grid of diversity values")
    _add_risk_flags(p, samples=True)
    p.add_argument("--grid", default="-0.5:0.5:101",
                   help="'lo:hi:n' or comma list of div values (default: -0.5:0.5:101)")
    p.add_argument("--lambda", dest="lam", choices=("auto", "1", "-1"), default="auto",
                   help="margin sign; auto uses the sign of each div (default: auto)")
    p.add_argument("--out", default="-", help="CSV to write (default: stdout)")
    p.add_argument("--manifest", help=manifest_help)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="cross-validated comparison of pruning methods")
    p.add_argument("--data", action="append",
                   help=data_help + "; repeatable (default: every bundled dataset)")
    p.add_argument("--methods", default=",".join(METHODS),
                   help=f"comma list from {','.join(METHODS)} (default: all)")
    _add_ensemble_flags(p, "tree")
    _add_prune_flags(p)
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds (default: 5)")
    p.add_argument("--out", default="-", help="accuracy CSV (default: stdout)")
    p.add_argument("--report", help="JSON report with sizes, W/T/L and average ranks")
    p.add_argument("--manifest", help=manifest_help)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest_file", help="manifest JSON written by an earlier run")
    p.add_argument("--no-check-inputs", dest="check_inputs", action="store_false",
                   help="skip the input digest check")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"divprune {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"divprune {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConsistencyError as exc:
        print(f"divprune {args.command}: consistency error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except ValueError as exc:
        # invalid flag values caught by the config validators
        print(f"divprune {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
