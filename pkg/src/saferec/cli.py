"""Command-line entry point: ``saferec <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .analyze import write_analysis
from .calibration import ThresholdCache, ThresholdResult, calibration_fingerprint, empirical_risk_curve, select_threshold
from .data import Schema, k_core_filter, load_interactions, read_split, split, write_interactions, write_split
from .errors import InfeasibleAlphaError, SafeRecError
from .experiment import ExperimentConfig, candidates_from_split, recommend_all, run_sweep, safe_pools, truth_for
from .metrics import REPORT_COLUMNS, evaluate
from .plotting import PlotSpec, plot
from .ranker import ScoreTable, load_scorer, train_latent_factor
from .selection import RecommendationSet, beta_label, parse_beta, read_recommendations, write_recommendations
from .simulate import SimConfig, generate

_log = logging.getLogger("saferec")


def _schema(arg: str | None) -> Schema:
    if arg is None:
        return Schema()
    if arg == "kuairand":
        return Schema.kuairand()
    return Schema.from_dict(json.loads(Path(arg).read_text()))


def _beta_key(strategy: str, beta) -> str:
    return "-" if strategy == "remove" else beta_label(parse_beta(beta))


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = SimConfig.from_json(args.config) if args.config else SimConfig()
    overrides = {k: v for k, v in (("n_users", args.n_users), ("n_items", args.n_items), ("seed", args.seed)) if v is not None}
    cfg = cfg.replace(**overrides)
    sim = generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(sim.records, out / "interactions.csv")
    sim.scores.to_csv(out / "scores.csv")
    cfg.to_json(out / "sim_config.json")
    with open(out / "user_groups.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "group"])
        for u, g in sorted(sim.truth.group.items()):
            w.writerow([u, g])
    print(f"wrote {len(sim.records)} interactions to {out}")
    return 0


def cmd_ingest(args) -> int:
    records, stats = load_interactions(args.input, _schema(args.schema))
    n_before = len(records)
    if args.k_core:
        records = k_core_filter(records, args.k_core)
    ds = split(records, tuple(args.fractions), args.seed)
    sidecar = write_split(
        ds,
        args.out,
        {"rows_read": stats.rows_read, "dropped_nonpositive_duration": stats.dropped_nonpositive_duration,
         "k_core": args.k_core, "records_before_k_core": n_before, "records_after_k_core": len(records)},
    )
    print(f"wrote {args.out} and {sidecar}")
    return 0


def cmd_train(args) -> int:
    ds = read_split(args.split)
    model = train_latent_factor(
        ds.train, d=args.d, epochs=args.epochs, learning_rate=args.lr,
        regularization=args.reg, seed=args.seed, batch_size=args.batch_size,
    )
    model.save(args.out)
    print(f"final loss {model.final_loss:.6f}; wrote {args.out}")
    return 0


def _scorer(args):
    if args.scorer is None:
        raise SystemExit("--scorer is required")
    if args.scorer.endswith(".csv") and args.default_score is not None:
        return ScoreTable.from_csv(args.scorer, default=args.default_score)
    return load_scorer(args.scorer)


def cmd_calibrate(args) -> int:
    ds = read_split(args.split)
    scorer = _scorer(args)
    cal = [c for c in candidates_from_split(ds, scorer, "calibration", args.relevance_threshold) if len(c.items)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blabel = _beta_key(args.strategy, args.beta)
    digest = calibration_fingerprint(cal, args.k, extra=f"cap={args.pool_cap};scorer={args.scorer}")
    cache = ThresholdCache(args.cache or out / "calibration_cache.json")
    pools = safe_pools(cal, args.beta, args.pool_cap) if args.strategy == "replace" else None
    curve = empirical_risk_curve(cal, args.k, args.strategy, pools)
    curve.to_csv(out / "risk_curve.csv")
    th = cache.get(args.alpha, args.strategy, blabel, digest)
    if th is None:
        try:
            th = select_threshold(curve, args.alpha)
        except InfeasibleAlphaError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        cache.put(args.strategy, blabel, digest, th)
        cache.save()
    (out / "threshold.json").write_text(th.to_json())
    lam = "inf (no feasible threshold)" if math.isinf(th.lambda_hat) else f"{th.lambda_hat:.6g}"
    print(f"lambda_hat = {lam}; n = {th.n}; cache hits {cache.hits}")
    return 0


def cmd_recommend(args) -> int:
    ds = read_split(args.split)
    scorer = _scorer(args)
    users = candidates_from_split(ds, scorer, args.part, args.relevance_threshold)
    if args.threshold:
        lam = ThresholdResult.from_json(Path(args.threshold).read_text()).lambda_hat
    elif args.lam is not None:
        lam = args.lam
    else:
        lam = -math.inf
    pools = safe_pools(users, args.beta, args.pool_cap) if args.strategy == "replace" else None
    sets = recommend_all(users, pools, lam, args.k)
    write_recommendations([sets[u] for u in sorted(sets)], args.out)
    print(f"wrote {len(sets)} users to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = read_split(args.split)
    users = candidates_from_split(ds, ScoreTable(default=0.0), args.part, args.relevance_threshold)
    truth = truth_for(users)
    recs = read_recommendations(args.recs, args.k)
    unknown = set(recs) - set(truth)
    if unknown:
        raise SafeRecError(f"recommendations for users absent from the {args.part} split: {sorted(unknown)[:5]}")
    # users with no recommendation rows received an empty set
    sets = {u: recs.get(u, RecommendationSet(u, (), args.k, math.nan)) for u in truth}
    rep = evaluate(sets, truth, args.k)
    row = rep.row(alpha=args.alpha if args.alpha is not None else "", beta=args.beta or "", strategy=args.strategy or "")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            w.writerow({c: row.get(c, "") for c in REPORT_COLUMNS})
    print(json.dumps({c: row.get(c, "") for c in REPORT_COLUMNS}))
    return 0


def cmd_sweep(args) -> int:
    d = json.loads(Path(args.config).read_text())
    if args.alpha:
        d["alphas"] = args.alpha
    if args.beta:
        d["betas"] = args.beta
    if args.strategy:
        d["strategies"] = args.strategy
    if args.k is not None:
        d["k"] = args.k
    if args.seed:
        d["seeds"] = args.seed
    if args.out:
        d["out"] = args.out
    if args.workers is not None:
        d["workers"] = args.workers
    if args.no_plots:
        d["plots"] = False
    cfg = ExperimentConfig.from_dict(d)
    tables = run_sweep(cfg)
    res = tables["results"]
    n_bad = int((res["status"] != "ok").sum())
    print(f"wrote {len(res)} rows to {cfg.out} ({n_bad} infeasible)")
    return 0


def cmd_analyze(args) -> int:
    records, _ = load_interactions(args.input, _schema(args.schema))
    paths = write_analysis(records, args.out, betas=args.betas, summary_tables=args.summary_tables,
                           reporters_only=args.reporters_only)
    for p in paths:
        print(p)
    return 0


def cmd_plot(args) -> int:
    spec = PlotSpec(x=args.x, y=args.y, group_by=tuple(args.group_by or ()), diagonal=args.diagonal, name=args.name)
    for p in plot(args.results, spec, args.out):
        print(p)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_selection_args(p):
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--strategy", choices=["remove", "replace"], default="replace")
    p.add_argument("--beta", default="none", help="watch-fraction filter in percent, or 'none'")
    p.add_argument("--pool-cap", type=int, default=None)
    p.add_argument("--relevance-threshold", type=float, default=50.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saferec", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic interaction log")
    p.add_argument("--config", help="JSON simulator config")
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-items", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="load, k-core filter and split an interaction log")
    p.add_argument("input")
    p.add_argument("--schema", help="'kuairand' or a JSON column mapping")
    p.add_argument("--k-core", type=int, default=None)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.70, 0.15, 0.15])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="split CSV path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the latent-factor scorer on the train split")
    p.add_argument("split")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--reg", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=cmd_train)

    for name, func, hlp in (
        ("calibrate", cmd_calibrate, "select the score threshold on the calibration split"),
        ("recommend", cmd_recommend, "build recommendation sets"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("split")
        p.add_argument("--scorer", help="score-table CSV or model JSON")
        p.add_argument("--default-score", type=float, default=None)
        _add_selection_args(p)
        p.set_defaults(func=func)
    cal = sub.choices["calibrate"]
    cal.add_argument("--alpha", type=float, required=True)
    cal.add_argument("--cache", default=None)
    cal.add_argument("--out", required=True, help="output directory")
    rec = sub.choices["recommend"]
    rec.add_argument("--threshold", help="threshold.json from calibrate")
    rec.add_argument("--lambda", dest="lam", type=float, default=None)
    rec.add_argument("--part", choices=["calibration", "test"], default="test")
    rec.add_argument("--out", required=True, help="recommendations CSV")

    p = sub.add_parser("evaluate", help="score recommendation sets against held-out flags")
    p.add_argument("split")
    p.add_argument("--recs", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--part", choices=["calibration", "test"], default="test")
    p.add_argument("--relevance-threshold", type=float, default=50.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", default=None)
    p.add_argument("--strategy", default=None)
    p.add_argument("--out", default=None, help="one-row CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run an (alpha, beta, strategy, seed) sweep from a JSON config")
    p.add_argument("config")
    p.add_argument("--alpha", type=float, action="append")
    p.add_argument("--beta", action="append")
    p.add_argument("--strategy", action="append", choices=["remove", "replace"])
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, action="append")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="reporting and re-watch statistics as CSV")
    p.add_argument("input")
    p.add_argument("--schema")
    p.add_argument("--betas", type=float, nargs="+", default=[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100])
    p.add_argument("--summary-tables", action="store_true", help="also write formatted reporting and repeat summary tables")
    p.add_argument("--reporters-only", action="store_true", help="keep only users who flagged at least one view")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="render a results CSV as SVG")
    p.add_argument("results")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--group-by", nargs="*")
    p.add_argument("--diagonal", action="store_true")
    p.add_argument("--name")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SafeRecError, KeyError, ValueError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
