"""Command-line driver: ``infovalue <subcommand> [--config PATH] [--threads N] [--seed S] [--out DIR]``.

Subcommands read the dataset in ``paths.data_dir`` and write to ``paths.out_dir``
(or ``--out``). ``simulate`` instead writes a synthetic dataset to ``--out`` or, if
omitted, to ``paths.data_dir``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from collections import Counter, defaultdict
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import infoval as iv
from .config import ConfigError, RunConfig, load_config
from .embed import SentenceIndex
from .io import load_bundle
from .kyle import KyleEconomy, synthesize_dataset, write_dataset
from .microstructure import lambda_for_event
from .oos.metrics import dm_test_records, r2_oos, r2_oos_by_year
from .oos.window import (
    PredictionRecord,
    WindowFit,
    WindowPlan,
    build_features,
    default_test_years,
    run_expanding_window,
)
from .shapley import BudgetExhausted, ValueCache, scale_by_length, shapley_exact, shapley_montecarlo
from .shapley import TopicSet, topic_r2_value_function

__all__ = ["main", "build_parser", "read_predictions", "write_predictions"]

PREDICTION_COLUMNS = ("report_id", "stock_id", "date", "input_kind", "model_kind", "r", "r_hat")


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def write_predictions(path: Path, records: Sequence[PredictionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for p in records:
            w.writerow([p.report_id, p.stock_id, p.date.isoformat(), p.input_kind, p.model_kind,
                        repr(p.r), repr(p.r_hat)])


def read_predictions(path: Path) -> list[PredictionRecord]:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the evaluate subcommand first")
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != PREDICTION_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
        return [PredictionRecord(row["report_id"], row["stock_id"], date.fromisoformat(row["date"]),
                                 float(row["r_hat"]), float(row["r"]), row["model_kind"], row["input_kind"])
                for row in rd]


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.paths.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plan(cfg: RunConfig, dates: Sequence[date]) -> WindowPlan:
    years = cfg.window.test_years or default_test_years(dates, cfg.window.initial_fraction)
    return WindowPlan(years, cfg.window.validation_fraction, cfg.window.penalty_grid, cfg.window.pls_grid)


def _dm_dict(res) -> dict:
    return {"statistic": res.statistic, "periods": res.periods, "lag": res.lag,
            "mean_differential": res.mean_differential}


def _dm_pairs(cfg: RunConfig, preds: dict[str, list[PredictionRecord]]) -> list[dict]:
    out = []
    for pair in cfg.model.dm_pairs:
        a, b = pair.split(":")
        if a not in preds or b not in preds:
            raise ValueError(f"dm pair {pair}: predictions for both kinds are required")
        out.append({"a": a, "b": b, **_dm_dict(dm_test_records(preds[a], preds[b], cfg.dm.lag))})
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path | None) -> dict:
    sim = cfg.simulate
    economy = KyleEconomy(sim.p0, sim.sigma_s, sim.sigma_eps, sim.sigma_u)
    data = synthesize_dataset(economy, sim.n_events, sim.bars_per_event, sim.signal_share, sim.dims,
                              cfg.run.seed, n_years=sim.n_years, start_year=sim.start_year,
                              tick_events=sim.tick_events, n_topics=sim.n_topics)
    target = out or cfg.paths.data_dir
    write_dataset(data, target)
    return {"out": str(target), "events": sim.n_events}


def cmd_evaluate(cfg: RunConfig) -> dict:
    bundle = load_bundle(cfg.paths.data_dir, with_ticks=False)
    out = _out_dir(cfg)
    kinds = list(dict.fromkeys(cfg.model.input_kinds))
    preds: dict[str, list[PredictionRecord]] = {}
    report: dict[str, Any] = {"model_kind": cfg.model.model_kind, "input_kinds": {}}
    plan = None
    for kind in kinds:
        feats = build_features(bundle, kind, "all")
        plan = plan or _plan(cfg, feats.dates)
        log: list[WindowFit] = []
        p = run_expanding_window(None, plan, kind, cfg.model.model_kind, features=feats, fit_log=log,
                                 threads=cfg.run.threads)
        preds[kind] = p
        report["input_kinds"][kind] = {
            "r2_oos": r2_oos(p),
            "r2_oos_by_year": r2_oos_by_year(p),
            "n": len(p),
            "excluded": feats.excluded,
            "fits": [{"test_year": f.test_year, "n_train": f.n_train, "n_test": f.n_test,
                      "train_end": f.train_end.isoformat(), "hyperparameter": f.hyperparameter}
                     for f in sorted(log, key=lambda f: f.test_year)],
        }
    report["test_years"] = list(plan.test_years)
    report["dm"] = _dm_pairs(cfg, preds)
    write_predictions(out / "predictions.csv", [p for k in kinds for p in preds[k]])
    _write_json(out / "eval.json", report)
    return report


def cmd_dm(cfg: RunConfig) -> dict:
    path = cfg.paths.predictions or cfg.paths.out_dir / "predictions.csv"
    by_kind: dict[str, list[PredictionRecord]] = defaultdict(list)
    for p in read_predictions(path):
        if p.model_kind == cfg.model.model_kind:
            by_kind[p.input_kind].append(p)
    result = {"dm": _dm_pairs(cfg, by_kind)}
    _write_json(_out_dir(cfg) / "dm.json", result)
    return result


def cmd_shapley(cfg: RunConfig) -> dict:
    bundle = load_bundle(cfg.paths.data_dir, with_ticks=False)
    out = _out_dir(cfg)
    base = build_features(bundle, "sentence", "all")
    index = SentenceIndex(bundle, base.report_ids)
    topics = cfg.shapley.topics or index.topics
    if not topics:
        raise ValueError("the dataset has no sentence topics")
    plan = _plan(cfg, base.dates)
    value_fn = topic_r2_value_function(bundle, plan, cfg.shapley.model_kind, cfg.run.threads)
    cache_path = cfg.paths.shapley_cache or out / "shapley_cache.txt"
    cache = ValueCache(value_fn, cache_path, cfg.shapley.max_evaluations)
    if cfg.shapley.mode == "exact":
        attr = shapley_exact(cache, topics, cfg.run.threads)
    else:
        attr = shapley_montecarlo(cache, topics, cfg.shapley.n_permutations, cfg.run.seed, cfg.run.threads)
    lengths = index.topic_lengths()
    by_sent = scale_by_length(attr, {t: lengths.get(t, (0, 0))[0] for t in attr.topics})
    by_tok = scale_by_length(attr, {t: lengths.get(t, (0, 0))[1] for t in attr.topics})
    with open(out / "shapley.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["topic_id", "phi", "phi_scaled_sentences", "phi_scaled_tokens", "stderr"])
        for i, t in enumerate(attr.topics):
            se = "" if attr.stderr is None else repr(float(attr.stderr[i]))
            w.writerow([t, repr(float(attr.phi[i])), repr(float(by_sent.phi[i])), repr(float(by_tok.phi[i])), se])
    return {"topics": list(attr.topics), "total": attr.total, "sum_phi": float(attr.phi.sum()),
            "empty_value": cache(TopicSet(0)), "evaluations": cache.evaluations, "cached": len(cache)}


def _events_with_ticks(bundle) -> list[tuple[str, date, float]]:
    missing = set(bundle.missing_close)
    seen = {}
    for rep in bundle.matched_reports:
        if rep.report_id in missing:
            continue
        if rep.release_date not in bundle.tick_dates.get(rep.stock_id, ()):
            continue
        ret = bundle.return_for(rep.report_id)
        seen[(rep.stock_id, rep.release_date)] = ret.close_tminus2
    return [(s, d, c) for (s, d), c in sorted(seen.items())]


def _lambda_table(cfg: RunConfig, bundle) -> tuple[list[dict], Counter]:
    ms = cfg.microstructure
    rows, failures = [], Counter()
    for stock, day, close in _events_with_ticks(bundle):
        for rule in dict.fromkeys(ms.rules + (ms.rule,)):
            try:
                est = lambda_for_event(bundle, stock, day, close, rule, ms.flow_units, ms.quote_delay_ms,
                                       ms.intercept)
            except ValueError as exc:
                failures[str(exc).split(";")[0]] += 1
                continue
            rows.append({"stock_id": stock, "event_date": day, "rule": rule, "lambda": est.lambda_,
                         "stderr": est.stderr, "n_bars": est.n_bars, "close_tminus2": est.close_tminus2,
                         "standardized_impact": est.standardized_impact})
    return rows, failures


def _write_lambda_csv(path: Path, rows: list[dict]) -> None:
    cols = ["stock_id", "event_date", "rule", "lambda", "stderr", "n_bars", "close_tminus2", "standardized_impact"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["stock_id"], r["event_date"].isoformat(), r["rule"], repr(r["lambda"]),
                        repr(r["stderr"]), r["n_bars"], repr(r["close_tminus2"]), repr(r["standardized_impact"])])


def _rule_correlations(rows: list[dict]) -> dict[str, float]:
    by_rule: dict[str, dict] = defaultdict(dict)
    for r in rows:
        by_rule[r["rule"]][(r["stock_id"], r["event_date"])] = r["lambda"]
    rules = sorted(by_rule)
    out = {}
    for i, a in enumerate(rules):
        for b in rules[i + 1:]:
            keys = sorted(set(by_rule[a]) & set(by_rule[b]))
            if len(keys) < 2:
                continue
            x = np.array([by_rule[a][k] for k in keys])
            y = np.array([by_rule[b][k] for k in keys])
            if x.std() == 0 or y.std() == 0:
                out[f"{a}:{b}"] = float("nan")
            else:
                out[f"{a}:{b}"] = float(np.corrcoef(x, y)[0, 1])
    return out


def cmd_lambda(cfg: RunConfig) -> dict:
    bundle = load_bundle(cfg.paths.data_dir)
    rows, failures = _lambda_table(cfg, bundle)
    _write_lambda_csv(_out_dir(cfg) / "lambda.csv", rows)
    return {"events": len({(r["stock_id"], r["event_date"]) for r in rows}), "failures": dict(failures),
            "rule_correlation": _rule_correlations(rows)}


def _read_deflators(path: Path | None) -> dict[date, float] | None:
    if path is None:
        return None
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if set(rd.fieldnames or ()) != {"date", "deflator"}:
            raise ValueError(f"{path}: expected columns date,deflator")
        out = {}
        for i, row in enumerate(rd, start=1):
            v = float(row["deflator"])
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{path}: row {i}: deflator must be positive")
            out[date.fromisoformat(row["date"])] = v
        return out


def cmd_infoval(cfg: RunConfig) -> dict:
    bundle = load_bundle(cfg.paths.data_dir)
    out = _out_dir(cfg)
    rows, failures = _lambda_table(cfg, bundle)
    _write_lambda_csv(out / "lambda.csv", rows)
    impacts = {(r["stock_id"], r["event_date"]): r["standardized_impact"] for r in rows
               if r["rule"] == cfg.microstructure.rule}
    path = cfg.paths.predictions or out / "predictions.csv"
    preds = [p for p in read_predictions(path)
             if p.input_kind == cfg.infoval.input_kind and p.model_kind == cfg.model.model_kind]
    if not preds:
        raise ValueError(f"{path} has no {cfg.model.model_kind}/{cfg.infoval.input_kind} predictions")
    events, analysts, skipped = iv.build_event_records(bundle, preds, impacts,
                                                       _read_deflators(cfg.paths.deflator_table))
    if not events:
        raise ValueError("no event has both a forecast and a price-impact estimate")

    with open(out / "infoval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock_id", "date", "r", "r_hat", "explained_var", "std_impact", "omega", "week_bin", "flags"])
        for e in events:
            w.writerow([e.stock_id, e.date.isoformat(), repr(e.r), repr(e.r_hat), repr(e.explained_var),
                        repr(e.std_impact), repr(e.omega), "" if e.week_bin is None else e.week_bin,
                        "|".join(sorted(e.flags))])

    groups: dict[str, list] = {}
    if "all" in cfg.infoval.subsamples:
        groups["all"] = events
    if "week_bin" in cfg.infoval.subsamples:
        for b in range(1, iv.WEEK_BINS + 1):
            sel = [e for e in events if e.week_bin == b]
            if sel:
                groups[f"week_bin={b}"] = sel
    if "stock" in cfg.infoval.subsamples:
        for s in sorted({e.stock_id for e in events}):
            groups[f"stock={s}"] = [e for e in events if e.stock_id == s]
    summaries = {}
    for name, sel in groups.items():
        try:
            summaries[name] = iv.delta_summary(sel).as_dict()
        except ValueError as exc:
            summaries[name] = {"error": str(exc)}
    decomp, excluded = iv.decompose_all(events)
    summary = {
        "subsamples": summaries,
        "n_events": len(events),
        "n_analyst_records": len(analysts),
        "skipped": dict(skipped),
        "lambda_failures": dict(failures),
        "rule_correlation": _rule_correlations(rows),
        "log_decomposition": {"n": len(decomp), "excluded": dict(excluded)},
        "report_days_per_year": cfg.infoval.report_days_per_year,
    }
    if "all" in summaries and "mean_omega" in summaries["all"]:
        summary["annualized_mean_omega"] = iv.annualize(summaries["all"]["mean_omega"],
                                                        cfg.infoval.report_days_per_year)
    _write_json(out / "summary.json", summary)
    return summary


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def common_flags(default):
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", type=Path, default=default, help="INI run configuration")
        common.add_argument("--threads", type=int, default=default, help="cap on worker threads")
        common.add_argument("--seed", type=int, default=default, help="override the configured seed")
        common.add_argument("--out", type=Path, default=default, help="output directory")
        return common

    parser = argparse.ArgumentParser(prog="infovalue", description=__doc__.splitlines()[0],
                                     parents=[common_flags(None)])
    # flags may also follow the subcommand; suppressed defaults keep earlier values
    common = common_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "write a synthetic Kyle-economy dataset"),
        ("evaluate", "expanding-window forecasts, R2_oos and DM tests"),
        ("shapley", "topic attribution of R2_oos"),
        ("lambda", "Kyle lambda per event and signing rule"),
        ("infoval", "information value per event with delta-method summaries"),
        ("dm-test", "DM tests on an existing predictions.csv"),
        ("print-config", "print the effective configuration"),
    ):
        sub.add_parser(name, help=text, parents=[common])
    return parser


_COMMANDS = {
    "evaluate": cmd_evaluate,
    "shapley": cmd_shapley,
    "lambda": cmd_lambda,
    "infoval": cmd_infoval,
    "dm-test": cmd_dm,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        if args.command == "simulate":
            cfg = cfg.with_overrides(seed=args.seed, threads=args.threads)
            result = cmd_simulate(cfg, args.out)
        else:
            cfg = cfg.with_overrides(seed=args.seed, threads=args.threads, out_dir=args.out)
            if args.command == "print-config":
                sys.stdout.write(cfg.to_text())
                return 0
            result = _COMMANDS[args.command](cfg)
    except BudgetExhausted as exc:
        print(f"infovalue {args.command}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"infovalue {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(_json_safe(result), indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
