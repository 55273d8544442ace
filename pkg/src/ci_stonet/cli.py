"""Command-line entry point: ``ci-stonet <command> --config PATH [--seed N] [--out DIR]``.

Exit status 0 on success, 2 on configuration/schema/checkpoint errors and
3 on numeric failures; failures also print a one-line JSON error record
to stderr and write it to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .datagen import GeneratedData
from .diagnostics import bootstrap_ci, overlap_stress_test
from .errors import (
    CheckpointError,
    ConfigurationError,
    DegenerateFitError,
    DimensionError,
    NumericError,
    SchemaError,
)
from .estimate import estimate_binary, marginal_effects, pehe
from .io import (
    load_checkpoint,
    manifest,
    save_checkpoint,
    write_csv,
    write_generated,
    write_train_log,
)
from .pipeline import (
    fit,
    load_splits,
    results_table,
    replication_seed,
    run_replications,
    summarize,
    worker_count,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("generate", "train", "estimate", "diagnose", "bootstrap", "benchmark")


def _meta(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return manifest(cfg.digest(), cfg.seed, command=command, **extra)


def _checkpoint_path(cfg, out: Path) -> Path:
    return Path(cfg.estimate.checkpoint) if cfg.estimate.checkpoint else out / "model.json"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg, out: Path, args) -> dict:
    if cfg.dgp is None:
        raise ConfigurationError("generate needs a [dgp] section (the config points at CSV data)")
    written = []
    for rep in range(cfg.replications):
        splits = load_splits(cfg, rep)
        gen = GeneratedData(cfg.dgp, splits.train, splits.val, splits.test, splits.info or {})
        d = out / "data" / f"rep_{rep:03d}"
        write_generated(d, gen, _meta(cfg, "generate", replication=rep, replication_seed=replication_seed(cfg.seed, rep)))
        written.append(str(d))
    return {"datasets": written}


def cmd_train(cfg, out: Path, args) -> dict:
    rep = args.rep
    seed = replication_seed(cfg.seed, rep)
    splits = load_splits(cfg, rep)
    model, log = fit(cfg, splits.train, seed)
    meta = _meta(cfg, "train", replication=rep, replication_seed=seed)
    path = save_checkpoint(model, _checkpoint_path(cfg, out), meta)
    write_train_log(out / "train_log.csv", log, meta)
    last = log.records[-1] if log.records else None
    return {"checkpoint": str(path), "epochs": len(log.records), "final_log_density": None if last is None else last.log_density}


def _estimate_rngs(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]


def cmd_estimate(cfg, out: Path, args) -> dict:
    rep = args.rep
    seed = replication_seed(cfg.seed, rep)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    splits = load_splits(cfg, rep)
    meta = _meta(cfg, "estimate", replication=rep, replication_seed=seed)
    metrics = []
    summary = {}
    if model.binary_treatment:
        psi_rows, cate_rows = [], []
        parts = [("in_sample", splits.in_sample), ("out_of_sample", splits.test)]
        for (label, part), rng in zip(parts, _estimate_rngs(seed)):
            if part is None:
                continue
            est = estimate_binary(model, part, cfg.estimate.M, rng)
            truth = (part.truth or {}).get("cate")
            for a in (0.0, 1.0):
                psi_rows.append((label, a, est.psi[a], est.se[a]))
            for i, c in enumerate(est.cate):
                cate_rows.append((label, i, c) + (() if truth is None else (truth[i],)))
            metrics.append(("ate", label, est.ate))
            summary[f"ate_{label}"] = est.ate
            if truth is not None:
                p = pehe(est.cate, truth)
                metrics.append(("pehe", label, p))
                summary[f"pehe_{label}"] = p
            if part.truth and "true_ate" in part.truth:
                metrics.append(("abs_err_ate", label, abs(est.ate - part.truth["true_ate"])))
        write_csv(out / "psi.csv", ("split", "a", "psi", "se"), psi_rows, meta)
        has_truth = any(len(r) == 4 for r in cate_rows)
        write_csv(out / "cate.csv", ("split", "unit", "cate_hat") + (("cate_true",) if has_truth else ()), cate_rows, meta)
    else:
        part = splits.test if splits.test is not None else splits.train
        me = marginal_effects(model, part, cfg.estimate.M, cfg.estimate.delta, _estimate_rngs(seed)[1])
        truth = (part.truth or {}).get("marginal_effects")
        rows = []
        for j in range(model.d_A):
            row = [f"a_{j + 1}", me.effects[j], me.se[j]]
            if truth is not None:
                tm, sd = truth[:, j].mean(), truth[:, j].std()
                row += [tm, sd, int(abs(me.effects[j] - tm) <= 0.5 * sd)]
            rows.append(row)
        header = ["treatment", "estimate", "se"] + (["true_mean", "true_sd", "within_half_sd"] if truth is not None else [])
        write_csv(out / "marginal_effects.csv", header, rows, meta)
        if truth is not None:
            frac = float(np.mean([r[-1] for r in rows]))
            metrics.append(("within_half_sd", "test", frac))
            summary["within_half_sd"] = frac
    write_csv(out / "metrics.csv", ("metric", "split", "value"), metrics, meta)
    return summary


def cmd_diagnose(cfg, out: Path, args) -> dict:
    rep = args.rep
    seed = replication_seed(cfg.seed, rep)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    splits = load_splits(cfg, rep)
    d = cfg.diagnostics
    rep_ = overlap_stress_test(model, splits.train, d.alpha, d.B, np.random.default_rng(seed), eps=d.eps,
                               burn_in=d.burn_in, thin=d.thin)
    doc = {"overlap": rep_.to_dict(), "manifest": _meta(cfg, "diagnose", replication=rep)}
    (out / "overlap.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_csv(out / "overlap.csv", ("draw", "s_alpha"), enumerate(rep_.s_values), doc["manifest"])
    return {"alpha": rep_.alpha, "B": rep_.B, "s_bar": rep_.s_bar}


def cmd_bootstrap(cfg, out: Path, args) -> dict:
    rep = args.rep
    seed = replication_seed(cfg.seed, rep)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    splits = load_splits(cfg, rep)
    b = cfg.bootstrap
    res = bootstrap_ci(cfg.schedule, splits.train, model, b.B, b.level, b.short_epochs,
                       np.random.SeedSequence(seed), cfg.prior, cfg.estimate.M, worker_count(args.workers), b.rates)
    doc = {"bootstrap": res.to_dict(), "manifest": _meta(cfg, "bootstrap", replication=rep)}
    (out / "bootstrap.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_csv(out / "bootstrap_taus.csv", ("replicate", "tau"), enumerate(res.taus), doc["manifest"])
    return {"tau_hat": res.tau_hat, "lower": res.lower, "upper": res.upper, "level": res.level}


def cmd_benchmark(cfg, out: Path, args) -> dict:
    rows = run_replications(cfg, args.workers)
    meta = _meta(cfg, "benchmark", replications=cfg.replications)
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    write_csv(out / "benchmark_replications.csv", keys, [[r.get(k, "") for k in keys] for r in rows], meta)
    write_csv(out / "benchmark_summary.csv", ("metric", "mean", "sd", "n", "cell"), summarize(rows), meta)
    table = results_table(rows)
    write_csv(out / "benchmark_table.csv", ("method", "quantity", "in_sample", "out_of_sample"),
              [("CI-StoNet", *t) for t in table], meta)
    return {"table": [list(t) for t in table]}


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "estimate": cmd_estimate,
    "diagnose": cmd_diagnose,
    "bootstrap": cmd_bootstrap,
    "benchmark": cmd_benchmark,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ci-stonet", description="Causal effects with an imputed latent confounder.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p.add_argument("--rep", type=int, default=0, help="replication index for single-run commands")
    p.add_argument("--workers", type=int, default=None, help="parallel replications (capped by CI_STONET_THREADS)")
    return p


def _error_record(err: Exception, code: int) -> dict:
    rec = {"error": type(err).__name__, "message": str(err), "exit_code": code}
    if isinstance(err, NumericError):
        rec.update(err.context())
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        cfg = load_config(args.config, args.seed)
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.rep < 0 or (cfg.dgp is not None and args.rep >= cfg.replications and args.command != "generate"):
            raise ConfigurationError(f"--rep must lie in [0, {cfg.replications})")
        result = HANDLERS[args.command](cfg, out, args)
    except (ConfigurationError, DimensionError, SchemaError, CheckpointError) as err:
        return _fail(err, EXIT_CONFIG, out)
    except (NumericError, DegenerateFitError) as err:
        return _fail(err, EXIT_NUMERIC, out)
    print(json.dumps({"command": args.command, "out": str(out), **result}, sort_keys=True, default=float))
    return EXIT_OK


def _fail(err: Exception, code: int, out) -> int:
    rec = _error_record(err, code)
    line = json.dumps(rec, sort_keys=True)
    print(line, file=sys.stderr)
    if out is not None:
        try:
            Path(out, "error.json").write_text(line + "\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
