"""End-to-end runs: data, fit, estimates and metrics per replication."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .datagen import concat_datasets, generate
from .errors import ConfigurationError
from .estimate import estimate_binary, marginal_effects, pehe
from .io import load_dataset_csv
from .model import Dataset, StoNetModel, build_model
from .sghmc import TrainLog, refresh_sigma_z, train

THREADS_ENV = "CI_STONET_THREADS"


def replication_seed(master: int, rep: int) -> int:
    """Seed of replication ``rep``: a SeedSequence keyed by ``(rep,)`` under ``master``.

    Adding replications never changes the seeds of earlier ones.
    """
    if rep < 0:
        raise ConfigurationError("replication index must be >= 0")
    state = np.random.SeedSequence(int(master), spawn_key=(int(rep),)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def worker_count(requested: Optional[int] = None) -> int:
    """Parallel replications allowed: ``requested`` capped by ``CI_STONET_THREADS``."""
    raw = os.environ.get(THREADS_ENV)
    cap = None
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got '{raw}'") from None
        if cap < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
    n = requested if requested is not None else (cap or 1)
    return max(1, min(n, cap) if cap else n)


@dataclass
class Splits:
    train: Dataset
    val: Optional[Dataset] = None
    test: Optional[Dataset] = None
    info: Optional[dict] = None

    @property
    def in_sample(self) -> Dataset:
        if self.val is None:
            return self.train
        return concat_datasets(self.train, self.val)


def load_splits(cfg: ExperimentConfig, rep: int = 0) -> Splits:
    if cfg.csv is not None:
        src = cfg.csv
        return Splits(
            load_dataset_csv(src.train),
            None if src.val is None else load_dataset_csv(src.val),
            None if src.test is None else load_dataset_csv(src.test),
        )
    gen = generate(replace(cfg.dgp, seed=replication_seed(cfg.seed, rep)))
    return Splits(gen.train, gen.val, gen.test, gen.info)


def fit(cfg: ExperimentConfig, data: Dataset, seed: int, refresh: Optional[bool] = None) -> tuple[StoNetModel, TrainLog]:
    """Build, train and (optionally) refresh ``sigma_z^2`` from the final imputations."""
    mcfg = replace(cfg.model, d_A=data.d_A, d_Y=data.d_Y, d_X=data.d_X, seed=seed)
    if mcfg.binary_treatment and not np.isin(data.A, (0.0, 1.0)).all():
        raise ConfigurationError("binary_treatment is set but the treatment column is not 0/1")
    model = build_model(mcfg)
    sched = replace(cfg.schedule, seed=seed)
    model, log = train(model, data, sched, cfg.prior)
    if cfg.estimate.refresh_sigma_z if refresh is None else refresh:
        refresh_sigma_z(model, data, log.state, *sched.sigma_z_prior)
    return model, log


def _binary_metrics(cfg, model, splits, seed) -> dict:
    out = {}
    ss = np.random.SeedSequence(seed).spawn(2)
    for label, part, s in (("in_sample", splits.in_sample, ss[0]), ("out_of_sample", splits.test, ss[1])):
        if part is None:
            continue
        est = estimate_binary(model, part, cfg.estimate.M, np.random.default_rng(s))
        out[f"ate_{label}"] = est.ate
        out[f"psi0_{label}"] = est.psi[0.0]
        out[f"psi1_{label}"] = est.psi[1.0]
        truth = part.truth or {}
        if "cate" in truth:
            out[f"pehe_{label}"] = pehe(est.cate, truth["cate"])
        if "true_ate" in truth:
            out[f"abs_err_ate_{label}"] = abs(est.ate - float(truth["true_ate"]))
    return out


def _continuous_metrics(cfg, model, splits, seed) -> dict:
    part = splits.test if splits.test is not None else splits.train
    me = marginal_effects(model, part, cfg.estimate.M, cfg.estimate.delta, np.random.default_rng(seed))
    out = {f"me_{j + 1}": float(v) for j, v in enumerate(me.effects)}
    truth = part.truth or {}
    if "marginal_effects" in truth:
        tr = truth["marginal_effects"]
        tm, sd = tr.mean(axis=0), tr.std(axis=0)
        within = np.abs(me.effects - tm) <= 0.5 * sd
        for j in range(tr.shape[1]):
            out[f"true_me_{j + 1}"] = float(tm[j])
            out[f"true_sd_{j + 1}"] = float(sd[j])
        out["within_half_sd"] = float(within.mean())
    return out


def run_replication(cfg: ExperimentConfig, rep: int) -> dict:
    """Fit on the training split of replication ``rep`` and score it."""
    seed = replication_seed(cfg.seed, rep)
    splits = load_splits(cfg, rep)
    model, log = fit(cfg, splits.train, seed)
    row = {"replication": rep, "seed": seed, "final_log_density": float(log.records[-1].log_density) if log.records else float("nan")}
    row["sigma_z2"] = model.sigma_z2
    if model.binary_treatment:
        row.update(_binary_metrics(cfg, model, splits, seed))
    else:
        row.update(_continuous_metrics(cfg, model, splits, seed))
    return row


def _job(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_replications(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    """All replications, ordered by index whatever the degree of parallelism."""
    n = worker_count(workers)
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    return sorted(rows, key=lambda r: r["replication"])


def summarize(rows: list) -> list:
    """Mean and SD over replications per metric, as ``(metric, mean, sd, n, cell)`` rows."""
    keys = []
    for r in rows:
        for k in r:
            if k not in ("replication", "seed") and k not in keys:
                keys.append(k)
    out = []
    for k in keys:
        vals = np.array([r[k] for r in rows if k in r], dtype=np.float64)
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append((k, mean, sd, int(vals.size), f"{mean:.4f}({sd:.4f})"))
    return out


def results_table(rows: list) -> list:
    """Rows shaped like the published tables: quantity, in-sample cell, out-of-sample cell."""
    table = []
    for label, key in (("PEHE", "pehe"), ("ATE MAE", "abs_err_ate")):
        cells = []
        for split in ("in_sample", "out_of_sample"):
            vals = [r[f"{key}_{split}"] for r in rows if f"{key}_{split}" in r]
            if vals:
                mean = float(np.mean(vals))
                sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                cells.append(f"{mean:.4f}({sd:.4f})")
            else:
                cells.append("")
        if any(cells):
            table.append((label, *cells))
    if any("within_half_sd" in r for r in rows):
        vals = [r["within_half_sd"] for r in rows if "within_half_sd" in r]
        table.append(("marginal effects within half SD", f"{np.mean(vals):.4f}", ""))
    return table
