"""Latent-overlap stress test and warm-start bootstrap intervals."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DegenerateFitError, NumericError
from .estimate import ate
from .model import Dataset, StoNetModel
from .prior import PriorHyper
from .sghmc import TrainSchedule, impute_latent_step, init_state, train


# ---------------------------------------------------------------------------
# propensity model
# ---------------------------------------------------------------------------


@dataclass
class PropensityModel:
    """Logistic model ``expit(intercept + Z @ coef)`` on the original scale."""

    intercept: float
    coef: np.ndarray
    n_iter: int
    grad_norm: float

    def predict(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        return expit(self.intercept + Z @ self.coef)


def fit_propensity(Z, A, tol: float = 1e-8, max_iter: int = 500) -> PropensityModel:
    """Maximum-likelihood logistic regression by accelerated gradient ascent.

    Features are standardized internally and the coefficients mapped back,
    which keeps the Lipschitz step well conditioned. Stops when the
    gradient norm of the mean log-likelihood drops below ``tol`` or after
    ``max_iter`` iterations.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    A = np.asarray(A, dtype=np.float64).ravel()
    if Z.shape[0] != A.size:
        raise ConfigurationError(f"Z has {Z.shape[0]} rows, A has {A.size}")
    if not (np.isfinite(Z).all() and np.isfinite(A).all()):
        raise NumericError("non-finite input to propensity fit")
    if not np.isin(A, (0.0, 1.0)).all():
        raise ConfigurationError("treatment must be coded 0/1")
    if A.min() == A.max():
        raise DegenerateFitError(f"treatment has a single class ({int(A[0])}); propensity is not estimable")

    n, d = Z.shape
    loc = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale == 0] = 1.0
    F = np.hstack([np.ones((n, 1)), (Z - loc) / scale])
    # Lipschitz constant of the mean-log-likelihood gradient: lambda_max(F'F) / (4n)
    lip = np.linalg.eigvalsh(F.T @ F / n)[-1] / 4.0
    step = 1.0 / lip

    def grad(w):
        return F.T @ (A - expit(F @ w)) / n

    w = np.zeros(d + 1)
    w_prev = w.copy()
    t = 1.0
    g_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w + ((t - 1.0) / t_next) * (w - w_prev)
        w_prev = w
        w = y + step * grad(y)
        t = t_next
        g = grad(w)
        g_norm = float(np.linalg.norm(g))
        if not np.isfinite(w).all():
            raise NumericError("propensity fit diverged")
        if g_norm < tol:
            break
        # restart momentum when it stops helping
        if g @ (w - w_prev) < 0:
            t = 1.0
    coef = w[1:] / scale
    intercept = float(w[0] - loc @ coef)
    return PropensityModel(intercept, coef, it, g_norm)


# ---------------------------------------------------------------------------
# overlap stress test
# ---------------------------------------------------------------------------


@dataclass
class OverlapReport:
    alpha: float
    B: int
    s_values: np.ndarray
    s_bar: float

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "B": self.B, "s_bar": self.s_bar, "s_values": [float(s) for s in self.s_values]}


def overlap_fraction(e_hat, alpha: float) -> float:
    """Share of units with ``e < alpha`` or ``e > 1 - alpha``."""
    e_hat = np.asarray(e_hat, dtype=np.float64)
    return float(np.mean((e_hat < alpha) | (e_hat > 1.0 - alpha)))


def posterior_latent_draws(
    model: StoNetModel,
    data: Dataset,
    B: int,
    rng,
    eps: float = 1e-3,
    eta: float = 1.0,
    burn_in: int = 200,
    thin: int = 10,
) -> list:
    """``B`` latent imputations from one SGHMC chain started at the conditional mean."""
    if B < 1:
        raise ConfigurationError("B must be >= 1")
    if burn_in < 0 or thin < 1:
        raise ConfigurationError("need burn_in >= 0 and thin >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = init_state(model, data)
    rows = np.arange(data.n)
    for _ in range(burn_in):
        impute_latent_step(state, model, data, rows, eps, eta, rng)
    draws = []
    for _ in range(B):
        for _ in range(thin):
            impute_latent_step(state, model, data, rows, eps, eta, rng)
        draws.append(state.Z.copy())
    return draws


def overlap_stress_test(
    model: StoNetModel,
    data: Dataset,
    alpha: float,
    B: int,
    rng,
    eps: float = 1e-3,
    eta: float = 1.0,
    burn_in: int = 200,
    thin: int = 10,
    alphas: Optional[list] = None,
):
    """Refit a propensity model on each posterior imputation and report ``S_alpha``.

    With ``alphas`` a dict ``{alpha: OverlapReport}`` is returned that
    shares the same draws and fits.
    """
    grid = [alpha] if alphas is None else list(alphas)
    for a in grid:
        if not 0.0 < a < 0.5:
            raise ConfigurationError(f"alpha must lie in (0, 0.5), got {a}")
    if not model.binary_treatment or model.d_A != 1:
        raise ConfigurationError("overlap stress test needs a single binary treatment")
    model.check_dataset(data)
    draws = posterior_latent_draws(model, data, B, rng, eps, eta, burn_in, thin)
    A = data.A[:, 0]
    probs = [fit_propensity(Z, A).predict(Z) for Z in draws]
    reports = {}
    for a in grid:
        s = np.array([overlap_fraction(p, a) for p in probs])
        reports[a] = OverlapReport(float(a), B, s, float(s.mean()))
    return reports[alpha] if alphas is None else reports


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

SHORT_PHASE_RATES = ("train", "finetune")


@dataclass
class BootstrapResult:
    tau_hat: float
    taus: np.ndarray
    lower: float
    upper: float
    level: float

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "taus": [float(t) for t in self.taus],
        }


def percentile_interval(taus, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise ConfigurationError("level must lie in (0, 1)")
    lo, hi = np.quantile(np.asarray(taus, dtype=np.float64), [(1 - level) / 2, 1 - (1 - level) / 2], method="linear")
    return float(lo), float(hi)


def _replicate(args) -> float:
    schedule, data, model, prior, short_epochs, M, rates, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    rows = rng.integers(0, data.n, size=data.n)
    sample = data.subset(rows)
    fit = model.copy()
    if short_epochs > 0:
        sched = replace(schedule, pretrain_epochs=0, prune=False)
        if rates == "train":
            # undecayed train-stage rates; the finetune rates barely move the warm start
            sched = replace(sched, train_epochs=short_epochs, finetune_epochs=0)
            fit, _ = train(fit, sample, sched, prior, rng=rng, stages=("train",))
        else:
            sched = replace(sched, finetune_epochs=short_epochs)
            fit, _ = train(fit, sample, sched, prior, rng=rng, stages=("finetune",), start_k=schedule.train_epochs)
    return ate(fit, sample, M, rng)


def bootstrap_ci(
    schedule: TrainSchedule,
    data: Dataset,
    model: StoNetModel,
    B: int,
    level: float = 0.95,
    short_epochs: int = 20,
    rng=None,
    prior: Optional[PriorHyper] = None,
    M: int = 50,
    workers: int = 1,
    rates: str = "train",
) -> BootstrapResult:
    """Warm-start bootstrap of the ATE.

    Each replicate resamples units with replacement, copies the fitted
    (pruned) parameters, runs ``short_epochs`` of the SGHMC loop without
    further pruning and recomputes the ATE. ``rates="train"`` uses the
    undecayed train-stage rates, ``rates="finetune"`` the decayed and
    reduced rates the full fit ended with. Replicate ``b`` draws from its
    own spawned seed, so the result does not depend on ``workers``.
    """
    if B < 2:
        raise ConfigurationError("bootstrap needs B >= 2")
    if short_epochs < 0:
        raise ConfigurationError("short_epochs must be >= 0")
    if not 0.0 < level < 1.0:
        raise ConfigurationError("level must lie in (0, 1)")
    if rates not in SHORT_PHASE_RATES:
        raise ConfigurationError(f"rates must be one of {SHORT_PHASE_RATES}")
    root = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(
        rng if rng is None or isinstance(rng, (int, np.integer)) else rng.integers(2**63)
    )
    est_seed, rep_root = root.spawn(2)
    tau_hat = ate(model, data, M, np.random.default_rng(est_seed))
    jobs = [(schedule, data, model, prior, short_epochs, M, rates, s) for s in rep_root.spawn(B)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            taus = np.array(list(pool.map(_replicate, jobs)))
    else:
        taus = np.array([_replicate(j) for j in jobs])
    lower, upper = percentile_interval(taus, level)
    return BootstrapResult(float(tau_hat), taus, lower, upper, float(level))
