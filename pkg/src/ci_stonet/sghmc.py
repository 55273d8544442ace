"""Adaptive SGHMC training: latent imputation alternating with parameter ascent.

One iteration on a minibatch is

1. momentum/position update of the batch's latent rows,
   ``v <- (1 - eps*eta) v + eps * grad_Z log pi + sqrt(2 eps eta) e`` and
   ``Z <- Z + eps * v``;
2. for each module, ``theta <- theta + gamma * ((n/m) grad log-lik + grad log prior)``.

Training runs three stages: a deterministic pretrain (the latent layer is
held at its conditional mean and the whole stack is back-propagated),
the stochastic train stage with decaying rates, and a finetune stage
that prunes once and continues at reduced rates.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError
from .model import Dataset, StoNetModel, evaluate, latent_conditional_mean
from .prior import PriorHyper, log_prior_grad, prune_mask

STAGES = ("pretrain", "train", "finetune")


class DecayKind(str, enum.Enum):
    HARMONIC = "harmonic"
    EMPIRICAL = "empirical"
    CONSTANT = "constant"


@dataclass(frozen=True)
class Decay:
    """Step-size schedule.

    ``harmonic``: ``base * c_e / (c_e + k**alpha)``.
    ``empirical``: ``eps_k = eps_{k-1} / (1 + eps_{k-1} * k**alpha)``, i.e.
    ``1/eps_k = 1/base + sum_{j=1..k} j**alpha``.
    """

    kind: DecayKind = DecayKind.EMPIRICAL
    alpha: float = 0.95
    c_e: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DecayKind(self.kind))
        if self.kind is DecayKind.HARMONIC:
            if not 0.0 < self.alpha < 1.0:
                raise ConfigurationError(f"harmonic decay needs alpha in (0, 1), got {self.alpha}")
            if self.c_e <= 0:
                raise ConfigurationError("harmonic decay needs c_e > 0")
        elif self.kind is DecayKind.EMPIRICAL and self.alpha < 0:
            raise ConfigurationError("empirical decay needs alpha >= 0")


def lr_at(k: int, base: float, decay: Decay) -> float:
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    if base <= 0:
        return 0.0
    if decay.kind is DecayKind.CONSTANT or k == 0:
        return float(base)
    if decay.kind is DecayKind.HARMONIC:
        return base * decay.c_e / (decay.c_e + k**decay.alpha)
    powers = np.arange(1, k + 1, dtype=np.float64) ** decay.alpha
    return 1.0 / (1.0 / base + powers.sum())


@dataclass(frozen=True)
class TrainSchedule:
    pretrain_epochs: int = 100
    train_epochs: int = 500
    finetune_epochs: int = 100
    eps0: float = 1e-3
    gamma0: dict = field(default_factory=lambda: {"latent": 5e-7, "treatment": 5e-6, "outcome": 5e-6})
    eta: float = 1.0
    eps_decay: Decay = Decay(DecayKind.EMPIRICAL, 0.95)
    gamma_decay: Decay = Decay(DecayKind.EMPIRICAL, 0.7)
    hmc_steps_per_iter: int = 1
    minibatch: Optional[int] = None
    finetune_factor: float = 0.1
    prune: bool = True
    leapfrog: bool = True
    per_sample_rates: bool = False
    update_sigma_z: bool = False
    sigma_z_prior: tuple = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("pretrain_epochs", "train_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.eps0 < 0 or any(g < 0 for g in self.gamma0.values()):
            raise ConfigurationError("rates must be non-negative")
        if self.eta <= 0:
            raise ConfigurationError("friction eta must be positive")
        if self.hmc_steps_per_iter < 1:
            raise ConfigurationError("hmc_steps_per_iter must be >= 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ConfigurationError("minibatch must be >= 1")
        if not 0 < self.finetune_factor <= 1:
            raise ConfigurationError("finetune_factor must lie in (0, 1]")

    def gamma_for(self, name: str) -> float:
        return float(self.gamma0.get(name, 0.0))


@dataclass
class LatentState:
    Z: np.ndarray
    v: np.ndarray

    def copy(self) -> "LatentState":
        return LatentState(self.Z.copy(), self.v.copy())


def init_state(model: StoNetModel, data: Dataset) -> LatentState:
    Z = np.ascontiguousarray(latent_conditional_mean(model, data))
    return LatentState(Z, np.zeros_like(Z))


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    log_density: float
    grad_norms: dict
    sigma_z2: float
    pruned_frac: float
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    state: Optional[LatentState] = None

    CSV_HEADER = ("epoch", "stage", "log_density", "grad_norm_module1", "grad_norm_module2",
                  "grad_norm_module3", "sigma_z2", "pruned_frac", "seconds")

    def rows(self):
        for r in self.records:
            norms = list(r.grad_norms.values()) + [""] * (3 - len(r.grad_norms))
            yield (r.epoch, r.stage, repr(r.log_density), *[repr(x) if x != "" else "" for x in norms],
                   repr(r.sigma_z2), repr(r.pruned_frac), f"{r.seconds:.6f}")

    def log_densities(self, stage: Optional[str] = None) -> np.ndarray:
        return np.array([r.log_density for r in self.records if stage is None or r.stage == stage])


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def impute_latent_step(
    state: LatentState,
    model: StoNetModel,
    batch: Dataset,
    rows,
    eps: float,
    eta: float,
    rng: Optional[np.random.Generator] = None,
    leapfrog: bool = True,
    noise: Optional[np.ndarray] = None,
) -> LatentState:
    """One SGHMC move of the latent rows ``rows`` (in place; returns ``state``).

    ``batch`` must hold the observed data of exactly those rows. With
    ``leapfrog=False`` the position moves along the previous momentum.
    """
    if eps < 0 or eta < 0:
        raise ConfigurationError("eps and eta must be non-negative")
    rows = np.asarray(rows, dtype=np.intp)
    if eps == 0:
        return state
    g = evaluate(model, batch, state.Z[rows], latent_grad=True, param_grads=False).latent_grad
    if noise is None:
        noise = rng.standard_normal(g.shape)
    ok = kernels.sghmc_update(state.Z, state.v, g, noise, rows, float(eps), float(eta), bool(leapfrog))
    if not ok:
        raise NumericError(f"latent update produced non-finite values (eps={eps:g}, eta={eta:g}); rates too large?")
    return state


def _apply_masks(model: StoNetModel, name: str) -> None:
    masks = model.masks.get(name)
    if masks:
        for arr, m in zip(model.params(name).arrays(), masks):
            arr *= m


def update_params_step(
    model: StoNetModel,
    batch: Dataset,
    Z,
    gammas: dict,
    prior: Optional[PriorHyper],
    n_total: Optional[int] = None,
    through_latent: bool = False,
    per_sample: bool = False,
) -> dict:
    """Ascend each module's conditional log-likelihood plus log-prior (in place).

    Minibatch likelihood gradients are scaled by ``n_total / batch.n``.
    With ``per_sample`` every rate is divided by ``n_total`` so ``gammas``
    act on the average per-observation log posterior.
    Returns the gradient norm per module.
    """
    scale = 1.0 if n_total is None else n_total / batch.n
    rate_div = float(n_total) if (per_sample and n_total) else 1.0
    ev = evaluate(model, batch, Z, latent_grad=False, param_grads=True, through_latent=through_latent)
    norms = {}
    for name, grad in ev.param_grads.items():
        gamma = float(gammas.get(name, 0.0)) / rate_div
        if gamma < 0:
            raise ConfigurationError("learning rates must be non-negative")
        params = model.params(name)
        total = 0.0
        for arr, g in zip(params.arrays(), grad.arrays()):
            step = scale * g
            if prior is not None:
                step = step + log_prior_grad(arr, prior)
            total += float((step * step).sum())
            if gamma > 0:
                arr += gamma * step
        _apply_masks(model, name)
        if not params.is_finite():
            raise NumericError(f"parameter update of module '{name}' produced non-finite values (gamma={gamma:g})")
        norms[name] = math.sqrt(total)
    return norms


def update_sigma_z(Z, mu1_values, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Posterior-mean-style estimate ``(beta + 0.5 * sum r^2) / (N/2 + alpha - 1)``.

    ``N`` counts scalar latent components (rows times latent width).
    """
    resid = np.asarray(Z, dtype=np.float64) - np.asarray(mu1_values, dtype=np.float64)
    count = resid.size
    if count < 1:
        raise ConfigurationError("need at least one latent component")
    denom = count / 2.0 + alpha - 1.0
    if denom <= 0:
        raise ConfigurationError(f"non-positive denominator {denom} in sigma_z^2 estimate")
    return (beta + 0.5 * float((resid * resid).sum())) / denom


def refresh_sigma_z(model: StoNetModel, data: Dataset, state: LatentState, alpha=1.0, beta=1.0) -> float:
    model.sigma_z2 = update_sigma_z(state.Z, latent_conditional_mean(model, data), alpha, beta)
    return model.sigma_z2


# ---------------------------------------------------------------------------
# the staged loop
# ---------------------------------------------------------------------------


def _batches(n: int, size: Optional[int], rng: np.random.Generator):
    if size is None or size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield np.sort(order[start : start + size])


def apply_pruning(model: StoNetModel, prior: PriorHyper) -> float:
    """Zero and freeze every weight (not bias) on the spike side; returns the pruned fraction."""
    pruned = total = 0
    for name, (_, params) in model.modules().items():
        masks = []
        for i, arr in enumerate(params.arrays()):
            if i % 2 == 0:
                keep = prune_mask(arr, prior)
                if name in model.masks:
                    keep &= model.masks[name][i]
                pruned += int((~keep).sum())
                total += keep.size
            else:
                keep = np.ones(arr.shape, dtype=bool)
            masks.append(keep)
        model.masks[name] = masks
        _apply_masks(model, name)
    return pruned / total if total else 0.0


def pruned_fraction(model: StoNetModel) -> float:
    pruned = total = 0
    for name, masks in model.masks.items():
        for i, m in enumerate(masks):
            if i % 2 == 0:
                pruned += int((~m).sum())
                total += m.size
    return pruned / total if total else 0.0


def _module_norms(model, norms):
    return {name: norms.get(name, 0.0) for name in model.modules()}


def train(
    model: StoNetModel,
    data: Dataset,
    schedule: TrainSchedule,
    prior: Optional[PriorHyper],
    rng=None,
    state: Optional[LatentState] = None,
    stages=STAGES,
    start_k: int = 0,
) -> tuple[StoNetModel, TrainLog]:
    """Run the staged schedule in place on ``model``; returns ``(model, log)``.

    ``log.state`` holds the final latent imputations. ``stages`` and
    ``start_k`` let callers run a subset (e.g. a warm-started finetune).
    """
    model.check_dataset(data)
    if rng is None:
        rng = np.random.default_rng(schedule.seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = data.n
    log = TrainLog()
    epoch = 0
    ctx = {"stage": None, "epoch": None}

    def record(stage, norms, t0):
        ld = evaluate(model, data, state.Z, latent_grad=False, param_grads=False).log_density
        log.records.append(EpochRecord(epoch, stage, ld, _module_norms(model, norms), model.sigma_z2,
                                       pruned_fraction(model), time.perf_counter() - t0))

    try:
        if "pretrain" in stages and schedule.pretrain_epochs > 0:
            ctx["stage"] = "pretrain"
            gammas = {k: schedule.gamma_for(k) for k in model.modules()}
            for _ in range(schedule.pretrain_epochs):
                ctx["epoch"] = epoch
                t0 = time.perf_counter()
                norms = {}
                for rows in _batches(n, schedule.minibatch, rng):
                    batch = data.subset(rows)
                    Zb = latent_conditional_mean(model, batch)
                    norms = update_params_step(model, batch, Zb, gammas, prior, n, through_latent=True,
                                               per_sample=schedule.per_sample_rates)
                state = init_state(model, data)
                record("pretrain", norms, t0)
                epoch += 1

        if state is None:
            state = init_state(model, data)

        k = start_k
        for stage in ("train", "finetune"):
            n_epochs = schedule.train_epochs if stage == "train" else schedule.finetune_epochs
            if stage not in stages or n_epochs == 0:
                continue
            ctx["stage"] = stage
            factor = 1.0
            if stage == "finetune":
                factor = schedule.finetune_factor
                if schedule.prune and prior is not None:
                    apply_pruning(model, prior)
            for _ in range(n_epochs):
                ctx["epoch"] = epoch
                t0 = time.perf_counter()
                eps = factor * lr_at(k, schedule.eps0, schedule.eps_decay)
                gammas = {name: factor * lr_at(k, schedule.gamma_for(name), schedule.gamma_decay) for name in model.modules()}
                norms = {}
                for rows in _batches(n, schedule.minibatch, rng):
                    batch = data.subset(rows)
                    for _ in range(schedule.hmc_steps_per_iter):
                        impute_latent_step(state, model, batch, rows, eps, schedule.eta, rng, schedule.leapfrog)
                    norms = update_params_step(model, batch, state.Z[rows], gammas, prior, n,
                                               per_sample=schedule.per_sample_rates)
                if schedule.update_sigma_z:
                    refresh_sigma_z(model, data, state, *schedule.sigma_z_prior)
                record(stage, norms, t0)
                epoch += 1
                k += 1
    except NumericError as err:
        raise NumericError(f"{err} [stage={ctx['stage']}, epoch={ctx['epoch']}]", ctx["stage"], ctx["epoch"]) from err

    if state is None:
        state = init_state(model, data)
    log.state = state
    return model, log
