"""Monte-Carlo potential outcomes, treatment effects and error metrics.

For every unit, ``M`` latent draws ``z ~ N(mu1(input_i), sigma_z^2 I)`` are
taken (input is A for the simple wiring, X for the proxy wirings) and the
outcome network is averaged over them with the treatment slot set to the
intervention value. All contrasts reuse the same draws in both arms.

The marginal effect of a continuous treatment component ``j`` is defined
here as the symmetric contrast
``[psi_i(a_i + delta e_j) - psi_i(a_i - delta e_j)] / (2 delta)``
averaged over units, where ``psi_i`` is unit i's Monte-Carlo mean outcome.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError
from .model import Dataset, StoNetModel, latent_conditional_mean, predict_outcome


@dataclass
class CausalEstimate:
    psi: dict = field(default_factory=dict)
    se: dict = field(default_factory=dict)
    ate: Optional[float] = None
    cate: Optional[np.ndarray] = None
    M: int = 1
    seed: Optional[int] = None


class MetricName(str, enum.Enum):
    MAE_ATE = "MAE_ATE"
    RMSE_ATE = "RMSE_ATE"
    PEHE = "PEHE"


@dataclass
class MetricRecord:
    name: MetricName
    value: float
    n_datasets: int
    sd: Optional[float] = None


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def latent_draws(model: StoNetModel, data: Dataset, M: int, rng) -> np.ndarray:
    """Array (M, n, d_z) of draws from the fitted latent conditional."""
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    mu = latent_conditional_mean(model, data)
    noise = _rng(rng).standard_normal((M,) + mu.shape)
    return mu[None] + math.sqrt(max(model.sigma_z2, 0.0)) * noise


def _unit_outcomes(model: StoNetModel, data: Dataset, draws: np.ndarray, A_int: np.ndarray) -> np.ndarray:
    """(n, d_Y) per-unit mean outcome over the draws, intervention ``A_int`` (n, d_A)."""
    M, n, d_z = draws.shape
    Z = draws.reshape(M * n, d_z)
    A = np.broadcast_to(A_int, (M, n, A_int.shape[1])).reshape(M * n, -1)
    X = None
    if data.X is not None:
        X = np.broadcast_to(data.X, (M,) + data.X.shape).reshape(M * n, -1)
    out = predict_outcome(model, Z, A, X)
    return out.reshape(M, n, -1).mean(axis=0)


def _intervention(model, data, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a[None]
    if a.ndim == 1:
        if a.size != model.d_A:
            raise DimensionError(f"intervention has {a.size} components, model has d_A={model.d_A}")
        return np.broadcast_to(a, (data.n, model.d_A))
    if a.shape != (data.n, model.d_A):
        raise DimensionError(f"per-unit intervention must be {(data.n, model.d_A)}")
    return a


def unit_potential_outcomes(model, data, a, M, rng=None, draws=None) -> np.ndarray:
    """Per-unit Monte-Carlo means of the first outcome column, shape (n,)."""
    model.check_dataset(data)
    if draws is None:
        draws = latent_draws(model, data, M, rng)
    return _unit_outcomes(model, data, draws, _intervention(model, data, a))[:, 0]


def potential_outcome(model: StoNetModel, data: Dataset, a, M: int, rng=None, draws=None) -> float:
    """Pooled Monte-Carlo estimate of E[Y(a)]."""
    return float(unit_potential_outcomes(model, data, a, M, rng, draws).mean())


def potential_outcome_se(model, data, a, M, rng=None, draws=None) -> tuple[float, float]:
    """Estimate and its standard error from the between-unit spread."""
    vals = unit_potential_outcomes(model, data, a, M, rng, draws)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(vals.mean()), se


def _require_binary(model: StoNetModel):
    if model.d_A != 1:
        raise ConfigurationError("ATE/CATE need a single binary treatment")


def cate_per_unit(model: StoNetModel, data: Dataset, M: int, rng=None, draws=None) -> np.ndarray:
    _require_binary(model)
    model.check_dataset(data)
    if draws is None:
        draws = latent_draws(model, data, M, rng)
    y1 = _unit_outcomes(model, data, draws, np.ones((data.n, 1)))[:, 0]
    y0 = _unit_outcomes(model, data, draws, np.zeros((data.n, 1)))[:, 0]
    return y1 - y0


def ate(model: StoNetModel, data: Dataset, M: int, rng=None, draws=None) -> float:
    """psi(1) - psi(0) with shared latent draws."""
    return float(cate_per_unit(model, data, M, rng, draws).mean())


def estimate_binary(model: StoNetModel, data: Dataset, M: int, rng=None, seed=None) -> CausalEstimate:
    draws = latent_draws(model, data, M, rng)
    cate = cate_per_unit(model, data, M, draws=draws)
    est = CausalEstimate(M=M, seed=seed, cate=cate, ate=float(cate.mean()))
    for a in (0.0, 1.0):
        est.psi[a], est.se[a] = potential_outcome_se(model, data, a, M, draws=draws)
    return est


@dataclass
class MarginalEffects:
    effects: np.ndarray  # (d_A,)
    se: np.ndarray  # (d_A,)
    per_unit: np.ndarray  # (n, d_A)


def marginal_effects(model: StoNetModel, data: Dataset, M: int, delta: float, rng=None, draws=None) -> MarginalEffects:
    if model.binary_treatment:
        raise ConfigurationError("marginal effects need continuous treatments")
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    model.check_dataset(data)
    if draws is None:
        draws = latent_draws(model, data, M, rng)
    per_unit = np.empty((data.n, model.d_A))
    for j in range(model.d_A):
        step = np.zeros(model.d_A)
        step[j] = delta
        up = _unit_outcomes(model, data, draws, data.A + step)[:, 0]
        down = _unit_outcomes(model, data, draws, data.A - step)[:, 0]
        per_unit[:, j] = (up - down) / (2.0 * delta)
    se = per_unit.std(axis=0, ddof=1) / math.sqrt(data.n) if data.n > 1 else np.zeros(model.d_A)
    return MarginalEffects(per_unit.mean(axis=0), se, per_unit)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 1:
        raise DimensionError("need at least one entry")
    return a, b


def pehe(cate_hat, cate_true) -> float:
    a, b = _pair(cate_hat, cate_true)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae_ate(estimates, truths) -> MetricRecord:
    a, b = _pair(estimates, truths)
    err = np.abs(a - b)
    sd = float(err.std(ddof=1)) if err.size > 1 else 0.0
    return MetricRecord(MetricName.MAE_ATE, float(err.mean()), err.size, sd)


def rmse_ate(estimates, truths) -> MetricRecord:
    a, b = _pair(estimates, truths)
    return MetricRecord(MetricName.RMSE_ATE, float(np.sqrt(np.mean((a - b) ** 2))), a.size)


def format_metric(rec: MetricRecord) -> str:
    if rec.sd is None:
        return f"{rec.value:.4f}"
    return f"{rec.value:.4f}({rec.sd:.4f})"
