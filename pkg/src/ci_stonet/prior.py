"""Mixture-Gaussian spike-and-slab prior on network weights.

Each weight is a priori ``(1 - lambda_n) N(0, sigma_0^2) + lambda_n N(0, sigma_1^2)``
with properly normalized components.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class PriorHyper:
    lambda_n: float = 1e-6
    sigma_0: float = math.sqrt(1e-4)
    sigma_1: float = math.sqrt(1e-1)

    def __post_init__(self):
        if not 0.0 < self.lambda_n < 1.0:
            raise ConfigurationError(f"lambda_n must lie in (0, 1), got {self.lambda_n}")
        if not 0.0 < self.sigma_0 <= self.sigma_1:
            raise ConfigurationError(
                f"need 0 < sigma_0 <= sigma_1, got sigma_0={self.sigma_0}, sigma_1={self.sigma_1}"
            )

    @classmethod
    def from_variances(cls, lambda_n: float, sigma0_sq: float, sigma1_sq: float) -> "PriorHyper":
        if sigma0_sq <= 0 or sigma1_sq <= 0:
            raise ConfigurationError("prior variances must be positive")
        return cls(lambda_n, math.sqrt(sigma0_sq), math.sqrt(sigma1_sq))

    def to_dict(self) -> dict:
        return {"lambda_n": self.lambda_n, "sigma0_sq": self.sigma_0**2, "sigma1_sq": self.sigma_1**2}


def _as_finite(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if not np.isfinite(theta).all():
        raise NumericError("non-finite parameter passed to prior")
    return theta


def log_prior(theta, hyper: PriorHyper) -> float:
    theta = _as_finite(theta)
    value, _ = kernels.mixture_logpdf_grad(theta.ravel(), hyper.lambda_n, hyper.sigma_0, hyper.sigma_1)
    return value


def log_prior_grad(theta, hyper: PriorHyper) -> np.ndarray:
    """Elementwise ``-theta * (r0 / sigma_0^2 + r1 / sigma_1^2)`` with responsibilities r0, r1."""
    theta = _as_finite(theta)
    _, grad = kernels.mixture_logpdf_grad(theta.ravel(), hyper.lambda_n, hyper.sigma_0, hyper.sigma_1)
    return grad.reshape(theta.shape)


def prune_mask(theta, hyper: PriorHyper) -> np.ndarray:
    """True where the weighted slab density is at least the weighted spike density."""
    theta = np.asarray(theta, dtype=np.float64)
    return kernels.slab_mask(theta.ravel(), hyper.lambda_n, hyper.sigma_0, hyper.sigma_1).reshape(theta.shape)


def prune_threshold(hyper: PriorHyper) -> float:
    """|theta| at which the two weighted component densities cross."""
    if hyper.sigma_0 == hyper.sigma_1:
        return 0.0 if hyper.lambda_n >= 0.5 else math.inf
    num = 2.0 * (math.log1p(-hyper.lambda_n) - math.log(hyper.lambda_n) + math.log(hyper.sigma_1 / hyper.sigma_0))
    den = 1.0 / hyper.sigma_0**2 - 1.0 / hyper.sigma_1**2
    return math.sqrt(max(num / den, 0.0))


@dataclass
class HyperReport:
    """Outcome of checking the prior against the sparse-consistency window."""

    c: float
    lambda_window: tuple[float, float]
    sigma0_window: tuple[float, float]
    lambda_ok: bool
    sigma0_ok: bool
    messages: list[str]

    @property
    def ok(self) -> bool:
        return self.lambda_ok and self.sigma0_ok


def validate_hyper(n: int, K_n: int, hyper: PriorHyper, delta_n: float, c: float = 1.1, warn: bool = True) -> HyperReport:
    """Check ``(n/K)^c < lambda < n/K`` and ``(n/K)^c < sigma_0 < min(1 - n/K, delta/sqrt(c log K - (c-1) log n))``.

    Advisory only: violations are reported (and emitted as warnings when
    ``warn``), never raised.
    """
    if c <= 1:
        raise ConfigurationError("c must exceed 1")
    ratio = n / K_n
    lo = ratio**c
    lam_win = (lo, ratio)
    radicand = c * math.log(K_n) - (c - 1.0) * math.log(n)
    cap = delta_n / math.sqrt(radicand) if radicand > 0 else math.inf
    sig_win = (lo, min(1.0 - ratio, cap))
    messages = []
    lam_ok = lam_win[0] < hyper.lambda_n < lam_win[1]
    if not lam_ok:
        messages.append(f"lambda_n={hyper.lambda_n:.3g} outside ({lam_win[0]:.3g}, {lam_win[1]:.3g})")
    sig_ok = sig_win[0] < hyper.sigma_0 < sig_win[1]
    if not sig_ok:
        messages.append(f"sigma_0={hyper.sigma_0:.3g} outside ({sig_win[0]:.3g}, {sig_win[1]:.3g})")
    if K_n <= n:
        messages.append(f"K_n={K_n} <= n={n}: the window assumes an over-parameterized network")
    if warn:
        for m in messages:
            warnings.warn(m, stacklevel=2)
    return HyperReport(c, lam_win, sig_win, lam_ok, sig_ok, messages)
