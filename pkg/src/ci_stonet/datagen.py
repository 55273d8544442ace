"""Seeded synthetic data with ground truth.

Three families:

* simple confounding (separable / non-separable): six Gaussian confounders,
  nine treatments on [-1, 1] drawn from a logistic-tilted density by exact
  inverse CDF, quadratic treatment response;
* proxy simulation: five confounders seen only through 100 noisy proxies,
  balanced binary treatment, heterogeneous effect ``3 + eta(z)``;
* DAG misspecification: 50 proxies of a nonlinear confounder summary,
  with the proxy optionally entering the treatment or the outcome.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import expit

from .errors import ConfigurationError, DimensionError
from .model import Dataset


class DgpKind(str, enum.Enum):
    SEPARABLE = "separable"
    NON_SEPARABLE = "non_separable"
    PROXY_SIM = "proxy_sim"
    MISSPEC_BASIC = "misspec_basic_proxy"
    MISSPEC_OUTCOME = "misspec_outcome_proxy"
    MISSPEC_TREATMENT = "misspec_treatment_proxy"


SIMPLE_KINDS = (DgpKind.SEPARABLE, DgpKind.NON_SEPARABLE)
MISSPEC_KINDS = (DgpKind.MISSPEC_BASIC, DgpKind.MISSPEC_OUTCOME, DgpKind.MISSPEC_TREATMENT)


@dataclass(frozen=True)
class DgpSpec:
    kind: DgpKind
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    beta: Optional[tuple] = None
    gamma: float = 0.5
    zero_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", DgpKind(self.kind))
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigurationError("split sizes must be >= 1")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            if len(self.beta) != 6:
                raise ConfigurationError("beta needs 6 coefficients")

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test


@dataclass
class GeneratedData:
    spec: DgpSpec
    train: Dataset
    val: Dataset
    test: Dataset
    info: dict = field(default_factory=dict)

    @property
    def in_sample(self) -> Dataset:
        return concat_datasets(self.train, self.val)

    def splits(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def concat_datasets(*parts: Dataset) -> Dataset:
    X = None if parts[0].X is None else np.vstack([p.X for p in parts])
    truth = None
    if parts[0].truth is not None:
        truth = {}
        for k, v in parts[0].truth.items():
            if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == parts[0].n:
                truth[k] = np.concatenate([p.truth[k] for p in parts], axis=0)
            else:
                truth[k] = v
    return Dataset(np.vstack([p.A for p in parts]), np.vstack([p.Y for p in parts]), X, truth)


# ---------------------------------------------------------------------------
# simple confounding
# ---------------------------------------------------------------------------


def xi(Z, beta=None) -> np.ndarray | float:
    """``sum_{1,2} b sin z + sum_{3,4} b cos z + sum_{5,6} 1/(1 + exp(-b z + 0.5))``."""
    Z = np.asarray(Z, dtype=np.float64)
    single = Z.ndim == 1
    Z2 = np.atleast_2d(Z)
    if Z2.shape[1] != 6:
        raise DimensionError(f"xi needs 6 confounders, got {Z2.shape[1]}")
    b = np.ones(6) if beta is None else np.asarray(beta, dtype=np.float64)
    out = (
        b[0] * np.sin(Z2[:, 0])
        + b[1] * np.sin(Z2[:, 1])
        + b[2] * np.cos(Z2[:, 2])
        + b[3] * np.cos(Z2[:, 3])
        + expit(b[4] * Z2[:, 4] - 0.5)
        + expit(b[5] * Z2[:, 5] - 0.5)
    )
    return float(out[0]) if single else out


def xi_mean(beta=None) -> float:
    """E[xi(Z)] for Z ~ N(0, I_6), by closed form plus Gauss-Hermite quadrature."""
    b = np.ones(6) if beta is None else np.asarray(beta, dtype=np.float64)
    nodes, weights = np.polynomial.hermite_e.hermegauss(120)
    weights = weights / weights.sum()
    cos_part = b[2] * math.exp(-0.5 * b[2] ** 2) + b[3] * math.exp(-0.5 * b[3] ** 2)
    logistic_part = sum(float(weights @ expit(b[k] * nodes - 0.5)) for k in (4, 5))
    return cos_part + logistic_part


def _softplus(x):
    return np.logaddexp(0.0, x)


SERIES_CUTOFF = 1e-4


def tilted_cdf(a, c):
    """CDF of the density proportional to expit(c a) on [-1, 1]."""
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    c = np.asarray(c, dtype=np.float64)
    # the quotient loses about eps/|c| to cancellation; the series error is O(c^5)
    small = np.abs(c) < SERIES_CUTOFF
    safe_c = np.where(small, 1.0, c)
    val = (_softplus(safe_c * a) - _softplus(-safe_c)) / safe_c
    a2 = a * a
    series = (a + 1.0) / 2.0 + c * (a2 - 1.0) / 8.0 - c ** 3 * (a2 * a2 - 1.0) / 192.0
    return np.where(small, series, val)


def sample_treatment_inverse_cdf(c, u):
    """Exact inverse of ``tilted_cdf`` in its first argument.

    ``a = log(exp(w) - 1) / c`` with ``w = softplus(-c) + u c``; a third-order
    expansion in ``c`` is used for small ``|c|``.
    """
    c = np.asarray(c, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    c, u = np.broadcast_arrays(c, u)
    a0 = 2.0 * u - 1.0
    tiny = np.abs(c) < SERIES_CUTOFF
    safe_c = np.where(tiny, 1.0, c)
    w = _softplus(-safe_c) + u * safe_c
    exact = (w + np.log(-np.expm1(-w))) / safe_c
    q = 1.0 - a0 * a0
    series = a0 + c * q / 4.0 - c * c * a0 * q / 8.0 + c ** 3 * q * (13.0 * a0 * a0 - 5.0) / 192.0
    out = np.where(tiny, series, exact)
    out = np.clip(out, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def pairwise_sum(A) -> np.ndarray:
    """sum_{i<j} a_i a_j per row."""
    A = np.asarray(A, dtype=np.float64)
    s = A.sum(axis=1)
    return 0.5 * (s * s - (A * A).sum(axis=1))


def simple_outcome_mean(A, Z, theta, theta0, kind, beta=None) -> np.ndarray:
    """Structural E[Y | A, Z] (noise-free)."""
    A = np.asarray(A, dtype=np.float64)
    f1 = (A * A) @ np.asarray(theta)
    f2 = pairwise_sum(A)
    x = xi(Z, beta)
    if DgpKind(kind) is DgpKind.SEPARABLE:
        return f1 - theta0 * f2 + x
    return f1 - x * f2 + x


def simple_marginal_effects(A, Z, theta, theta0, kind, beta=None) -> np.ndarray:
    """Per-unit d/da_j of ``simple_outcome_mean`` at the observed treatment.

    The response is quadratic in each a_j, so this equals the symmetric
    finite-difference contrast for any step.
    """
    A = np.asarray(A, dtype=np.float64)
    others = A.sum(axis=1, keepdims=True) - A
    coef = theta0 if DgpKind(kind) is DgpKind.SEPARABLE else np.asarray(xi(Z, beta))[:, None]
    return 2.0 * np.asarray(theta)[None, :] * A - coef * others


def gen_simple_confounding(spec: DgpSpec) -> GeneratedData:
    if spec.kind not in SIMPLE_KINDS:
        raise ConfigurationError(f"{spec.kind.value} is not a simple-confounding DGP")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n_total
    theta = rng.uniform(-1.0, 1.0, size=9)
    theta0 = float(rng.uniform(-1.0, 1.0))
    Z = rng.standard_normal((n, 6))
    c = xi(Z, spec.beta)
    U = rng.uniform(size=(n, 9))
    A = sample_treatment_inverse_cdf(c[:, None], U)
    eps = rng.standard_normal(n)
    if spec.zero_noise:
        eps[:] = 0.0
    mean = simple_outcome_mean(A, Z, theta, theta0, spec.kind, spec.beta)
    Y = mean + eps
    effects = simple_marginal_effects(A, Z, theta, theta0, spec.kind, spec.beta)
    truth = {"Z": Z, "marginal_effects": effects, "theta": theta, "theta0": theta0}
    full = Dataset(A, Y, None, truth)
    info = {
        "theta": theta.tolist(),
        "theta0": theta0,
        "xi_mean": xi_mean(spec.beta),
        "beta": list(spec.beta) if spec.beta is not None else [1.0] * 6,
    }
    return _split(spec, full, info)


# ---------------------------------------------------------------------------
# proxy simulation
# ---------------------------------------------------------------------------


def _f_proxy(w):
    return 2.0 * expit(w - 0.5)


@lru_cache(maxsize=None)
def eta_centering_constant() -> float:
    """E[f(z1) f(z2)] = E[f(z)]^2 for independent standard normals."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(120)
    m = float((weights / weights.sum()) @ _f_proxy(nodes))
    return m * m


def eta(Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    return _f_proxy(Z[:, 0]) * _f_proxy(Z[:, 1]) - eta_centering_constant()


def proxy_propensity(Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    s = (stats.norm.cdf(Z[:, 0]) + stats.norm.cdf(Z[:, 2]) + stats.norm.cdf(Z[:, 4])) / 3.0
    return 0.25 * (1.0 + stats.beta.cdf(s, 2, 4))


def proxy_baseline(Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    return 5.0 * Z[:, 2] / (1.0 + Z[:, 3] ** 2) + 2.0 * Z[:, 4]


def truncated_normal(rng, mean, size, lo=-10.0, hi=10.0) -> np.ndarray:
    """N(mean, 1) restricted to [lo, hi] by rejection, row-wise means."""
    mean = np.asarray(mean, dtype=np.float64)
    out = mean[:, None] + rng.standard_normal((mean.size, size))
    bad = (out < lo) | (out > hi)
    while bad.any():
        idx = np.nonzero(bad)
        out[idx] = mean[idx[0]] + rng.standard_normal(idx[0].size)
        bad = (out < lo) | (out > hi)
    return out


def _proxy_chunk(rng, m, d_x=100):
    Z = rng.standard_normal((m, 5))
    mu = Z.mean(axis=1)
    gam = truncated_normal(rng, mu, 1)
    R = truncated_normal(rng, mu, d_x)
    X = (gam + R) / math.sqrt(2.0)
    p = proxy_propensity(Z)
    A = (rng.uniform(size=m) < p).astype(np.float64)
    return Z, X, A, p


def gen_proxy_sim(spec: DgpSpec) -> GeneratedData:
    """Balanced proxy simulation: units are generated in chunks until each arm
    has its quota, then each arm keeps its first units in generation order."""
    if spec.kind is not DgpKind.PROXY_SIM:
        raise ConfigurationError("gen_proxy_sim needs kind proxy_sim")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n_total
    need = {1.0: (n + 1) // 2, 0.0: n // 2}
    parts = []
    counts = {1.0: 0, 0.0: 0}
    while counts[1.0] < need[1.0] or counts[0.0] < need[0.0]:
        Z, X, A, p = _proxy_chunk(rng, max(n, 256))
        parts.append((Z, X, A, p))
        counts[1.0] += int(A.sum())
        counts[0.0] += int((1 - A).sum())
    Z = np.vstack([q[0] for q in parts])
    X = np.vstack([q[1] for q in parts])
    A = np.concatenate([q[2] for q in parts])
    p = np.concatenate([q[3] for q in parts])
    keep = np.zeros(A.size, dtype=bool)
    for arm, quota in need.items():
        keep[np.flatnonzero(A == arm)[:quota]] = True
    Z, X, A, p = Z[keep], X[keep], A[keep], p[keep]
    e = rng.standard_normal(n)
    if spec.zero_noise:
        e[:] = 0.0
    cate = 3.0 + eta(Z)
    Y = proxy_baseline(Z) + cate * A + 0.25 * e
    truth = {"Z": Z, "cate": cate, "propensity": p, "true_ate": 3.0}
    full = Dataset(A, Y, X, truth)
    info = {"tau": 3.0, "sigma_y": 0.25, "eta_centering": eta_centering_constant(), "d_x": 100}
    return _split(spec, full, info)


# ---------------------------------------------------------------------------
# DAG misspecification
# ---------------------------------------------------------------------------


def h1(Z):
    Z = np.atleast_2d(Z)
    return np.sin(Z[:, 0]) + 0.5 * Z[:, 1] ** 2 + 0.3 * (Z[:, 2] + Z[:, 3] + Z[:, 4])


def h2(Z):
    Z = np.atleast_2d(Z)
    return 0.7 * Z[:, 0] + 0.3 * Z[:, 1] - 0.2 * Z[:, 2]


def misspec_cate(Z):
    return 3.0 + 0.5 * np.sin(np.atleast_2d(Z)[:, 0])


def gen_dag_misspec(spec: DgpSpec, d_x: int = 50) -> GeneratedData:
    if spec.kind not in MISSPEC_KINDS:
        raise ConfigurationError(f"{spec.kind.value} is not a DAG-misspecification scenario")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    n = spec.n_total
    Z = rng.standard_normal((n, 5))
    noise_x = math.sqrt(0.5) * rng.standard_normal((n, d_x))
    u = rng.uniform(size=n)
    e_y = 0.5 * rng.standard_normal(n)
    if spec.zero_noise:
        noise_x[:] = 0.0
        e_y[:] = 0.0
    X = h1(Z)[:, None] + noise_x
    mean_abs = np.abs(X).mean(axis=1)
    logit = h2(Z)
    if spec.kind is DgpKind.MISSPEC_TREATMENT:
        logit = logit + 0.5 * mean_abs
    A = (u < expit(logit)).astype(np.float64)
    f = Z[:, 0] ** 2 + 0.5 * Z[:, 1] * Z[:, 2]
    cate = misspec_cate(Z)
    Y = f + A * cate + e_y
    if spec.kind is DgpKind.MISSPEC_OUTCOME:
        Y = Y + spec.gamma * mean_abs
    truth = {"Z": Z, "cate": cate, "propensity": expit(logit), "true_ate": 3.0}
    full = Dataset(A, Y, X, truth)
    info = {"gamma": spec.gamma, "d_x": d_x, "true_ate": 3.0}
    return _split(spec, full, info)


def _split(spec: DgpSpec, full: Dataset, info: dict) -> GeneratedData:
    a, b = spec.n_train, spec.n_train + spec.n_val
    info = {"kind": spec.kind.value, "seed": spec.seed, "n_train": spec.n_train, "n_val": spec.n_val,
            "n_test": spec.n_test, **info}
    return GeneratedData(spec, full.subset(np.arange(a)), full.subset(np.arange(a, b)),
                         full.subset(np.arange(b, spec.n_total)), info)


def generate(spec: DgpSpec) -> GeneratedData:
    if spec.kind in SIMPLE_KINDS:
        return gen_simple_confounding(spec)
    if spec.kind is DgpKind.PROXY_SIM:
        return gen_proxy_sim(spec)
    return gen_dag_misspec(spec)
