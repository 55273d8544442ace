"""Causal-DAG wiring of the network modules and the log densities they imply.

Four wirings are supported:

* ``SIMPLE``: ``Z = mu1(A) + e_z``, ``Y = mu2(Z, A) + e_y``
* ``BASIC_PROXY``: ``Z = mu1(X) + e_z``, ``A = mu2(Z) + e_a``, ``Y = mu3(Z, A) + e_y``
* ``OUTCOME_PROXY``: as basic, with ``Y = mu3(Z, A, X) + e_y``
* ``TREATMENT_PROXY``: as basic, with ``A = mu2(Z, X) + e_a``

Network inputs are always concatenated in the order (Z, A, X). A binary
treatment head uses a sigmoid output and a Bernoulli likelihood; otherwise
the treatment is Gaussian with variance ``sigma_a2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError
from .nn import Activation, MlpParams, MlpSpec, init_params, mlp_backward, mlp_forward

LOG_2PI = math.log(2.0 * math.pi)


class DagVariant(str, enum.Enum):
    SIMPLE = "simple"
    BASIC_PROXY = "basic_proxy"
    OUTCOME_PROXY = "outcome_proxy"
    TREATMENT_PROXY = "treatment_proxy"

    @property
    def uses_proxy(self) -> bool:
        return self is not DagVariant.SIMPLE


MODULE_NAMES = ("latent", "treatment", "outcome")


@dataclass
class Dataset:
    """Observed data plus optional ground truth (synthetic data only)."""

    A: np.ndarray
    Y: np.ndarray
    X: Optional[np.ndarray] = None
    truth: Optional[dict] = None

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.Y = _as_matrix(self.Y, "Y")
        if self.X is not None:
            self.X = _as_matrix(self.X, "X")
        n = self.A.shape[0]
        if self.Y.shape[0] != n or (self.X is not None and self.X.shape[0] != n):
            raise DimensionError("A, Y and X must have the same number of rows")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d_A(self) -> int:
        return self.A.shape[1]

    @property
    def d_Y(self) -> int:
        return self.Y.shape[1]

    @property
    def d_X(self) -> int:
        return 0 if self.X is None else self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        truth = None
        if self.truth is not None:
            truth = {}
            for k, v in self.truth.items():
                if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == self.n:
                    truth[k] = v[rows]
                else:
                    truth[k] = v
        return Dataset(self.A[rows], self.Y[rows], None if self.X is None else self.X[rows], truth)


def _as_matrix(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def concat_stack(Z, A=None, X=None) -> np.ndarray:
    return np.concatenate([m for m in (Z, A, X) if m is not None], axis=1)


@dataclass(frozen=True)
class StoNetConfig:
    variant: DagVariant = DagVariant.SIMPLE
    d_A: int = 1
    d_Y: int = 1
    d_X: int = 0
    d_z: int = 6
    latent_hidden: tuple[int, ...] = (32,)
    treatment_hidden: tuple[int, ...] = (16,)
    outcome_hidden: tuple[int, ...] = (8, 4)
    hidden_activation: Activation = Activation.TANH
    binary_treatment: bool = False
    sigma_z2: float = 1e-5
    sigma_a2: float = 1e-4
    sigma_y2: float = 1e-3
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", DagVariant(self.variant))
        object.__setattr__(self, "hidden_activation", Activation(self.hidden_activation))
        for name in ("latent_hidden", "treatment_hidden", "outcome_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))


@dataclass
class StoNetModel:
    variant: DagVariant
    latent_spec: MlpSpec
    latent_params: MlpParams
    outcome_spec: MlpSpec
    outcome_params: MlpParams
    treatment_spec: Optional[MlpSpec] = None
    treatment_params: Optional[MlpParams] = None
    sigma_z2: float = 1e-5
    sigma_a2: float = 1e-4
    sigma_y2: float = 1e-3
    d_A: int = 1
    d_X: int = 0
    binary_treatment: bool = False
    seed_lineage: list = field(default_factory=list)
    masks: dict = field(default_factory=dict)

    @property
    def d_z(self) -> int:
        return self.latent_spec.d_out

    @property
    def d_Y(self) -> int:
        return self.outcome_spec.d_out

    def modules(self) -> dict:
        out = {"latent": (self.latent_spec, self.latent_params)}
        if self.treatment_spec is not None:
            out["treatment"] = (self.treatment_spec, self.treatment_params)
        out["outcome"] = (self.outcome_spec, self.outcome_params)
        return out

    def params(self, name) -> MlpParams:
        return self.modules()[name][1]

    def n_params(self) -> int:
        return sum(spec.n_params() for spec, _ in self.modules().values())

    def copy(self) -> "StoNetModel":
        return replace(
            self,
            latent_params=self.latent_params.copy(),
            outcome_params=self.outcome_params.copy(),
            treatment_params=None if self.treatment_params is None else self.treatment_params.copy(),
            seed_lineage=list(self.seed_lineage),
            masks={k: [m.copy() for m in v] for k, v in self.masks.items()},
        )

    def check_dataset(self, data: Dataset) -> None:
        if data.d_A != self.d_A:
            raise DimensionError(f"dataset has d_A={data.d_A}, model expects {self.d_A}")
        if data.d_Y != self.d_Y:
            raise DimensionError(f"dataset has d_Y={data.d_Y}, model expects {self.d_Y}")
        if self.variant.uses_proxy:
            if data.X is None or data.d_X != self.d_X:
                raise DimensionError(f"{self.variant.value} model needs X with {self.d_X} columns")

    def latent_input(self, data: Dataset) -> np.ndarray:
        return data.X if self.variant.uses_proxy else data.A

    def treatment_input(self, Z, X=None) -> np.ndarray:
        if self.variant is DagVariant.TREATMENT_PROXY:
            return concat_stack(Z, None, X)
        return Z

    def outcome_input(self, Z, A, X=None) -> np.ndarray:
        if self.variant is DagVariant.OUTCOME_PROXY:
            return concat_stack(Z, A, X)
        return concat_stack(Z, A)


def build_model(config: StoNetConfig) -> StoNetModel:
    """Instantiate a model with freshly initialized parameters and validated wiring."""
    v = config.variant
    if config.d_z < 1:
        raise ConfigurationError(f"d_z must be >= 1, got {config.d_z}")
    if config.d_A < 1 or config.d_Y < 1:
        raise ConfigurationError("d_A and d_Y must be >= 1")
    if v.uses_proxy and config.d_X < 1:
        raise ConfigurationError(f"{v.value} requires proxy dimension d_X >= 1")
    if config.sigma_z2 <= 0 or config.sigma_y2 <= 0:
        raise ConfigurationError("sigma_z2 and sigma_y2 must be positive")
    if v.uses_proxy and not config.binary_treatment and config.sigma_a2 <= 0:
        raise ConfigurationError("sigma_a2 must be positive for a Gaussian treatment head")
    act = config.hidden_activation
    latent_in = config.d_X if v.uses_proxy else config.d_A
    latent_spec = MlpSpec((latent_in, *config.latent_hidden, config.d_z), act, Activation.IDENTITY)
    out_in = config.d_z + config.d_A + (config.d_X if v is DagVariant.OUTCOME_PROXY else 0)
    outcome_spec = MlpSpec((out_in, *config.outcome_hidden, config.d_Y), act, Activation.IDENTITY)
    treatment_spec = None
    if v.uses_proxy:
        t_in = config.d_z + (config.d_X if v is DagVariant.TREATMENT_PROXY else 0)
        t_out = Activation.SIGMOID if config.binary_treatment else Activation.IDENTITY
        treatment_spec = MlpSpec((t_in, *config.treatment_hidden, config.d_A), act, t_out)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    return StoNetModel(
        variant=v,
        latent_spec=latent_spec,
        latent_params=init_params(latent_spec, seeds[0], config.init_scale),
        outcome_spec=outcome_spec,
        outcome_params=init_params(outcome_spec, seeds[2], config.init_scale),
        treatment_spec=treatment_spec,
        treatment_params=None if treatment_spec is None else init_params(treatment_spec, seeds[1], config.init_scale),
        sigma_z2=float(config.sigma_z2),
        sigma_a2=float(config.sigma_a2),
        sigma_y2=float(config.sigma_y2),
        d_A=config.d_A,
        d_X=config.d_X if v.uses_proxy else 0,
        binary_treatment=bool(config.binary_treatment and v.uses_proxy),
        seed_lineage=[int(config.seed)],
    )


# ---------------------------------------------------------------------------
# densities and gradients
# ---------------------------------------------------------------------------


def latent_conditional_mean(model: StoNetModel, data: Dataset) -> np.ndarray:
    model.check_dataset(data)
    out, _ = mlp_forward(model.latent_spec, model.latent_params, model.latent_input(data))
    return out


def _gaussian_term(mean, target, var):
    resid = target - mean
    logp = -0.5 * float((resid * resid).sum()) / var - 0.5 * resid.size * (LOG_2PI + math.log(var))
    return logp, resid / var


def _bernoulli_term(logits, target):
    """Log-likelihood and its gradient with respect to the logits."""
    logp = float((target * logits - np.logaddexp(0.0, logits)).sum())
    p = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return logp, target - p


@dataclass
class Evaluation:
    """Everything one pass over a batch produces."""

    log_density: float
    terms: dict
    latent_grad: Optional[np.ndarray] = None
    param_grads: Optional[dict] = None


def evaluate(
    model: StoNetModel,
    data: Dataset,
    Z,
    latent_grad: bool = True,
    param_grads: bool = True,
    through_latent: bool = False,
) -> Evaluation:
    """Joint log density of (Z, A, Y | input) and its gradients.

    The conditional factorization is ``log pi(Z|in) + log pi(A|Z[,X]) + log pi(Y|Z,A[,X])``
    (the treatment term only for proxy wirings). Each module's parameter
    gradient involves only its own conditional term.

    With ``through_latent`` the latent is treated as the deterministic
    function ``Z = mu1(input)`` and downstream likelihood gradients are
    propagated into the latent module (plain back-propagation).
    """
    model.check_dataset(data)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != (data.n, model.d_z):
        raise DimensionError(f"Z has shape {Z.shape}, expected {(data.n, model.d_z)}")
    if not np.isfinite(Z).all():
        raise NumericError("non-finite latent state")
    d_z = model.d_z
    terms = {}
    grads = {}

    mu1, tr1 = mlp_forward(model.latent_spec, model.latent_params, model.latent_input(data))
    terms["latent"], dz_prior = _gaussian_term(mu1, Z, model.sigma_z2)
    # d/dZ of log N(Z; mu1, s2) is -(Z - mu1)/s2; d/dmu1 is the negative of that
    g_z = -dz_prior
    g_mu1 = dz_prior

    if model.treatment_spec is not None:
        t_in = model.treatment_input(Z, data.X)
        if model.binary_treatment:
            # evaluate up to the logits, then route the Bernoulli gradient past the sigmoid
            spec_logit = MlpSpec(model.treatment_spec.layer_widths, model.treatment_spec.hidden_activation, Activation.IDENTITY)
            logits, tr2 = mlp_forward(spec_logit, model.treatment_params, t_in)
            terms["treatment"], g_out = _bernoulli_term(logits, data.A)
            pg, ig = mlp_backward(spec_logit, model.treatment_params, tr2, g_out)
        else:
            mu2, tr2 = mlp_forward(model.treatment_spec, model.treatment_params, t_in)
            terms["treatment"], g_out = _gaussian_term(mu2, data.A, model.sigma_a2)
            pg, ig = mlp_backward(model.treatment_spec, model.treatment_params, tr2, g_out)
        grads["treatment"] = pg
        g_z = g_z + ig[:, :d_z]

    o_in = model.outcome_input(Z, data.A, data.X)
    mu3, tr3 = mlp_forward(model.outcome_spec, model.outcome_params, o_in)
    terms["outcome"], g_out = _gaussian_term(mu3, data.Y, model.sigma_y2)
    pg, ig = mlp_backward(model.outcome_spec, model.outcome_params, tr3, g_out)
    grads["outcome"] = pg
    g_z = g_z + ig[:, :d_z]

    if param_grads:
        upstream = g_mu1
        if through_latent:
            # Z = mu1: the prior term is constant and the rest flows back through mu1
            upstream = g_z + dz_prior
        grads["latent"], _ = mlp_backward(model.latent_spec, model.latent_params, tr1, upstream)

    return Evaluation(
        log_density=sum(terms.values()),
        terms=terms,
        latent_grad=g_z if latent_grad else None,
        param_grads={k: grads[k] for k in MODULE_NAMES if k in grads} if param_grads else None,
    )


def log_density(model: StoNetModel, data: Dataset, Z) -> float:
    return evaluate(model, data, Z, latent_grad=False, param_grads=False).log_density


def latent_log_density_grad(model: StoNetModel, data: Dataset, Z) -> np.ndarray:
    return evaluate(model, data, Z, latent_grad=True, param_grads=False).latent_grad


def param_log_density_grads(model: StoNetModel, data: Dataset, Z) -> dict:
    """Per-module gradients of each module's own conditional log likelihood."""
    return evaluate(model, data, Z, latent_grad=False, param_grads=True).param_grads


def predict_outcome(model: StoNetModel, Z, A, X=None) -> np.ndarray:
    Z = _as_matrix(Z, "Z")
    A = _as_matrix(A, "A")
    if Z.shape[1] != model.d_z or A.shape[1] != model.d_A or A.shape[0] != Z.shape[0]:
        raise DimensionError(f"Z{Z.shape} / A{A.shape} do not fit d_z={model.d_z}, d_A={model.d_A}")
    if model.variant is DagVariant.OUTCOME_PROXY:
        if X is None:
            raise DimensionError("outcome_proxy prediction needs X")
        X = _as_matrix(X, "X")
    out, _ = mlp_forward(model.outcome_spec, model.outcome_params, model.outcome_input(Z, A, X))
    return out


def model_to_dict(model: StoNetModel) -> dict:
    mods = {}
    for name, (spec, params) in model.modules().items():
        mods[name] = {"spec": spec.to_dict(), "params": [float(x) for x in params.flat()]}
    return {
        "variant": model.variant.value,
        "modules": mods,
        "sigma_z2": model.sigma_z2,
        "sigma_a2": model.sigma_a2,
        "sigma_y2": model.sigma_y2,
        "d_A": model.d_A,
        "d_X": model.d_X,
        "binary_treatment": model.binary_treatment,
        "seed_lineage": [int(s) for s in model.seed_lineage],
        "masks": {k: [np.flatnonzero(~m.ravel()).tolist() for m in v] for k, v in model.masks.items()},
    }


def model_from_dict(d: dict) -> StoNetModel:
    def load(entry):
        spec = MlpSpec.from_dict(entry["spec"])
        params = init_params(spec, 0, 0.0)
        params.assign_flat(np.array(entry["params"], dtype=np.float64))
        return spec, params

    mods = d["modules"]
    ls, lp = load(mods["latent"])
    os_, op = load(mods["outcome"])
    ts, tp = load(mods["treatment"]) if "treatment" in mods else (None, None)
    model = StoNetModel(
        variant=DagVariant(d["variant"]),
        latent_spec=ls,
        latent_params=lp,
        outcome_spec=os_,
        outcome_params=op,
        treatment_spec=ts,
        treatment_params=tp,
        sigma_z2=float(d["sigma_z2"]),
        sigma_a2=float(d["sigma_a2"]),
        sigma_y2=float(d["sigma_y2"]),
        d_A=int(d["d_A"]),
        d_X=int(d["d_X"]),
        binary_treatment=bool(d["binary_treatment"]),
        seed_lineage=list(d.get("seed_lineage", [])),
    )
    for name, pruned in d.get("masks", {}).items():
        arrays = model.params(name).arrays()
        masks = []
        for arr, idx in zip(arrays, pruned):
            m = np.ones(arr.size, dtype=bool)
            m[np.asarray(idx, dtype=np.intp)] = False
            masks.append(m.reshape(arr.shape))
        model.masks[name] = masks
    return model
