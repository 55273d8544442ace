"""Experiment configuration: INI files layered over named presets.

Example::

    [experiment]
    preset = proxy_sim
    seed = 7
    replications = 3

    [dgp]
    n_train = 2000

    [schedule]
    train_epochs = 150
    gamma_outcome = 0.05

Every section and key is optional; unknown keys are rejected. Sizes
``d_A``, ``d_Y`` and ``d_X`` are taken from the data at run time.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .datagen import DgpKind, DgpSpec
from .diagnostics import SHORT_PHASE_RATES
from .errors import ConfigurationError
from .model import DagVariant, StoNetConfig
from .nn import Activation
from .prior import PriorHyper
from .sghmc import Decay, TrainSchedule


@dataclass(frozen=True)
class CsvSource:
    train: str
    val: Optional[str] = None
    test: Optional[str] = None
    binary_treatment: bool = False


@dataclass(frozen=True)
class EstimateSettings:
    M: int = 50
    delta: float = 0.05
    refresh_sigma_z: bool = True
    checkpoint: Optional[str] = None


@dataclass(frozen=True)
class DiagnosticSettings:
    alpha: float = 0.1
    B: int = 20
    eps: float = 1e-3
    burn_in: int = 200
    thin: int = 10


@dataclass(frozen=True)
class BootstrapSettings:
    B: int = 100
    level: float = 0.95
    short_epochs: int = 20
    rates: str = "train"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    replications: int = 1
    output_dir: str = "out"
    dgp: Optional[DgpSpec] = None
    csv: Optional[CsvSource] = None
    model: StoNetConfig = field(default_factory=StoNetConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    prior: PriorHyper = field(default_factory=PriorHyper)
    estimate: EstimateSettings = field(default_factory=EstimateSettings)
    diagnostics: DiagnosticSettings = field(default_factory=DiagnosticSettings)
    bootstrap: BootstrapSettings = field(default_factory=BootstrapSettings)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if (self.dgp is None) == (self.csv is None):
            raise ConfigurationError("exactly one of a [dgp] or a [data] source is required")
        if self.csv is not None:
            for p in (self.csv.train, self.csv.val, self.csv.test):
                if p is not None and not Path(p).is_file():
                    raise ConfigurationError(f"data file not found: {p}")

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if hasattr(v, "value"):
                return v.value
            return v

        return clean(asdict(self))

    def digest(self) -> str:
        """sha256 of the canonical JSON form (first 16 hex digits)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# Rates are per-sample (``per_sample_rates``); see the notes for the
# departures from the published values (sigma_y2 and the outcome rates).
_SIMPLE_SCHEDULE = TrainSchedule(
    pretrain_epochs=100,
    train_epochs=500,
    finetune_epochs=100,
    eps0=1e-3,
    gamma0={"latent": 5e-7, "outcome": 1e-1},
    eps_decay=Decay("empirical", 0.95),
    gamma_decay=Decay("empirical", 0.7),
    minibatch=64,
    per_sample_rates=True,
)

_PROXY_SCHEDULE = TrainSchedule(
    pretrain_epochs=50,
    train_epochs=100,
    finetune_epochs=50,
    eps0=1e-3,
    gamma0={"latent": 5e-7, "treatment": 5e-2, "outcome": 5e-2},
    eps_decay=Decay("empirical", 0.8),
    gamma_decay=Decay("empirical", 0.6),
    minibatch=64,
    per_sample_rates=True,
)


def _simple(kind: DgpKind, eps0: float) -> ExperimentConfig:
    return ExperimentConfig(
        name=kind.value,
        replications=10,
        dgp=DgpSpec(kind, 1000, 500, 500),
        model=StoNetConfig(DagVariant.SIMPLE, d_z=6, latent_hidden=(32,), outcome_hidden=(8, 4),
                           sigma_z2=1e-5, sigma_y2=1.0),
        schedule=replace(_SIMPLE_SCHEDULE, eps0=eps0),
        prior=PriorHyper.from_variances(1e-6, 1e-4, 1e-1),
    )


def _proxy(kind: DgpKind) -> ExperimentConfig:
    return ExperimentConfig(
        name=kind.value,
        replications=10,
        dgp=DgpSpec(kind, 2000, 500, 500),
        model=StoNetConfig(DagVariant.BASIC_PROXY, d_z=32, latent_hidden=(64,), treatment_hidden=(16,),
                           outcome_hidden=(8,), binary_treatment=True,
                           sigma_z2=1e-5, sigma_a2=1e-4, sigma_y2=1.0),
        schedule=_PROXY_SCHEDULE,
        prior=PriorHyper.from_variances(1e-6, 1e-4, 1e-2),
    )


PRESETS = {
    "separable": lambda: _simple(DgpKind.SEPARABLE, 1e-3),
    "non_separable": lambda: _simple(DgpKind.NON_SEPARABLE, 5e-4),
    "proxy_sim": lambda: _proxy(DgpKind.PROXY_SIM),
    "misspec_basic_proxy": lambda: _proxy(DgpKind.MISSPEC_BASIC),
    "misspec_outcome_proxy": lambda: _proxy(DgpKind.MISSPEC_OUTCOME),
    "misspec_treatment_proxy": lambda: _proxy(DgpKind.MISSPEC_TREATMENT),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# INI parsing
# ---------------------------------------------------------------------------


def _int(s: str, key: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got '{s}'") from None


def _float(s: str, key: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got '{s}'") from None
    if not math.isfinite(v):
        raise ConfigurationError(f"{key}: must be finite")
    return v


def _bool(s: str, key: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key}: expected a boolean, got '{s}'")


def _widths(s: str, key: str) -> tuple:
    parts = [p for p in s.replace(",", " ").split() if p]
    return tuple(_int(p, key) for p in parts)


def _decay(s: str, key: str) -> Decay:
    kind, _, rest = s.partition(":")
    nums = [_float(x, key) for x in rest.split(":") if x] if rest else []
    try:
        return Decay(kind.strip(), *nums)
    except (ValueError, TypeError) as err:
        raise ConfigurationError(f"{key}: {err}") from None


_SECTIONS = {
    "experiment": {"preset", "name", "seed", "replications", "output_dir"},
    "dgp": {"kind", "n_train", "n_val", "n_test", "gamma", "beta"},
    "data": {"train", "val", "test", "binary_treatment"},
    "model": {"variant", "d_z", "latent_hidden", "treatment_hidden", "outcome_hidden", "activation",
              "binary_treatment", "sigma_z2", "sigma_a2", "sigma_y2", "init_scale"},
    "schedule": {"pretrain_epochs", "train_epochs", "finetune_epochs", "eps0", "gamma_latent",
                 "gamma_treatment", "gamma_outcome", "eta", "eps_decay", "gamma_decay",
                 "hmc_steps_per_iter", "minibatch", "finetune_factor", "prune", "leapfrog",
                 "per_sample_rates", "update_sigma_z"},
    "prior": {"lambda_n", "sigma0_sq", "sigma1_sq"},
    "estimate": {"m", "delta", "refresh_sigma_z", "checkpoint"},
    "diagnostics": {"alpha", "b", "eps", "burn_in", "thin"},
    "bootstrap": {"b", "level", "short_epochs", "rates"},
}


def parse_config(text: str, base_dir: Optional[Path] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Parse INI text. Relative data paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"malformed config: {err}") from None
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigurationError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - _SECTIONS[sec]
        if extra:
            raise ConfigurationError(f"unknown keys in [{sec}]: {sorted(extra)}")

    def get(sec, key):
        return cp[sec][key] if cp.has_section(sec) and key in cp[sec] else None

    def setter(sec, key, conv, target: dict, name=None):
        raw = get(sec, key)
        if raw is not None:
            target[name or key] = conv(raw, f"{sec}.{key}")

    name = get("experiment", "preset")
    if name:
        cfg = preset(name)
    elif get("data", "train") is not None:
        cfg = ExperimentConfig(csv=CsvSource(_path(get("data", "train"), base_dir)))
    else:
        cfg = ExperimentConfig(dgp=DgpSpec(DgpKind.SEPARABLE))

    top = {}
    setter("experiment", "name", lambda s, k: s, top)
    setter("experiment", "seed", _int, top)
    setter("experiment", "replications", _int, top)
    setter("experiment", "output_dir", lambda s, k: s, top)

    dgp = cfg.dgp
    csv = cfg.csv
    if get("data", "train") is not None:
        d = {"train": _path(get("data", "train"), base_dir)}
        for k in ("val", "test"):
            if get("data", k) is not None:
                d[k] = _path(get("data", k), base_dir)
        setter("data", "binary_treatment", _bool, d)
        csv, dgp = CsvSource(**d), None
    elif cp.has_section("dgp"):
        d = {}
        setter("dgp", "kind", lambda s, k: s, d)
        for k in ("n_train", "n_val", "n_test"):
            setter("dgp", k, _int, d)
        setter("dgp", "gamma", _float, d)
        setter("dgp", "beta", lambda s, k: tuple(_float(x, k) for x in s.replace(",", " ").split()), d)
        try:
            dgp = replace(dgp or DgpSpec(DgpKind.SEPARABLE), **d)
        except ValueError as err:
            raise ConfigurationError(f"[dgp]: {err}") from None

    m = {}
    setter("model", "variant", lambda s, k: s, m)
    setter("model", "d_z", _int, m)
    for k in ("latent_hidden", "treatment_hidden", "outcome_hidden"):
        setter("model", k, _widths, m)
    setter("model", "activation", lambda s, k: s, m, "hidden_activation")
    setter("model", "binary_treatment", _bool, m)
    for k in ("sigma_z2", "sigma_a2", "sigma_y2", "init_scale"):
        setter("model", k, _float, m)
    if csv is not None and "binary_treatment" not in m:
        m["binary_treatment"] = csv.binary_treatment
    try:
        model = replace(cfg.model, **m)
        if "hidden_activation" in m:
            Activation(m["hidden_activation"])
    except ValueError as err:
        raise ConfigurationError(f"[model]: {err}") from None

    s = {}
    for k in ("pretrain_epochs", "train_epochs", "finetune_epochs", "hmc_steps_per_iter", "minibatch"):
        setter("schedule", k, _int, s)
    for k in ("eps0", "eta", "finetune_factor"):
        setter("schedule", k, _float, s)
    for k in ("eps_decay", "gamma_decay"):
        setter("schedule", k, _decay, s)
    for k in ("prune", "leapfrog", "per_sample_rates", "update_sigma_z"):
        setter("schedule", k, _bool, s)
    gam = dict(cfg.schedule.gamma0)
    for mod in ("latent", "treatment", "outcome"):
        raw = get("schedule", f"gamma_{mod}")
        if raw is not None:
            gam[mod] = _float(raw, f"schedule.gamma_{mod}")
    s["gamma0"] = gam
    if s.get("minibatch") == 0:
        s["minibatch"] = None
    schedule = replace(cfg.schedule, **s)

    p = cfg.prior.to_dict()
    for k in ("lambda_n", "sigma0_sq", "sigma1_sq"):
        setter("prior", k, _float, p)
    prior = PriorHyper.from_variances(p["lambda_n"], p["sigma0_sq"], p["sigma1_sq"])

    e = {}
    setter("estimate", "m", _int, e, "M")
    setter("estimate", "delta", _float, e)
    setter("estimate", "refresh_sigma_z", _bool, e)
    setter("estimate", "checkpoint", lambda s_, k: _path(s_, base_dir), e)
    estimate = replace(cfg.estimate, **e)
    if estimate.M < 1 or estimate.delta <= 0:
        raise ConfigurationError("[estimate]: need M >= 1 and delta > 0")

    g = {}
    setter("diagnostics", "alpha", _float, g)
    setter("diagnostics", "b", _int, g, "B")
    setter("diagnostics", "eps", _float, g)
    setter("diagnostics", "burn_in", _int, g)
    setter("diagnostics", "thin", _int, g)
    diagnostics = replace(cfg.diagnostics, **g)
    if not 0 < diagnostics.alpha < 0.5 or diagnostics.B < 1:
        raise ConfigurationError("[diagnostics]: need 0 < alpha < 0.5 and B >= 1")

    b = {}
    setter("bootstrap", "b", _int, b, "B")
    setter("bootstrap", "level", _float, b)
    setter("bootstrap", "short_epochs", _int, b)
    setter("bootstrap", "rates", lambda s_, k: s_.strip().lower(), b)
    bootstrap = replace(cfg.bootstrap, **b)
    if bootstrap.B < 2 or not 0 < bootstrap.level < 1 or bootstrap.short_epochs < 0:
        raise ConfigurationError("[bootstrap]: need B >= 2, 0 < level < 1, short_epochs >= 0")
    if bootstrap.rates not in SHORT_PHASE_RATES:
        raise ConfigurationError(f"[bootstrap]: rates must be one of {SHORT_PHASE_RATES}")

    if seed is not None:
        top["seed"] = int(seed)
    return replace(cfg, dgp=dgp, csv=csv, model=model, schedule=schedule, prior=prior, estimate=estimate,
                   diagnostics=diagnostics, bootstrap=bootstrap, **top)


def _path(p: str, base_dir: Optional[Path]) -> str:
    path = Path(p)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    return str(path)


def load_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent, seed)


def config_fields() -> dict:
    """Section -> accepted keys (for documentation and error messages)."""
    return {k: sorted(v) for k, v in _SECTIONS.items()}

