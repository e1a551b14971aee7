"""Experiment configuration: dataclasses, method-identifier parsing, and the
INI config file reader.

Config files use configparser sections [experiment], [mechanism], [imputer],
[regressor]. Column indices in files are 1-based; everything in memory is
0-based.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

from cpmda.core import ConfigurationError, Mask
from cpmda.missingness import MechanismSpec

SCENARIOS = ("glm-mcar", "glm-marginal-mechanism", "y-dep-m")

DEFAULT_BETA = (1.0, 2.0, -1.0, 3.0, -0.5, -1.0, 0.3, 1.7, 0.4, -0.3)

_STAR_RE = re.compile(r"^mda_nested_star\((\d+)\)$")
_STAR_SUPERSET_RE = re.compile(r"^mda_nested_star\(superset=([01]+)\)$")


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method identifier.

    kind: qr | cqr | exact | nested | star. For star methods, extra carries
    the BoundedExtra budget and superset the explicit over-mask, exactly one
    of them set.
    """

    name: str
    kind: str
    extra: int | None = None
    superset: str | None = None


def parse_method(name: str, d: int) -> MethodSpec:
    name = name.strip()
    if name in ("qr", "cqr"):
        return MethodSpec(name=name, kind=name)
    if name == "mda_exact":
        return MethodSpec(name=name, kind="exact")
    if name == "mda_nested":
        return MethodSpec(name=name, kind="nested")
    m = _STAR_RE.match(name)
    if m:
        return MethodSpec(name=name, kind="star", extra=int(m.group(1)))
    m = _STAR_SUPERSET_RE.match(name)
    if m:
        bits = m.group(1)
        if len(bits) != d:
            raise ConfigurationError(
                f"superset mask {bits!r} has length {len(bits)}, expected {d}"
            )
        return MethodSpec(name=name, kind="star", superset=bits)
    raise ConfigurationError(f"unknown method identifier {name!r}")


@dataclass(frozen=True)
class ImputerSpec:
    kind: str = "iterative_ridge"
    lam: float | None = None
    iters: int = 10
    constants: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RegressorSpec:
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 1000
    step: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    d: int
    mechanism: MechanismSpec
    n_train: int = 500
    n_cal: int = 250
    n_test_marginal: int = 2000
    n_per_pattern: int = 100
    alpha: float = 0.1
    phi: float = 0.8
    beta: tuple[float, ...] = DEFAULT_BETA
    sigma2_eps: float = 1.0
    imputer: ImputerSpec = field(default_factory=ImputerSpec)
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    methods: tuple[str, ...] = ("cqr",)
    reps: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "y-dep-m" and self.d != 3:
            raise ConfigurationError("the y-dep-m scenario is defined for d = 3")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 <= self.phi < 1.0:
            raise ConfigurationError(
                f"phi must be in [0, 1); phi = {self.phi} gives a singular covariance"
            )
        if len(self.beta) != self.d:
            raise ConfigurationError(
                f"beta has {len(self.beta)} entries for d = {self.d}"
            )
        if self.reps < 1:
            raise ConfigurationError("need at least one repetition")
        if min(self.n_train, self.n_cal, self.n_test_marginal, self.n_per_pattern) < 1:
            raise ConfigurationError("sample sizes must be positive")
        if self.sigma2_eps <= 0:
            raise ConfigurationError("noise variance must be positive")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "methods", tuple(self.methods))
        for name in self.methods:
            parse_method(name, self.d)
        if max(self.mechanism.missing_cols) >= self.d:
            raise ConfigurationError("mechanism columns exceed d")

    @property
    def n_pool(self) -> int:
        return self.n_train + self.n_cal

    @property
    def cal_fraction(self) -> float:
        return self.n_cal / self.n_pool

    @property
    def levels(self) -> tuple[float, float]:
        return (self.alpha / 2.0, 1.0 - self.alpha / 2.0)

    def method_specs(self) -> tuple[MethodSpec, ...]:
        return tuple(parse_method(name, self.d) for name in self.methods)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _parse_cols(text: str, d: int) -> tuple[int, ...]:
    """1-based column list, or 'all'."""
    text = text.strip().lower()
    if text == "all":
        return tuple(range(d))
    cols = tuple(int(tok) - 1 for tok in text.replace(",", " ").split())
    if any(not 0 <= c < d for c in cols):
        raise ConfigurationError(f"column list {text!r} out of range for d={d}")
    return cols


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ConfigurationError("config needs an [experiment] section")
    exp = parser["experiment"]
    try:
        d = exp.getint("d")
        if d is None:
            raise ConfigurationError("experiment.d is required")
        scenario = exp.get("scenario", "glm-mcar")

        mech_sec = parser["mechanism"] if "mechanism" in parser else {}
        kind = mech_sec.get("kind", "mcar")
        mcols = _parse_cols(mech_sec.get("missing_cols", "all"), d)
        weights = mech_sec.get("weights", None)
        mechanism = MechanismSpec(
            kind=kind,
            missing_cols=mcols,
            p=float(mech_sec["p"]) if "p" in mech_sec else None,
            q=float(mech_sec["q"]) if "q" in mech_sec else None,
            target_prop=(
                float(mech_sec["target_prop"]) if "target_prop" in mech_sec else None
            ),
            weights=_parse_floats(weights) if weights else None,
            seed_offset=int(mech_sec.get("seed_offset", 0)),
        )

        imp_sec = parser["imputer"] if "imputer" in parser else {}
        imputer = ImputerSpec(
            kind=imp_sec.get("kind", "iterative_ridge"),
            lam=float(imp_sec["lam"]) if "lam" in imp_sec else None,
            iters=int(imp_sec.get("iters", 10)),
            constants=(
                _parse_floats(imp_sec["constants"]) if "constants" in imp_sec else None
            ),
        )

        reg_sec = parser["regressor"] if "regressor" in parser else {}
        regressor = RegressorSpec(
            hidden=tuple(int(h) for h in _parse_floats(reg_sec.get("hidden", "64, 64"))),
            epochs=int(reg_sec.get("epochs", 1000)),
            step=float(reg_sec.get("step", 0.05)),
            seed=int(reg_sec.get("seed", 0)),
        )

        beta = exp.get("beta", None)
        methods = tuple(
            tok.strip() for tok in exp.get("methods", "cqr").split(",") if tok.strip()
        )
        return ExperimentConfig(
            scenario=scenario,
            d=d,
            mechanism=mechanism,
            n_train=exp.getint("n_train", 500),
            n_cal=exp.getint("n_cal", 250),
            n_test_marginal=exp.getint("n_test_marginal", 2000),
            n_per_pattern=exp.getint("n_per_pattern", 100),
            alpha=exp.getfloat("alpha", 0.1),
            phi=exp.getfloat("phi", 0.8),
            beta=_parse_floats(beta) if beta else tuple([1.0] * d),
            sigma2_eps=exp.getfloat("sigma2_eps", 1.0),
            imputer=imputer,
            regressor=regressor,
            methods=methods,
            reps=exp.getint("reps", 30),
            seed=exp.getint("seed", 0),
        )
    except (ValueError, KeyError) as err:
        raise ConfigurationError(f"bad config value: {err}") from err


def strategy_for(spec: MethodSpec, d: int):
    """Subsampling strategy object for a star method spec."""
    from cpmda.conformal import BoundedExtra, Full, SupersetOf

    if spec.kind != "star":
        raise ConfigurationError(f"{spec.name} has no subsampling strategy")
    if spec.superset is not None:
        return SupersetOf(Mask.from_bits(int(b) for b in spec.superset))
    if spec.extra >= d:
        return Full()
    return BoundedExtra(spec.extra)
