"""Run configuration: YAML with an explicit schema version, validated by pydantic."""
from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .operator import DisorderEnsemble, InteractionSpec
from .solver import ModelParams, paper_constants

SCHEMA_VERSION = 1
DEFAULT_SEED = 0xA11CE
SEED_ENV = "ANDERSON_SEED"

EXPERIMENTS = (
    "geometry-verify", "wegner", "cnr-pair", "initial-scale", "initial-ds", "ds-estimate",
    "tunnelling", "counts", "lemma44-audit", "spectral-edge", "weyl", "decay", "dynamics",
    "kernel-decay", "ct-check", "stollmann-check",
)


class ConfigError(ValueError):
    pass


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsModel(Strict):
    N: int = 2
    n: int = 2
    d: int = 1
    p: float = 13.0
    L0: int = 6
    m: Optional[float] = None
    E_star: Optional[float] = None
    r0: int = 1
    mode: Literal["paper", "calibrated"] = "calibrated"
    alpha: float = 1.5
    beta: float = 0.5
    relaxed: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.mode == "paper":
            if self.p <= 6 * self.N * self.d:
                raise ValueError(f"paper mode needs p > 6Nd = {6 * self.N * self.d}, got p = {self.p}")
            m, E = paper_constants(self.N, self.d, self.L0)
            if self.m is not None and self.m != m or self.E_star is not None and self.E_star != E:
                raise ValueError(f"paper mode fixes m = {m} and E_star = {E}; leave them unset")
        self.build()
        return self

    def build(self) -> ModelParams:
        if self.mode == "paper":
            return ModelParams.paper(self.N, self.n, self.d, self.p, self.L0, self.r0, self.relaxed)
        return ModelParams(N=self.N, n=self.n, d=self.d, p=self.p, L0=self.L0,
                           m=0.5 if self.m is None else self.m,
                           E_star=2.0 if self.E_star is None else self.E_star,
                           r0=self.r0, mode="calibrated", alpha=self.alpha, beta=self.beta,
                           relaxed=self.relaxed)


class EnsembleModel(Strict):
    kind: Literal["uniform01", "scaled_uniform", "smoothed_log_holder", "zero"] = "uniform01"
    a: Optional[float] = None
    C: Optional[float] = None
    A: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        self.build(0)
        return self

    def build(self, seed: int) -> DisorderEnsemble:
        return DisorderEnsemble(self.kind, seed, self.a, self.C, self.A)


class CubeModel(Strict):
    center: list[list[int]]
    radius: int | list[int]


class OverrideModel(Strict):
    site: list[int]
    value: float


class RunConfig(Strict):
    schema_version: Literal[1] = 1
    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    params: ParamsModel = Field(default_factory=ParamsModel)
    ensemble: EnsembleModel = Field(default_factory=EnsembleModel)
    interaction: list[float] = Field(default_factory=list)
    trials: int = Field(100, gt=0)
    seed: Optional[int] = None
    workers: int = Field(1, ge=1)
    output_dir: Optional[str] = None
    cubes: Optional[list[CubeModel]] = None
    overrides: list[OverrideModel] = Field(default_factory=list)
    settings: dict[str, Any] = Field(default_factory=dict)

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, v):
        if v is not None and not 0 <= v < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    @field_validator("interaction")
    @classmethod
    def _interaction(cls, v):
        InteractionSpec(tuple(v))
        return v

    @model_validator(mode="after")
    def _settings(self):
        try:
            self.settings = SETTINGS[self.experiment].model_validate(self.settings).model_dump()
        except ValidationError as exc:
            raise ValueError("invalid settings: " + "; ".join(
                f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())) from None
        return self

    # convenience accessors
    def model_params(self) -> ModelParams:
        return self.params.build()

    def interaction_spec(self) -> InteractionSpec:
        return InteractionSpec(tuple(self.interaction))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()


# --------------------------------------------------------------------------- per-experiment settings

class GeometrySettings(Strict):
    n_list: list[int] = [1, 2, 3]
    L_list: list[int] = [1, 2, 3]
    N: Optional[int] = None
    random_instances: int = 200


class WegnerSettings(Strict):
    eps_list: list[float] = [1e-3, 1e-2, 1e-1]
    max_ratio_spread: float = 3.0


class CNRSettings(Strict):
    k: int = 0
    mirror: bool = False


class InitialScaleSettings(Strict):
    C_const: float = 1.0
    L0_list: list[int] = [25, 100, 400]


class InitialDSSettings(Strict):
    energy_step: Optional[float] = None


class DSSettings(Strict):
    k_list: list[int] = [0, 1]
    energy_step: Optional[float] = None


class TunnellingSettings(Strict):
    k: int = 0
    energies: Optional[list[float]] = None
    energy_step: Optional[float] = None
    step: Optional[int] = None
    control: Optional[Literal["double_well"]] = None
    wall: float = 4.0
    width: int = 6


class CountsSettings(Strict):
    k: int = 0
    ell: int = 1
    step: int = 1
    energy_step: Optional[float] = None


class AuditSettings(Strict):
    k: int = 0
    step: int = 1
    energy_step: Optional[float] = None


class EdgeSettings(Strict):
    box_sizes: list[int] = [10, 20, 30]


class WeylSettings(Strict):
    energies: Optional[list[float]] = None
    m_list: list[int] = [8, 16, 32]
    well_eps: Optional[float] = None
    k: int = 1
    jitter: float = 0.1


class DecaySettings(Strict):
    L: int = 200
    fraction: float = 0.1
    window: Optional[list[float]] = None
    min_positive: float = 0.95
    min_r2: float = 0.8


class TimesModel(Strict):
    start: float = 0.0
    stop: float = 20.0
    num: int = 50


class DynamicsSettings(Strict):
    L: int = 25
    s: float = 2.0
    K_radius: int = 3
    times: TimesModel = Field(default_factory=TimesModel)
    interval: Optional[list[float]] = None
    bound_rel_tol: float = 1e-9


class KernelSettings(Strict):
    L: int = 25
    pairs: Optional[list[list[list[int]]]] = None
    times: TimesModel = Field(default_factory=lambda: TimesModel(start=0.5, stop=10.0, num=5))
    interval: Optional[list[float]] = None
    route_tol: float = 1e-10


class CTSettings(Strict):
    max_L: int = 4
    max_ratio: float = 1.0


class StollmannSettings(Strict):
    t_list: list[float] = [0.1, 1.0, 10.0]
    max_L: int = 3
    slack: float = 1e-10


SETTINGS: dict[str, type[Strict]] = {
    "geometry-verify": GeometrySettings, "wegner": WegnerSettings, "cnr-pair": CNRSettings,
    "initial-scale": InitialScaleSettings, "initial-ds": InitialDSSettings, "ds-estimate": DSSettings,
    "tunnelling": TunnellingSettings, "counts": CountsSettings, "lemma44-audit": AuditSettings,
    "spectral-edge": EdgeSettings, "weyl": WeylSettings, "decay": DecaySettings,
    "dynamics": DynamicsSettings, "kernel-decay": KernelSettings, "ct-check": CTSettings,
    "stollmann-check": StollmannSettings,
}


# --------------------------------------------------------------------------- parsing

def _node_line(node: yaml.Node | None, loc: tuple) -> int | None:
    """1-based line of the deepest YAML node reachable along a pydantic error location."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _format_errors(errors: list[dict], root: yaml.Node | None, source: str) -> str:
    lines = []
    for err in errors:
        loc = tuple(err["loc"])
        line = _node_line(root, loc)
        where = ".".join(str(x) for x in loc) or "<root>"
        prefix = f"{source}:{line}" if line else source
        lines.append(f"{prefix}: {where}: {err['msg']}")
    return "\n".join(lines)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if "experiment" not in data:
        raise ConfigError(f"{source}: missing required key 'experiment'")
    model = SETTINGS.get(data["experiment"])
    if model is not None and isinstance(data.get("settings"), dict):
        # validated up front so that errors carry the settings path and line
        try:
            model.model_validate(data["settings"])
        except ValidationError as exc:
            errs = [{**e, "loc": ("settings", *e["loc"])} for e in exc.errors()]
            raise ConfigError(_format_errors(errs, root, source)) from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc.errors(), root, source)) from exc


def parse_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def default_config(experiment: str) -> RunConfig:
    return RunConfig.model_validate({"experiment": experiment})


def resolve_seed(cli_seed: int | None, cfg: RunConfig) -> int:
    """CLI flag, then config, then the environment, then the fixed default."""
    if cli_seed is not None:
        return int(cli_seed)
    if cfg.seed is not None:
        return int(cfg.seed)
    env = os.environ.get(SEED_ENV)
    if env:
        return int(env, 0)
    return DEFAULT_SEED
