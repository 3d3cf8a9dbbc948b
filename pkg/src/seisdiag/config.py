"""Run configuration: one YAML file, schema-checked, unknown keys rejected."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError

from .costs import CostWeights
from .diagnose import TrainSettings, config_hash
from .errors import ValidationError
from .signals import ChannelPairSet, EtaSet
from .simulator import BuildingSpec, GroundMotionSpec, HazardScenario
from .tuner import TunerConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BuildingConfig(_Strict):
    masses: list[float] = [2.0e5, 2.0e5, 2.0e5]
    stiffnesses: list[float] = [1.8e8, 1.6e8, 1.3e8]
    yield_drifts: list[float] = [0.004, 0.004, 0.004]
    heights: list[float] = [3.2, 3.2, 3.2]
    hardening: float = 0.05
    damping_ratio: float = 0.05


class GroundMotionConfig(_Strict):
    omega_g: float = 15.6
    zeta_g: float = 0.6
    intensity: float = 0.012
    duration: float = 15.0
    dt: float = 0.01
    ramp: float = 2.0
    strong: float = 6.0
    decay: float = 0.5


class HazardConfig(_Strict):
    scale_factors: list[float] = [0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0, 2.5]
    probabilities: Optional[list[float]] = None
    records_per_scale: int = 5
    s0: float = 1.0


class FeatureConfig(_Strict):
    etas: list[float] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    pairs: Optional[list[tuple[str, str]]] = None


class CostConfig(_Strict):
    w1: float = 12.0
    w2: float = 5.0
    w3: float = 0.05
    absent_omega: float = 100.0


class TunerSection(_Strict):
    budget: int = 60
    init_points: int = 12
    folds: int = 10
    acquisition_restarts: int = 32


class TrainingConfig(_Strict):
    holdout: float = 0.2
    report_from: Literal["holdout", "cv"] = "holdout"


class RunConfig(_Strict):
    seed: int = Field(..., ge=0)
    building: BuildingConfig = BuildingConfig()
    ground_motion: GroundMotionConfig = GroundMotionConfig()
    hazard: HazardConfig = HazardConfig()
    features: FeatureConfig = FeatureConfig()
    cost: CostConfig = CostConfig()
    tuner: TunerSection = TunerSection()
    training: TrainingConfig = TrainingConfig()
    out: str = "out"

    # domain objects -----------------------------------------------------
    def building_spec(self) -> BuildingSpec:
        b = self.building
        return BuildingSpec(tuple(b.masses), tuple(b.stiffnesses), tuple(b.yield_drifts),
                            tuple(b.heights), b.hardening, b.damping_ratio)

    def gm_spec(self) -> GroundMotionSpec:
        return GroundMotionSpec(**self.ground_motion.model_dump())

    def hazard_scenario(self) -> HazardScenario:
        h = self.hazard
        if h.probabilities is not None:
            total = sum(h.probabilities)
            return HazardScenario(tuple(h.scale_factors), tuple(p / total for p in h.probabilities),
                                  h.records_per_scale)
        return HazardScenario.exponential(h.scale_factors, h.records_per_scale, h.s0)

    def eta_set(self) -> EtaSet:
        return EtaSet(tuple(self.features.etas))

    def pair_set(self) -> ChannelPairSet:
        if self.features.pairs is None:
            return ChannelPairSet.consecutive(len(self.building.masses))
        return ChannelPairSet(tuple(tuple(p) for p in self.features.pairs))

    def cost_weights(self) -> CostWeights:
        return CostWeights(self.cost.w1, self.cost.w2, self.cost.w3)

    def tuner_config(self) -> TunerConfig:
        return TunerConfig(seed=self.seed, **self.tuner.model_dump())

    def train_settings(self) -> TrainSettings:
        return TrainSettings(k=len(self.features.etas), holdout=self.training.holdout,
                             report_from=self.training.report_from,
                             absent_omega=self.cost.absent_omega)

    def hash(self) -> str:
        return config_hash(self.model_dump(mode="json", exclude={"out"}))

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed}


def load_config(path: str | Path | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValidationError("config file must hold a mapping")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    try:
        cfg = RunConfig.model_validate(raw)
    except PydanticError as exc:
        raise ValidationError(f"invalid config: {exc}") from exc
    # construct domain objects once so their own checks run at load time
    try:
        cfg.building_spec(), cfg.gm_spec(), cfg.hazard_scenario(), cfg.eta_set(), cfg.pair_set()
        cfg.tuner_config(), cfg.train_settings()
    except ValidationError as exc:
        raise ValidationError(f"invalid config: {exc}") from exc
    return cfg
