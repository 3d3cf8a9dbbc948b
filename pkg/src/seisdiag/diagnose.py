"""Damage existence and per-story damage location models.

The existence model is one SVM on the building label.  The location model
holds one SVM per story; their letters concatenate into a pattern such as
``DDN`` (story 1 first), and the joint cost is evaluated over all ``2**S``
patterns ordered by severity.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import svm
from .costs import (ABSENT_CLASS_OMEGA, ClassCatalog, ConfusionReport, CostWeights, PenaltyConfig,
                    ScoreMatrix, report, score_matrix)
from .dataset import Dataset
from .errors import DegenerateDataset, DimensionError, ParseError, ValidationError
from .signals import ChannelPairSet, EtaSet
from .svm import SvmHyperParams, SvmModel, TrainingSet
from .tuner import CvResult, SearchSpace, TunerConfig, TuningResult, cv_objective, default_space, kfold_split, optimize

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
EXISTENCE_CATALOG = ClassCatalog(("N", "D"))


# ------------------------------------------------------------- patterns

def severity_order(n_stories: int) -> list[str]:
    """All patterns, least to most severe.

    Sorted by the number of damaged stories, then by the pattern read as a
    binary number with story 1 as the most significant bit.
    """
    if n_stories < 1:
        raise ValidationError("need at least one story")
    patterns = ["".join(p) for p in itertools.product("ND", repeat=n_stories)]

    def key(p):
        return p.count("D"), int(p.replace("D", "1").replace("N", "0"), 2)

    return sorted(patterns, key=key)


def pattern_catalog(n_stories: int, observed: Sequence[str] = ()) -> ClassCatalog:
    catalog = ClassCatalog(tuple(severity_order(n_stories)))
    return catalog.with_presence(observed) if observed else catalog


# ---------------------------------------------------------------- models

@dataclass
class ExistenceModel:
    model: SvmModel
    etas: EtaSet
    pairs: ChannelPairSet
    hyperparams: SvmHyperParams
    catalog: ClassCatalog = EXISTENCE_CATALOG
    provenance: dict = field(default_factory=dict)

    mode = "existence"

    @property
    def n_features(self) -> int:
        return self.etas.k * (1 + self.pairs.count)

    def predict_indices(self, x: np.ndarray) -> np.ndarray:
        return (svm.predict_many(self.model, x) == svm.DAMAGE).astype(int)

    def predict_labels(self, x: np.ndarray) -> list[str]:
        return [self.catalog.classes[i] for i in self.predict_indices(x)]


@dataclass
class LocationModel:
    members: tuple[SvmModel, ...]
    etas: EtaSet
    pairs: ChannelPairSet
    hyperparams: tuple[SvmHyperParams, ...]
    catalog: ClassCatalog
    provenance: dict = field(default_factory=dict)

    mode = "location"

    def __post_init__(self):
        if len(self.members) != len(self.hyperparams):
            raise ValidationError("one hyperparameter triple per member model")
        if self.catalog.p != 2 ** len(self.members):
            raise ValidationError("catalog must hold every pattern")

    @property
    def n_stories(self) -> int:
        return len(self.members)

    @property
    def n_features(self) -> int:
        return self.etas.k * (1 + self.pairs.count)

    def predict_labels(self, x: np.ndarray) -> list[str]:
        return _compose(self.members, x)

    def predict_indices(self, x: np.ndarray) -> np.ndarray:
        return self.catalog.indices(self.predict_labels(x))


def _compose(members: Sequence[SvmModel], x: np.ndarray) -> list[str]:
    x = np.atleast_2d(x)
    letters = np.array([svm.predict_many(m, x) for m in members])  # (S, n)
    return ["".join("D" if v == svm.DAMAGE else "N" for v in col) for col in letters.T]


def predict_pattern(model: LocationModel, features) -> str:
    x = np.asarray(getattr(features, "values", features), dtype=float)
    if x.ndim != 1 or x.size != model.n_features:
        raise DimensionError(f"expected {model.n_features} features, got shape {x.shape}")
    return model.predict_labels(x)[0]


# -------------------------------------------------------------- settings

@dataclass(frozen=True)
class TrainSettings:
    k: int = 6
    holdout: float = 0.2
    report_from: str = "holdout"
    absent_omega: float = ABSENT_CLASS_OMEGA
    space: SearchSpace | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("need at least one eta value")
        if not 0 <= self.holdout < 1:
            raise ValidationError("holdout fraction must lie in [0, 1)")
        if self.report_from not in ("holdout", "cv"):
            raise ValidationError("report_from must be 'holdout' or 'cv'")
        if self.report_from == "holdout" and self.holdout == 0:
            raise ValidationError("a holdout report needs a nonzero holdout fraction")


@dataclass
class TrainOutcome:
    model: ExistenceModel | LocationModel
    report: ConfusionReport
    scores: ScoreMatrix
    tuning: TuningResult
    best_cv: CvResult
    train_index: np.ndarray
    test_index: np.ndarray


def holdout_split(strata: Sequence[str], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified (train, test) index split taking ``round(fraction * size)`` per stratum."""
    strata = np.asarray(strata)
    rng = np.random.default_rng([int(seed), 0x5EED])
    test = []
    for s in sorted(set(strata.tolist())):
        members = rng.permutation(np.flatnonzero(strata == s))
        test.extend(members[: int(round(fraction * members.size))].tolist())
    test = np.sort(np.array(test, dtype=int))
    train = np.setdiff1d(np.arange(strata.size), test)
    return train, test


def etas_from_point(point: dict, k: int) -> EtaSet:
    values = sorted(point[f"eta_{i + 1}"] for i in range(k))
    unique = [v for i, v in enumerate(values) if i == 0 or v > values[i - 1]]
    return EtaSet(tuple(unique))


def _hp(point: dict, prefix: str = "") -> SvmHyperParams:
    return SvmHyperParams(point[f"{prefix}theta1"], point[f"{prefix}theta2"], point[f"{prefix}theta3"])


def _fit(x, labels, probs, hp) -> SvmModel:
    return svm.train(TrainingSet.from_probabilities(x, labels, probs), hp)


def _story_prefixes(n_stories: int) -> list[str]:
    return [f"s{i + 1}_" for i in range(n_stories)]


class _Problem:
    """Shared machinery for one tuning run over a dataset."""

    def __init__(self, data: Dataset, mode: str, settings: TrainSettings, weights: CostWeights):
        self.data = data
        self.mode = mode
        self.settings = settings
        self.weights = weights
        self.probs = data.probabilities
        if mode == "existence":
            labels = np.array([1 if b == "D" else -1 for b in data.building_labels])
            if np.unique(labels).size < 2:
                raise DegenerateDataset("existence training needs both damaged and undamaged events")
            self.targets = labels[:, None]
            self.catalog = EXISTENCE_CATALOG
            self.truths = (labels == 1).astype(int)
            self.prefixes = [""]
            self.strata = data.building_labels
        else:
            patterns = data.patterns
            if len(set(patterns)) < 2:
                raise DegenerateDataset("location training needs at least two distinct damage patterns")
            self.targets = data.story_matrix()
            self.catalog = pattern_catalog(data.n_stories, patterns)
            self.truths = self.catalog.indices(patterns)
            self.prefixes = _story_prefixes(data.n_stories)
            self.strata = patterns
        self.penalties = PenaltyConfig.for_catalog(self.catalog, settings.absent_omega)
        self.space = settings.space or default_space(settings.k, self.prefixes)

    def features(self, point) -> tuple[EtaSet, np.ndarray]:
        etas = etas_from_point(point, self.settings.k)
        return etas, self.data.features_for(etas)

    def fit_members(self, x, idx, point) -> list[SvmModel]:
        return [_fit(x[idx], self.targets[idx, s], self.probs[idx], _hp(point, p))
                for s, p in enumerate(self.prefixes)]

    def predict(self, members, x) -> np.ndarray:
        if self.mode == "existence":
            return (svm.predict_many(members[0], x) == svm.DAMAGE).astype(int)
        return self.catalog.indices(_compose(members, x))

    def cross_validate(self, point, folds) -> CvResult:
        _, x = self.features(point)

        def fit_predict(train, test):
            return self.predict(self.fit_members(x, train, point), x[test])

        return cv_objective(fit_predict, self.truths, self.probs, folds,
                            self.catalog, self.weights, self.penalties)

    def build_model(self, point, provenance):
        etas, x = self.features(point)
        members = self.fit_members(x, np.arange(len(self.data)), point)
        hps = tuple(_hp(point, p) for p in self.prefixes)
        if self.mode == "existence":
            return ExistenceModel(members[0], etas, self.data.pairs, hps[0], provenance=provenance)
        return LocationModel(tuple(members), etas, self.data.pairs, hps, self.catalog, provenance)


def tune(data: Dataset, mode: str, weights: CostWeights, config: TunerConfig,
         settings: TrainSettings = TrainSettings(), provenance: dict | None = None):
    """Tune on ``data`` by pooled cross-validated cost and refit at the incumbent.

    Returns ``(model, tuning_result, best_cv, problem)``.
    """
    problem = _Problem(data, mode, settings, weights)
    folds = kfold_split(len(data), config.folds, problem.strata, config.seed)
    cache: dict[tuple, CvResult] = {}

    def objective(point):
        res = problem.cross_validate(point, folds)
        cache[tuple(sorted(point.items()))] = res
        return res.objective, res.fold_costs

    # the box center (the default configuration) opens the initial design
    result = optimize(objective, problem.space, config, initial=(problem.space.center(),))
    best_cv = cache.get(tuple(sorted(result.best.point.items())))
    if best_cv is None:
        best_cv = problem.cross_validate(result.best.point, folds)
    model = problem.build_model(result.best.point, dict(provenance or {}))
    return model, result, best_cv, problem


def _train(mode, dataset, weights, config, settings, provenance) -> TrainOutcome:
    strata = dataset.building_labels if mode == "existence" else dataset.patterns
    if settings.report_from == "holdout":
        train_idx, test_idx = holdout_split(strata, settings.holdout, config.seed)
    else:
        train_idx, test_idx = np.arange(len(dataset)), np.zeros(0, dtype=int)
    train_set = dataset.subset(train_idx)
    model, result, best_cv, _ = tune(train_set, mode, weights, config, settings, provenance)
    if settings.report_from == "holdout":
        scores, rep = evaluate(model, dataset.subset(test_idx))
    else:
        scores = best_cv.pooled
        rep = report(scores)
    return TrainOutcome(model, rep, scores, result, best_cv, train_idx, test_idx)


def train_existence(dataset: Dataset, weights: CostWeights, config: TunerConfig,
                    settings: TrainSettings = TrainSettings(), provenance: dict | None = None) -> TrainOutcome:
    if len(set(dataset.building_labels)) < 2:
        raise DegenerateDataset("existence training needs both damaged and undamaged events")
    return _train("existence", dataset, weights, config, settings, provenance)


def train_location(dataset: Dataset, weights: CostWeights, config: TunerConfig,
                   settings: TrainSettings = TrainSettings(), provenance: dict | None = None) -> TrainOutcome:
    if len(set(dataset.patterns)) < 2:
        raise DegenerateDataset("location training needs at least two distinct damage patterns")
    return _train("location", dataset, weights, config, settings, provenance)


def model_features(model, dataset: Dataset) -> np.ndarray:
    try:
        return dataset.features_for(model.etas, model.pairs)
    except ValidationError as exc:
        raise ValidationError(f"model uses k={model.etas.k}, dataset provides k={dataset.etas.k}: {exc}") from exc


def truth_indices(model, dataset: Dataset) -> np.ndarray:
    if model.mode == "existence":
        return model.catalog.indices(dataset.building_labels)
    return model.catalog.indices(dataset.patterns)


def evaluate(model, dataset: Dataset) -> tuple[ScoreMatrix, ConfusionReport]:
    x = model_features(model, dataset)
    preds = model.predict_indices(x)
    scores = score_matrix(truth_indices(model, dataset), preds, dataset.probabilities, model.catalog)
    return scores, report(scores)


# -------------------------------------------------------------- bundles

def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def bundle_document(model) -> dict:
    hps = [model.hyperparams] if model.mode == "existence" else list(model.hyperparams)
    members = [model.model] if model.mode == "existence" else list(model.members)
    return {
        "format_version": BUNDLE_VERSION,
        "mode": model.mode,
        "etas": list(model.etas.values),
        "pairs": [list(p) for p in model.pairs.pairs],
        "catalog": {"classes": list(model.catalog.classes),
                    "present_in_training": list(model.catalog.present_in_training)},
        "hyperparams": [{"theta1": h.theta1, "theta2": h.theta2, "theta3": h.theta3} for h in hps],
        "members": [svm.to_document(m) for m in members],
        "provenance": model.provenance,
    }


def bundle_from_document(doc: dict):
    if not isinstance(doc, dict) or doc.get("format_version") != BUNDLE_VERSION:
        raise ParseError(f"unsupported bundle format_version {doc.get('format_version') if isinstance(doc, dict) else None!r}")
    try:
        etas = EtaSet(tuple(doc["etas"]))
        pairs = ChannelPairSet(tuple(tuple(p) for p in doc["pairs"]))
        catalog = ClassCatalog(tuple(doc["catalog"]["classes"]), tuple(doc["catalog"]["present_in_training"]))
        hps = tuple(SvmHyperParams(**h) for h in doc["hyperparams"])
        members = tuple(svm.from_document(m) for m in doc["members"])
        mode = doc["mode"]
        provenance = doc.get("provenance", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model bundle: {exc}") from exc
    if mode == "existence":
        if len(members) != 1:
            raise ParseError("existence bundle must hold exactly one member model")
        return ExistenceModel(members[0], etas, pairs, hps[0], catalog, provenance)
    if mode == "location":
        return LocationModel(members, etas, pairs, hps, catalog, provenance)
    raise ParseError(f"unknown bundle mode {mode!r}")
