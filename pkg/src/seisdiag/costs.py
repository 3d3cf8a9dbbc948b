"""Probability-weighted confusion scores and the asymmetric misclassification cost."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ClassError, EmptyReport, ValidationError

ABSENT_CLASS_OMEGA = 100.0


@dataclass(frozen=True)
class ClassCatalog:
    """Class labels ordered from least to most severe."""

    classes: tuple[str, ...]
    present_in_training: tuple[bool, ...] | None = None

    def __post_init__(self):
        classes = tuple(self.classes)
        if len(classes) < 2:
            raise ClassError("a catalog needs at least two classes")
        if len(set(classes)) != len(classes):
            raise ClassError(f"duplicate class labels in {classes}")
        present = self.present_in_training
        present = (True,) * len(classes) if present is None else tuple(bool(p) for p in present)
        if len(present) != len(classes):
            raise ClassError("presence flags must match the class count")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "present_in_training", present)

    @property
    def p(self) -> int:
        return len(self.classes)

    def index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ClassError(f"unknown class {label!r}; catalog is {self.classes}") from None

    def indices(self, labels: Sequence[str]) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[l] for l in labels], dtype=int)
        except KeyError as exc:
            raise ClassError(f"unknown class {exc.args[0]!r}; catalog is {self.classes}") from None

    def with_presence(self, observed: Sequence[str]) -> "ClassCatalog":
        seen = set(observed)
        return ClassCatalog(self.classes, tuple(c in seen for c in self.classes))


@dataclass(frozen=True)
class ScoreMatrix:
    S: np.ndarray
    catalog: ClassCatalog

    def __post_init__(self):
        s = np.asarray(self.S, dtype=float)
        if s.shape != (self.catalog.p, self.catalog.p):
            raise ClassError(f"score matrix shape {s.shape} does not match {self.catalog.p} classes")
        if np.any(s < 0):
            raise ValidationError("score matrix entries must be nonnegative")
        object.__setattr__(self, "S", s)

    @property
    def total_mass(self) -> float:
        return float(self.S.sum())

    def __add__(self, other: "ScoreMatrix") -> "ScoreMatrix":
        if other.catalog.classes != self.catalog.classes:
            raise ClassError("cannot add score matrices over different catalogs")
        return ScoreMatrix(self.S + other.S, self.catalog)


@dataclass(frozen=True)
class CostWeights:
    w1: float
    w2: float
    w3: float

    def __post_init__(self):
        if self.w1 <= 0 or self.w2 < 0 or self.w3 < 0:
            raise ValidationError(f"need w1 > 0 and w2, w3 >= 0; got {self}")
        if self.w2 < self.w3:
            warnings.warn(
                f"w2={self.w2} < w3={self.w3}: underestimation is penalized less than conservative error",
                stacklevel=2,
            )


def squared_distance(m: int, n: int) -> float:
    return float((m - n) ** 2)


@dataclass(frozen=True)
class PenaltyConfig:
    lambda_fn: Callable[[int, int], float] = squared_distance
    omega: tuple[float, ...] | None = None

    @classmethod
    def for_catalog(cls, catalog: ClassCatalog, absent_omega: float = ABSENT_CLASS_OMEGA,
                    lambda_fn: Callable[[int, int], float] = squared_distance) -> "PenaltyConfig":
        omega = tuple(1.0 if present else absent_omega for present in catalog.present_in_training)
        return cls(lambda_fn, omega)

    def omega_vector(self, p: int) -> np.ndarray:
        if self.omega is None:
            return np.ones(p)
        om = np.asarray(self.omega, dtype=float)
        if om.shape != (p,):
            raise ClassError(f"omega has {om.size} entries, catalog has {p}")
        if np.any(om < 1):
            raise ValidationError("omega entries must be >= 1")
        return om

    def lambda_matrix(self, p: int) -> np.ndarray:
        lam = np.array([[self.lambda_fn(m, n) for n in range(p)] for m in range(p)], dtype=float)
        if np.any(lam < 0):
            raise ValidationError("lambda must be nonnegative")
        return lam


def score_matrix(truths, preds, probs, catalog: ClassCatalog) -> ScoreMatrix:
    truths = np.asarray(truths, dtype=int)
    preds = np.asarray(preds, dtype=int)
    probs = np.asarray(probs, dtype=float)
    if not (truths.shape == preds.shape == probs.shape):
        raise ValidationError("truths, preds and probs must have equal lengths")
    if np.any(probs <= 0):
        raise ValidationError("occurrence probabilities must be positive")
    p = catalog.p
    for name, idx in (("truth", truths), ("prediction", preds)):
        if idx.size and (idx.min() < 0 or idx.max() >= p):
            raise ClassError(f"{name} index out of range for {p} classes")
    s = np.zeros((p, p))
    np.add.at(s, (truths, preds), probs)
    return ScoreMatrix(s, catalog)


def cost_terms(S: ScoreMatrix, pen: PenaltyConfig) -> tuple[float, float, float]:
    """(correct mass, weighted underestimation, weighted conservative) sums."""
    p = S.catalog.p
    weighted = S.S * pen.lambda_matrix(p) * pen.omega_vector(p)[None, :]
    under = np.tril(weighted, -1).sum()  # truth m more severe than prediction n
    conservative = np.triu(weighted, 1).sum()
    return float(np.trace(S.S)), float(under), float(conservative)


def cost(S: ScoreMatrix, w: CostWeights, pen: PenaltyConfig) -> float:
    correct, under, conservative = cost_terms(S, pen)
    return -w.w1 * correct + w.w2 * under + w.w3 * conservative


@dataclass(frozen=True)
class ConfusionReport:
    catalog: ClassCatalog
    scores: np.ndarray
    row_percent: np.ndarray
    global_accuracy: float
    underestimation_mass: float
    conservative_mass: float

    @property
    def conservative_dominant(self) -> bool:
        """True when the below-diagonal mass does not exceed the above-diagonal mass."""
        return self.underestimation_mass <= self.conservative_mass

    def to_csv(self, provenance: str | None = None) -> str:
        return matrix_to_csv(ScoreMatrix(self.scores, self.catalog), provenance)

    def to_text(self, provenance: str | None = None, digits: int = 2) -> str:
        labels = self.catalog.classes
        cells = [[f"{v:.{digits}f} {pct:.1f}%" for v, pct in zip(row, prow)]
                 for row, prow in zip(self.scores, self.row_percent)]
        width = max(max(len(c) for row in cells for c in row), max(len(l) for l in labels), len("truth\\pred"))
        lines = []
        if provenance:
            lines.append(f"# {provenance}")
        lines.append("  ".join(["truth\\pred".ljust(width)] + [l.rjust(width) for l in labels]))
        for label, row in zip(labels, cells):
            lines.append("  ".join([label.ljust(width)] + [c.rjust(width) for c in row]))
        lines.append(f"GA = {100 * self.global_accuracy:.1f}%")
        lines.append(
            f"underestimation mass = {self.underestimation_mass:.6g}, "
            f"conservative mass = {self.conservative_mass:.6g}"
        )
        return "\n".join(lines) + "\n"


def report(S: ScoreMatrix) -> ConfusionReport:
    total = S.total_mass
    if total <= 0:
        raise EmptyReport("score matrix has zero total mass")
    rows = S.S.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = np.where(rows > 0, 100.0 * S.S / rows, 0.0)
    return ConfusionReport(
        catalog=S.catalog,
        scores=S.S.copy(),
        row_percent=pct,
        global_accuracy=float(np.trace(S.S) / total),
        underestimation_mass=float(np.tril(S.S, -1).sum()),
        conservative_mass=float(np.triu(S.S, 1).sum()),
    )


def matrix_to_csv(S: ScoreMatrix, provenance: str | None = None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["truth\\pred", *S.catalog.classes])
    for label, row in zip(S.catalog.classes, S.S):
        writer.writerow([label, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def matrix_from_csv(text: str) -> ScoreMatrix:
    rows = [r for r in csv.reader(line for line in text.splitlines() if line and not line.startswith("#"))]
    if not rows:
        raise ValidationError("score matrix CSV is empty")
    header, body = rows[0], rows[1:]
    classes = tuple(h.strip() for h in header[1:])
    if len(body) != len(classes) or any(len(r) != len(classes) + 1 for r in body):
        raise ValidationError(
            f"score matrix CSV must be square: {len(classes)} columns, {len(body)} rows"
        )
    if tuple(r[0].strip() for r in body) != classes:
        raise ValidationError("row labels must match the column header order")
    try:
        values = np.array([[float(v) for v in r[1:]] for r in body])
    except ValueError as exc:
        raise ValidationError(f"non-numeric score: {exc}") from exc
    return ScoreMatrix(values, ClassCatalog(classes))
