"""Observation-weighted soft-margin RBF SVM trained by SMO.

The dual problem solved is

    max  sum(alpha) - 1/2 sum_rs alpha_r alpha_s y_r y_s K(x_r, x_s)
    s.t. 0 <= alpha_r <= C_r,  sum(alpha_r y_r) = 0

with per-sample box bounds ``C_r = theta1 * theta2 * B_r`` for damaged rows
and ``theta2 * B_r`` for undamaged rows.  Labels are +1 (D) and -1 (N).
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidInput, NonConvergence, ParseError, ValidationError

FORMAT_VERSION = 1
DAMAGE, NO_DAMAGE = 1, -1
KKT_TOL = 1e-6
MAX_PAIR_UPDATES = 10**7
_TAU = 1e-12


@dataclass(frozen=True)
class SvmHyperParams:
    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class TrainingSet:
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=int)
        b = np.asarray(self.weights, dtype=float)
        if x.shape[0] != y.shape[0] or y.shape != b.shape:
            raise ValidationError("features, labels and weights must have matching lengths")
        if not np.all(np.isin(y, (DAMAGE, NO_DAMAGE))):
            raise ValidationError("labels must be +1 (D) or -1 (N)")
        if np.any(b <= 0):
            raise ValidationError("weights must be positive")
        if y.size and abs(b.mean() - 1.0) > 1e-9:
            raise ValidationError(f"weights must have mean 1, got {b.mean()!r}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", b)

    @classmethod
    def from_probabilities(cls, features, labels, probs):
        """Build with ``B_r = P_r * n / sum(P)`` so the weights average to one."""
        p = np.asarray(probs, dtype=float)
        return cls(features, labels, p * p.size / p.sum())

    def __len__(self):
        return self.labels.size


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    theta3: float
    means: np.ndarray
    scales: np.ndarray
    constant_class: int | None = None
    # solver diagnostics, not serialized
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def is_constant(self) -> bool:
        return self.constant_class is not None

    @property
    def n_features(self) -> int:
        return self.means.size

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (x - self.means) / self.scales


def rbf_kernel(x, x2, theta3: float) -> float:
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {x2.shape}")
    d = x - x2
    return math.exp(-theta3 * float(d @ d))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def rbf_matrix(a: np.ndarray, b: np.ndarray, theta3: float) -> np.ndarray:
    return np.exp(-theta3 * _sq_dists(np.atleast_2d(a), np.atleast_2d(b)))


def sample_box_bounds(labels, weights, hp: SvmHyperParams) -> np.ndarray:
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=float)
    return np.where(labels == DAMAGE, hp.theta1 * hp.theta2, hp.theta2) * weights


class _KernelRows:
    """On-demand kernel rows with an LRU cache bounded in megabytes."""

    def __init__(self, x: np.ndarray, theta3: float, cache_mb: float):
        self.x = x
        self.theta3 = theta3
        self.sqn = (x * x).sum(1)
        self.capacity = max(2, int(cache_mb * 2**20 // max(1, 8 * len(x))))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        if self.capacity >= len(x):
            # same per-row arithmetic as the on-demand path, so both give identical bits
            for i in range(len(x)):
                self._rows[i] = self._compute(i)

    def _compute(self, i: int) -> np.ndarray:
        d = np.maximum(self.sqn + self.sqn[i] - 2.0 * (self.x @ self.x[i]), 0.0)
        return np.exp(-self.theta3 * d)

    def __getitem__(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is None:
            row = self._compute(i)
            self._rows[i] = row
            if len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
        else:
            self._rows.move_to_end(i)
        return row

    def diag(self) -> np.ndarray:
        return np.ones(len(self.x))


def dual_objective(alpha, labels, kernel) -> float:
    v = alpha * labels
    return float(alpha.sum() - 0.5 * v @ kernel @ v)


def _select_pair(alpha, y, grad, c):
    """Maximal violating pair; returns (i, j, gap, score, up, low)."""
    score = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
    if not up.any() or not low.any():
        return -1, -1, 0.0, score, up, low
    s_up = np.where(up, score, -np.inf)
    s_low = np.where(low, score, np.inf)
    i = int(np.argmax(s_up))
    j = int(np.argmin(s_low))
    return i, j, float(s_up[i] - s_low[j]), score, up, low


def smo(y, c, kernel_rows, tol=KKT_TOL, max_updates=MAX_PAIR_UPDATES, trace=None):
    """Solve the box-constrained dual; returns (alpha, grad, n_updates, gap).

    Stops when the maximal KKT violation (m - M over the up/low index sets)
    is at most ``tol``.  The first index is the maximal violator; the second
    maximizes the guaranteed objective gain b^2 / a (second-order selection).
    ``grad`` is the gradient of the minimization form ``1/2 a'Qa - sum(a)``.
    When ``trace`` is a list, the dual objective after every update is appended.
    """
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)
    yf = y.astype(float)
    pos = y > 0
    diag = kernel_rows.diag()
    # up: alpha may move so that y*alpha grows; low: so that it shrinks
    up = pos & (c > 0) | ~pos & (alpha > 0)
    low = ~pos & (c > 0) | pos & (alpha > 0)
    updates = 0
    gap = math.inf
    while True:
        score = -yf * grad
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        s_low = np.where(low, score, np.inf)
        m_up, m_low = s_up[i], float(s_low.min())
        if not (math.isfinite(m_up) and math.isfinite(m_low)):
            gap = 0.0
            break
        gap = float(m_up - m_low)
        if gap <= tol:
            break
        if updates >= max_updates:
            raise NonConvergence(
                f"SMO exceeded {max_updates} pair updates",
                {"updates": updates, "gap": gap, "n": n},
            )
        ki = kernel_rows[i]
        b = m_up - s_low
        a = np.maximum(ki[i] + diag - 2.0 * ki, _TAU)
        gain = np.where(b > 0, b * b / a, -np.inf)
        j = int(np.argmax(gain))
        kj = kernel_rows[j]
        step = b[j] / a[j]
        step = min(step, c[i] - alpha[i] if y[i] > 0 else alpha[i])
        step = min(step, alpha[j] if y[j] > 0 else c[j] - alpha[j])
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # snap to the box to stop drift from accumulating
        for t in (i, j):
            if alpha[t] < 1e-14 * c[t]:
                alpha[t] = 0.0
            elif alpha[t] > c[t] * (1 - 1e-14):
                alpha[t] = c[t]
            up[t] = (alpha[t] < c[t]) if pos[t] else (alpha[t] > 0)
            low[t] = (alpha[t] > 0) if pos[t] else (alpha[t] < c[t])
        grad += step * yf * (ki - kj)
        updates += 1
        if trace is not None:
            trace.append(float(alpha.sum() - 0.5 * alpha @ (grad + 1.0)))
    return alpha, grad, updates, gap


def _bias(alpha, y, grad, c):
    score = -y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return float(score[free].mean())
    _, _, _, score, up, low = _select_pair(alpha, y, grad, c)
    hi = score[up].max() if up.any() else score[low].min()
    lo = score[low].min() if low.any() else score[up].max()
    return float(0.5 * (hi + lo))


def fit_standardization(x: np.ndarray):
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


def constant_model(label: int, n_features: int) -> SvmModel:
    return SvmModel(
        support_vectors=np.zeros((0, n_features)),
        coef=np.zeros(0),
        bias=math.inf if label == DAMAGE else -math.inf,
        theta3=1.0,
        means=np.zeros(n_features),
        scales=np.ones(n_features),
        constant_class=label,
    )


def train(
    data: TrainingSet,
    hp: SvmHyperParams,
    tol: float = KKT_TOL,
    max_updates: int = MAX_PAIR_UPDATES,
    cache_mb: float = 256.0,
    trace: list | None = None,
) -> SvmModel:
    if len(data) < 1:
        raise ValidationError("cannot train on an empty set")
    x = data.features
    if not np.all(np.isfinite(x)):
        raise InvalidInput("training features contain non-finite values")
    classes = np.unique(data.labels)
    if classes.size == 1:
        return constant_model(int(classes[0]), x.shape[1])

    means, scales = fit_standardization(x)
    xs = (x - means) / scales
    y = data.labels
    c = sample_box_bounds(y, data.weights, hp)
    rows = _KernelRows(xs, hp.theta3, cache_mb)
    alpha, grad, updates, gap = smo(y, c, rows, tol, max_updates, trace)
    bias = _bias(alpha, y, grad, c)

    sv = alpha > 0
    return SvmModel(
        support_vectors=xs[sv],
        coef=alpha[sv] * y[sv],
        bias=bias,
        theta3=hp.theta3,
        means=means,
        scales=scales,
        info={
            "updates": updates,
            "gap": gap,
            "alpha": alpha,
            "box": c,
            "train_decision": y * (grad + 1.0) + bias,
        },
    )


def decision_values(model: SvmModel, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xs = model.standardize(x)
    if model.is_constant:
        return np.full(len(x), model.bias)
    k = rbf_matrix(xs, model.support_vectors, model.theta3)
    return k @ model.coef + model.bias


def decision_value(model: SvmModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("decision_value expects a single feature vector")
    return float(decision_values(model, x)[0])


def predict_many(model: SvmModel, x) -> np.ndarray:
    """Labels +1/-1; a tie at exactly zero goes to N."""
    return np.where(decision_values(model, x) > 0, DAMAGE, NO_DAMAGE)


def predict(model: SvmModel, x) -> str:
    return "D" if decision_value(model, x) > 0 else "N"


def to_document(model: SvmModel) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "theta3": model.theta3,
        "bias": model.bias if math.isfinite(model.bias) else None,
        "standardization": {"means": model.means.tolist(), "scales": model.scales.tolist()},
        "support_vectors": model.support_vectors.tolist(),
        "coefficients": model.coef.tolist(),
    }
    if model.is_constant:
        doc["constant_class"] = "D" if model.constant_class == DAMAGE else "N"
    return doc


def from_document(doc: dict) -> SvmModel:
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version!r}; this build reads version {FORMAT_VERSION}")
    try:
        std = doc["standardization"]
        means = np.array(std["means"], dtype=float)
        scales = np.array(std["scales"], dtype=float)
        constant = doc.get("constant_class")
        if constant is not None:
            if constant not in ("D", "N"):
                raise ParseError(f"constant_class must be 'D' or 'N', got {constant!r}")
            model = constant_model(DAMAGE if constant == "D" else NO_DAMAGE, means.size)
            return SvmModel(model.support_vectors, model.coef, model.bias, model.theta3,
                            means, scales, model.constant_class)
        sv = np.array(doc["support_vectors"], dtype=float).reshape(-1, means.size)
        coef = np.array(doc["coefficients"], dtype=float)
        bias = float(doc["bias"])
        theta3 = float(doc["theta3"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    if sv.shape[0] != coef.size or scales.size != means.size:
        raise ParseError("support vectors, coefficients and standardization disagree in size")
    return SvmModel(sv, coef, bias, theta3, means, scales)


def serialize(model: SvmModel) -> str:
    return json.dumps(to_document(model), sort_keys=True)


def deserialize(text: str) -> SvmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model document is not valid JSON: {exc}") from exc
    return from_document(doc)
