"""Cross-validated cost objective and Gaussian-process Bayesian optimization."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.stats import norm, qmc

from .costs import ClassCatalog, CostWeights, PenaltyConfig, ScoreMatrix, cost, score_matrix
from .errors import InsufficientData, SeisDiagError, ValidationError

log = logging.getLogger(__name__)

Point = dict[str, float]


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log10"):
            raise ValidationError(f"{self.name}: scale must be 'linear' or 'log10'")
        if not self.lower < self.upper:
            raise ValidationError(f"{self.name}: lower bound must be below upper bound")
        if self.scale == "log10" and self.lower <= 0:
            raise ValidationError(f"{self.name}: log10 dims need a positive lower bound")

    def to_unit(self, v: float) -> float:
        if self.scale == "log10":
            lo, hi, v = math.log10(self.lower), math.log10(self.upper), math.log10(v)
        else:
            lo, hi = self.lower, self.upper
        return (v - lo) / (hi - lo)

    def from_unit(self, u: float) -> float:
        u = min(max(u, 0.0), 1.0)
        if self.scale == "log10":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            return 10 ** (lo + u * (hi - lo))
        return self.lower + u * (self.upper - self.lower)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]
    # groups of dim names whose values are interchangeable; kept sorted ascending
    sorted_groups: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate dimension names")
        for group in self.sorted_groups:
            missing = set(group) - set(names)
            if missing:
                raise ValidationError(f"sorted group refers to unknown dims {sorted(missing)}")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def d(self) -> int:
        return len(self.dims)

    def to_point(self, u: np.ndarray) -> Point:
        return {d.name: d.from_unit(float(x)) for d, x in zip(self.dims, u)}

    def to_unit(self, point: Mapping[str, float]) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dims])

    def canonical_unit(self, u: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0).copy()
        index = {n: i for i, n in enumerate(self.names)}
        for group in self.sorted_groups:
            idx = [index[n] for n in group]
            u[idx] = np.sort(u[idx])
        return u

    def center(self) -> Point:
        return self.to_point(self.canonical_unit(np.full(self.d, 0.5)))


def default_space(k: int, prefixes: Sequence[str] = ("",)) -> SearchSpace:
    """Default bounds: one (theta1, theta2, theta3) triple per prefix plus k eta dims."""
    dims = []
    for p in prefixes:
        dims += [
            Dim(f"{p}theta1", 1.0, 100.0, "log10"),
            Dim(f"{p}theta2", 1e-2, 1e3, "log10"),
            Dim(f"{p}theta3", 1e-4, 1e2, "log10"),
        ]
    etas = tuple(f"eta_{i + 1}" for i in range(k))
    dims += [Dim(name, 0.25, 3.0) for name in etas]
    return SearchSpace(tuple(dims), (etas,) if k > 1 else ())


@dataclass(frozen=True)
class TunerConfig:
    budget: int = 60
    init_points: int = 12
    folds: int = 10
    seed: int = 0
    acquisition_restarts: int = 32

    def __post_init__(self):
        if not self.budget > self.init_points >= 2:
            raise ValidationError("need budget > init_points >= 2")
        if self.folds < 2:
            raise ValidationError("need at least 2 folds")
        if self.acquisition_restarts < 1:
            raise ValidationError("need at least one acquisition restart")


@dataclass
class Trial:
    index: int
    point: Point
    objective: float
    fold_costs: tuple[float, ...] = ()
    failed: bool = False
    error: str = ""


@dataclass
class TuningResult:
    best: Trial
    history: list[Trial]
    space: SearchSpace
    incumbents: list[float] = field(default_factory=list)

    def history_csv(self, provenance: str | None = None) -> str:
        buf = io.StringIO()
        if provenance:
            buf.write(f"# {provenance}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", *self.space.names, "objective", "incumbent"])
        for t, inc in zip(self.history, self.incumbents):
            w.writerow([t.index, *(repr(t.point[n]) for n in self.space.names), repr(t.objective), repr(inc)])
        return buf.getvalue()


# ---------------------------------------------------------------- folds

def kfold_split(n: int, k: int, strata=None, seed: int = 0) -> list[np.ndarray]:
    """Stratified k-fold partition of ``range(n)``.

    Members of each stratum are shuffled and dealt round-robin, continuing the
    deal across strata, so fold sizes differ by at most one overall and per
    stratum.
    """
    if k < 2:
        raise ValidationError("need at least 2 folds")
    if n < k:
        raise InsufficientData(f"{n} observations cannot fill {k} folds")
    strata = np.zeros(n, dtype=int) if strata is None else np.asarray(strata)
    if strata.shape != (n,):
        raise ValidationError("strata must have one entry per observation")
    rng = np.random.default_rng(seed)
    order = []
    for s in sorted(set(strata.tolist()), key=str):
        members = np.flatnonzero(strata == s)
        order.extend(rng.permutation(members).tolist())
    order = np.array(order, dtype=int)
    return [np.sort(order[f::k]) for f in range(k)]


# ------------------------------------------------------- cross validation

@dataclass(frozen=True)
class CvResult:
    objective: float
    pooled: ScoreMatrix
    per_fold: tuple[ScoreMatrix, ...]
    fold_costs: tuple[float, ...]


def cv_objective(
    fit_predict: Callable[[np.ndarray, np.ndarray], np.ndarray],
    truths: np.ndarray,
    probs: np.ndarray,
    folds: Sequence[np.ndarray],
    catalog: ClassCatalog,
    weights: CostWeights,
    penalties: PenaltyConfig,
) -> CvResult:
    """Cost of one pooled score matrix accumulated over all folds.

    ``fit_predict(train_idx, test_idx)`` returns predicted class indices for
    ``test_idx``.  Folds are processed in index order.
    """
    truths = np.asarray(truths)
    probs = np.asarray(probs, dtype=float)
    n = truths.size
    per_fold = []
    for f, test in enumerate(folds):
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        train = np.flatnonzero(mask)
        try:
            preds = fit_predict(train, test)
        except SeisDiagError as exc:
            raise type(exc)(f"fold {f}: {exc}") from exc
        per_fold.append(score_matrix(truths[test], preds, probs[test], catalog))
    pooled = ScoreMatrix(np.sum([m.S for m in per_fold], axis=0), catalog)
    return CvResult(
        objective=cost(pooled, weights, penalties),
        pooled=pooled,
        per_fold=tuple(per_fold),
        fold_costs=tuple(cost(m, weights, penalties) for m in per_fold),
    )


# ------------------------------------------------------------ GP surrogate

_SQRT5 = math.sqrt(5.0)


def matern52(a: np.ndarray, b: np.ndarray, lengths: np.ndarray, variance: float) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / lengths
    r = np.sqrt(np.maximum((d * d).sum(-1), 0.0))
    return variance * (1.0 + _SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-_SQRT5 * r)


class GpSurrogate:
    """Zero-mean GP on the unit box with a Matern 5/2 ARD kernel."""

    LOG_LENGTH_BOUNDS = (math.log(0.02), math.log(5.0))
    LOG_VAR_BOUNDS = (math.log(0.05), math.log(20.0))

    def __init__(self, jitter: float = 1e-6):
        if jitter < 1e-8:
            raise ValidationError("jitter must be at least 1e-8")
        self.jitter = jitter

    def fit(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator, restarts: int = 3):
        self.x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.z = (y - self.y_mean) / self.y_std
        d = self.x.shape[1]
        lo = np.r_[np.full(d, self.LOG_LENGTH_BOUNDS[0]), self.LOG_VAR_BOUNDS[0]]
        hi = np.r_[np.full(d, self.LOG_LENGTH_BOUNDS[1]), self.LOG_VAR_BOUNDS[1]]

        def nll(theta):
            theta = np.clip(theta, lo, hi)
            try:
                L, alpha = self._factor(np.exp(theta[:d]), math.exp(theta[d]))
            except np.linalg.LinAlgError:
                return 1e25
            return 0.5 * self.z @ alpha + np.log(np.diag(L[0])).sum()

        starts = [np.r_[np.full(d, math.log(0.3)), 0.0]]
        previous = getattr(self, "_theta", None)
        if previous is not None and previous.size == d + 1:
            starts.append(previous)
        starts += [rng.uniform(lo, hi) for _ in range(max(restarts - len(starts), 0))]
        best = None
        for s in starts:
            res = sopt.minimize(nll, s, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                options={"maxfev": 40 * (d + 1), "xatol": 1e-2, "fatol": 1e-4})
            if best is None or res.fun < best.fun:
                best = res
        theta = np.clip(best.x, lo, hi)
        self._theta = theta
        self.lengths = np.exp(theta[:d])
        self.variance = math.exp(theta[d])
        self._chol, self._alpha = self._factor(self.lengths, self.variance)
        return self

    def _factor(self, lengths, variance):
        k = matern52(self.x, self.x, lengths, variance)
        jitter = self.jitter
        for _ in range(8):
            try:
                c = cho_factor(k + jitter * np.eye(len(k)), lower=True)
                self.effective_jitter = jitter
                return c, cho_solve(c, self.z)
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise np.linalg.LinAlgError("covariance matrix not positive definite")

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and variance in standardized units."""
        x = np.atleast_2d(x)
        ks = matern52(x, self.x, self.lengths, self.variance)
        mu = ks @ self._alpha
        v = solve_triangular(self._chol[0], ks.T, lower=True)
        var = np.maximum(self.variance - (v * v).sum(0), 0.0)
        return mu, var


def expected_improvement(gp: GpSurrogate, x: np.ndarray, best: float) -> np.ndarray:
    """EI for minimization in standardized units.

    Posterior variances below ten times the jitter are treated as zero, so a
    point already evaluated offers no improvement over the plug-in incumbent.
    """
    mu, var = gp.predict(x)
    gain = best - mu
    ei = np.maximum(gain, 0.0)
    ok = var > 10.0 * gp.effective_jitter
    if np.any(ok):
        s = np.sqrt(var[ok])
        z = gain[ok] / s
        ei[ok] = gain[ok] * norm.cdf(z) + s * norm.pdf(z)
    return np.maximum(ei, 0.0)


def plugin_best(gp: GpSurrogate) -> float:
    return float(gp.predict(gp.x)[0].min())


# ---------------------------------------------------------------- driver

def _penalty(values: Sequence[float]) -> float:
    if not values:
        return 1.0
    arr = np.asarray(values)
    spread = float(arr.std()) if arr.size > 1 else abs(float(arr[0])) or 1.0
    return float(arr.max() + 3.0 * spread)


def warp_targets(y: Sequence[float]) -> np.ndarray:
    """Monotone log compression of objective values before the GP sees them.

    Values are shifted so the best is zero and divided by the median absolute
    deviation, then passed through ``log1p``.  Differences near the incumbent
    stay nearly linear while a single huge penalty (an absent-class prediction
    weighted by Omega, say) no longer flattens every other standardized target.
    The argmin is unchanged.
    """
    y = np.asarray(y, dtype=float)
    scale = float(np.median(np.abs(y - np.median(y))))
    if not scale > 0:
        scale = float(y.std()) or 1.0
    return np.log1p((y - y.min()) / scale)


def _maximize_ei(gp, space: SearchSpace, rng, restarts: int, taken: np.ndarray) -> np.ndarray:
    d = space.d
    best_f = plugin_best(gp)
    starts = rng.random((restarts, d))
    scores = expected_improvement(gp, starts, best_f)

    step = 1e-7

    def neg(u):
        # value and forward-difference gradient from one batched prediction;
        # steps go inward at the upper bound
        h = np.where(u + step <= 1.0, step, -step)
        ei = expected_improvement(gp, u + np.vstack([np.zeros(d), np.diag(h)]), best_f)
        return -float(ei[0]), -(ei[1:] - ei[0]) / h

    cand_u, cand_v = list(starts), list(scores)
    for s in starts:
        res = sopt.minimize(neg, s, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
                            options={"maxiter": 50})
        cand_u.append(np.clip(res.x, 0.0, 1.0))
        cand_v.append(-res.fun)
    order = np.argsort(-np.asarray(cand_v), kind="stable")
    for i in order:
        u = space.canonical_unit(cand_u[i])
        if cand_v[i] > 0 and np.min(np.abs(taken - u).max(axis=1)) > 1e-6:
            return u
    # nothing promising: explore at random
    return space.canonical_unit(rng.random(d))


def optimize(
    objective: Callable[[Point], float | tuple[float, Sequence[float]]],
    space: SearchSpace,
    config: TunerConfig,
    initial: Sequence[Point] = (),
) -> TuningResult:
    """Latin-hypercube warm-up followed by expected-improvement search.

    ``objective`` returns a scalar or ``(scalar, fold_costs)``.  Failures raise
    any :class:`SeisDiagError` (or produce a non-finite value) and are recorded
    at a penalized value.  ``initial`` points are evaluated first and count
    towards ``init_points``.
    """
    rng = np.random.default_rng(config.seed)
    n_lhs = max(config.init_points - len(initial), 0)
    design = [space.canonical_unit(space.to_unit(p)) for p in initial]
    if n_lhs:
        lhs = qmc.LatinHypercube(d=space.d, seed=rng).random(n_lhs)
        design += [space.canonical_unit(u) for u in lhs]

    history: list[Trial] = []
    units: list[np.ndarray] = []
    incumbents: list[float] = []

    def evaluate(u: np.ndarray):
        point = space.to_point(u)
        idx = len(history)
        try:
            out = objective(point)
            value, folds = (out if isinstance(out, tuple) else (out, ()))
            value = float(value)
            if not math.isfinite(value):
                raise ValidationError(f"objective returned {value}")
            trial = Trial(idx, point, value, tuple(folds))
        except SeisDiagError as exc:
            ok = [t.objective for t in history if not t.failed]
            trial = Trial(idx, point, _penalty(ok), failed=True, error=str(exc))
            log.warning("trial %d failed at %s: %s", idx, point, exc)
        history.append(trial)
        units.append(u)
        ok = [t.objective for t in history if not t.failed]
        incumbents.append(min(ok) if ok else trial.objective)
        log.info("trial %d/%d objective %.6g incumbent %.6g", idx + 1, config.budget,
                 trial.objective, incumbents[-1])

    for u in design:
        evaluate(u)
    gp = GpSurrogate()
    while len(history) < config.budget:
        ok = [t.objective for t in history if not t.failed]
        pen = _penalty(ok)
        y = np.array([pen if t.failed else t.objective for t in history])
        gp.fit(np.array(units), warp_targets(y), rng)
        u = _maximize_ei(gp, space, rng, config.acquisition_restarts, np.array(units))
        evaluate(u)

    ok = [t for t in history if not t.failed]
    pool = ok or history
    best = min(pool, key=lambda t: (t.objective, t.index))
    return TuningResult(best, history, space, incumbents)


def random_search(objective, space: SearchSpace, budget: int, seed: int = 0) -> TuningResult:
    """Uniform random search over the unit box; the baseline for BO."""
    rng = np.random.default_rng(seed)
    history, incumbents = [], []
    for i in range(budget):
        point = space.to_point(space.canonical_unit(rng.random(space.d)))
        out = objective(point)
        value = float(out[0] if isinstance(out, tuple) else out)
        history.append(Trial(i, point, value))
        incumbents.append(min(t.objective for t in history))
    best = min(history, key=lambda t: (t.objective, t.index))
    return TuningResult(best, history, space, incumbents)
