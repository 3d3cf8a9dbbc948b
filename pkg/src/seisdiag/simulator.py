"""Synthetic labeled data: filtered-noise ground motions driving a yielding shear building.

Units are SI throughout (kg, N/m, m, s, m/s^2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as ssig
from scipy.linalg import eigh

from . import signals
from .dataset import Dataset
from .errors import IntegrationFailure, SeisDiagError, ValidationError
from .signals import AccelRecord, ChannelPairSet, EtaSet

log = logging.getLogger(__name__)

DRIFT_THRESHOLD = 0.005
COLLAPSE_DRIFT = 0.20
NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class BuildingSpec:
    masses: tuple[float, ...]
    stiffnesses: tuple[float, ...]
    yield_drifts: tuple[float, ...]
    heights: tuple[float, ...]
    hardening: float = 0.05
    damping_ratio: float = 0.05

    def __post_init__(self):
        n = len(self.masses)
        if n < 1:
            raise ValidationError("a building needs at least one story")
        for name in ("stiffnesses", "yield_drifts", "heights"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} must have {n} entries")
        for name in ("masses", "stiffnesses", "heights", "yield_drifts"):
            if any(not v > 0 for v in getattr(self, name)):
                raise ValidationError(f"{name} must be positive")
        if not 0 <= self.hardening < 1:
            raise ValidationError("post-yield stiffness ratio must lie in [0, 1)")
        if self.damping_ratio < 0:
            raise ValidationError("damping ratio must be nonnegative")

    @property
    def n_stories(self) -> int:
        return len(self.masses)

    @property
    def is_linear(self) -> bool:
        return all(math.isinf(d) for d in self.yield_drifts)

    @classmethod
    def uniform(cls, n_stories: int, mass=2.0e5, stiffness=2.0e8, yield_drift=0.004,
                height=3.2, **kw) -> "BuildingSpec":
        return cls((mass,) * n_stories, (stiffness,) * n_stories,
                   (yield_drift,) * n_stories, (height,) * n_stories, **kw)

    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.masses)

    def stiffness_matrix(self) -> np.ndarray:
        return _assemble(np.asarray(self.stiffnesses, dtype=float))

    def periods(self) -> np.ndarray:
        w2 = eigh(self.stiffness_matrix(), self.mass_matrix(), eigvals_only=True)
        return 2 * np.pi / np.sqrt(w2)

    def damping_matrix(self) -> np.ndarray:
        w = np.sort(2 * np.pi / self.periods())
        w1 = w[0]
        w2 = w[1] if w.size > 1 else w[0]
        z = self.damping_ratio
        a0 = 2 * z * w1 * w2 / (w1 + w2)
        a1 = 2 * z / (w1 + w2)
        return a0 * self.mass_matrix() + a1 * self.stiffness_matrix()


def _assemble(story: np.ndarray) -> np.ndarray:
    """Global matrix from story (spring) stiffnesses of a shear building."""
    n = story.size
    k = np.zeros((n, n))
    for i in range(n):
        k[i, i] += story[i]
        if i + 1 < n:
            k[i, i] += story[i + 1]
            k[i, i + 1] -= story[i + 1]
            k[i + 1, i] -= story[i + 1]
    return k


@dataclass(frozen=True)
class GroundMotionSpec:
    omega_g: float = 15.6
    zeta_g: float = 0.6
    intensity: float = 0.012
    duration: float = 15.0
    dt: float = 0.01
    ramp: float = 2.0
    strong: float = 6.0
    decay: float = 0.5

    def __post_init__(self):
        if not (self.dt > 0 and self.omega_g > 0 and self.zeta_g > 0 and self.intensity >= 0):
            raise ValidationError("dt, omega_g and zeta_g must be positive; intensity nonnegative")
        if self.ramp < 0 or self.strong < 0 or self.decay <= 0:
            raise ValidationError("envelope times must be nonnegative and decay positive")
        if self.duration < self.ramp + self.strong:
            raise ValidationError("duration must cover ramp + strong-motion phase")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    def envelope(self, t: np.ndarray) -> np.ndarray:
        t1, t2 = self.ramp, self.ramp + self.strong
        env = np.ones_like(t)
        if t1 > 0:
            env = np.where(t < t1, (t / t1) ** 2, env)
        return np.where(t > t2, np.exp(-self.decay * (t - t2)), env)


@dataclass(frozen=True)
class HazardScenario:
    scale_factors: tuple[float, ...]
    probabilities: tuple[float, ...]
    records_per_scale: int

    def __post_init__(self):
        s, p = self.scale_factors, self.probabilities
        if not s or len(s) != len(p):
            raise ValidationError("need one probability per scale factor")
        if any(x <= 0 for x in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise ValidationError("scale factors must be positive and ascending")
        if any(x <= 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValidationError("probabilities must be positive and sum to 1")
        if self.records_per_scale < 1:
            raise ValidationError("need at least one record per scale")

    @classmethod
    def exponential(cls, scale_factors, records_per_scale: int, s0: float = 1.0) -> "HazardScenario":
        """Occurrence weights decaying as ``exp(-s / s0)`` over the scale factors."""
        s = np.asarray(scale_factors, dtype=float)
        w = np.exp(-s / s0)
        w = w / w.sum()
        return cls(tuple(s.tolist()), tuple(w.tolist()), records_per_scale)


@dataclass
class SimulationResult:
    ground: AccelRecord
    floors: tuple[AccelRecord, ...]
    peak_drift_ratios: np.ndarray
    displacement: np.ndarray = field(repr=False)
    velocity: np.ndarray = field(repr=False)
    relative_acceleration: np.ndarray = field(repr=False)
    story_forces: np.ndarray = field(repr=False)
    collapsed: bool = False

    @property
    def channels(self) -> dict[str, AccelRecord]:
        out = {self.ground.channel_id: self.ground}
        out.update({r.channel_id: r for r in self.floors})
        return out


def generate_ground_motion(spec: GroundMotionSpec, scale: float, seed) -> AccelRecord:
    """Envelope-modulated Kanai-Tajimi filtered white noise, times ``scale``.

    ``intensity`` is the two-sided spectral density S0 of the driving white
    noise; the discrete noise has variance ``2*pi*S0/dt``.
    """
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    n = spec.n_samples
    t = np.arange(n) * spec.dt
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n) * math.sqrt(2 * math.pi * spec.intensity / spec.dt)
    wg, zg = spec.omega_g, spec.zeta_g
    # filter state [x, x']: x'' + 2 zg wg x' + wg^2 x = -w; output is absolute accel of the filter mass
    a = np.array([[0.0, 1.0], [-wg * wg, -2 * zg * wg]])
    b = np.array([[0.0], [-1.0]])
    c = np.array([[-wg * wg, -2 * zg * wg]])
    ad, bd, cd, dd, _ = ssig.cont2discrete((a, b, c, np.zeros((1, 1))), spec.dt, method="zoh")
    x = np.zeros(2)
    out = np.empty(n)
    for i in range(n):
        out[i] = cd[0] @ x
        x = ad @ x + bd[:, 0] * w[i]
    accel = scale * (spec.envelope(t) * out)
    return AccelRecord("ground", spec.dt, accel)


class _StorySprings:
    """Bilinear kinematic-hardening springs: elastic branch in parallel with elastoplastic."""

    def __init__(self, building: BuildingSpec):
        self.k = np.asarray(building.stiffnesses, dtype=float)
        self.alpha = building.hardening
        dy = np.asarray(building.yield_drifts, dtype=float) * np.asarray(building.heights, dtype=float)
        self.plastic_cap = (1 - self.alpha) * self.k * dy  # inf for linear stories
        self.plastic = np.zeros_like(self.k)

    def trial(self, deform_inc: np.ndarray):
        """Story forces and tangents for a deformation increment from the last commit."""
        kp = (1 - self.alpha) * self.k
        trial = self.plastic + kp * deform_inc
        yielded = np.abs(trial) > self.plastic_cap
        epp = np.clip(trial, -self.plastic_cap, self.plastic_cap)
        tangent = self.alpha * self.k + np.where(yielded, 0.0, kp)
        return epp, tangent

    def commit(self, epp: np.ndarray):
        self.plastic = epp


def simulate(building: BuildingSpec, gm: AccelRecord) -> SimulationResult:
    """Newmark average-acceleration response with Newton iterations per step."""
    n = building.n_stories
    ag = np.asarray(gm.samples, dtype=float)
    dt = gm.dt
    steps = ag.size
    m = building.mass_matrix()
    c = building.damping_matrix()
    mdiag = np.asarray(building.masses, dtype=float)
    heights = np.asarray(building.heights, dtype=float)
    springs = _StorySprings(building)
    k_story = np.asarray(building.stiffnesses, dtype=float)

    finite_caps = springs.plastic_cap[np.isfinite(springs.plastic_cap)] / (1 - building.hardening)
    strength = float(finite_caps.max()) if finite_caps.size else float((k_story * heights).max() * DRIFT_THRESHOLD)
    tol = NEWTON_TOL * strength

    gamma, beta = 0.5, 0.25
    a0 = 1.0 / (beta * dt * dt)
    a1 = gamma / (beta * dt)

    u = np.zeros((steps, n))
    v = np.zeros((steps, n))
    acc = np.zeros((steps, n))
    fs_hist = np.zeros((steps, n))
    elastic = building.hardening * k_story

    def story_deform(disp):
        return np.diff(np.r_[0.0, disp])

    def resisting(story_f):
        # nodal restoring force from story shears: f_i = V_i - V_{i+1}
        return story_f - np.r_[story_f[1:], 0.0]

    acc[0] = -ag[0] * np.ones(n)  # starts at rest, no restoring or damping force
    committed_deform = np.zeros(n)
    for i in range(steps - 1):
        p = -mdiag * ag[i + 1]
        u_pred = u[i] + dt * v[i] + dt * dt * (0.5 - beta) * acc[i]
        v_pred = v[i] + dt * (1 - gamma) * acc[i]
        un = u[i].copy()
        for it in range(NEWTON_MAX_ITER):
            an = a0 * (un - u_pred)
            vn = v_pred + gamma * dt * an
            deform = story_deform(un)
            epp, tangent = springs.trial(deform - committed_deform)
            story_f = elastic * deform + epp
            r = p - m @ an - c @ vn - resisting(story_f)
            # always take one correction so elastic response stays exactly linear in the input
            if it > 0 and np.max(np.abs(r)) <= tol:
                break
            kt = a0 * m + a1 * c + _assemble(tangent)
            un = un + np.linalg.solve(kt, r)
        else:
            raise IntegrationFailure(f"Newton iteration did not converge at step {i + 1}", step=i + 1)
        springs.commit(epp)
        committed_deform = deform
        u[i + 1], v[i + 1], acc[i + 1] = un, vn, an
        fs_hist[i + 1] = story_f

    drifts = np.abs(np.diff(np.hstack([np.zeros((steps, 1)), u]), axis=1)) / heights
    peak = drifts.max(axis=0)
    collapsed = bool(peak.max() > COLLAPSE_DRIFT)
    if collapsed:
        log.warning("collapse detected: peak drift ratio %.3f", peak.max())
    absolute = acc + ag[:, None]
    floors = tuple(AccelRecord(f"floor_{s + 1}", dt, absolute[:, s]) for s in range(n))
    return SimulationResult(
        ground=AccelRecord("ground", dt, ag),
        floors=floors,
        peak_drift_ratios=peak,
        displacement=u,
        velocity=v,
        relative_acceleration=acc,
        story_forces=fs_hist,
        collapsed=collapsed,
    )


def label(result: SimulationResult, threshold: float = DRIFT_THRESHOLD):
    """Per-story 'D'/'N' letters (story 1 first) and the building label."""
    stories = tuple("D" if d > threshold else "N" for d in result.peak_drift_ratios)
    return stories, ("D" if "D" in stories else "N")


def event_seed(seed: int, scale_index: int, record_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(scale_index), int(record_index)])


def build_dataset(
    building: BuildingSpec,
    gm_spec: GroundMotionSpec,
    hazard: HazardScenario,
    seed: int,
    etas: EtaSet,
    pairs: ChannelPairSet | None = None,
    threshold: float = DRIFT_THRESHOLD,
) -> Dataset:
    """Simulate every (scale, record) event in order and featurize it.

    Occurrence probabilities are ``p_i / n_rec`` for the event's scale, so they
    sum to one over the full grid; dropped events are reported, not renormalized.
    """
    pairs = pairs or ChannelPairSet.consecutive(building.n_stories)
    ids, scales, probs, stories, buildings, recs, feats, dropped = [], [], [], [], [], [], [], []
    n_rec = hazard.records_per_scale
    for i, (s, p) in enumerate(zip(hazard.scale_factors, hazard.probabilities)):
        for r in range(n_rec):
            try:
                gm = generate_ground_motion(gm_spec, s, event_seed(seed, i, r))
                res = simulate(building, gm)
                fv = signals.assemble_features(res.ground, res.channels, pairs, etas)
            except SeisDiagError as exc:
                log.warning("event (scale %d, record %d) dropped: %s", i, r, exc)
                dropped.append((i, r, str(exc)))
                continue
            st, bl = label(res, threshold)
            ids.append(f"s{i:03d}_r{r:04d}")
            scales.append(s)
            probs.append(p / n_rec)
            stories.append(st)
            buildings.append(bl)
            recs.append(np.vstack([res.ground.samples] + [f.samples for f in res.floors]))
            feats.append(fv.values)
    width = etas.k * (1 + pairs.count)
    return Dataset(
        record_ids=ids,
        scale_factors=np.array(scales),
        probabilities=np.array(probs),
        story_labels=stories,
        building_labels=buildings,
        records=np.array(recs) if recs else np.zeros((0, building.n_stories + 1, gm_spec.n_samples)),
        dt=gm_spec.dt,
        features=np.array(feats) if feats else np.zeros((0, width)),
        etas=etas,
        pairs=pairs,
        dropped=dropped,
    )
