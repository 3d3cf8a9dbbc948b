"""Cumulative-intensity features from multi-channel acceleration records.

A record's intensity is the integral of ``|a(t)|**eta`` over its duration,
evaluated with the trapezoidal rule on the sampling grid.  Feature vectors
stack, for every exponent ``eta``, the ground intensity followed by the
intensity ratios of the configured (top, bottom) channel pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ChannelMismatch, DegenerateDenominator, InvalidSignal, ValidationError

ETA_MIN = 0.25
ETA_MAX = 3.0
DEGENERACY_REL = 1e-12


@dataclass(frozen=True)
class AccelRecord:
    channel_id: str
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise InvalidSignal(f"{self.channel_id}: samples must be one-dimensional")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidSignal(f"{self.channel_id}: dt must be positive, got {self.dt}")
        if samples.size < 2:
            raise InvalidSignal(f"{self.channel_id}: need at least 2 samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.dt * (len(self.samples) - 1)

    def scaled(self, factor: float) -> "AccelRecord":
        return AccelRecord(self.channel_id, self.dt, factor * self.samples)


@dataclass(frozen=True)
class ChannelPairSet:
    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        pairs = tuple((str(top), str(bottom)) for top, bottom in self.pairs)
        for top, bottom in pairs:
            if top == bottom:
                raise ValidationError(f"channel pair ({top}, {bottom}) uses the same channel twice")
        object.__setattr__(self, "pairs", pairs)

    @property
    def count(self) -> int:
        return len(self.pairs)

    @classmethod
    def consecutive(cls, n_stories: int, ground: str = "ground", prefix: str = "floor_"):
        """Story-wise pairs (floor_i, floor_{i-1}), with the ground as floor 0."""
        names = [ground] + [f"{prefix}{i}" for i in range(1, n_stories + 1)]
        return cls(tuple((names[i], names[i - 1]) for i in range(1, n_stories + 1)))


@dataclass(frozen=True)
class EtaSet:
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValidationError("an eta set needs at least one exponent")
        for v in values:
            _check_eta(v)
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValidationError(f"eta values must be strictly ascending: {values}")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    eta_set: EtaSet
    pair_set: ChannelPairSet

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        k, j = self.eta_set.k, self.pair_set.count
        if values.shape != (k * (1 + j),):
            raise ValidationError(f"feature vector must have length {k * (1 + j)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature vector contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def block(self, i: int) -> np.ndarray:
        """The ``[I_g, R_1 .. R_j]`` block for the i-th exponent."""
        width = 1 + self.pair_set.count
        return self.values[i * width:(i + 1) * width]


def _check_eta(eta: float) -> None:
    if not (ETA_MIN <= eta <= ETA_MAX):
        raise ValidationError(f"eta={eta} outside [{ETA_MIN}, {ETA_MAX}]")


def _powered(samples: np.ndarray, eta: float) -> np.ndarray:
    # 0**eta is 0 for every eta > 0, which numpy already honors
    return np.abs(samples) ** eta


def _trapezoid(y: np.ndarray, dt: float) -> np.ndarray:
    # sequential accumulation of non-negative interval terms: appending samples
    # only adds terms, so the result is monotone even in floating point
    terms = 0.5 * (y[..., 1:] + y[..., :-1])
    if terms.shape[-1] == 0:
        return dt * np.zeros(y.shape[:-1])
    return dt * np.cumsum(terms, axis=-1)[..., -1]


def cumulative_intensity(record: AccelRecord, eta: float) -> float:
    """Trapezoidal estimate of the integral of ``|a|**eta`` over the record."""
    _check_eta(eta)
    if not np.all(np.isfinite(record.samples)):
        raise InvalidSignal(f"{record.channel_id}: non-finite sample")
    return float(_trapezoid(_powered(record.samples, eta), record.dt))


def _check_aligned(a: AccelRecord, b: AccelRecord) -> None:
    if a.dt != b.dt or len(a.samples) != len(b.samples):
        raise ChannelMismatch(
            f"channels {a.channel_id!r} and {b.channel_id!r} differ in dt or length "
            f"({a.dt}/{len(a.samples)} vs {b.dt}/{len(b.samples)})"
        )


def _degenerate(intensity: np.ndarray, peak: np.ndarray, eta: float, duration: float) -> np.ndarray:
    return intensity < DEGENERACY_REL * (peak ** eta) * duration


def intensity_ratio(top: AccelRecord, bottom: AccelRecord, eta: float) -> float:
    _check_aligned(top, bottom)
    denom = cumulative_intensity(bottom, eta)
    peak = np.max(np.abs(bottom.samples))
    if denom == 0.0 or _degenerate(np.asarray(denom), peak, eta, bottom.duration):
        raise DegenerateDenominator(f"channel {bottom.channel_id!r} has negligible intensity at eta={eta}")
    return cumulative_intensity(top, eta) / denom


def assemble_features(
    ground: AccelRecord,
    floors: Mapping[str, AccelRecord],
    pairs: ChannelPairSet,
    etas: EtaSet,
) -> FeatureVector:
    channels = dict(floors)
    channels.setdefault(ground.channel_id, ground)
    for top, bottom in pairs.pairs:
        for name in (top, bottom):
            if name not in channels:
                raise ChannelMismatch(f"channel {name!r} not found among {sorted(channels)}")
    for rec in channels.values():
        _check_aligned(ground, rec)

    values = []
    for eta in etas.values:
        values.append(cumulative_intensity(ground, eta))
        for top, bottom in pairs.pairs:
            try:
                values.append(intensity_ratio(channels[top], channels[bottom], eta))
            except (DegenerateDenominator, ChannelMismatch) as exc:
                raise type(exc)(f"pair ({top}, {bottom}): {exc}") from exc
    return FeatureVector(np.array(values), etas, pairs)


def channel_intensities(samples: np.ndarray, dt: float, eta: float) -> np.ndarray:
    """Intensities of a stack of aligned channels; the last axis is time."""
    _check_eta(eta)
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise InvalidSignal("non-finite sample in channel stack")
    return _trapezoid(_powered(samples, eta), dt)


def features_from_intensities(
    intensities: Sequence[np.ndarray],
    peaks: np.ndarray,
    duration: float,
    channel_index: Mapping[str, int],
    ground: str,
    pairs: ChannelPairSet,
    etas: EtaSet,
) -> np.ndarray:
    """Batch version of :func:`assemble_features`.

    ``intensities[i]`` holds per-channel intensities at ``etas.values[i]`` with
    shape ``(n_events, n_channels)``; ``peaks`` holds peak ``|a|`` per channel
    with the same shape.  Returns an ``(n_events, k * (1 + j))`` matrix.
    """
    blocks = []
    g = channel_index[ground]
    for eta, inten in zip(etas.values, intensities):
        cols = [inten[:, g]]
        for top, bottom in pairs.pairs:
            t, b = channel_index[top], channel_index[bottom]
            denom = inten[:, b]
            bad = (denom == 0.0) | _degenerate(denom, peaks[:, b], eta, duration)
            if np.any(bad):
                rows = np.flatnonzero(bad)[:5].tolist()
                raise DegenerateDenominator(
                    f"pair ({top}, {bottom}): negligible intensity at eta={eta} for events {rows}"
                )
            cols.append(inten[:, t] / denom)
        blocks.append(np.column_stack(cols))
    return np.hstack(blocks)
