"""Labeled event datasets: in-memory form, CSV/NPY files, and re-featurization."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import signals
from .errors import ValidationError
from .signals import ChannelPairSet, EtaSet

FIXED_COLUMNS = ("record_id", "scale_factor", "probability")


@dataclass
class Dataset:
    record_ids: list[str]
    scale_factors: np.ndarray
    probabilities: np.ndarray
    story_labels: list[tuple[str, ...]]
    building_labels: list[str]
    features: np.ndarray
    etas: EtaSet
    pairs: ChannelPairSet
    # raw channels (n_events, n_channels, n_samples), ground first; optional
    records: np.ndarray | None = None
    dt: float | None = None
    dropped: list[tuple[int, int, str]] = field(default_factory=list)
    _intensity_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.record_ids)
        self.scale_factors = np.asarray(self.scale_factors, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        width = self.etas.k * (1 + self.pairs.count)
        self.features = np.asarray(self.features, dtype=float)
        if n == 0:
            self.features = self.features.reshape(0, width)
        elif self.features.ndim != 2 or self.features.shape[0] != n:
            self.features = self.features.reshape(n, -1)
        if not (len(self.scale_factors) == len(self.probabilities) == len(self.story_labels)
                == len(self.building_labels) == n):
            raise ValidationError("dataset columns have inconsistent lengths")
        if self.features.shape[1] != width:
            raise ValidationError(f"expected {width} feature columns, found {self.features.shape[1]}")
        if self.records is not None and self.records.shape[0] != n:
            raise ValidationError("records array does not match the number of events")

    def __len__(self) -> int:
        return len(self.record_ids)

    @property
    def n_stories(self) -> int:
        return len(self.story_labels[0]) if self.story_labels else 0

    @property
    def patterns(self) -> list[str]:
        return ["".join(s) for s in self.story_labels]

    def story_matrix(self) -> np.ndarray:
        """(n_events, n_stories) array of +1 (D) / -1 (N)."""
        return np.array([[1 if c == "D" else -1 for c in s] for s in self.story_labels], dtype=int)

    @property
    def channel_names(self) -> list[str]:
        n_ch = self.records.shape[1] if self.records is not None else self.n_stories + 1
        return ["ground"] + [f"floor_{s}" for s in range(1, n_ch)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        sub = Dataset(
            record_ids=[self.record_ids[i] for i in idx],
            scale_factors=self.scale_factors[idx],
            probabilities=self.probabilities[idx],
            story_labels=[self.story_labels[i] for i in idx],
            building_labels=[self.building_labels[i] for i in idx],
            features=self.features[idx],
            etas=self.etas,
            pairs=self.pairs,
            records=None if self.records is None else self.records[idx],
            dt=self.dt,
        )
        for eta, inten in self._intensity_cache.items():
            sub._intensity_cache[eta] = inten[idx]
        if "peaks" in self._intensity_cache:
            sub._intensity_cache["peaks"] = self._intensity_cache["peaks"][idx]
        return sub

    def features_for(self, etas: EtaSet, pairs: ChannelPairSet | None = None) -> np.ndarray:
        """Feature matrix for an arbitrary eta set, recomputed from raw records when needed."""
        pairs = pairs or self.pairs
        if etas == self.etas and pairs == self.pairs:
            return self.features
        if self.records is None:
            raise ValidationError(
                f"dataset holds features for k={self.etas.k} (eta={list(self.etas.values)}) only; "
                f"k={etas.k} (eta={list(etas.values)}) needs the raw records file"
            )
        cache = self._intensity_cache
        if "peaks" not in cache:
            cache["peaks"] = np.abs(self.records).max(axis=2)
        intensities = []
        for eta in etas.values:
            if eta not in cache:
                cache[eta] = signals.channel_intensities(self.records, self.dt, eta)
            intensities.append(cache[eta])
        index = {name: i for i, name in enumerate(self.channel_names)}
        duration = self.dt * (self.records.shape[2] - 1)
        return signals.features_from_intensities(
            intensities, cache["peaks"], duration, index, "ground", pairs, etas
        )


# ------------------------------------------------------------------ files

def _fmt(x: float) -> str:
    return repr(float(x))


def _provenance_line(meta: dict) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n"


def dataset_to_csv(ds: Dataset, provenance: dict | None = None) -> str:
    meta = dict(provenance or {})
    meta["etas"] = ";".join(_fmt(e) for e in ds.etas.values)
    meta["pairs"] = ";".join(f"{t}>{b}" for t, b in ds.pairs.pairs)
    if ds.dt is not None:
        meta["dt"] = _fmt(ds.dt)
    buf = io.StringIO()
    buf.write(_provenance_line(meta))
    w = csv.writer(buf, lineterminator="\n")
    n_feat = ds.features.shape[1] if len(ds) else ds.etas.k * (1 + ds.pairs.count)
    s = ds.n_stories or ds.pairs.count
    w.writerow([*FIXED_COLUMNS, *(f"f_{i}" for i in range(n_feat)),
                *(f"story_{i + 1}" for i in range(s)), "building_label"])
    for i in range(len(ds)):
        w.writerow([
            ds.record_ids[i], _fmt(ds.scale_factors[i]), _fmt(ds.probabilities[i]),
            *(_fmt(v) for v in ds.features[i]), *ds.story_labels[i], ds.building_labels[i],
        ])
    return buf.getvalue()


def parse_provenance(text: str) -> dict:
    meta = {}
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        for token in line[1:].split():
            if "=" in token:
                k, v = token.split("=", 1)
                meta[k] = v
    return meta


def dataset_from_csv(text: str, records: np.ndarray | None = None,
                     etas: EtaSet | None = None, pairs: ChannelPairSet | None = None) -> Dataset:
    meta = parse_provenance(text)
    if etas is None:
        if "etas" not in meta:
            raise ValidationError("dataset has no eta provenance; supply the eta set from the config")
        etas = EtaSet(tuple(float(v) for v in meta["etas"].split(";")))
    if pairs is None:
        if "pairs" not in meta:
            raise ValidationError("dataset has no channel-pair provenance")
        raw = [p for p in meta["pairs"].split(";") if p]
        pairs = ChannelPairSet(tuple(tuple(p.split(">", 1)) for p in raw))
    dt = float(meta["dt"]) if "dt" in meta else None

    rows = list(csv.reader(l for l in text.splitlines() if l and not l.startswith("#")))
    if not rows:
        raise ValidationError("dataset file is empty")
    header = rows[0]
    n_feat = etas.k * (1 + pairs.count)
    expected_feats = [f"f_{i}" for i in range(n_feat)]
    for col in (*FIXED_COLUMNS, *expected_feats, "building_label"):
        if col not in header:
            raise ValidationError(f"dataset is missing column {col!r}")
    extra_feats = [h for h in header if h.startswith("f_") and h not in expected_feats]
    if extra_feats:
        raise ValidationError(f"dataset has {n_feat + len(extra_feats)} feature columns, config implies {n_feat}")
    story_cols = [h for h in header if h.startswith("story_")]
    col = {h: i for i, h in enumerate(header)}

    ids, scales, probs, stories, buildings, feats = [], [], [], [], [], []
    for line_no, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ValidationError(f"row {line_no} has {len(r)} fields, header has {len(header)}")
        try:
            ids.append(r[col["record_id"]])
            scales.append(float(r[col["scale_factor"]]))
            probs.append(float(r[col["probability"]]))
            feats.append([float(r[col[f]]) for f in expected_feats])
        except ValueError as exc:
            raise ValidationError(f"row {line_no}: {exc}") from exc
        letters = tuple(r[col[s]] for s in story_cols)
        if any(l not in ("N", "D") for l in letters + (r[col["building_label"]],)):
            raise ValidationError(f"row {line_no}: labels must be N or D")
        stories.append(letters)
        buildings.append(r[col["building_label"]])
    if probs and abs(sum(probs) - 1.0) > 1e-9:
        raise ValidationError(f"probability column sums to {sum(probs)!r}, expected 1")
    return Dataset(ids, np.array(scales), np.array(probs), stories, buildings,
                   np.array(feats).reshape(len(ids), n_feat), etas, pairs,
                   records=records, dt=dt)


def records_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".records.npy")


def write_dataset(ds: Dataset, path: Path, provenance: dict | None = None) -> None:
    path = Path(path)
    path.write_text(dataset_to_csv(ds, provenance))
    if ds.records is not None:
        np.save(records_path(path), ds.records, allow_pickle=False)


def read_dataset(path: Path, etas: EtaSet | None = None, pairs: ChannelPairSet | None = None) -> Dataset:
    path = Path(path)
    rp = records_path(path)
    records = np.load(rp, allow_pickle=False) if rp.exists() else None
    return dataset_from_csv(path.read_text(), records, etas, pairs)
