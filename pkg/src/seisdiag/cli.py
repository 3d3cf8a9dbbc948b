"""Command-line front end.

    seisdiag simulate --config run.yaml
    seisdiag train    --config run.yaml --dataset out/dataset.csv --mode location
    seisdiag predict  --bundle out/location_bundle.json --dataset out/dataset.csv
    seisdiag evaluate --bundle out/location_bundle.json --dataset out/dataset.csv
    seisdiag report   --scores out/location_scores.csv

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import collections
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import costs, dataset as dsio, diagnose, simulator
from .errors import NumericalError, ValidationError

log = logging.getLogger("seisdiag")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
MAX_DROPPED_FRACTION = 0.10


def _provenance_text(meta: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in meta.items())


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _out_dir(args, cfg=None) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.out) if cfg is not None else Path(".")


def _load_cfg(args):
    from .config import load_config
    return load_config(args.config, seed=args.seed, out=args.out)


def _comment_provenance(text: str) -> str:
    """Provenance carried by the leading '#' comment lines of an input file."""
    parts = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        parts.append(line.lstrip("#").strip())
    return " ".join(p for p in parts if p)


def _file_hash(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


# ------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    building = cfg.building_spec()
    data = simulator.build_dataset(building, cfg.gm_spec(), cfg.hazard_scenario(), cfg.seed,
                                   cfg.eta_set(), cfg.pair_set())
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"
    dsio.write_dataset(data, path, cfg.provenance())

    total = len(data) + len(data.dropped)
    balance = collections.Counter(data.patterns)
    print(f"wrote {len(data)} events to {path} ({len(data.dropped)} dropped)")
    buildings = collections.Counter(data.building_labels)
    print("building labels: " + ", ".join(f"{k}={buildings.get(k, 0)}" for k in ("N", "D")))
    for pattern in diagnose.severity_order(building.n_stories):
        if balance.get(pattern):
            mass = data.probabilities[np.array(data.patterns) == pattern].sum()
            print(f"  {pattern}: {balance[pattern]} events, probability mass {mass:.4f}")
    if total and len(data.dropped) / total > MAX_DROPPED_FRACTION:
        print(f"error: {len(data.dropped)} of {total} simulations failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = dsio.read_dataset(Path(args.dataset), cfg.eta_set(), cfg.pair_set())
    provenance = cfg.provenance()
    train = diagnose.train_existence if args.mode == "existence" else diagnose.train_location
    outcome = train(data, cfg.cost_weights(), cfg.tuner_config(), cfg.train_settings(), provenance)

    out = _out_dir(args, cfg)
    prov = _provenance_text(provenance)
    doc = diagnose.bundle_document(outcome.model)
    _write(out / f"{args.mode}_bundle.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")
    _write(out / f"{args.mode}_history.csv", outcome.tuning.history_csv(prov))
    _write(out / f"{args.mode}_scores.csv", outcome.report.to_csv(prov))
    _write(out / f"{args.mode}_report.txt", outcome.report.to_text(prov))
    print(outcome.report.to_text(prov), end="")
    print(f"incumbent cost {outcome.tuning.best.objective:.6g} at trial {outcome.tuning.best.index}")
    return EXIT_OK


def _load_bundle(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read bundle {path}: {exc}") from exc
    return diagnose.bundle_from_document(doc)


def cmd_predict(args) -> int:
    model = _load_bundle(args.bundle)
    if args.row is not None:
        values = np.array([float(v) for v in args.row.split(",")]) if args.row.strip() else np.zeros(0)
        if values.size != model.n_features:
            raise ValidationError(f"row has {values.size} features, bundle expects {model.n_features} "
                                  f"(k={model.etas.k})")
        ids, x = ["row"], values[None, :]
    else:
        data = dsio.read_dataset(Path(args.dataset), None, None)
        ids = data.record_ids
        x = diagnose.model_features(model, data) if len(data) else np.zeros((0, model.n_features))
    if not ids:
        return EXIT_OK
    labels = model.predict_labels(x)
    buf = io.StringIO()
    buf.write(f"# bundle_hash={_file_hash(args.bundle)} {_provenance_text(model.provenance)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_id", "label"])
    w.writerows(zip(ids, labels))
    if args.out_file:
        _write(Path(args.out_file), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_bundle(args.bundle)
    data = dsio.read_dataset(Path(args.dataset), None, None)
    scores, rep = diagnose.evaluate(model, data)
    prov = " ".join(filter(None, [_provenance_text(model.provenance), f"bundle_hash={_file_hash(args.bundle)}",
                                  f"dataset_hash={_file_hash(args.dataset)}"]))
    out = _out_dir(args)
    _write(out / f"{model.mode}_eval_scores.csv", rep.to_csv(prov))
    _write(out / f"{model.mode}_eval_report.txt", rep.to_text(prov))
    print(rep.to_text(prov), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    text = Path(args.scores).read_text()
    scores = costs.matrix_from_csv(text)
    prov = " ".join(filter(None, [_comment_provenance(text), f"scores_hash={_file_hash(args.scores)}"]))
    rendered = costs.report(scores).to_text(prov)
    if args.out is not None:
        _write(Path(args.out) / "report.txt", rendered)
    sys.stdout.write(rendered)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="seisdiag", description=__doc__.split("\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="synthesize a labeled dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="tune and train a diagnosis model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("existence", "location"), required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="label events with a trained bundle")
    p.add_argument("--bundle", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset")
    src.add_argument("--row", help="comma-separated feature values for a single event")
    p.add_argument("--out-file", help="write labels here instead of standard output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score a bundle on a labeled dataset")
    p.add_argument("--bundle", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="format a score-matrix CSV")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
