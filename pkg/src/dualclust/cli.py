"""Command-line experiment runner.

Subcommands: ``run`` (train + artifacts), ``eval`` (checkpoint ->
metrics), ``metrics`` (two label CSVs -> metric JSON), ``generate``
(synthesize a dataset to files). Artifacts are written atomically
(temp file + rename) so an interrupted run never leaves a
plausible-looking partial file, and an output directory is locked
against concurrent runs for its duration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_dataset, load_config
from .data import (
    Dataset,
    ImageGeometry,
    read_label_csv,
    save_csv,
    save_idx,
    write_label_csv,
)
from .errors import ConfigError, ContractError, DualclustError
from .metrics import ari, clustering_accuracy, nmi
from .model import load_checkpoint, predict_assignments, save_checkpoint
from .trainer import evaluate, instance_space_assignments, train

LOCK_NAME = ".lock"


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_file(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` then rename the result into place."""
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


class _OutputLock:
    """Exclusive marker file guarding an output directory.

    Creation is O_EXCL so two concurrent runs cannot both hold it; a
    crash leaves the file behind, reported with removal instructions.
    """

    def __init__(self, out_dir: Path):
        self.path = out_dir / LOCK_NAME
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ContractError(
                f"output directory {self.path.parent} is locked by another run "
                f"(delete {self.path} if that run is dead)"
            ) from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc_info):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "out", None) is not None:
        config = replace(config, out_dir=args.out)
    return config


def _final_assignments(config: ExperimentConfig, params, dataset: Dataset):
    """Assignments for the artifacts: the cluster head's argmax, except
    in instance-only ablation where that head was never trained and the
    seeded k-means pathway over instance features applies."""
    if config.ablation == "ich_only":
        return instance_space_assignments(
            params, dataset.samples, config.model.cluster_count, seed=config.seed
        )
    return predict_assignments(params, dataset.samples)


def _metric_bundle(dataset: Dataset, assignments) -> dict:
    if dataset.labels is None:
        return {"nmi": None, "acc": None, "ari": None}
    return {
        "nmi": float(nmi(dataset.labels, assignments)),
        "acc": float(clustering_accuracy(dataset.labels, assignments)),
        "ari": float(ari(dataset.labels, assignments)),
    }


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if config.out_dir is None:
        raise ConfigError("config: out_dir is required (set it or pass --out)")
    dataset = build_dataset(config.dataset)
    config = config.resolve(dataset)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _OutputLock(out):
        _atomic_write_text(out / "config.resolved.json", _json_text(config.to_dict()))
        params, report = train(config, dataset)
        assignments = _final_assignments(config, params, dataset)
        _atomic_write_text(out / "report.csv", report.csv_text())
        _atomic_file(out / "assignments.csv", lambda p: write_label_csv(p, assignments))
        _atomic_file(out / "checkpoint.bin", lambda p: save_checkpoint(p, params))
        # Metrics last: an aborted run leaves no metrics file at all.
        _atomic_write_text(
            out / "metrics.json", _json_text(_metric_bundle(dataset, assignments))
        )
    print(f"run complete: artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    dataset = build_dataset(config.dataset)
    config = config.resolve(dataset)
    params = load_checkpoint(args.checkpoint)
    if config.ablation == "ich_only":
        assignments = _final_assignments(config, params, dataset)
        bundle = _metric_bundle(dataset, assignments)
    else:
        bundle = evaluate(params, dataset)
    print(_json_text(bundle), end="")
    return 0


def cmd_metrics(args) -> int:
    predicted = read_label_csv(args.predicted)
    truth = read_label_csv(args.truth)
    if len(predicted) != len(truth):
        raise ContractError(
            f"metrics: label files disagree on length, {len(predicted)} vs {len(truth)}"
        )
    bundle = {
        "nmi": float(nmi(truth, predicted)),
        "acc": float(clustering_accuracy(truth, predicted)),
        "ari": float(ari(truth, predicted)),
    }
    print(_json_text(bundle), end="")
    return 0


def cmd_generate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    if config.out_dir is None:
        raise ConfigError("config: out_dir is required (set it or pass --out)")
    dataset = build_dataset(config.dataset)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(dataset.geometry, ImageGeometry):
        images = out / "images.idx"
        labels = out / "labels.idx" if dataset.labels is not None else None
        tmp_images = images.with_name(images.name + ".tmp")
        tmp_labels = labels.with_name(labels.name + ".tmp") if labels else None
        save_idx(tmp_images, dataset, labels_path=tmp_labels)
        os.replace(tmp_images, images)
        if labels:
            os.replace(tmp_labels, labels)
        print(f"generated {dataset.n} images in {out}")
    else:
        matrix = dataset.samples
        if dataset.labels is not None:
            matrix = np.column_stack([dataset.samples, dataset.labels.astype(np.float64)])
        _atomic_file(out / "data.csv", lambda p: save_csv(p, matrix))
        print(f"generated {dataset.n} samples in {out / 'data.csv'}")
        if dataset.labels is not None:
            print(f"labels are column {dataset.dim} (last)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualclust",
        description="Contrastive clustering experiments: train, evaluate, score.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a model and write artifacts")
    run.add_argument("--config", required=True, help="path to a JSON config")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="override the config output directory")
    run.set_defaults(handler=cmd_run)

    ev = sub.add_parser("eval", help="score a checkpoint against a labeled dataset")
    ev.add_argument("--config", required=True, help="config supplying the dataset")
    ev.add_argument("--checkpoint", required=True, help="checkpoint file to load")
    ev.add_argument("--seed", type=int, help="override the config seed")
    ev.set_defaults(handler=cmd_eval)

    met = sub.add_parser("metrics", help="score two (sample_id, cluster) CSVs")
    met.add_argument("predicted", help="predicted labels CSV")
    met.add_argument("truth", help="ground-truth labels CSV")
    met.set_defaults(handler=cmd_metrics)

    gen = sub.add_parser("generate", help="synthesize a dataset to files")
    gen.add_argument("--config", required=True, help="config supplying the dataset")
    gen.add_argument("--out", help="override the config output directory")
    gen.set_defaults(handler=cmd_generate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except DualclustError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [OSError]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
