"""Command-line workflow around the library.

Subcommands cover the full loop: synthesize a corpus, derive labels from the
shadow pair, train the conversion model, predict unintelligibility in either
mode, score predictions, and exchange annotation files with the browser tool.

Every invocation resolves one RunConfig from defaults, an optional YAML file,
and repeated --set overrides (flags win), prints its hash, and is fully
reproducible from that config. Exit codes: 0 success, 1 usage, 2 data or
runtime failure.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml

from . import align, dtw, fileio, metrics, synth, train as training
from .data import CorpusManifest, ManifestEntry, WordTiming
from .errors import ShadowmarkError, ValidationError
from .model import ModelConfig

ENV_OUTPUT_ROOT = "SHADOWMARK_OUTPUT_ROOT"

SPLIT_FRACTIONS = (0.8, 0.1)  # train, dev; the rest is test


@dataclass(frozen=True)
class RunConfig:
    corpus_root: str = "out/corpus"
    output_root: str = "out"
    seed: int = 1
    num_utterances: int = 64
    dtw_metric: str = "cosine_distance"
    tau: float = align.DEFAULT_TAU
    rho_word: float = dtw.DEFAULT_RHO_WORD
    workers: int = 1
    generator: synth.GeneratorConfig = field(default_factory=synth.GeneratorConfig)
    threshold: dtw.ThresholdPolicy = field(default_factory=dtw.ThresholdPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.dtw_metric not in dtw.METRICS:
            raise ValidationError(f"dtw_metric must be one of {dtw.METRICS}")
        if not (0.0 < self.rho_word <= 1.0):
            raise ValidationError("rho_word must be in (0, 1]")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.num_utterances < 0:
            raise ValidationError("num_utterances must be >= 0")
        if (self.model.d_src, self.model.d_trg) != (self.generator.d_src, self.generator.d_trg):
            raise ValidationError(
                "model dims must match generator dims: "
                f"model ({self.model.d_src}, {self.model.d_trg}) vs "
                f"generator ({self.generator.d_src}, {self.generator.d_trg})"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def _deep_merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = dict(base)
    for key, value in extra.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ValidationError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {where} must be a mapping")
            out[key] = _deep_merge(base[key], value, prefix=f"{where}.")
        else:
            out[key] = value
    return out


def _apply_override(tree: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise click.UsageError(f"--set needs KEY=VALUE, got {item!r}")
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise click.UsageError(f"unknown config key: {key}")
        node = node[part]
    if parts[-1] not in node:
        raise click.UsageError(f"unknown config key: {key}")
    node[parts[-1]] = yaml.safe_load(raw)


def load_run_config(config_path: str | None, overrides=()) -> RunConfig:
    tree = asdict(RunConfig())
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"{config_path}: config must be a mapping")
        tree = _deep_merge(tree, loaded)
    for item in overrides:
        _apply_override(tree, item)
    if os.environ.get(ENV_OUTPUT_ROOT):
        tree["output_root"] = os.environ[ENV_OUTPUT_ROOT]
    return RunConfig(
        corpus_root=tree["corpus_root"],
        output_root=tree["output_root"],
        seed=tree["seed"],
        num_utterances=tree["num_utterances"],
        dtw_metric=tree["dtw_metric"],
        tau=tree["tau"],
        rho_word=tree["rho_word"],
        workers=tree["workers"],
        generator=synth.GeneratorConfig.from_dict(tree["generator"]),
        threshold=dtw.ThresholdPolicy(**tree["threshold"]),
        model=ModelConfig.from_dict(tree["model"]),
    )


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML run configuration.")
@click.option("--set", "-s", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key (dotted paths).")
@click.pass_context
def cli(ctx, config_path, overrides):
    """Unintelligibility detection workflow."""
    cfg = load_run_config(config_path, overrides)
    click.echo(f"config {config_hash(cfg)}")
    ctx.obj = cfg


def _assign_splits(ids: list[str]) -> dict[str, str]:
    """Deterministic split: order ids by md5, slice exact 80/10/10 counts."""
    ranked = sorted(ids, key=lambda u: (hashlib.md5(u.encode("utf-8")).hexdigest(), u))
    n = len(ranked)
    n_train = int(n * SPLIT_FRACTIONS[0])
    n_dev = int(n * SPLIT_FRACTIONS[1])
    splits = {}
    for pos, utt_id in enumerate(ranked):
        if pos < n_train:
            splits[utt_id] = "train"
        elif pos < n_train + n_dev:
            splits[utt_id] = "dev"
        else:
            splits[utt_id] = "test"
    return splits


@cli.command("gen-data")
@click.pass_obj
def cmd_gen_data(cfg: RunConfig):
    """Write a seeded synthetic corpus: features, gold labels, manifest."""
    root = Path(cfg.corpus_root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "gold").mkdir(parents=True, exist_ok=True)
    ids = [f"utt-{i:04d}" for i in range(cfg.num_utterances)]
    splits = _assign_splits(ids)
    entries = []
    for i, utt_id in enumerate(ids):
        triplet = synth.generate_synthetic_triplet(cfg.seed + i, cfg.generator, utt_id=utt_id)
        paths = {
            "l2_read": f"features/{utt_id}.read.fseq",
            "l1_shadow": f"features/{utt_id}.shadow.fseq",
            "l1_script_shadow": f"features/{utt_id}.script.fseq",
        }
        fileio.write_frames(triplet.l2_read, root / paths["l2_read"])
        fileio.write_frames(triplet.l1_shadow, root / paths["l1_shadow"])
        fileio.write_frames(triplet.l1_script_shadow, root / paths["l1_script_shadow"])
        gold_path = f"gold/{utt_id}.dlabel.json"
        fileio.write_dlabel(utt_id, triplet.gold_dlabel, root / gold_path)
        gold_words = dtw.dlabel_frames_to_words(triplet.gold_dlabel, triplet.word_timings, cfg.rho_word)
        fileio.write_word_labels(utt_id, gold_words, root / f"gold/{utt_id}.words.json")
        entries.append(
            ManifestEntry(
                id=utt_id,
                l2_read=paths["l2_read"],
                l1_shadow=paths["l1_shadow"],
                l1_script_shadow=paths["l1_script_shadow"],
                transcript=list(triplet.transcript),
                word_timings=[(t.start_frame, t.end_frame) for t in triplet.word_timings],
                split=splits[utt_id],
                gold_dlabel=gold_path,
            )
        )
    fileio.write_manifest(CorpusManifest(entries), root / "manifest.jsonl")
    counts = {s: sum(1 for e in entries if e.split == s) for s in ("train", "dev", "test")}
    click.echo(f"wrote {len(entries)} utterances to {root} (splits {counts})")


def _label_one(cfg: RunConfig, root: Path, labels_dir: Path, entry: ManifestEntry) -> None:
    triplet = fileio.load_triplet(entry, root)
    labels = dtw.label_triplet_full(triplet, cfg.dtw_metric, cfg.threshold, cfg.rho_word)
    fileio.write_dlabel(entry.id, labels.read, labels_dir / f"{entry.id}.dlabel.json")
    fileio.write_dlabel(entry.id, labels.shadow, labels_dir / f"{entry.id}.shadow.dlabel.json")
    fileio.write_word_labels(entry.id, labels.words, labels_dir / f"{entry.id}.words.json")


@cli.command("label")
@click.pass_obj
def cmd_label(cfg: RunConfig):
    """Derive frame and word labels for every utterance from its shadow pair."""
    root = Path(cfg.corpus_root)
    manifest = fileio.load_manifest(root / "manifest.jsonl")
    labels_dir = Path(cfg.output_root) / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    if cfg.workers == 1:
        for entry in manifest.entries:
            try:
                _label_one(cfg, root, labels_dir, entry)
            except ShadowmarkError as exc:
                failures.append((entry.id, str(exc)))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(_label_one, cfg, root, labels_dir, e): e.id for e in manifest.entries}
            for fut, utt_id in futures.items():
                try:
                    fut.result()
                except ShadowmarkError as exc:
                    failures.append((utt_id, str(exc)))
    for utt_id, message in sorted(failures):
        click.echo(f"error: {utt_id}: {message}", err=True)
    if failures:
        raise ShadowmarkError(f"labeling failed for {len(failures)} utterance(s)")
    click.echo(f"labeled {len(manifest)} utterances into {labels_dir}")


def _load_examples(cfg: RunConfig, split: str) -> tuple[list[training.TrainExample], list[str]]:
    """Prepared examples for a split, plus ids skipped as infeasible."""
    root = Path(cfg.corpus_root)
    labels_dir = Path(cfg.output_root) / "labels"
    manifest = fileio.load_manifest(root / "manifest.jsonl").subset(split)
    examples, skipped = [], []
    for entry in manifest.entries:
        triplet = fileio.load_triplet(entry, root)
        src_id, src_label = fileio.read_dlabel(labels_dir / f"{entry.id}.dlabel.json")
        trg_id, trg_label = fileio.read_dlabel(labels_dir / f"{entry.id}.shadow.dlabel.json")
        if (src_id, trg_id) != (entry.id, entry.id):
            raise ValidationError(f"label files for {entry.id} carry mismatched ids")
        if triplet.l1_shadow.num_frames < triplet.l2_read.num_frames:
            skipped.append(entry.id)
            continue
        examples.append(training.make_example(triplet, src_label.marks, trg_label.marks))
    return examples, skipped


@cli.command("train")
@click.pass_obj
def cmd_train(cfg: RunConfig):
    """Train the conversion model on the train split's derived labels."""
    examples, skipped = _load_examples(cfg, "train")
    for utt_id in skipped:
        click.echo(f"warning: skipping {utt_id}: shadow shorter than read side", err=True)
    if not examples:
        raise ShadowmarkError("no trainable utterances in the train split")
    model_cfg = training.resolve_alpha(cfg.model, examples)
    state = training.init_state(model_cfg)
    train_dir = Path(cfg.output_root) / "train"
    train_dir.mkdir(parents=True, exist_ok=True)
    with open(train_dir / "log.jsonl", "w", encoding="utf-8") as log_file:
        history = training.train_loop(state, examples, model_cfg.max_steps, log_file)
    training.save_checkpoint(train_dir / "model.ckpt", state)
    summary = f"trained {state.step} steps on {len(examples)} utterances ({len(skipped)} skipped)"
    if history:
        summary += f", final l_all {history[-1].l_all:.4f}"
    click.echo(summary)
    click.echo(f"checkpoint {train_dir / 'model.ckpt'}")


@cli.command("predict")
@click.option("--mode", type=click.Choice(["multitask", "alignment"]), default="multitask", show_default=True)
@click.pass_obj
def cmd_predict(cfg: RunConfig, mode: str):
    """Write frame and word predictions for the test split."""
    ckpt = Path(cfg.output_root) / "train" / "model.ckpt"
    if not ckpt.exists():
        raise ShadowmarkError(f"checkpoint not found: {ckpt} (run train first)")
    state = training.load_checkpoint(ckpt)
    root = Path(cfg.corpus_root)
    manifest = fileio.load_manifest(root / "manifest.jsonl").subset("test")
    out_dir = Path(cfg.output_root) / "predictions" / mode
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        triplet = fileio.load_triplet(entry, root)
        label, words = training.predict_words(state, triplet, mode=mode, tau=cfg.tau, rho_word=cfg.rho_word)
        fileio.write_dlabel(entry.id, label, out_dir / f"{entry.id}.dlabel.json")
        fileio.write_word_labels(entry.id, words, out_dir / f"{entry.id}.words.json")
    meta = {"mode": mode, "tau": cfg.tau, "rho_word": cfg.rho_word, "config": config_hash(cfg)}
    with open(out_dir / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
        f.write("\n")
    click.echo(f"predicted {len(manifest)} utterances into {out_dir}")


def _annotation_words_by_annotator(cfg: RunConfig, manifest: CorpusManifest, paths) -> dict:
    by_annotator: dict[str, dict[str, np.ndarray]] = {}
    entries = {e.id: e for e in manifest.entries}
    for path in paths:
        for rec in metrics.load_annotation_export(path):
            entry = entries.get(rec.utterance_id)
            if entry is None:
                raise ValidationError(f"{path}: unknown utterance id {rec.utterance_id!r}")
            timings = [WordTiming(w, s, e) for w, (s, e) in zip(entry.transcript, entry.word_timings)]
            seq = fileio.read_frames(Path(cfg.corpus_root) / entry.l2_read)
            words = metrics.annotation_to_words(rec, timings, seq.hop_ms, cfg.rho_word, seq.num_frames)
            by_annotator.setdefault(rec.annotator_id, {})[rec.utterance_id] = words
    return by_annotator


@cli.command("evaluate")
@click.option("--predictions", "predictions_root", type=click.Path(file_okay=False), default=None, help="Directory of method subdirectories (default: <output_root>/predictions).")
@click.option("--annotations", "annotation_paths", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Annotation export JSON (repeatable).")
@click.pass_obj
def cmd_evaluate(cfg: RunConfig, predictions_root, annotation_paths):
    """Score every method directory against gold labels on the test split."""
    root = Path(cfg.corpus_root)
    manifest = fileio.load_manifest(root / "manifest.jsonl").subset("test")
    ids = manifest.ids()
    predictions_root = Path(predictions_root) if predictions_root else Path(cfg.output_root) / "predictions"
    report = metrics.evaluate_corpus(ids, predictions_root, root / "gold")
    if annotation_paths:
        words = _annotation_words_by_annotator(cfg, manifest, annotation_paths)
        report = metrics.add_annotation_rows(report, ids, predictions_root, words)
    reports_dir = Path(cfg.output_root) / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    with open(reports_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    text = metrics.render_report_text(report)
    (reports_dir / "report.txt").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)


@cli.command("export-annotation-tasks")
@click.pass_obj
def cmd_export_annotation_tasks(cfg: RunConfig):
    """Bundle test-split metadata for the browser annotation tool."""
    root = Path(cfg.corpus_root)
    manifest = fileio.load_manifest(root / "manifest.jsonl").subset("test")
    tasks = []
    for entry in manifest.entries:
        seq = fileio.read_frames(root / entry.l2_read)
        tasks.append(
            {
                "utterance_id": entry.id,
                "media_url": entry.l2_read,
                "duration_ms": seq.duration_ms,
                "transcript": list(entry.transcript),
            }
        )
    out_dir = Path(cfg.output_root) / "annotation"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "tasks.json", "w", encoding="utf-8") as f:
        json.dump(tasks, f, sort_keys=True, indent=2)
        f.write("\n")
    click.echo(f"wrote {len(tasks)} tasks to {out_dir / 'tasks.json'}")


@cli.command("import-annotations")
@click.argument("export_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def cmd_import_annotations(cfg: RunConfig, export_path):
    """Convert an annotation export into per-annotator word-label files."""
    root = Path(cfg.corpus_root)
    manifest = fileio.load_manifest(root / "manifest.jsonl")
    by_annotator = _annotation_words_by_annotator(cfg, manifest, [export_path])
    base = Path(cfg.output_root) / "annotations"
    total = 0
    for annotator_id, words_by_id in sorted(by_annotator.items()):
        out_dir = base / annotator_id
        out_dir.mkdir(parents=True, exist_ok=True)
        for utt_id, words in sorted(words_by_id.items()):
            fileio.write_word_labels(utt_id, words, out_dir / f"{utt_id}.words.json")
            total += 1
    click.echo(f"imported {total} annotation(s) from {len(by_annotator)} annotator(s) into {base}")


def main(argv=None) -> int:
    """Entry point with the documented exit codes."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return 0 if result is None else int(result)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ShadowmarkError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
