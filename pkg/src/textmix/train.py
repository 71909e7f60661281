"""Training loop, best-epoch selection, multi-seed experiments, curve files.

A run is fully determined by (config, seed): initialization, batch order,
dropout, the mixing draws and the data subsample all come from named
streams, so rerunning a config reproduces every emitted file byte for
byte, and runs that differ only in augmentation mode still share initial
weights and batch order at equal seed.

Metrics are reported for the epoch with the best selection metric
(accuracy or MCC) on the selection split; dev is used when the task has
one, else test. The checkpoint holds the parameters from that epoch.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .calibration import CalibrationReport, make_report, records_from_probs, save_report
from .data import Dataset, Vocab, encode_dataset, load_dataset, load_labels, longest_sequence, make_batches, subsample
from .encoder import EncoderClassifier, EncoderConfig
from .mixup import MixupConfig, mixup_step
from .optim import Adam
from .rng import RngStreams, make_stream
from .synthetic import synth_task_generate


class TrainingDiverged(RuntimeError):
    pass


EVAL_BATCH_SIZE = 64


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "content"           # content | syntax | files
    size: int = 2000                # generated corpus size (synthetic kinds)
    data_seed: int = 0              # fixed across run seeds and variants
    data_dir: Optional[str] = None  # files kind: train/dev/test.jsonl etc.


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    dropout_rate: float = 0.1
    max_seq_len: int = 64
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    mixup: MixupConfig = field(default_factory=MixupConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    train_size: object = "full"     # "full" or an int
    seed: int = 0
    selection_metric: str = "accuracy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.selection_metric not in ("accuracy", "mcc"):
            raise ValueError(f"selection_metric must be accuracy or mcc")
        if self.train_size != "full" and (not isinstance(self.train_size, int)
                                          or self.train_size < 1):
            raise ValueError(f"train_size must be 'full' or a positive int")


@dataclass
class LoadedTask:
    train: Dataset
    dev: Optional[Dataset]
    test: Dataset
    vocab: Vocab
    n_classes: int


def load_task(spec: TaskSpec, train_size) -> LoadedTask:
    if spec.kind in ("content", "syntax"):
        task = synth_task_generate(spec.kind, spec.size, seed=spec.data_seed)
        train, dev, test, vocab = task.train, task.dev, task.test, task.vocab
        n_classes = 2
    elif spec.kind == "files":
        if not spec.data_dir:
            raise ValueError("task kind 'files' needs data_dir")
        d = spec.data_dir
        labels = load_labels(os.path.join(d, "labels.json"))
        n_classes = len(labels)
        train = load_dataset(os.path.join(d, "train.jsonl"), n_classes, "train")
        test = load_dataset(os.path.join(d, "test.jsonl"), n_classes, "test")
        dev_path = os.path.join(d, "dev.jsonl")
        dev = load_dataset(dev_path, n_classes, "dev") if os.path.exists(dev_path) else None
        vocab_path = os.path.join(d, "vocab.txt")
        if os.path.exists(vocab_path):
            vocab = Vocab.load(vocab_path)
        else:
            from .data import build_vocab
            vocab = build_vocab(text for text, _ in train.examples)
    else:
        raise ValueError(f"unknown task kind {spec.kind!r}")
    if train_size != "full":
        train = subsample(train, int(train_size), seed=spec.data_seed)
    return LoadedTask(train, dev, test, vocab, n_classes)


@dataclass
class EpochMetrics:
    train_loss: float
    test_loss: float
    test_accuracy: float
    test_ece: float
    test_nll: float
    mcc: Optional[float] = None
    dev_accuracy: Optional[float] = None
    dev_mcc: Optional[float] = None


@dataclass
class RunResult:
    epochs: list                    # EpochMetrics per epoch
    best_epoch: int
    best: EpochMetrics
    seed: int
    selection_metric: str
    selection_split: str
    config: dict
    meta: dict
    best_test_report: Optional[CalibrationReport] = None
    model: Optional[EncoderClassifier] = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "selection_metric": self.selection_metric,
            "selection_split": self.selection_split,
            "best_epoch": self.best_epoch,
            "best": asdict(self.best),
            "epochs": [asdict(e) for e in self.epochs],
            "config": self.config,
            "meta": self.meta,
        }


def _eval_pass(model: EncoderClassifier, batches) -> tuple:
    """Deterministic forward over fixed batches: stacked probabilities,
    labels, and the example-weighted mean cross-entropy loss."""
    probs, labels = [], []
    loss_total, n_total = 0.0, 0
    for batch in batches:
        logits = model.forward(batch.token_ids, batch.attention_mask)
        b = batch.token_ids.shape[0]
        loss_total += T.cross_entropy_soft(logits, batch.one_hot_labels).item() * b
        n_total += b
        p = T.softmax(logits, axis=-1)
        probs.append(p.values)
        labels.append(batch.labels)
    return np.concatenate(probs), np.concatenate(labels), loss_total / n_total


def evaluate(model: EncoderClassifier, batches, n_bins: int = 15) -> CalibrationReport:
    """Single no-dropout pass over unmixed batches."""
    if not batches:
        raise ValueError("evaluate needs a nonempty batch list")
    model.eval_mode()
    probs, labels, _ = _eval_pass(model, batches)
    return make_report(records_from_probs(probs, labels), n_bins=n_bins)


def _selection_value(report: CalibrationReport, metric: str) -> float:
    if metric == "mcc":
        if report.mcc is None:
            raise ValueError("mcc selection requires a binary task")
        return report.mcc
    return report.accuracy


def train(config: TrainConfig) -> RunResult:
    """One seeded run: EP epochs, per-epoch dev/test evaluation, best-epoch
    selection; model snapshot taken at the best epoch."""
    task = load_task(config.task, config.train_size)
    vocab, n_classes = task.vocab, task.n_classes
    enc_cfg = EncoderConfig(
        n_layers=config.n_layers, d_model=config.d_model, n_heads=config.n_heads,
        d_ff=config.d_ff, max_seq_len=config.max_seq_len, vocab_size=len(vocab),
        n_classes=n_classes, dropout_rate=config.dropout_rate)
    mix = config.mixup
    if mix.mode == "manifold":
        mix.validate_layers(enc_cfg.n_layers)

    streams = RngStreams(config.seed)
    model = EncoderClassifier(enc_cfg, init_rng=streams.init)
    init_hash = model.param_hash()
    opt = Adam(model.parameters(), config.learning_rate)

    encoded_train = encode_dataset(task.train, vocab, config.max_seq_len)
    global_max = longest_sequence(encoded_train)
    # evaluation batch width is internal: per-row results are bitwise
    # independent of batch composition, and the loss is example-weighted
    test_batches = make_batches(task.test, vocab, config.max_seq_len,
                                EVAL_BATCH_SIZE, shuffle=False)
    dev_batches = (make_batches(task.dev, vocab, config.max_seq_len,
                                EVAL_BATCH_SIZE, shuffle=False)
                   if task.dev is not None else None)
    selection_split = "dev" if dev_batches is not None else "test"

    mix_start = math.ceil(mix.start_fraction * config.epochs)
    order_hasher = hashlib.sha256()
    epochs: list[EpochMetrics] = []
    best_idx, best_value = -1, -np.inf
    best_snapshot, best_report = None, None

    for epoch in range(config.epochs):
        order = make_stream(config.seed, "shuffle", epoch).permutation(len(encoded_train))
        order_hasher.update(order.astype(np.int64).tobytes())
        batches = make_batches(task.train, vocab, config.max_seq_len, config.batch_size,
                               seed=config.seed, epoch=epoch, encoded=encoded_train)
        model.train_mode(streams.dropout)
        mixing = mix.mode != "none" and epoch >= mix_start
        losses = []
        for bi, batch in enumerate(batches):
            if mixing:
                loss, mixed = mixup_step(model, batch, mix, streams, global_max)
                diag = f"lambda={mixed.lam:.6f}, layer={mixed.layer}"
            else:
                logits = model.forward(batch.token_ids, batch.attention_mask)
                loss = T.cross_entropy_soft(logits, batch.one_hot_labels)
                diag = "unmixed"
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {bi} ({diag})")
            loss.backward()
            opt.step()
            losses.append(value)
        train_loss = float(np.mean(losses))

        model.eval_mode()
        tprobs, tlabels, test_loss = _eval_pass(model, test_batches)
        test_report = make_report(records_from_probs(tprobs, tlabels))
        if dev_batches is not None:
            dprobs, dlabels, _ = _eval_pass(model, dev_batches)
            dev_report = make_report(records_from_probs(dprobs, dlabels))
        else:
            dev_report = test_report
        em = EpochMetrics(
            train_loss=train_loss,
            test_loss=test_loss,
            test_accuracy=test_report.accuracy,
            test_ece=test_report.ece,
            test_nll=test_report.nll,
            mcc=test_report.mcc,
            dev_accuracy=dev_report.accuracy,
            dev_mcc=dev_report.mcc,
        )
        epochs.append(em)
        value = _selection_value(dev_report, config.selection_metric)
        if value > best_value:
            best_idx, best_value = epoch, value
            best_snapshot = {n: p.values.copy() for n, p in model.params.items()}
            best_report = test_report

    for name, p in model.params.items():
        p.values = best_snapshot[name]
    meta = {
        "init_param_hash": init_hash,
        "best_param_hash": model.param_hash(),
        "batch_order_hash": order_hasher.hexdigest(),
        "train_label_counts": task.train.label_counts(),
        "train_size": len(task.train),
        "n_classes": n_classes,
        "vocab_size": len(vocab),
        "global_max_len": int(global_max),
        "mix_start_epoch": int(mix_start),
    }
    return RunResult(
        epochs=epochs, best_epoch=best_idx, best=epochs[best_idx],
        seed=config.seed, selection_metric=config.selection_metric,
        selection_split=selection_split, config=_config_dict(config), meta=meta,
        best_test_report=best_report, model=model)


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["mixup"]["layer_set"] = list(d["mixup"]["layer_set"])
    return d


# -- curve files ---------------------------------------------------------------

CURVE_COLUMNS = ("epoch", "train_loss", "test_loss", "test_acc", "test_ece", "test_nll")


def emit_curves(run: RunResult, path) -> None:
    """Tab-separated per-epoch metrics; floats are written with repr so the
    file round-trips to full precision."""
    with_mcc = run.epochs and run.epochs[0].mcc is not None
    cols = CURVE_COLUMNS + (("mcc",) if with_mcc else ())
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for i, e in enumerate(run.epochs):
            row = [str(i), repr(e.train_loss), repr(e.test_loss),
                   repr(e.test_accuracy), repr(e.test_ece), repr(e.test_nll)]
            if with_mcc:
                row.append(repr(e.mcc))
            f.write("\t".join(row) + "\n")


def load_curves(path) -> list:
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        rows = []
        for line in f:
            parts = line.rstrip("\n").split("\t")
            row = {}
            for name, value in zip(header, parts):
                row[name] = int(value) if name == "epoch" else float(value)
            rows.append(row)
    return rows


# -- multi-seed experiments ------------------------------------------------------

SUMMARY_METRICS = ("accuracy", "loss", "ece", "nll", "mcc")


def _best_metrics(run: RunResult) -> dict:
    b = run.best
    return {"accuracy": b.test_accuracy, "loss": b.test_loss,
            "ece": b.test_ece, "nll": b.test_nll, "mcc": b.mcc}


@dataclass
class VariantSummary:
    name: str
    seeds: list
    values: dict                    # metric -> list of per-seed values
    mean: dict                      # metric -> mean
    se: dict                        # metric -> standard error (None if <2 seeds)
    failures: dict                  # seed -> error message


@dataclass
class ExperimentSummary:
    variants: list                  # VariantSummary, in input order
    seeds: list

    def table(self, paper_units: bool = False) -> str:
        scale = {"loss": 100.0, "ece": 100.0} if paper_units else {}
        metrics = [m for m in SUMMARY_METRICS
                   if any(v.values.get(m) for v in self.variants)]
        width = max((len(v.name) for v in self.variants), default=7)
        lines = ["variant".ljust(width) + "".join(f"  {m:>16s}" for m in metrics)]
        for v in self.variants:
            cells = []
            for m in metrics:
                vals = v.values.get(m) or []
                if not vals:
                    cells.append(f"  {'-':>16s}")
                    continue
                k = scale.get(m, 1.0)
                mean = v.mean[m] * k
                se = v.se[m]
                text = f"{mean:.3f}" if se is None else f"{mean:.3f} +- {se * k:.3f}"
                cells.append(f"  {text:>16s}")
            line = v.name.ljust(width) + "".join(cells)
            if v.failures:
                line += f"   [{len(v.failures)} failed]"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "variants": [
                {"name": v.name, "seeds": v.seeds, "values": v.values,
                 "mean": v.mean, "se": v.se, "failures": v.failures}
                for v in self.variants
            ],
        }


def run_experiment(base: TrainConfig, seeds, variants, out_dir=None,
                   progress=None) -> ExperimentSummary:
    """Train each (variant, seed) pair independently and aggregate
    best-epoch metrics as mean +- standard error. Equal seeds share
    initial weights and batch order across variants, so comparisons are
    paired. A failed run marks its cell and the others continue."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_experiment needs at least one seed")
    summaries = []
    for vname, mix in variants:
        values = {m: [] for m in SUMMARY_METRICS}
        failures, done = {}, []
        for seed in seeds:
            cfg = replace(base, mixup=mix, seed=seed)
            if progress:
                progress(f"{vname} seed={seed}")
            try:
                run = train(cfg)
            except Exception as exc:              # mark the cell, keep going
                failures[seed] = f"{type(exc).__name__}: {exc}"
                continue
            done.append(seed)
            best = _best_metrics(run)
            for m in SUMMARY_METRICS:
                if best[m] is not None:
                    values[m].append(float(best[m]))
            if out_dir:
                rd = os.path.join(out_dir, vname, f"seed{seed}")
                os.makedirs(rd, exist_ok=True)
                emit_curves(run, os.path.join(rd, "curves.tsv"))
                save_report(run.best_test_report, os.path.join(rd, "reliability.json"))
                run.model.save(os.path.join(rd, "model.ckpt"))
                with open(os.path.join(rd, "run.json"), "w") as f:
                    json.dump(run.to_dict(), f, indent=1, sort_keys=True)
                    f.write("\n")
        mean = {m: (float(np.mean(v)) if v else None) for m, v in values.items()}
        se = {m: (float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) >= 2 else None)
              for m, v in values.items()}
        summaries.append(VariantSummary(vname, done, values, mean, se, failures))
    summary = ExperimentSummary(summaries, seeds)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")
        with open(os.path.join(out_dir, "summary.txt"), "w") as f:
            f.write(summary.table() + "\n")
    return summary
