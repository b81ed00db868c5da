"""Training loop and evaluation for the multi-task model: shuffled
mini-batches with mixup, label-smoothed word loss plus weighted viseme BCE,
adaptive-moment updates under a cosine-annealed learning rate, per-epoch
evaluation on both test splits, and lossless JSON checkpoints.

Sequential mode is bit-deterministic: the same corpus, config, and seed
produce identical reports and checkpoints.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import SampleRecord
from .errors import CheckpointError, ConfigError, RuntimeFailure
from .model import (
    ModelConfig,
    ModelState,
    model_backward_batch,
    model_forward_batch,
    viseme_loss_batch,
    word_loss_batch,
)
from .numeric import NUM_VISEME_LABELS, AdamState, CosineSchedule, Parameter, adam_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 3e-4
    min_learning_rate: float = 0.0
    seed: int = 1
    train_splits: tuple[str, ...] = ("clean_train", "diverse_train")

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.min_learning_rate <= self.learning_rate:
            raise ConfigError("need 0 <= min_learning_rate <= learning_rate")
        if not self.train_splits:
            raise ConfigError("train_splits must name at least one split")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "min_learning_rate": self.min_learning_rate,
            "seed": self.seed,
            "train_splits": list(self.train_splits),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "train_splits" in data:
            data["train_splits"] = tuple(data["train_splits"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from None


@dataclass
class Batch:
    """One padded mini-batch; targets become soft after mixup."""

    features: np.ndarray       # (B, T, D_in), zero at padding
    lengths: np.ndarray        # (B,)
    word_targets: np.ndarray   # (B, C_w) rows summing to 1
    viseme_targets: np.ndarray  # (B, 18) in [0, 1]


def pack_records(records: list[SampleRecord], num_classes: int, padded_length: int | None = None) -> Batch:
    """Zero-pad a record list into dense batch arrays with one-hot targets."""
    if not records:
        raise ConfigError("cannot pack an empty record list")
    lengths = np.array([record.num_frames for record in records], dtype=np.int64)
    width = int(lengths.max()) if padded_length is None else padded_length
    if width < lengths.max():
        raise ConfigError("padded_length is shorter than the longest sequence")
    feature_dim = records[0].features.shape[1]
    features = np.zeros((len(records), width, feature_dim))
    word = np.zeros((len(records), num_classes))
    viseme = np.zeros((len(records), NUM_VISEME_LABELS))
    for row, record in enumerate(records):
        features[row, : record.num_frames] = record.features
        word[row, record.word_class] = 1.0
        viseme[row] = record.viseme_multihot
    return Batch(features, lengths, word, viseme)


def mixup_batch(batch: Batch, alpha: float, rng: np.random.Generator) -> Batch:
    """Convex pairwise combinations of samples and their targets.

    Each sample is blended with a random partner using its own
    Beta(alpha, alpha) draw; ``alpha = 0`` disables mixup and returns the
    batch unchanged.
    """
    if alpha < 0:
        raise ConfigError(f"mixup concentration must be >= 0, got {alpha}")
    if alpha == 0:
        return batch
    if batch.features.shape[0] < 2:
        raise ConfigError("mixup needs a batch of at least 2 samples")
    B = batch.features.shape[0]
    kappa = rng.beta(alpha, alpha, size=B)
    partner = rng.permutation(B)
    k3 = kappa[:, None, None]
    k2 = kappa[:, None]
    return Batch(
        features=k3 * batch.features + (1.0 - k3) * batch.features[partner],
        lengths=np.maximum(batch.lengths, batch.lengths[partner]),
        word_targets=k2 * batch.word_targets + (1.0 - k2) * batch.word_targets[partner],
        viseme_targets=k2 * batch.viseme_targets + (1.0 - k2) * batch.viseme_targets[partner],
    )


@dataclass
class EvalResult:
    word_accuracy: float
    viseme_macro_f1: float
    confusion: np.ndarray   # (C_w, C_w) counts, rows = true class


def evaluate(
    state: ModelState,
    config: ModelConfig,
    records: list[SampleRecord],
    chunk_size: int = 256,
) -> EvalResult:
    """Top-1 word accuracy, 18-label macro-F1 at threshold 0.5, and the
    word confusion counts.  Sample order cannot affect the result: padding
    is fixed at the split level and every sample is scored independently."""
    if not records:
        raise ConfigError("cannot evaluate an empty split")
    packed = pack_records(records, config.word_classes)
    true_words = np.array([record.word_class for record in records], dtype=np.int64)
    true_visemes = packed.viseme_targets

    predictions = np.empty(len(records), dtype=np.int64)
    viseme_hits = np.empty((len(records), NUM_VISEME_LABELS), dtype=bool)
    for start in range(0, len(records), chunk_size):
        stop = min(start + chunk_size, len(records))
        cache = model_forward_batch(
            state, config, packed.features[start:stop], packed.lengths[start:stop]
        )
        predictions[start:stop] = np.argmax(cache.word_logits, axis=1)
        viseme_hits[start:stop] = cache.tafm.logits > 0.0   # sigmoid > 0.5

    confusion = np.zeros((config.word_classes, config.word_classes), dtype=np.int64)
    np.add.at(confusion, (true_words, predictions), 1)
    accuracy = float(np.mean(predictions == true_words))

    positives = true_visemes > 0.5
    f1_scores = np.zeros(NUM_VISEME_LABELS)
    for label in range(NUM_VISEME_LABELS):
        tp = int(np.sum(viseme_hits[:, label] & positives[:, label]))
        fp = int(np.sum(viseme_hits[:, label] & ~positives[:, label]))
        fn = int(np.sum(~viseme_hits[:, label] & positives[:, label]))
        denom = 2 * tp + fp + fn
        f1_scores[label] = (2.0 * tp / denom) if denom else 0.0
    return EvalResult(accuracy, float(np.mean(f1_scores)), confusion)


@dataclass
class EpochStats:
    epoch: int
    total_loss: float
    word_loss: float
    viseme_loss: float
    learning_rate: float
    clean_accuracy: float | None = None
    perturbed_accuracy: float | None = None
    clean_viseme_f1: float | None = None
    perturbed_viseme_f1: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    REPORT_FIELDS = (
        "epoch", "total_loss", "word_loss", "viseme_loss", "learning_rate",
        "clean_accuracy", "perturbed_accuracy", "clean_viseme_f1", "perturbed_viseme_f1",
    )

    def to_csv_text(self, metadata: str | None = None) -> str:
        # Wall-clock time is deliberately not serialized: report files must
        # be byte-identical across reruns of the same config and seed.
        lines = [f"# {metadata}"] if metadata else []
        lines.append(",".join(self.REPORT_FIELDS))
        for stats in self.epochs:
            cells = []
            for name in self.REPORT_FIELDS:
                value = getattr(stats, name)
                cells.append("" if value is None else repr(value) if isinstance(value, float) else str(value))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_json_dict(self, config_hash: str, seed: int) -> dict:
        return {
            "version": __version__,
            "config_hash": config_hash,
            "seed": seed,
            "epochs": [
                {name: getattr(stats, name) for name in self.REPORT_FIELDS}
                for stats in self.epochs
            ],
        }


def train(
    state: ModelState,
    splits: dict[str, list[SampleRecord]],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelState, TrainReport]:
    """Run the full schedule and return the mutated state plus the report.

    Aborts with :class:`RuntimeFailure` if any batch produces a non-finite
    loss, identifying the offending epoch and batch.
    """
    started = time.perf_counter()
    report = TrainReport()
    if train_config.epochs == 0:
        return state, report

    missing = [name for name in train_config.train_splits if not splits.get(name)]
    if missing:
        raise ConfigError(f"missing or empty training splits: {missing}")
    records = [record for name in train_config.train_splits for record in splits[name]]
    data = pack_records(records, model_config.word_classes)

    n_samples = data.features.shape[0]
    batches_per_epoch = (n_samples + train_config.batch_size - 1) // train_config.batch_size
    total_steps = train_config.epochs * batches_per_epoch
    schedule = CosineSchedule(
        total_steps=max(total_steps - 1, 1),
        initial_rate=train_config.learning_rate,
        minimum_rate=train_config.min_learning_rate,
    )
    optimizer = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=train_config.seed, spawn_key=(1,)))
    parameters = state.ordered()

    step = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(n_samples)
        epoch_total = epoch_word = epoch_viseme = 0.0
        learning_rate = train_config.learning_rate
        for batch_index in range(batches_per_epoch):
            rows = order[batch_index * train_config.batch_size:(batch_index + 1) * train_config.batch_size]
            batch = Batch(
                features=data.features[rows],
                lengths=data.lengths[rows],
                word_targets=data.word_targets[rows],
                viseme_targets=data.viseme_targets[rows],
            )
            if model_config.mixup_alpha > 0 and rows.size >= 2:
                batch = mixup_batch(batch, model_config.mixup_alpha, rng)

            cache = model_forward_batch(state, model_config, batch.features, batch.lengths)
            word_loss, dword = word_loss_batch(
                cache.word_logits, batch.word_targets, model_config.label_smoothing
            )
            viseme_loss, dviseme = viseme_loss_batch(cache.tafm.logits, batch.viseme_targets)
            batch_loss = word_loss + model_config.beta * viseme_loss
            if not np.isfinite(batch_loss):
                raise RuntimeFailure(
                    f"non-finite loss at epoch {epoch}, batch {batch_index} "
                    f"(word {word_loss!r}, viseme {viseme_loss!r})"
                )

            state.reset_grads()
            model_backward_batch(state, model_config, cache, dword, model_config.beta * dviseme)
            learning_rate = schedule.rate(min(step, schedule.total_steps))
            adam_step(optimizer, parameters, learning_rate)
            step += 1

            epoch_total += batch_loss * rows.size
            epoch_word += word_loss * rows.size
            epoch_viseme += viseme_loss * rows.size

        stats = EpochStats(
            epoch=epoch,
            total_loss=epoch_total / n_samples,
            word_loss=epoch_word / n_samples,
            viseme_loss=epoch_viseme / n_samples,
            learning_rate=learning_rate,
        )
        if splits.get("clean_test"):
            result = evaluate(state, model_config, splits["clean_test"])
            stats.clean_accuracy = result.word_accuracy
            stats.clean_viseme_f1 = result.viseme_macro_f1
        if splits.get("perturbed_test"):
            result = evaluate(state, model_config, splits["perturbed_test"])
            stats.perturbed_accuracy = result.word_accuracy
            stats.perturbed_viseme_f1 = result.viseme_macro_f1
        report.epochs.append(stats)

    report.wall_clock_seconds = time.perf_counter() - started
    return state, report


# ---------------------------------------------------------------------------
# Checkpoints: canonical JSON, written atomically, lossless round trip.

CHECKPOINT_VERSION = 1


def save_checkpoint(state: ModelState, config: ModelConfig, path: str | Path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": config.to_dict(),
        "parameters": {
            name: {
                "shape": list(param.value.shape),
                "data": [float(x) for x in param.value.reshape(-1)],
            }
            for name, param in state.parameters.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + ".tmp")
    temporary.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    os.replace(temporary, path)


def load_checkpoint(path: str | Path) -> tuple[ModelState, ModelConfig]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format_version {payload.get('format_version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    try:
        config = ModelConfig.from_dict(payload["model_config"])
        parameters = {}
        for name, item in payload["parameters"].items():
            value = np.asarray(item["data"], dtype=np.float64).reshape(item["shape"])
            parameters[name] = Parameter(name, value)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    return ModelState(parameters), config
