"""Synthetic desk-scale corpus: labeled feature sequences with viseme-run
structure, speaker offsets, noise, and pose-like perturbations.

Every record derives its own seed from (master seed, split, class, sample
index), so regeneration is byte-identical and rendering order is free.
Splits follow a fixed speaker partition: test speakers never appear in
either training split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .lexicon import NUM_VISEMES, PronouncingLexicon, VisemeTable, word_to_multihot

SPLIT_KINDS = ("clean_train", "diverse_train", "clean_test", "perturbed_test")
_SPLIT_IDS = {name: index for index, name in enumerate(SPLIT_KINDS)}
_STREAM_PROTOTYPES = 101
_STREAM_SPEAKERS = 102
_STREAM_VOCAB = 103

MAX_ROTATION_ANGLE = np.pi / 3   # full-strength pose analog
JITTER_FRACTION = 0.2            # duplicated/deleted frames at full strength
CLEAN_TEST_RETENTION = 0.2       # share of perturbed_test kept unperturbed

# Vowel groups of the shipped 18-group table (indices 12..17).  When a
# separate vowel duration range is configured, these get it; consonant
# gestures are brief on real lips while vowels are held.
VOWEL_VISEMES = frozenset(range(12, NUM_VISEMES))


@dataclass(frozen=True)
class CorpusConfig:
    num_classes: int = 50
    feature_dim: int = 16
    frames_per_viseme: tuple[int, int] = (4, 6)
    vowel_frames: tuple[int, int] | None = None   # separate range for vowel groups
    coarticulation_frames: int = 0
    noise_sigma: float = 0.15
    num_speakers: int = 20
    num_test_speakers: int = 5
    num_clean_train_speakers: int = 3
    speaker_sigma: float = 0.15
    perturbation_strength: float = 0.5
    test_perturbation_strength: float = 0.8
    train_samples_per_class: int = 100
    test_samples_per_class: int = 20
    master_seed: int = 7

    def __post_init__(self):
        low, high = self.frames_per_viseme
        checks = [
            (self.num_classes >= 1, "num_classes must be >= 1"),
            (self.feature_dim >= 1, "feature_dim must be >= 1"),
            (1 <= low <= high, "frames_per_viseme must satisfy 1 <= low <= high"),
            (self.coarticulation_frames >= 0, "coarticulation_frames must be >= 0"),
            (self.noise_sigma >= 0, "noise_sigma must be >= 0"),
            (self.speaker_sigma >= 0, "speaker_sigma must be >= 0"),
            (0 <= self.perturbation_strength <= 1, "perturbation_strength must be in [0, 1]"),
            (0 <= self.test_perturbation_strength <= 1, "test_perturbation_strength must be in [0, 1]"),
            (self.train_samples_per_class >= 1, "train_samples_per_class must be >= 1"),
            (self.test_samples_per_class >= 1, "test_samples_per_class must be >= 1"),
            (self.num_speakers >= 1, "num_speakers must be >= 1"),
            (self.num_test_speakers >= 1, "num_test_speakers must be >= 1"),
            (self.num_clean_train_speakers >= 1, "num_clean_train_speakers must be >= 1"),
        ]
        if self.vowel_frames is not None:
            vlow, vhigh = self.vowel_frames
            checks.append((1 <= vlow <= vhigh, "vowel_frames must satisfy 1 <= low <= high"))
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.num_test_speakers >= self.num_speakers:
            raise ConfigError(
                f"num_test_speakers ({self.num_test_speakers}) must leave at least one "
                f"training speaker out of {self.num_speakers}"
            )
        if self.num_clean_train_speakers > self.num_speakers - self.num_test_speakers:
            raise ConfigError("num_clean_train_speakers exceeds the training speaker pool")

    def train_speakers(self) -> range:
        return range(self.num_speakers - self.num_test_speakers)

    def clean_train_speakers(self) -> range:
        return range(self.num_clean_train_speakers)

    def test_speakers(self) -> range:
        return range(self.num_speakers - self.num_test_speakers, self.num_speakers)


@dataclass(frozen=True)
class VocabEntry:
    class_index: int
    name: str
    viseme_sequence: tuple[int, ...]
    multi_hot: tuple[int, ...]


@dataclass(frozen=True)
class ToyVocabulary:
    entries: tuple[VocabEntry, ...]
    source: str                               # "words" or "synthetic"
    ambiguities: tuple[tuple[str, str], ...] = ()   # homophene pairs kept as-is

    def __post_init__(self):
        for expected, entry in enumerate(self.entries):
            if entry.class_index != expected:
                raise ConfigError("vocabulary class indices must be 0..C-1 in order")
            if not entry.viseme_sequence:
                raise ConfigError(f"class {entry.name!r} has an empty viseme sequence")
            if any(not 0 <= v < NUM_VISEMES for v in entry.viseme_sequence):
                raise ConfigError(f"class {entry.name!r} has an out-of-range viseme id")


@dataclass
class SampleRecord:
    features: np.ndarray            # (T, feature_dim) float64
    word_class: int
    viseme_multihot: np.ndarray     # (18,) 0/1 (int)
    speaker_id: int
    perturbed: bool = False

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def _stream(config: CorpusConfig, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=config.master_seed, spawn_key=tuple(key))
    return np.random.default_rng(seq)


def viseme_prototypes(config: CorpusConfig) -> np.ndarray:
    """The 18 fixed unit-norm viseme feature vectors for this corpus.

    Drawn from the master seed and intentionally not orthogonal, so lip
    shapes remain partially confusable.
    """
    rng = _stream(config, _STREAM_PROTOTYPES)
    vectors = rng.normal(size=(NUM_VISEMES, config.feature_dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def speaker_offset(config: CorpusConfig, speaker_id: int) -> np.ndarray:
    """Per-speaker additive offset, drawn once and held fixed."""
    if not 0 <= speaker_id < config.num_speakers:
        raise ConfigError(f"speaker_id {speaker_id} outside [0, {config.num_speakers})")
    rng = _stream(config, _STREAM_SPEAKERS, speaker_id)
    return config.speaker_sigma * rng.normal(size=config.feature_dim)


def build_toy_vocabulary(
    config: CorpusConfig,
    lexicon: PronouncingLexicon | None = None,
    table: VisemeTable | None = None,
    words: list[str] | None = None,
) -> ToyVocabulary:
    """Class inventory: real words labeled through the lexicon, or random
    viseme strings.

    Real-word homophene collisions are kept (they exist in the wild) and
    reported through ``ambiguities``; synthetic collisions are resampled
    away so every synthetic class is distinguishable.
    """
    if words is not None:
        if lexicon is None or table is None:
            raise ConfigError("word-based vocabulary needs both a lexicon and a viseme table")
        if len(words) != config.num_classes:
            raise ConfigError(f"need exactly {config.num_classes} words, got {len(words)}")
        entries = []
        seen: dict[tuple[int, ...], str] = {}
        ambiguities = []
        for class_index, word in enumerate(words):
            label = word_to_multihot(table, lexicon, word)
            sequence = tuple(v.index for v in label.viseme_sequence)
            if sequence in seen:
                ambiguities.append((seen[sequence], label.word))
            else:
                seen[sequence] = label.word
            entries.append(VocabEntry(class_index, label.word, sequence, label.multi_hot))
        return ToyVocabulary(tuple(entries), "words", tuple(ambiguities))

    rng = _stream(config, _STREAM_VOCAB)
    entries = []
    seen_sequences: set[tuple[int, ...]] = set()
    for class_index in range(config.num_classes):
        while True:
            length = int(rng.integers(2, 7))
            sequence = tuple(int(v) for v in rng.integers(0, NUM_VISEMES, size=length))
            if sequence not in seen_sequences:
                break
        seen_sequences.add(sequence)
        hot = [0] * NUM_VISEMES
        for viseme in sequence:
            hot[viseme] = 1
        entries.append(VocabEntry(class_index, f"synthetic-{class_index:03d}", sequence, tuple(hot)))
    return ToyVocabulary(tuple(entries), "synthetic")


def render_sample(
    vocab: ToyVocabulary,
    config: CorpusConfig,
    class_index: int,
    speaker_id: int,
    rng: np.random.Generator,
) -> SampleRecord:
    """Render one clean sequence: a run of frames per viseme in the class's
    sequence, each frame = viseme prototype + speaker offset + noise.

    With ``coarticulation_frames > 0``, that many blended frames are
    inserted between consecutive runs (linear cross-fade of the two
    prototypes), mimicking the transitional lip shapes between speech
    units; the word's viseme labels are unaffected.
    """
    entry = vocab.entries[class_index]
    prototypes = viseme_prototypes(config)
    offset = speaker_offset(config, speaker_id)
    blend_count = config.coarticulation_frames
    pieces = []
    sequence = entry.viseme_sequence
    for position, viseme in enumerate(sequence):
        if config.vowel_frames is not None and viseme in VOWEL_VISEMES:
            low, high = config.vowel_frames
        else:
            low, high = config.frames_per_viseme
        length = int(rng.integers(low, high + 1))
        base = prototypes[viseme] + offset
        noise = config.noise_sigma * rng.normal(size=(length, config.feature_dim))
        pieces.append(base[None, :] + noise)
        if blend_count and position + 1 < len(sequence):
            weights = (np.arange(1, blend_count + 1) / (blend_count + 1))[:, None]
            blend = (1.0 - weights) * prototypes[viseme] + weights * prototypes[sequence[position + 1]]
            noise = config.noise_sigma * rng.normal(size=(blend_count, config.feature_dim))
            pieces.append(blend + offset + noise)
    return SampleRecord(
        features=np.concatenate(pieces, axis=0),
        word_class=class_index,
        viseme_multihot=np.array(entry.multi_hot, dtype=np.int64),
        speaker_id=speaker_id,
    )


def rotation_matrix(dim: int, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal rotation by ``strength * MAX_ROTATION_ANGLE`` in a random
    2-plane of feature space (identity outside the plane)."""
    if dim < 2:
        return np.eye(dim)
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    v = rng.normal(size=dim)
    v -= u * (u @ v)
    v /= np.linalg.norm(v)
    angle = strength * MAX_ROTATION_ANGLE
    outer_uu = np.outer(u, u)
    outer_vv = np.outer(v, v)
    outer_uv = np.outer(u, v)
    return (
        np.eye(dim)
        + (np.cos(angle) - 1.0) * (outer_uu + outer_vv)
        + np.sin(angle) * (outer_uv - outer_uv.T)
    )


def perturb_sample(
    record: SampleRecord,
    strength: float,
    rng: np.random.Generator,
    min_frames: int = 1,
) -> SampleRecord:
    """Pose/pace analog: rotate features in a random 2-plane and jitter the
    timeline by duplicating or deleting frames.  Labels never change."""
    if not 0.0 <= strength <= 1.0:
        raise ConfigError(f"perturbation strength must be in [0, 1], got {strength}")
    if strength == 0.0:
        return replace(record, features=record.features.copy(), perturbed=True)

    frames = record.features
    jitter_ops = int(round(JITTER_FRACTION * strength * frames.shape[0]))
    kept = list(range(frames.shape[0]))
    for _ in range(jitter_ops):
        if rng.random() < 0.5 and len(kept) > max(min_frames, 1):
            del kept[int(rng.integers(len(kept)))]
        else:
            position = int(rng.integers(len(kept)))
            kept.insert(position, kept[position])
    jittered = frames[kept]

    rotation = rotation_matrix(frames.shape[1], strength, rng)
    return replace(record, features=jittered @ rotation.T, perturbed=True)


def generate_split(vocab: ToyVocabulary, config: CorpusConfig, split_kind: str) -> list[SampleRecord]:
    """Render one deterministic split.

    clean_train: few speakers, unperturbed.  diverse_train: the whole
    training speaker pool, perturbed at the configured strength.
    clean_test: held-out speakers, unperturbed.  perturbed_test: held-out
    speakers with 80% of samples perturbed and 20% retained clean.
    """
    if split_kind not in _SPLIT_IDS:
        raise ConfigError(f"unknown split kind {split_kind!r}; expected one of {SPLIT_KINDS}")
    if len(vocab.entries) != config.num_classes:
        raise ConfigError("vocabulary size does not match num_classes")

    split_id = _SPLIT_IDS[split_kind]
    if split_kind == "clean_train":
        pool, per_class = list(config.clean_train_speakers()), config.train_samples_per_class
    elif split_kind == "diverse_train":
        pool, per_class = list(config.train_speakers()), config.train_samples_per_class
    else:
        pool, per_class = list(config.test_speakers()), config.test_samples_per_class

    clean_tail = int(np.floor(CLEAN_TEST_RETENTION * per_class))
    records = []
    for class_index in range(config.num_classes):
        for sample_index in range(per_class):
            rng = _stream(config, split_id, class_index, sample_index)
            speaker = pool[int(rng.integers(len(pool)))]
            record = render_sample(vocab, config, class_index, speaker, rng)
            min_frames = len(vocab.entries[class_index].viseme_sequence)
            if split_kind == "diverse_train" and config.perturbation_strength > 0:
                record = perturb_sample(record, config.perturbation_strength, rng, min_frames)
            elif split_kind == "perturbed_test" and sample_index < per_class - clean_tail:
                record = perturb_sample(record, config.test_perturbation_strength, rng, min_frames)
            records.append(record)
    return records


def generate_corpus(vocab: ToyVocabulary, config: CorpusConfig) -> dict[str, list[SampleRecord]]:
    return {kind: generate_split(vocab, config, kind) for kind in SPLIT_KINDS}


# ---------------------------------------------------------------------------
# On-disk form: one JSON-lines file per split plus a manifest.


def config_to_dict(config: CorpusConfig) -> dict:
    return {
        "num_classes": config.num_classes,
        "feature_dim": config.feature_dim,
        "frames_per_viseme": list(config.frames_per_viseme),
        "vowel_frames": list(config.vowel_frames) if config.vowel_frames else None,
        "coarticulation_frames": config.coarticulation_frames,
        "noise_sigma": config.noise_sigma,
        "num_speakers": config.num_speakers,
        "num_test_speakers": config.num_test_speakers,
        "num_clean_train_speakers": config.num_clean_train_speakers,
        "speaker_sigma": config.speaker_sigma,
        "perturbation_strength": config.perturbation_strength,
        "test_perturbation_strength": config.test_perturbation_strength,
        "train_samples_per_class": config.train_samples_per_class,
        "test_samples_per_class": config.test_samples_per_class,
        "master_seed": config.master_seed,
    }


def config_from_dict(data: dict) -> CorpusConfig:
    data = dict(data)
    if "frames_per_viseme" in data:
        data["frames_per_viseme"] = tuple(data["frames_per_viseme"])
    if data.get("vowel_frames") is not None:
        data["vowel_frames"] = tuple(data["vowel_frames"])
    try:
        return CorpusConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad corpus config: {exc}") from None


def vocab_to_dict(vocab: ToyVocabulary) -> dict:
    return {
        "source": vocab.source,
        "ambiguities": [list(pair) for pair in vocab.ambiguities],
        "entries": [
            {
                "class_index": entry.class_index,
                "name": entry.name,
                "viseme_sequence": list(entry.viseme_sequence),
                "multi_hot": list(entry.multi_hot),
            }
            for entry in vocab.entries
        ],
    }


def vocab_from_dict(data: dict) -> ToyVocabulary:
    entries = tuple(
        VocabEntry(
            class_index=item["class_index"],
            name=item["name"],
            viseme_sequence=tuple(item["viseme_sequence"]),
            multi_hot=tuple(item["multi_hot"]),
        )
        for item in data["entries"]
    )
    ambiguities = tuple(tuple(pair) for pair in data.get("ambiguities", []))
    return ToyVocabulary(entries, data["source"], ambiguities)


def record_to_json(record: SampleRecord) -> str:
    return json.dumps(
        {
            "word_class": record.word_class,
            "speaker_id": record.speaker_id,
            "perturbed": record.perturbed,
            "viseme_multihot": [int(v) for v in record.viseme_multihot],
            "features": [[float(x) for x in row] for row in record.features],
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def record_from_json(line: str) -> SampleRecord:
    data = json.loads(line)
    return SampleRecord(
        features=np.asarray(data["features"], dtype=np.float64),
        word_class=int(data["word_class"]),
        viseme_multihot=np.asarray(data["viseme_multihot"], dtype=np.int64),
        speaker_id=int(data["speaker_id"]),
        perturbed=bool(data["perturbed"]),
    )


def write_corpus(
    directory: str | Path,
    config: CorpusConfig,
    vocab: ToyVocabulary,
    splits: dict[str, list[SampleRecord]],
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "config": config_to_dict(config),
        "vocabulary": vocab_to_dict(vocab),
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for kind, records in splits.items():
        path = directory / f"{kind}.jsonl"
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(record_to_json(record) + "\n")


def read_corpus(directory: str | Path) -> tuple[CorpusConfig, ToyVocabulary, dict[str, list[SampleRecord]]]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    config = config_from_dict(manifest["config"])
    vocab = vocab_from_dict(manifest["vocabulary"])
    splits = {}
    for kind in SPLIT_KINDS:
        path = directory / f"{kind}.jsonl"
        if path.exists():
            with open(path, encoding="utf-8") as handle:
                splits[kind] = [record_from_json(line) for line in handle if line.strip()]
    return config, vocab, splits
