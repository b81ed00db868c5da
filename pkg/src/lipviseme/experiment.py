"""Experiment wiring: the versioned JSON config schema with strict key
checking and dotted-path overrides, corpus preparation, single training
runs, and the ablation / robustness harnesses with per-seed medians.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import statistics
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    CorpusConfig,
    SampleRecord,
    ToyVocabulary,
    build_toy_vocabulary,
    config_from_dict,
    config_to_dict,
    generate_corpus,
)
from .errors import ConfigError
from .lexicon import load_default_viseme_table, load_lexicon, load_viseme_table
from .model import ModelConfig, ModelState, init_model
from .tafm import TafmConfig
from .trainer import TrainConfig, TrainReport, train

CONFIG_VERSION = 1

# Fifty word classes drawn from the bundled lexicon.  Curated so that no two
# words share a viseme sequence or multiset (true homophenes would cap
# attainable accuracy), while keeping many near-minimal pairs (edit distance
# one in viseme space, e.g. CHANCE/CHANGE) so that word identity hinges on
# short discriminative segments, as it does for real confusable words.
DEFAULT_WORDS = (
    "ABOUT", "ALLOWED", "AMOUNT", "AROUND", "BORDER", "CALLED", "CANCER",
    "CHANCE", "CHANGE", "CHARGE", "CHOICE", "CHOKE", "CLOUD", "COURT",
    "CRISIS", "CURRENT", "DOING", "DURING", "GEORGE", "GOOD", "GROUND",
    "HAVING", "HEAVY", "HIGHER", "HOUSE", "KNOWN", "LARGE", "MAJOR",
    "MEETING", "MISSING", "MORNING", "MURDER", "NEEDS", "NIGHT", "ORDER",
    "PHONE", "POWER", "PRESSURE", "PRICES", "RATES", "REASON", "RECENT",
    "RESULT", "RIGHTS", "SHORT", "SHOULD", "SIDES", "SINCE", "TERMS",
    "WARNING",
)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
TAFM_LAMBDA_GRID = (0.05, 0.1, 0.2)


@dataclass(frozen=True)
class VocabularySpec:
    mode: str = "words"                      # "words" or "synthetic"
    words: tuple[str, ...] | None = None     # None in words mode -> DEFAULT_WORDS

    def __post_init__(self):
        if self.mode not in ("words", "synthetic"):
            raise ConfigError(f"vocabulary mode must be 'words' or 'synthetic', got {self.mode!r}")
        if self.mode == "synthetic" and self.words is not None:
            raise ConfigError("synthetic vocabulary does not take a word list")


@dataclass(frozen=True)
class PathsConfig:
    dictionary: str | None = None       # None -> bundled sample lexicon
    viseme_table: str | None = None     # None -> bundled 18-group table
    corpus_dir: str = "corpus"
    checkpoint: str = "checkpoint.json"
    report_dir: str = "reports"


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig
    model: ModelConfig
    train: TrainConfig
    paths: PathsConfig
    vocabulary: VocabularySpec
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.model.word_classes != self.corpus.num_classes:
            raise ConfigError(
                f"model.word_classes ({self.model.word_classes}) must equal "
                f"corpus.num_classes ({self.corpus.num_classes})"
            )
        if self.model.input_dim != self.corpus.feature_dim:
            raise ConfigError(
                f"model.input_dim ({self.model.input_dim}) must equal "
                f"corpus.feature_dim ({self.corpus.feature_dim})"
            )


def default_config_dict() -> dict:
    # The default recipe renders brief consonant gestures (2-3 frames)
    # against held vowels (6-8) and two coarticulated transition frames per
    # run boundary.  Both mirror real lip dynamics, and both are what the
    # class-specific attention exploits: with uniform durations and no
    # transitions, average pooling is already sufficient at this scale.
    return {
        "version": CONFIG_VERSION,
        "seeds": list(DEFAULT_SEEDS),
        "vocabulary": {"mode": "words", "words": None},
        "corpus": config_to_dict(
            CorpusConfig(frames_per_viseme=(2, 3), vowel_frames=(6, 8), coarticulation_frames=2)
        ),
        "model": ModelConfig(input_dim=16, word_classes=50).to_dict(),
        "train": TrainConfig().to_dict(),
        "paths": {
            "dictionary": None,
            "viseme_table": None,
            "corpus_dir": "corpus",
            "checkpoint": "checkpoint.json",
            "report_dir": "reports",
        },
    }


def _merge_section(defaults: dict, supplied: dict, section: str) -> dict:
    unknown = set(supplied) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(supplied)
    return merged


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a full config document; unknown keys anywhere are rejected."""
    defaults = default_config_dict()
    data = _merge_section(defaults, dict(data), "top-level")
    if data["version"] != CONFIG_VERSION:
        raise ConfigError(f"config version {data['version']!r} unsupported (expected {CONFIG_VERSION})")

    corpus = config_from_dict(_merge_section(defaults["corpus"], data["corpus"], "corpus"))
    model = ModelConfig.from_dict(_merge_section(defaults["model"], data["model"], "model"))
    train_config = TrainConfig.from_dict(_merge_section(defaults["train"], data["train"], "train"))
    paths_data = _merge_section(defaults["paths"], data["paths"], "paths")
    vocab_data = _merge_section(defaults["vocabulary"], data["vocabulary"], "vocabulary")
    words = vocab_data["words"]
    vocabulary = VocabularySpec(vocab_data["mode"], tuple(words) if words is not None else None)
    seeds = tuple(int(seed) for seed in data["seeds"])
    return ExperimentConfig(
        corpus=corpus,
        model=model,
        train=train_config,
        paths=PathsConfig(**paths_data),
        vocabulary=vocabulary,
        seeds=seeds,
    )


def experiment_config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "seeds": list(config.seeds),
        "vocabulary": {
            "mode": config.vocabulary.mode,
            "words": list(config.vocabulary.words) if config.vocabulary.words else None,
        },
        "corpus": config_to_dict(config.corpus),
        "model": config.model.to_dict(),
        "train": config.train.to_dict(),
        "paths": {
            "dictionary": config.paths.dictionary,
            "viseme_table": config.paths.viseme_table,
            "corpus_dir": config.paths.corpus_dir,
            "checkpoint": config.paths.checkpoint,
            "report_dir": config.paths.report_dir,
        },
    }


_OVERRIDE_SHORTCUTS = {
    "lambda": "model.tafm.lambda",
    "gamma": "model.tafm.gamma",
    "beta": "model.beta",
    "seed": "train.seed",
    "epochs": "train.epochs",
}


def apply_override(data: dict, dotted_key: str, raw_value: str) -> None:
    """Set ``a.b.c = value`` inside a nested config dict; values parse as
    JSON literals with plain-string fallback."""
    dotted_key = _OVERRIDE_SHORTCUTS.get(dotted_key, dotted_key)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    keys = dotted_key.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into {dotted_key!r}: {key!r} is not a section")
    node[keys[-1]] = value


def load_experiment_config(path: str | None = None, overrides: list[tuple[str, str]] = ()) -> ExperimentConfig:
    if path is None:
        data = {}
    else:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    for dotted_key, raw_value in overrides:
        apply_override(data, dotted_key, raw_value)
    return experiment_config_from_dict(data)


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(experiment_config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Corpus and single-run helpers.


def build_vocabulary(config: ExperimentConfig) -> ToyVocabulary:
    if config.vocabulary.mode == "synthetic":
        return build_toy_vocabulary(config.corpus)
    lexicon = load_lexicon(config.paths.dictionary)
    if config.paths.viseme_table is None:
        table = load_default_viseme_table()
    else:
        with open(config.paths.viseme_table, encoding="utf-8") as handle:
            table = load_viseme_table(handle, source_path=config.paths.viseme_table)
    words = config.vocabulary.words or DEFAULT_WORDS
    if len(words) != config.corpus.num_classes:
        raise ConfigError(
            f"vocabulary lists {len(words)} words but corpus.num_classes is "
            f"{config.corpus.num_classes}"
        )
    return build_toy_vocabulary(config.corpus, lexicon=lexicon, table=table, words=list(words))


def prepare_corpus(config: ExperimentConfig) -> dict[str, list[SampleRecord]]:
    return generate_corpus(build_vocabulary(config), config.corpus)


def init_state_for_seed(model_config: ModelConfig, seed: int) -> ModelState:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    return init_model(model_config, rng)


def run_single(
    config: ExperimentConfig,
    splits: dict[str, list[SampleRecord]],
    seed: int,
    beta: float | None = None,
    lam: float | None = None,
    train_splits: tuple[str, ...] | None = None,
) -> tuple[ModelState, TrainReport, ModelConfig]:
    """Train one model variant; final-epoch metrics live in the report."""
    model_config = config.model
    if beta is not None:
        model_config = replace(model_config, beta=beta)
    if lam is not None:
        model_config = replace(model_config, tafm=TafmConfig(gamma=model_config.tafm.gamma, lam=lam))
    train_config = replace(config.train, seed=seed)
    if train_splits is not None:
        train_config = replace(train_config, train_splits=train_splits)
    state = init_state_for_seed(model_config, seed)
    state, report = train(state, splits, model_config, train_config)
    return state, report, model_config


# ---------------------------------------------------------------------------
# Ablation (incremental variants) and robustness (data-diversity) tables.

_BOTH = ("clean_train", "diverse_train")
_CLEAN = ("clean_train",)

ABLATION_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("baseline", {"train_splits": _CLEAN, "beta": 0.0, "lam": 0.0}),
    ("+synthetic", {"train_splits": _BOTH, "beta": 0.0, "lam": 0.0}),
    ("+viseme-label", {"train_splits": _BOTH, "lam": 0.0}),
) + tuple(
    (f"+TAFM({lam})", {"train_splits": _BOTH, "lam": lam}) for lam in TAFM_LAMBDA_GRID
)

ROBUSTNESS_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("full w/ clean", {"train_splits": _CLEAN}),
    ("full w/ clean+diverse", {"train_splits": _BOTH}),
)


@dataclass
class AblationRow:
    variant: str
    seeds: tuple[int, ...]
    clean_accuracies: tuple[float, ...]
    perturbed_accuracies: tuple[float, ...]

    @property
    def median_clean(self) -> float:
        return statistics.median(self.clean_accuracies)

    @property
    def median_perturbed(self) -> float:
        return statistics.median(self.perturbed_accuracies)

    @property
    def spread_clean(self) -> float:
        return max(self.clean_accuracies) - min(self.clean_accuracies)

    @property
    def spread_perturbed(self) -> float:
        return max(self.perturbed_accuracies) - min(self.perturbed_accuracies)


_WORKER_CONTEXT: dict = {}


def _run_variant_seed(args: tuple) -> tuple[str, int, float, float]:
    variant_name, overrides, seed = args
    config = _WORKER_CONTEXT["config"]
    splits = _WORKER_CONTEXT["splits"]
    _, report, _ = run_single(config, splits, seed, **overrides)
    final = report.epochs[-1]
    if final.clean_accuracy is None or final.perturbed_accuracy is None:
        raise ConfigError("ablation needs both clean_test and perturbed_test splits")
    return variant_name, seed, final.clean_accuracy, final.perturbed_accuracy


def run_variant_table(
    config: ExperimentConfig,
    splits: dict[str, list[SampleRecord]],
    variants: tuple[tuple[str, dict], ...],
    jobs: int = 1,
    progress=None,
) -> list[AblationRow]:
    """Train every (variant, seed) pair and assemble per-variant rows.

    Runs are independent, so ``jobs > 1`` fans them out across processes;
    results are keyed by (variant, seed) and identical either way.
    """
    tasks = [(name, overrides, seed) for name, overrides in variants for seed in config.seeds]
    results: dict[tuple[str, int], tuple[float, float]] = {}
    _WORKER_CONTEXT["config"] = config
    _WORKER_CONTEXT["splits"] = splits
    try:
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                for name, seed, clean, perturbed in pool.map(_run_variant_seed, tasks):
                    results[(name, seed)] = (clean, perturbed)
                    if progress:
                        progress(name, seed, clean, perturbed)
        else:
            for task in tasks:
                name, seed, clean, perturbed = _run_variant_seed(task)
                results[(name, seed)] = (clean, perturbed)
                if progress:
                    progress(name, seed, clean, perturbed)
    finally:
        _WORKER_CONTEXT.clear()

    rows = []
    for name, _ in variants:
        clean = tuple(results[(name, seed)][0] for seed in config.seeds)
        perturbed = tuple(results[(name, seed)][1] for seed in config.seeds)
        rows.append(AblationRow(name, config.seeds, clean, perturbed))
    return rows


def run_ablation(config, splits, jobs: int = 1, progress=None) -> list[AblationRow]:
    return run_variant_table(config, splits, ABLATION_VARIANTS, jobs, progress)


def run_robustness(config, splits, jobs: int = 1, progress=None) -> list[AblationRow]:
    return run_variant_table(config, splits, ROBUSTNESS_VARIANTS, jobs, progress)


def rows_to_csv(rows: list[AblationRow], metadata: str | None = None) -> str:
    header = [
        "variant", "median_clean", "median_perturbed", "spread_clean", "spread_perturbed",
    ]
    seeds = rows[0].seeds if rows else ()
    for seed in seeds:
        header += [f"clean_seed{seed}", f"perturbed_seed{seed}"]
    lines = [f"# {metadata}"] if metadata else []
    lines.append(",".join(header))
    for row in rows:
        cells = [
            row.variant,
            repr(row.median_clean), repr(row.median_perturbed),
            repr(row.spread_clean), repr(row.spread_perturbed),
        ]
        for clean, perturbed in zip(row.clean_accuracies, row.perturbed_accuracies):
            cells += [repr(clean), repr(perturbed)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def rows_to_json_dict(rows: list[AblationRow], config: ExperimentConfig) -> dict:
    return {
        "version": __version__,
        "config_hash": config_hash(config),
        "seeds": list(config.seeds),
        "rows": [
            {
                "variant": row.variant,
                "clean_accuracies": list(row.clean_accuracies),
                "perturbed_accuracies": list(row.perturbed_accuracies),
                "median_clean": row.median_clean,
                "median_perturbed": row.median_perturbed,
                "spread_clean": row.spread_clean,
                "spread_perturbed": row.spread_perturbed,
            }
            for row in rows
        ],
    }
