"""Pronouncing-lexicon toolchain: CMU dictionary parsing, stress stripping,
the 18-group lip-shape table, and per-word multi-hot viseme labels.

The pronouncing dictionary and the viseme table are immutable once built and
safe to share across threads.  Default data files ship under
``lipviseme/data`` and can be swapped for full-size ones at any call site.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Iterator

NUM_VISEMES = 18

ARPABET = frozenset(
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG "
    "OW OY P R S SH T TH UH UW V W Y Z ZH".split()
)

_WORD_RE = re.compile(r"^[A-Z][A-Z'.\-]*$")
_VARIANT_RE = re.compile(r"^(.+)\((.+)\)$")


class LexiconError(Exception):
    """Base class for lexicon and viseme-table failures."""


class DictionaryParseError(LexiconError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class OovError(LexiconError):
    def __init__(self, word: str):
        super().__init__(f"word not in lexicon: {word!r}")
        self.word = word


class InvalidWordError(LexiconError):
    pass


class InvalidTokenError(LexiconError):
    pass


class MappingGapError(LexiconError):
    def __init__(self, phoneme: str):
        super().__init__(f"phoneme has no viseme group: {phoneme!r}")
        self.phoneme = phoneme


class VisemeTableError(LexiconError):
    """Malformed viseme-table file (wrong group count, duplicates, ...)."""


@dataclass(frozen=True)
class VisemeId:
    """One of the 18 lip-shape groups: a stable index plus a display name."""

    index: int
    name: str


@dataclass(frozen=True)
class WordVisemeLabel:
    """Per-word labeling output: phonemes, viseme sequence, 18-dim multi-hot.

    ``viseme_sequence`` always follows the primary pronunciation; under the
    ``all`` variant policy ``multi_hot`` is the union over every variant, so
    it may mark visemes that the primary sequence alone does not contain.
    """

    word: str
    phonemes: tuple[str, ...]
    viseme_sequence: tuple[VisemeId, ...]
    multi_hot: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "word": self.word,
                "phonemes": list(self.phonemes),
                "visemes": [v.index for v in self.viseme_sequence],
                "multi_hot": list(self.multi_hot),
            },
            separators=(", ", ": "),
        )


def strip_stress(token: str) -> str:
    """Drop the trailing stress digits from a raw dictionary token.

    "EH1" -> "EH", "B" -> "B".  A token that is nothing but digits cannot be
    a phoneme and raises :class:`InvalidTokenError`.
    """
    if not token:
        raise InvalidTokenError("empty phoneme token")
    stripped = token.rstrip("0123456789")
    if not stripped:
        raise InvalidTokenError(f"phoneme token is all digits: {token!r}")
    return stripped


class PronouncingLexicon:
    """Word -> ordered pronunciation variants, each a raw phoneme sequence.

    Raw means stress digits are retained; :meth:`phonemes` strips them.
    """

    def __init__(self) -> None:
        self._entries: dict[str, list[tuple[str, ...]]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return word.upper() in self._entries

    def words(self) -> Iterator[str]:
        return iter(self._entries)

    def variants(self, word: str) -> list[tuple[str, ...]]:
        """All raw pronunciation variants in dictionary order."""
        key = _normalize_word(word)
        try:
            return list(self._entries[key])
        except KeyError:
            raise OovError(key) from None

    def phonemes(self, word: str, variant_policy: str = "first") -> list[tuple[str, ...]]:
        """Stress-stripped phoneme sequences for ``word``.

        ``variant_policy`` is ``first`` (primary pronunciation only) or
        ``all`` (every variant, dictionary order).
        """
        _check_policy(variant_policy)
        variants = self.variants(word)
        if variant_policy == "first":
            variants = variants[:1]
        return [tuple(strip_stress(tok) for tok in var) for var in variants]

    def _add(self, word: str, variant_index: int | None, phones: tuple[str, ...], line_number: int) -> None:
        if variant_index is None:
            if word in self._entries:
                raise DictionaryParseError(f"duplicate base entry for {word!r}", line_number)
            self._entries[word] = [phones]
            return
        if word not in self._entries:
            raise DictionaryParseError(
                f"variant {word}({variant_index}) appears before its base entry", line_number
            )
        if variant_index != len(self._entries[word]):
            raise DictionaryParseError(
                f"variant index {variant_index} out of order for {word!r}", line_number
            )
        self._entries[word].append(phones)

    def to_text(self) -> str:
        """Serialize back to the dictionary entry format (comments dropped)."""
        lines = []
        for word, variants in self._entries.items():
            for n, phones in enumerate(variants):
                key = word if n == 0 else f"{word}({n})"
                lines.append(f"{key}  {' '.join(phones)}")
        return "\n".join(lines) + "\n"


def parse_pronouncing_dictionary(stream: Iterable[str] | IO[str]) -> PronouncingLexicon:
    """Parse CMU dictionary text: ";;;" comments, "WORD  PH1 PH2" entries,
    "WORD(n)" variants.  Raises :class:`DictionaryParseError` with the
    offending line number on malformed input.
    """
    lexicon = PronouncingLexicon()
    for line_number, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith(";;;"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise DictionaryParseError("entry has no phonemes", line_number)
        key, phones = fields[0], tuple(fields[1:])
        match = _VARIANT_RE.match(key)
        if match:
            word, index_text = match.group(1), match.group(2)
            try:
                variant_index = int(index_text)
            except ValueError:
                raise DictionaryParseError(f"unparsable variant index in {key!r}", line_number) from None
            if variant_index < 1:
                raise DictionaryParseError(f"variant index must be >= 1 in {key!r}", line_number)
            lexicon._add(word, variant_index, phones, line_number)
        else:
            lexicon._add(key, None, phones, line_number)
    return lexicon


def load_lexicon(path: str | None = None) -> PronouncingLexicon:
    """Load a dictionary file (Latin-1 tolerant); ``None`` loads the bundled sample."""
    if path is None:
        text = resources.files("lipviseme.data").joinpath("cmudict_sample.txt").read_text("latin-1")
    else:
        with open(path, encoding="latin-1") as handle:
            text = handle.read()
    return parse_pronouncing_dictionary(text.splitlines())


class VisemeTable:
    """Total mapping from stress-free phonemes to the 18 lip-shape groups."""

    def __init__(self, groups: list[tuple[str, tuple[str, ...]]], source_path: str = "<memory>"):
        if len(groups) != NUM_VISEMES:
            raise VisemeTableError(f"expected {NUM_VISEMES} viseme groups, found {len(groups)}")
        self.source_path = source_path
        self.visemes: tuple[VisemeId, ...] = tuple(
            VisemeId(index, name) for index, (name, _) in enumerate(groups)
        )
        self._mapping: dict[str, VisemeId] = {}
        for viseme, (name, members) in zip(self.visemes, groups):
            if not members:
                raise VisemeTableError(f"viseme group {name!r} has no phonemes")
            for phoneme in members:
                if phoneme in self._mapping:
                    raise VisemeTableError(
                        f"phoneme {phoneme!r} assigned to both "
                        f"{self._mapping[phoneme].name!r} and {name!r}"
                    )
                self._mapping[phoneme] = viseme

    def __contains__(self, phoneme: str) -> bool:
        return phoneme in self._mapping

    @property
    def phonemes(self) -> frozenset[str]:
        return frozenset(self._mapping)

    def viseme(self, phoneme: str) -> VisemeId:
        try:
            return self._mapping[phoneme]
        except KeyError:
            raise MappingGapError(phoneme) from None


def load_viseme_table(stream: Iterable[str] | IO[str], source_path: str = "<memory>") -> VisemeTable:
    """Parse a "NAME: PH PH ..." table file; "#" comment lines permitted."""
    groups: list[tuple[str, tuple[str, ...]]] = []
    seen_names = set()
    for line_number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, members_text = line.partition(":")
        if not sep:
            raise VisemeTableError(f"line {line_number}: expected 'NAME: PH PH ...'")
        name = name.strip()
        if not name or name in seen_names:
            raise VisemeTableError(f"line {line_number}: missing or duplicate group name")
        seen_names.add(name)
        members = tuple(members_text.split())
        for phoneme in members:
            if not phoneme.isalpha() or not phoneme.isupper():
                raise VisemeTableError(f"line {line_number}: bad phoneme token {phoneme!r}")
        groups.append((name, members))
    return VisemeTable(groups, source_path)


def load_default_viseme_table() -> VisemeTable:
    text = resources.files("lipviseme.data").joinpath("visemes18.txt").read_text("utf-8")
    return load_viseme_table(text.splitlines(), source_path="lipviseme/data/visemes18.txt")


def word_to_phonemes(lexicon: PronouncingLexicon, word: str, variant_policy: str = "first"):
    """Stress-stripped phoneme sequence(s) for a word.

    Returns a single tuple under ``first`` and a list of tuples under ``all``.
    """
    sequences = lexicon.phonemes(word, variant_policy)
    return sequences[0] if variant_policy == "first" else sequences


def phonemes_to_visemes(table: VisemeTable, phoneme_sequence: Iterable[str]) -> tuple[VisemeId, ...]:
    """Element-wise table application; consecutive duplicates are kept."""
    return tuple(table.viseme(phoneme) for phoneme in phoneme_sequence)


def multi_hot_from_visemes(visemes: Iterable[VisemeId]) -> tuple[int, ...]:
    hot = [0] * NUM_VISEMES
    for viseme in visemes:
        hot[viseme.index] = 1
    return tuple(hot)


def word_to_multihot(
    table: VisemeTable,
    lexicon: PronouncingLexicon,
    word: str,
    variant_policy: str = "first",
) -> WordVisemeLabel:
    """Full labeling for one word: phonemes, viseme sequence, 18-dim multi-hot.

    Under ``all`` the multi-hot is the union over pronunciation variants
    while the reported sequence stays the primary one.
    """
    _check_policy(variant_policy)
    sequences = lexicon.phonemes(word, variant_policy)
    primary = phonemes_to_visemes(table, sequences[0])
    marked: list[VisemeId] = list(primary)
    for extra in sequences[1:]:
        marked.extend(phonemes_to_visemes(table, extra))
    return WordVisemeLabel(
        word=_normalize_word(word),
        phonemes=sequences[0],
        viseme_sequence=primary,
        multi_hot=multi_hot_from_visemes(marked),
    )


def _normalize_word(word: str) -> str:
    key = word.upper()
    if not _WORD_RE.match(key):
        raise InvalidWordError(f"not a dictionary word: {word!r}")
    return key


def _check_policy(variant_policy: str) -> None:
    if variant_policy not in ("first", "all"):
        raise ValueError(f"variant_policy must be 'first' or 'all', got {variant_policy!r}")
