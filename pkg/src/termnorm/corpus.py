"""Data model and preprocessing for mention/standard-term corpora.

Entities may be composite: several sub-entities joined by a delimiter.
All delimiters are standardized to the canonical "##" so composite
strings can be split into parts, classified per part, and the selected
standard terms merged back into a canonical composite string.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataError, MalformedInputError

logger = logging.getLogger(__name__)

CANONICAL_DELIMITER = "##"

# Characters that act as separators between sub-entities.  "##" is listed
# as a unit but handled as runs of "#" so stray single "#" never survives.
DEFAULT_SEPARATORS = ("；", ";", "，", ",", "、", "+", "##")

# Characters stripped from entity strings before splitting.  Whitespace and
# decorative punctuation only; alphanumerics and CJK text are untouched.
DEFAULT_JUNK_CHARS = (
    " \t\r\n　"
    "。！？!?…·・"
    "“”\"'‘’"
    "（）()【】[]《》〈〉<>"
    "：:"
)


@dataclass(frozen=True)
class PreprocessConfig:
    """Separator and junk-character sets used by delimiter normalization."""

    separators: tuple[str, ...] = DEFAULT_SEPARATORS
    junk_chars: str = DEFAULT_JUNK_CHARS

    def separator_chars(self) -> str:
        chars = set()
        for sep in self.separators:
            if sep == CANONICAL_DELIMITER:
                chars.add("#")
            elif len(sep) == 1:
                chars.add(sep)
            else:
                chars.update(sep)
        return "".join(sorted(chars))


DEFAULT_PREPROCESS = PreprocessConfig()


def _split_pattern(config: PreprocessConfig) -> re.Pattern[str]:
    return re.compile("[%s]+" % re.escape(config.separator_chars()))


def normalize_delimiters(raw: str, config: PreprocessConfig = DEFAULT_PREPROCESS) -> str:
    """Standardize separators to "##", drop junk characters, collapse runs.

    Raises MalformedInputError when nothing survives cleaning.
    Idempotent: a normalized string normalizes to itself.
    """
    if not raw:
        raise MalformedInputError("empty entity string")
    cleaned = raw.translate({ord(c): None for c in config.junk_chars})
    segments = [s for s in _split_pattern(config).split(cleaned) if s]
    if not segments:
        raise MalformedInputError(f"entity string empty after cleaning: {raw!r}")
    return CANONICAL_DELIMITER.join(segments)


def split_entity(normalized: str) -> list[str]:
    """Split a delimiter-normalized string into its ordered sub-entities."""
    if not normalized:
        return []
    return normalized.split(CANONICAL_DELIMITER)


@dataclass(frozen=True)
class Mention:
    """A raw mention plus its delimiter-normalized sub-entity parts."""

    raw: str
    parts: tuple[str, ...]

    def __post_init__(self):
        if not self.parts:
            raise MalformedInputError(f"mention has no parts: {self.raw!r}")
        for part in self.parts:
            if not part or not part.strip():
                raise MalformedInputError(f"empty mention part in {self.raw!r}")
            if CANONICAL_DELIMITER in part:
                raise MalformedInputError(f"unsplit delimiter in part {part!r}")

    @classmethod
    def from_raw(cls, raw: str, config: PreprocessConfig = DEFAULT_PREPROCESS) -> "Mention":
        return cls(raw=raw, parts=tuple(split_entity(normalize_delimiters(raw, config))))


class StandardLibrary:
    """Ordered collection of unique standard terms with dense ordinals."""

    def __init__(self, terms: Iterable[str]):
        self.terms: list[str] = []
        self.index: dict[str, int] = {}
        for term in terms:
            if term in self.index:
                logger.warning("duplicate standard term dropped: %r", term)
                continue
            self.index[term] = len(self.terms)
            self.terms.append(term)
        if not self.terms:
            raise DataError("standard library is empty")

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def __iter__(self):
        return iter(self.terms)

    def ordinal(self, term: str) -> int:
        try:
            return self.index[term]
        except KeyError:
            raise DataError(f"term not in standard library: {term!r}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "StandardLibrary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())


@dataclass(frozen=True)
class Triplet:
    """One (mention part, candidate term) classification unit."""

    mention_part: str
    candidate: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"triplet label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class GoldAlignment:
    """A mention with the set of standard terms it normalizes to."""

    mention: Mention
    gold_parts: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.gold_parts:
            raise DataError(f"empty gold set for mention {self.mention.raw!r}")

    def validate_against(self, library: StandardLibrary) -> None:
        missing = sorted(t for t in self.gold_parts if t not in library)
        if missing:
            raise DataError(
                f"gold terms missing from standard library for mention "
                f"{self.mention.raw!r}: {missing}"
            )


def build_triplets(
    mention: Mention,
    candidates: Mapping[str, Iterable[str]],
    gold: GoldAlignment,
) -> list[Triplet]:
    """One triplet per (part, candidate); label 1 iff the candidate is a gold term."""
    triplets = []
    for part in mention.parts:
        for cand in candidates.get(part, ()):
            triplets.append(Triplet(part, cand, int(cand in gold.gold_parts)))
    return triplets


def merge_predictions(selected: Iterable[str], library: StandardLibrary) -> str:
    """Join selected terms with "##" in library-ordinal order.

    Ordinal order makes equal sets produce equal strings; an empty
    selection is a caller error (the prediction fallback rule must have
    produced at least one term per non-empty candidate set).
    """
    terms = sorted(set(selected), key=library.ordinal)
    if not terms:
        raise DataError("cannot merge an empty prediction set")
    return CANONICAL_DELIMITER.join(terms)


def evaluate_accuracy(
    predictions: Mapping[object, frozenset[str] | set[str]],
    golds: Mapping[object, frozenset[str] | set[str]],
) -> float:
    """Fraction of mentions whose predicted term set equals gold exactly."""
    missing_pred = sorted(str(k) for k in golds.keys() - predictions.keys())
    missing_gold = sorted(str(k) for k in predictions.keys() - golds.keys())
    if missing_pred or missing_gold:
        raise DataError(
            f"prediction/gold key mismatch; missing predictions: {missing_pred}; "
            f"missing golds: {missing_gold}"
        )
    if not golds:
        raise DataError("cannot evaluate an empty mention set")
    hits = sum(1 for key, gold in golds.items() if set(predictions[key]) == set(gold))
    return hits / len(golds)


def load_dataset(
    path: str | Path,
    library: StandardLibrary,
    config: PreprocessConfig = DEFAULT_PREPROCESS,
    strict: bool = True,
) -> list[GoldAlignment]:
    """Read a TSV of `raw_mention<TAB>gold_terms` rows into alignments.

    Rows that clean down to nothing are dropped and logged.  Gold terms
    absent from the library raise DataError unless strict=False, in which
    case the row is dropped and logged.
    """
    alignments: list[GoldAlignment] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            logger.warning("%s:%d: expected 2 tab-separated fields, dropped", path, lineno)
            continue
        raw, gold_raw = fields[0], fields[1]
        try:
            mention = Mention.from_raw(raw, config)
            gold = frozenset(split_entity(normalize_delimiters(gold_raw, config)))
        except MalformedInputError as exc:
            logger.warning("%s:%d: dropped malformed row: %s", path, lineno, exc)
            continue
        alignment = GoldAlignment(mention=mention, gold_parts=gold)
        try:
            alignment.validate_against(library)
        except DataError as exc:
            if strict:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            logger.warning("%s:%d: dropped row: %s", path, lineno, exc)
            continue
        alignments.append(alignment)
    return alignments


def write_dataset(path: str | Path, alignments: Iterable[GoldAlignment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for alignment in alignments:
            gold = CANONICAL_DELIMITER.join(sorted(alignment.gold_parts))
            fh.write(f"{alignment.mention.raw}\t{gold}\n")
