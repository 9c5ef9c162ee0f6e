"""Stage-1 candidate retrieval: Jaccard ranking of standard terms.

Entities are segmented into character n-gram token sets; every library
term is scored against the query part and the top k are returned.  An
inverted index over token ids feeds the counting kernel, but the scores
are identical to brute-force Jaccard over token sets (the acceptance
suite checks exact equality including tie order).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import GoldAlignment, StandardLibrary
from .errors import DataError

SEGMENT_SCHEMES = ("char-unigram", "char-bigram", "unigram+bigram")
DEFAULT_SCHEME = "unigram+bigram"


def segment(entity: str, scheme: str = DEFAULT_SCHEME) -> frozenset[str]:
    """Deterministic character n-gram token set for an entity string.

    A length-1 string has no bigrams; the bigram scheme falls back to the
    unigram there so the token set is never empty.
    """
    if not entity:
        raise DataError("cannot segment an empty entity")
    if scheme not in SEGMENT_SCHEMES:
        raise DataError(f"unknown segmentation scheme {scheme!r}; expected one of {SEGMENT_SCHEMES}")
    unigrams = set(entity)
    if scheme == "char-unigram":
        return frozenset(unigrams)
    bigrams = {entity[i : i + 2] for i in range(len(entity) - 1)}
    if scheme == "char-bigram":
        return frozenset(bigrams) if bigrams else frozenset(unigrams)
    return frozenset(unigrams | bigrams)


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    """|a ∩ b| / |a ∪ b| in double precision."""
    if not a or not b:
        raise DataError("jaccard is undefined for empty token sets")
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class CandidateSet:
    """Ranked (term, score) candidates for one mention part."""

    mention_part: str
    ranked: tuple[tuple[str, float], ...]

    def terms(self) -> list[str]:
        return [term for term, _ in self.ranked]


class LibraryIndex:
    """Immutable inverted index over a segmented standard library.

    Safe to share across concurrent queries once built.
    """

    def __init__(self, library: StandardLibrary, scheme: str = DEFAULT_SCHEME):
        self.library = library
        self.scheme = scheme
        self.token_ids: dict[str, int] = {}
        term_tokens: list[list[int]] = []
        for term in library.terms:
            ids = []
            for token in segment(term, scheme):
                tid = self.token_ids.setdefault(token, len(self.token_ids))
                ids.append(tid)
            term_tokens.append(ids)

        postings: list[list[int]] = [[] for _ in range(len(self.token_ids))]
        for ordinal, ids in enumerate(term_tokens):
            for tid in ids:
                postings[tid].append(ordinal)
        indptr = np.zeros(len(postings) + 1, dtype=np.int64)
        for tid, plist in enumerate(postings):
            indptr[tid + 1] = indptr[tid] + len(plist)
        indices = np.empty(int(indptr[-1]), dtype=np.int32)
        for tid, plist in enumerate(postings):
            indices[indptr[tid] : indptr[tid + 1]] = plist
        self.post_indptr = indptr
        self.post_indices = indices
        self.term_sizes = np.array([len(ids) for ids in term_tokens], dtype=np.int64)

    def scores(self, part: str) -> np.ndarray:
        """Jaccard score of `part` against every library term, by ordinal."""
        tokens = segment(part, self.scheme)
        known = [self.token_ids[t] for t in sorted(tokens) if t in self.token_ids]
        counts = kernels.count_intersections(
            np.asarray(known, dtype=np.int32),
            self.post_indptr,
            self.post_indices,
            len(self.library),
        ).astype(np.int64)
        union = len(tokens) + self.term_sizes - counts
        return counts / union


def top_k(part: str, index: LibraryIndex, k: int) -> CandidateSet:
    """The k highest-Jaccard library terms for a part, ties by library ordinal."""
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    scores = index.scores(part)
    # stable argsort on descending score keeps ordinal order within ties
    order = np.argsort(-scores, kind="stable")[:k]
    ranked = tuple((index.library.terms[i], float(scores[i])) for i in order)
    return CandidateSet(mention_part=part, ranked=ranked)


def candidates_for_parts(parts: list[str], index: LibraryIndex, k: int) -> dict[str, CandidateSet]:
    """top_k for each distinct part; repeated parts are scored once."""
    out: dict[str, CandidateSet] = {}
    for part in parts:
        if part not in out:
            out[part] = top_k(part, index, k)
    return out


def recall_at_k(alignments: list[GoldAlignment], index: LibraryIndex, k: int) -> float:
    """Fraction of gold terms retrieved in the union of their mention's per-part top-k."""
    total = 0
    hit = 0
    cache: dict[str, set[str]] = {}
    for alignment in alignments:
        retrieved: set[str] = set()
        for part in alignment.mention.parts:
            if part not in cache:
                cache[part] = set(top_k(part, index, k).terms())
            retrieved |= cache[part]
        for gold in alignment.gold_parts:
            total += 1
            if gold in retrieved:
                hit += 1
    if total == 0:
        raise DataError("recall_at_k over an empty alignment list")
    return hit / total
