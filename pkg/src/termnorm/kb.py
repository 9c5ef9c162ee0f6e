"""Subject-predicate knowledge base and longest-overlap extraction.

Knowledge items are (key, relation) pairs flattened from medical
knowledge-graph triples; only subject and predicate are consumed.  An
entity string is scanned left to right and, at each position, the longest
key starting there is emitted; matched spans never overlap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import kernels
from .errors import DataError

logger = logging.getLogger(__name__)

NULL_TOKEN = "[NULL]"
PAD_TOKEN = "[PAD]"


@dataclass(frozen=True)
class KnowledgeItem:
    key: str
    relation: str


class KnowledgeBase:
    """Deduplicated knowledge items with a flattened match trie.

    The first occurrence of a key fixes its relation; later rows with the
    same key are logged and dropped.  Immutable after construction.
    """

    def __init__(self, items: Iterable[KnowledgeItem]):
        self.items: list[KnowledgeItem] = []
        self.by_key: dict[str, str] = {}
        for item in items:
            if not item.key or not item.relation:
                raise DataError(f"knowledge item with empty field: {item}")
            if item.key in self.by_key:
                if self.by_key[item.key] != item.relation:
                    logger.warning(
                        "key %r already mapped to %r; dropping relation %r",
                        item.key, self.by_key[item.key], item.relation,
                    )
                continue
            self.by_key[item.key] = item.relation
            self.items.append(item)
        if not self.items:
            raise DataError("knowledge base is empty")
        self.max_key_len = max(len(item.key) for item in self.items)
        self._build_trie()

    def _build_trie(self) -> None:
        # dict trie -> flat arrays with per-node edges sorted by char code,
        # the layout the longest-match kernel walks.
        children: list[dict[int, int]] = [{}]
        terminal: list[int] = [-1]
        for idx, item in enumerate(self.items):
            node = 0
            for ch in item.key:
                code = ord(ch)
                nxt = children[node].get(code)
                if nxt is None:
                    nxt = len(children)
                    children[node][code] = nxt
                    children.append({})
                    terminal.append(-1)
                node = nxt
            terminal[node] = idx
        indptr = np.zeros(len(children) + 1, dtype=np.int64)
        for node, edges in enumerate(children):
            indptr[node + 1] = indptr[node] + len(edges)
        chars = np.empty(int(indptr[-1]), dtype=np.int32)
        targets = np.empty(int(indptr[-1]), dtype=np.int32)
        for node, edges in enumerate(children):
            base = int(indptr[node])
            for offset, (code, target) in enumerate(sorted(edges.items())):
                chars[base + offset] = code
                targets[base + offset] = target
        self._edge_indptr = indptr
        self._edge_chars = chars
        self._edge_targets = targets
        self._terminal = np.asarray(terminal, dtype=np.int32)

    def match_spans(self, entity: str) -> list[tuple[int, KnowledgeItem]]:
        """(start, item) for each greedy leftmost-longest match in the entity."""
        if not entity:
            raise DataError("cannot extract knowledge from an empty entity")
        codes = np.fromiter((ord(c) for c in entity), dtype=np.int32, count=len(entity))
        raw = kernels.longest_matches(
            codes, self._edge_indptr, self._edge_chars, self._edge_targets, self._terminal
        )
        return [(start, self.items[item_idx]) for start, item_idx in raw]


def extract_knowledge(entity: str, kb: KnowledgeBase) -> list[KnowledgeItem]:
    """Ordered knowledge items matched in the entity; empty when nothing matches."""
    return [item for _, item in kb.match_spans(entity)]


def load_kb(path: str | Path) -> KnowledgeBase:
    """Load `subject<TAB>predicate[<TAB>object]` rows; object column is ignored."""
    items: list[KnowledgeItem] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
            logger.warning("%s:%d: malformed knowledge row skipped: %r", path, lineno, line)
            continue
        items.append(KnowledgeItem(key=fields[0].strip(), relation=fields[1].strip()))
    if not items:
        raise DataError(f"no usable knowledge items in {path}")
    return KnowledgeBase(items)


def write_kb(path: str | Path, kb: KnowledgeBase) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in kb.items:
            fh.write(f"{item.key}\t{item.relation}\n")


class KnowledgeVocab:
    """Dense ids over distinct keys and relations, plus reserved NULL and PAD.

    NULL (id 0) stands in for entities with no knowledge matches; PAD
    (id 1) fills batched sequences.  Id assignment follows KB item order,
    so a given KB file always produces the same vocabulary.
    """

    NULL_ID = 0
    PAD_ID = 1

    def __init__(self, kb: KnowledgeBase):
        self.id_of: dict[str, int] = {NULL_TOKEN: self.NULL_ID, PAD_TOKEN: self.PAD_ID}
        for item in kb.items:
            self.id_of.setdefault(item.key, len(self.id_of))
        for item in kb.items:
            self.id_of.setdefault(item.relation, len(self.id_of))
        self.tokens = [None] * len(self.id_of)
        for token, idx in self.id_of.items():
            self.tokens[idx] = token

    def __len__(self) -> int:
        return len(self.id_of)

    def __getitem__(self, token: str) -> int:
        try:
            return self.id_of[token]
        except KeyError:
            raise DataError(f"token not in knowledge vocabulary: {token!r}") from None


def build_knowledge_vocab(kb: KnowledgeBase) -> KnowledgeVocab:
    return KnowledgeVocab(kb)


def sequence_to_ids(seq: list[KnowledgeItem], vocab: KnowledgeVocab) -> list[int]:
    """Flatten [(k1, r1), (k2, r2), ...] to [id(k1), id(r1), id(k2), id(r2), ...].

    An empty sequence maps to the single NULL id so downstream encoders
    always receive a non-empty input.
    """
    if not seq:
        return [KnowledgeVocab.NULL_ID]
    ids: list[int] = []
    for item in seq:
        ids.append(vocab[item.key])
        ids.append(vocab[item.relation])
    return ids


def write_knowledge_vocab(path: str | Path, vocab: KnowledgeVocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, token in enumerate(vocab.tokens):
            fh.write(f"{token}\t{idx}\n")
