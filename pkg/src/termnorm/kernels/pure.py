"""Pure-Python kernel implementations.

Reference semantics for the compiled extension: each function here must
produce results identical to its `_ckernels` counterpart (same ints, same
match lists), which the kernel test suite asserts.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"


def count_intersections(
    query_ids: np.ndarray,
    post_indptr: np.ndarray,
    post_indices: np.ndarray,
    n_terms: int,
) -> np.ndarray:
    """Per-term intersection sizes between a query token-id set and every term.

    `post_indptr`/`post_indices` form a CSR inverted index: the terms
    containing token t are post_indices[post_indptr[t]:post_indptr[t+1]].
    """
    counts = np.zeros(n_terms, dtype=np.int32)
    for token in query_ids:
        start = post_indptr[token]
        stop = post_indptr[token + 1]
        for j in range(start, stop):
            counts[post_indices[j]] += 1
    return counts


def longest_matches(
    codes: np.ndarray,
    edge_indptr: np.ndarray,
    edge_chars: np.ndarray,
    edge_targets: np.ndarray,
    terminal: np.ndarray,
) -> list[tuple[int, int]]:
    """Greedy left-to-right longest-match scan over a flattened trie.

    Node edges are stored sorted by character code so lookup is a binary
    search in edge_chars[edge_indptr[node]:edge_indptr[node+1]].  Returns
    (start_position, item_index) pairs for non-overlapping matches; the
    scan advances past each match, or by one character when nothing
    matches.
    """
    matches: list[tuple[int, int]] = []
    n = len(codes)
    i = 0
    while i < n:
        node = 0
        best_item = -1
        best_len = 0
        j = i
        while j < n:
            lo = edge_indptr[node]
            hi = edge_indptr[node + 1]
            c = codes[j]
            pos = lo + np.searchsorted(edge_chars[lo:hi], c)
            if pos >= hi or edge_chars[pos] != c:
                break
            node = edge_targets[pos]
            j += 1
            if terminal[node] >= 0:
                best_item = terminal[node]
                best_len = j - i
        if best_item >= 0:
            matches.append((i, int(best_item)))
            i += best_len
        else:
            i += 1
    return matches


def levenshtein(a_codes: np.ndarray, b_codes: np.ndarray) -> int:
    """Edit distance between two code-point arrays (two-row DP)."""
    la, lb = len(a_codes), len(b_codes)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    curr = [0] * (lb + 1)
    for i in range(1, la + 1):
        curr[0] = i
        ai = a_codes[i - 1]
        for j in range(1, lb + 1):
            cost = 0 if ai == b_codes[j - 1] else 1
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost)
        prev, curr = curr, prev
    return prev[lb]
