# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the string-matching hot loops.

Semantics must stay in lockstep with `termnorm.kernels.pure`; the kernel
test suite asserts exact equivalence between the two backends.
"""
import numpy as np

BACKEND_NAME = "cython"


def count_intersections(query_ids, post_indptr, post_indices, int n_terms):
    cdef int[::1] q = np.ascontiguousarray(query_ids, dtype=np.int32)
    cdef long[::1] indptr = np.ascontiguousarray(post_indptr, dtype=np.int64)
    cdef int[::1] indices = np.ascontiguousarray(post_indices, dtype=np.int32)
    counts_arr = np.zeros(n_terms, dtype=np.int32)
    cdef int[::1] counts = counts_arr
    cdef Py_ssize_t qi, j
    cdef long start, stop
    cdef int token
    with nogil:
        for qi in range(q.shape[0]):
            token = q[qi]
            start = indptr[token]
            stop = indptr[token + 1]
            for j in range(start, stop):
                counts[indices[j]] += 1
    return counts_arr


def longest_matches(codes, edge_indptr, edge_chars, edge_targets, terminal):
    cdef int[::1] text = np.ascontiguousarray(codes, dtype=np.int32)
    cdef long[::1] indptr = np.ascontiguousarray(edge_indptr, dtype=np.int64)
    cdef int[::1] chars = np.ascontiguousarray(edge_chars, dtype=np.int32)
    cdef int[::1] targets = np.ascontiguousarray(edge_targets, dtype=np.int32)
    cdef int[::1] term = np.ascontiguousarray(terminal, dtype=np.int32)
    cdef Py_ssize_t n = text.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef long lo, hi, mid, pos
    cdef int node, c, best_item, best_len
    matches = []
    while i < n:
        node = 0
        best_item = -1
        best_len = 0
        j = i
        while j < n:
            lo = indptr[node]
            hi = indptr[node + 1]
            c = text[j]
            # binary search for c in chars[lo:hi]
            pos = -1
            while lo < hi:
                mid = (lo + hi) // 2
                if chars[mid] < c:
                    lo = mid + 1
                elif chars[mid] > c:
                    hi = mid
                else:
                    pos = mid
                    break
            if pos < 0:
                break
            node = targets[pos]
            j += 1
            if term[node] >= 0:
                best_item = term[node]
                best_len = j - i
        if best_item >= 0:
            matches.append((i, best_item))
            i += best_len
        else:
            i += 1
    return matches


def levenshtein(a_codes, b_codes):
    cdef int[::1] a = np.ascontiguousarray(a_codes, dtype=np.int32)
    cdef int[::1] b = np.ascontiguousarray(b_codes, dtype=np.int32)
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev_arr = np.arange(lb + 1, dtype=np.int64)
    curr_arr = np.zeros(lb + 1, dtype=np.int64)
    cdef long[::1] prev = prev_arr
    cdef long[::1] curr = curr_arr
    cdef long[::1] tmp
    cdef Py_ssize_t i, j
    cdef long cost, best
    cdef int ai
    with nogil:
        for i in range(1, la + 1):
            curr[0] = i
            ai = a[i - 1]
            for j in range(1, lb + 1):
                cost = 0 if ai == b[j - 1] else 1
                best = prev[j] + 1
                if curr[j - 1] + 1 < best:
                    best = curr[j - 1] + 1
                if prev[j - 1] + cost < best:
                    best = prev[j - 1] + cost
                curr[j] = best
            tmp = prev
            prev = curr
            curr = tmp
    return int(prev[lb])
