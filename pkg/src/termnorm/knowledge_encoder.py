"""Knowledge sequence encoder: embedding, BiGRU, and an aligning MLP.

A knowledge id sequence is embedded row by row, scanned by forward and
backward GRUs, and the two final hidden states are summed and projected
to the template embedding width.  The resulting vector is what gets
injected into a template's knowledge slots.

All parameters (embedding table included) receive gradients during
end-to-end training; the backward passes here are hand-derived and are
checked against finite differences in the test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError
from .kb import KnowledgeVocab
from .nn import DTYPE, Parameter, check_finite, glorot_init, normal_init, sigmoid

logger = logging.getLogger(__name__)

KNOWLEDGE_STRATEGIES = ("pretrained-surface", "static-table", "random")


@dataclass
class GruParams:
    """One GRU direction: reset/update/candidate gates with single biases."""

    W_xr: Parameter
    W_xz: Parameter
    W_xn: Parameter
    W_hr: Parameter
    W_hz: Parameter
    W_hn: Parameter
    b_r: Parameter
    b_z: Parameter
    b_n: Parameter

    @classmethod
    def init(cls, prefix: str, d_in: int, d_h: int, rng: np.random.Generator) -> "GruParams":
        def w(name: str, fan_in: int) -> Parameter:
            return Parameter(f"{prefix}.{name}", glorot_init(rng, fan_in, d_h))

        def b(name: str) -> Parameter:
            return Parameter(f"{prefix}.{name}", np.zeros(d_h, dtype=DTYPE))

        return cls(
            W_xr=w("W_xr", d_in), W_xz=w("W_xz", d_in), W_xn=w("W_xn", d_in),
            W_hr=w("W_hr", d_h), W_hz=w("W_hz", d_h), W_hn=w("W_hn", d_h),
            b_r=b("b_r"), b_z=b("b_z"), b_n=b("b_n"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.W_xr, self.W_xz, self.W_xn, self.W_hr, self.W_hz, self.W_hn,
                self.b_r, self.b_z, self.b_n]


def _gru_scan(p: GruParams, x: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, list]:
    """Masked GRU scan over (B, T, d_in); returns final hidden state (B, d_h).

    Rows shorter than T freeze their hidden state once their mask runs
    out, so the state after the last step is every row's final state.
    """
    B, T, _ = x.shape
    d_h = p.b_r.value.shape[0]
    h = np.zeros((B, d_h), dtype=DTYPE)
    steps = []
    for t in range(T):
        x_t = x[:, t, :]
        m_t = mask[:, t : t + 1]
        r = sigmoid(x_t @ p.W_xr.value + h @ p.W_hr.value + p.b_r.value)
        z = sigmoid(x_t @ p.W_xz.value + h @ p.W_hz.value + p.b_z.value)
        rh = r * h
        n = np.tanh(x_t @ p.W_xn.value + rh @ p.W_hn.value + p.b_n.value)
        h_new = (1.0 - z) * n + z * h
        h_next = m_t * h_new + (1.0 - m_t) * h
        steps.append((x_t, h, r, z, rh, n, m_t))
        h = h_next
    return h, steps


def _gru_scan_backward(p: GruParams, steps: list, dh_final: np.ndarray) -> np.ndarray:
    """Backprop through a masked GRU scan; returns gradient w.r.t. the inputs."""
    T = len(steps)
    dx = np.zeros((dh_final.shape[0], T, p.W_xr.value.shape[0]), dtype=DTYPE)
    dh = dh_final.copy()
    for t in range(T - 1, -1, -1):
        x_t, h_prev, r, z, rh, n, m_t = steps[t]
        dh_new = dh * m_t
        dh_prev = dh * (1.0 - m_t)
        dz = dh_new * (h_prev - n)
        dn = dh_new * (1.0 - z)
        dh_prev += dh_new * z
        da_n = dn * (1.0 - n * n)
        p.W_xn.grad += x_t.T @ da_n
        p.W_hn.grad += rh.T @ da_n
        p.b_n.grad += da_n.sum(axis=0)
        dx_t = da_n @ p.W_xn.value.T
        drh = da_n @ p.W_hn.value.T
        dr = drh * h_prev
        dh_prev += drh * r
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        p.W_xr.grad += x_t.T @ da_r
        p.W_xz.grad += x_t.T @ da_z
        p.W_hr.grad += h_prev.T @ da_r
        p.W_hz.grad += h_prev.T @ da_z
        p.b_r.grad += da_r.sum(axis=0)
        p.b_z.grad += da_z.sum(axis=0)
        dx_t += da_r @ p.W_xr.value.T + da_z @ p.W_xz.value.T
        dh_prev += da_r @ p.W_hr.value.T + da_z @ p.W_hz.value.T
        dx[:, t, :] = dx_t
        dh = dh_prev
    return dx


class KnowledgeEncoder:
    """Trainable embedding + BiGRU + MLP mapping knowledge ids to one vector."""

    def __init__(
        self,
        vocab_size: int,
        d_k: int,
        d_h: int,
        d_model: int,
        rng: np.random.Generator,
        embed_rows: np.ndarray | None = None,
    ):
        self.d_k = d_k
        self.d_h = d_h
        self.d_model = d_model
        if embed_rows is None:
            embed_rows = normal_init(rng, (vocab_size, d_k))
        if embed_rows.shape != (vocab_size, d_k):
            raise ConfigError(
                f"embedding table shape {embed_rows.shape} != ({vocab_size}, {d_k})"
            )
        self.embed = Parameter("kenc.embed", embed_rows)
        self.gru_f = GruParams.init("kenc.gru_f", d_k, d_h, rng)
        self.gru_b = GruParams.init("kenc.gru_b", d_k, d_h, rng)
        hidden = 2 * d_h
        self.W1 = Parameter("kenc.mlp.W1", glorot_init(rng, d_h, hidden))
        self.b1 = Parameter("kenc.mlp.b1", np.zeros(hidden, dtype=DTYPE))
        self.W2 = Parameter("kenc.mlp.W2", glorot_init(rng, hidden, d_model))
        self.b2 = Parameter("kenc.mlp.b2", np.zeros(d_model, dtype=DTYPE))

    def parameters(self) -> list[Parameter]:
        return [self.embed, *self.gru_f.parameters(), *self.gru_b.parameters(),
                self.W1, self.b1, self.W2, self.b2]

    def forward_batch(self, id_seqs: list[list[int]]) -> tuple[np.ndarray, dict]:
        """Encode a batch of id sequences; returns (B, d_model) vectors and a cache."""
        if not id_seqs or any(len(seq) == 0 for seq in id_seqs):
            raise ConfigError("knowledge id sequences must be non-empty")
        B = len(id_seqs)
        lengths = np.array([len(seq) for seq in id_seqs], dtype=np.int64)
        T = int(lengths.max())
        ids = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T), dtype=DTYPE)
        for b, seq in enumerate(id_seqs):
            ids[b, : len(seq)] = seq
            mask[b, : len(seq)] = 1.0
        x = self.embed.value[ids] * mask[:, :, None]
        # reverse each row's valid prefix for the backward direction
        rev_x = np.zeros_like(x)
        for b in range(B):
            L = int(lengths[b])
            rev_x[b, :L] = x[b, L - 1 :: -1]
        h_f, steps_f = _gru_scan(self.gru_f, x, mask)
        h_b, steps_b = _gru_scan(self.gru_b, rev_x, mask)
        h_sum = h_f + h_b
        pre = h_sum @ self.W1.value + self.b1.value
        u = np.tanh(pre)
        out = u @ self.W2.value + self.b2.value
        check_finite(out, "knowledge encoder output")
        cache = {"ids": ids, "mask": mask, "lengths": lengths,
                 "steps_f": steps_f, "steps_b": steps_b, "h_sum": h_sum, "u": u}
        return out, cache

    def backward_batch(self, cache: dict, dout: np.ndarray) -> None:
        """Accumulate parameter gradients for a cached forward batch."""
        u = cache["u"]
        self.W2.grad += u.T @ dout
        self.b2.grad += dout.sum(axis=0)
        da = (dout @ self.W2.value.T) * (1.0 - u * u)
        self.W1.grad += cache["h_sum"].T @ da
        self.b1.grad += da.sum(axis=0)
        dh_sum = da @ self.W1.value.T
        dx_f = _gru_scan_backward(self.gru_f, cache["steps_f"], dh_sum)
        dx_b = _gru_scan_backward(self.gru_b, cache["steps_b"], dh_sum)
        lengths = cache["lengths"]
        dx = dx_f
        for b in range(dx.shape[0]):
            L = int(lengths[b])
            dx[b, :L] += dx_b[b, L - 1 :: -1]
        mask = cache["mask"]
        dx *= mask[:, :, None]
        flat_ids = cache["ids"][mask.astype(bool)]
        np.add.at(self.embed.grad, flat_ids, dx[mask.astype(bool)])

    def encode(self, ids: list[int]) -> np.ndarray:
        """Single-sequence convenience wrapper; returns a d_model vector."""
        out, _ = self.forward_batch([ids])
        return out[0]


def load_static_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Read a `token<TAB>v1,v2,...` static vector table."""
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ConfigError(f"{path}:{lineno}: expected token<TAB>values")
        table[fields[0]] = np.array([float(v) for v in fields[1].split(",")], dtype=DTYPE)
    return table


def write_static_vectors(path: str | Path, table: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in table.items():
            fh.write(token + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")


def _embed_rows_for_strategy(
    vocab: KnowledgeVocab,
    strategy: str,
    d_k: int,
    rng: np.random.Generator,
    static_vectors: Mapping[str, np.ndarray] | None,
    external_encoder: Callable[[str], np.ndarray] | None,
) -> np.ndarray:
    rows = normal_init(rng, (len(vocab), d_k))
    if strategy == "random":
        return rows
    if strategy == "pretrained-surface" and external_encoder is not None:
        for idx, token in enumerate(vocab.tokens):
            vec = np.asarray(external_encoder(token), dtype=DTYPE)
            if vec.shape != (d_k,):
                raise ConfigError(
                    f"external encoder returned shape {vec.shape} for {token!r}, expected ({d_k},)"
                )
            rows[idx] = vec
        return rows
    # static-table, or pretrained-surface with no external encoder configured
    if static_vectors is None:
        raise ConfigError(f"strategy {strategy!r} requires a static vector table")
    for idx, token in enumerate(vocab.tokens):
        vec = static_vectors.get(token)
        if vec is None:
            logger.warning("no static vector for %r; row stays random", token)
            continue
        if vec.shape != (d_k,):
            raise ConfigError(
                f"static vector for {token!r} has dimension {vec.shape[0]}, expected {d_k}"
            )
        rows[idx] = vec
    return rows


def init_params(
    vocab: KnowledgeVocab,
    strategy: str,
    seed: int | np.random.SeedSequence,
    d_k: int = 128,
    d_h: int = 128,
    d_model: int = 128,
    static_vectors: Mapping[str, np.ndarray] | None = None,
    external_encoder: Callable[[str], np.ndarray] | None = None,
) -> KnowledgeEncoder:
    """Build a KnowledgeEncoder under one of the embedding init strategies.

    `pretrained-surface` uses an external encoder over each token's
    surface text when one is configured and otherwise behaves exactly like
    `static-table`, which fills rows from a static vector table (missing
    tokens fall back to the random row and are logged).  GRU and MLP
    weights are always drawn from the seed.
    """
    if strategy not in KNOWLEDGE_STRATEGIES:
        raise ConfigError(
            f"unknown knowledge strategy {strategy!r}; expected one of {KNOWLEDGE_STRATEGIES}"
        )
    rng = np.random.default_rng(seed)
    rows = _embed_rows_for_strategy(vocab, strategy, d_k, rng, static_vectors, external_encoder)
    return KnowledgeEncoder(len(vocab), d_k, d_h, d_model, rng, embed_rows=rows)
