"""Masked-language-model contract and a small built-in transformer MLM.

The prompt pipeline only talks to `MlmContract`: a character vocabulary
with mask/boundary tokens, an input-embedding lookup, and a forward pass
over *embedded* sequences (so continuous soft/knowledge vectors can be
injected between ordinary token embeddings).  `ToyMlm` is a desk-scale
trainable implementation; genuinely pretrained models plug in through
`external_adapter` and must pass the same conformance battery.
"""
from __future__ import annotations

import importlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .errors import ConfigError, ConformanceError, DivergenceError
from .nn import (
    DTYPE,
    Adam,
    Parameter,
    check_finite,
    cross_entropy,
    dropout_mask,
    normal_init,
    softmax,
)

PAD, UNK, BOS, EOS, MASK = "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, BOS, EOS, MASK)


class MlmVocab:
    """Character-level vocabulary with fixed special-token ids."""

    def __init__(self, chars: Iterable[str]):
        self.tokens: list[str] = list(SPECIAL_TOKENS)
        self.id_of: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for ch in sorted(set(chars)):
            if ch in self.id_of:
                continue
            self.id_of[ch] = len(self.tokens)
            self.tokens.append(ch)

    pad_id, unk_id, bos_id, eos_id, mask_id = 0, 1, 2, 3, 4

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def encode_char(self, ch: str) -> int:
        return self.id_of.get(ch, self.unk_id)

    def encode_text(self, text: str) -> list[int]:
        return [self.encode_char(ch) for ch in text]


def build_vocab(texts: Iterable[str]) -> MlmVocab:
    chars: set[str] = set()
    for text in texts:
        chars.update(text)
    return MlmVocab(chars)


class MlmContract(ABC):
    """What the prompt pipeline requires of any masked LM."""

    vocab: MlmVocab
    d_model: int

    @abstractmethod
    def embed(self, token_ids: np.ndarray) -> np.ndarray:
        """Input-embedding rows for token ids, shape (n, d_model)."""

    @abstractmethod
    def embed_backward(self, token_ids: np.ndarray, grads: np.ndarray) -> None:
        """Accumulate gradients into the input-embedding rows."""

    @abstractmethod
    def forward(
        self,
        x: np.ndarray,
        pad_mask: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, object]:
        """Per-position vocab logits for embedded input (B, L, d_model)."""

    @abstractmethod
    def backward(self, cache: object, dlogits: np.ndarray) -> np.ndarray:
        """Backprop a cached forward; returns gradient w.r.t. the embedded input."""

    @abstractmethod
    def parameters(self) -> list[Parameter]:
        ...


# --- layers -----------------------------------------------------------------

class _LayerNorm:
    EPS = 1e-5

    def __init__(self, name: str, dim: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim, dtype=DTYPE))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim, dtype=DTYPE))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv_std
        y = xhat * self.gamma.value + self.beta.value
        return y, {"xhat": xhat, "inv_std": inv_std}

    def backward(self, cache: dict, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = cache["xhat"], cache["inv_std"]
        self.gamma.grad += (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
        self.beta.grad += dy.sum(axis=tuple(range(dy.ndim - 1)))
        dxhat = dy * self.gamma.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv_std * (dxhat - m1 - xhat * m2)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class _Attention:
    def __init__(self, name: str, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        def lin(tag: str) -> tuple[Parameter, Parameter]:
            return (
                Parameter(f"{name}.W{tag}", normal_init(rng, (d_model, d_model))),
                Parameter(f"{name}.b{tag}", np.zeros(d_model, dtype=DTYPE)),
            )
        self.Wq, self.bq = lin("q")
        self.Wk, self.bk = lin("k")
        self.Wv, self.bv = lin("v")
        self.Wo, self.bo = lin("o")

    def _split(self, x: np.ndarray) -> np.ndarray:
        B, L, _ = x.shape
        return x.reshape(B, L, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        B, H, L, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)

    def forward(self, x, key_mask, drop_p, rng) -> tuple[np.ndarray, dict]:
        q = self._split(x @ self.Wq.value + self.bq.value)
        k = self._split(x @ self.Wk.value + self.bk.value)
        v = self._split(x @ self.Wv.value + self.bv.value)
        scale = 1.0 / np.sqrt(self.d_head)
        scores = (q @ k.swapaxes(-1, -2)) * scale
        scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
        attn = softmax(scores, axis=-1)
        dmask = None
        if drop_p > 0.0:
            dmask = dropout_mask(rng, attn.shape, drop_p)
            attn = attn * dmask
        ctx = attn @ v
        merged = self._merge(ctx)
        out = merged @ self.Wo.value + self.bo.value
        cache = {"x": x, "q": q, "k": k, "v": v, "attn": attn,
                 "merged": merged, "dmask": dmask, "scale": scale}
        return out, cache

    def backward(self, cache: dict, dout: np.ndarray) -> np.ndarray:
        x, q, k, v = cache["x"], cache["q"], cache["k"], cache["v"]
        attn, scale = cache["attn"], cache["scale"]
        B, L, d = x.shape
        self.Wo.grad += cache["merged"].reshape(-1, d).T @ dout.reshape(-1, d)
        self.bo.grad += dout.sum(axis=(0, 1))
        dctx = self._split(dout @ self.Wo.value.T)
        dattn = dctx @ v.swapaxes(-1, -2)
        dv = attn.swapaxes(-1, -2) @ dctx
        if cache["dmask"] is not None:
            # attn in cache is post-dropout; recover the softmax output
            dattn = dattn * cache["dmask"]
            sm = np.where(cache["dmask"] > 0, attn / np.maximum(cache["dmask"], 1e-300), 0.0)
        else:
            sm = attn
        dscores = sm * (dattn - (dattn * sm).sum(axis=-1, keepdims=True))
        dq = (dscores @ k) * scale
        dk = (dscores.swapaxes(-1, -2) @ q) * scale
        dx = np.zeros_like(x)
        for dmat, W, b in ((dq, self.Wq, self.bq), (dk, self.Wk, self.bk), (dv, self.Wv, self.bv)):
            dflat = self._merge(dmat)
            W.grad += x.reshape(-1, d).T @ dflat.reshape(-1, d)
            b.grad += dflat.sum(axis=(0, 1))
            dx += dflat @ W.value.T
        return dx

    def parameters(self) -> list[Parameter]:
        return [self.Wq, self.bq, self.Wk, self.bk, self.Wv, self.bv, self.Wo, self.bo]


class _Ffn:
    def __init__(self, name: str, d_model: int, ff_dim: int, rng: np.random.Generator):
        self.W1 = Parameter(f"{name}.W1", normal_init(rng, (d_model, ff_dim)))
        self.b1 = Parameter(f"{name}.b1", np.zeros(ff_dim, dtype=DTYPE))
        self.W2 = Parameter(f"{name}.W2", normal_init(rng, (ff_dim, d_model)))
        self.b2 = Parameter(f"{name}.b2", np.zeros(d_model, dtype=DTYPE))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        pre = x @ self.W1.value + self.b1.value
        u = np.maximum(pre, 0.0)
        out = u @ self.W2.value + self.b2.value
        return out, {"x": x, "u": u}

    def backward(self, cache: dict, dout: np.ndarray) -> np.ndarray:
        x, u = cache["x"], cache["u"]
        d = x.shape[-1]
        ff = u.shape[-1]
        self.W2.grad += u.reshape(-1, ff).T @ dout.reshape(-1, d)
        self.b2.grad += dout.sum(axis=(0, 1))
        du = dout @ self.W2.value.T
        du *= u > 0
        self.W1.grad += x.reshape(-1, d).T @ du.reshape(-1, ff)
        self.b1.grad += du.sum(axis=(0, 1))
        return du @ self.W1.value.T

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.b1, self.W2, self.b2]


class _Block:
    """Post-norm transformer encoder block: attention and feed-forward sublayers."""

    def __init__(self, name: str, d_model: int, n_heads: int, ff_dim: int, rng):
        self.attn = _Attention(f"{name}.attn", d_model, n_heads, rng)
        self.ln1 = _LayerNorm(f"{name}.ln1", d_model)
        self.ffn = _Ffn(f"{name}.ffn", d_model, ff_dim, rng)
        self.ln2 = _LayerNorm(f"{name}.ln2", d_model)

    def forward(self, x, key_mask, drop_p, rng) -> tuple[np.ndarray, dict]:
        a, attn_cache = self.attn.forward(x, key_mask, drop_p, rng)
        amask = None
        if drop_p > 0.0:
            amask = dropout_mask(rng, a.shape, drop_p)
            a = a * amask
        h1, ln1_cache = self.ln1.forward(x + a)
        f, ffn_cache = self.ffn.forward(h1)
        fmask = None
        if drop_p > 0.0:
            fmask = dropout_mask(rng, f.shape, drop_p)
            f = f * fmask
        h2, ln2_cache = self.ln2.forward(h1 + f)
        caches = {"attn": attn_cache, "ln1": ln1_cache, "ffn": ffn_cache,
                  "ln2": ln2_cache, "amask": amask, "fmask": fmask}
        return h2, caches

    def backward(self, caches: dict, dh2: np.ndarray) -> np.ndarray:
        dres2 = self.ln2.backward(caches["ln2"], dh2)
        df = dres2 if caches["fmask"] is None else dres2 * caches["fmask"]
        dh1 = dres2 + self.ffn.backward(caches["ffn"], df)
        dres1 = self.ln1.backward(caches["ln1"], dh1)
        da = dres1 if caches["amask"] is None else dres1 * caches["amask"]
        return dres1 + self.attn.backward(caches["attn"], da)

    def parameters(self) -> list[Parameter]:
        return [*self.attn.parameters(), *self.ln1.parameters(),
                *self.ffn.parameters(), *self.ln2.parameters()]


@dataclass(frozen=True)
class ToyMlmConfig:
    d_model: int = 128
    n_blocks: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    max_len: int = 128
    dropout: float = 0.3
    tie_output: bool = False

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("d_model", "n_blocks", "n_heads", "ff_dim", "max_len", "dropout", "tie_output")}


class ToyMlm(MlmContract):
    """Character-level transformer encoder, trained from scratch on CPU.

    Stands in for a large pretrained medical MLM so the full pipeline is
    runnable at desk scale.  Deterministic under fixed parameters, inputs,
    and dropout rng.
    """

    def __init__(self, vocab: MlmVocab, config: ToyMlmConfig, seed: int | np.random.SeedSequence):
        self.vocab = vocab
        self.config = config
        self.d_model = config.d_model
        rng = np.random.default_rng(seed)
        V = len(vocab)
        self.tok_embed = Parameter("mlm.tok_embed", normal_init(rng, (V, config.d_model)))
        self.pos_embed = Parameter("mlm.pos_embed", normal_init(rng, (config.max_len, config.d_model)))
        self.blocks = [
            _Block(f"mlm.block{i}", config.d_model, config.n_heads, config.ff_dim, rng)
            for i in range(config.n_blocks)
        ]
        if config.tie_output:
            self.out_W = None
        else:
            self.out_W = Parameter("mlm.out_W", normal_init(rng, (config.d_model, V)))
        self.out_b = Parameter("mlm.out_b", np.zeros(V, dtype=DTYPE))

    def parameters(self) -> list[Parameter]:
        params = [self.tok_embed, self.pos_embed]
        for block in self.blocks:
            params.extend(block.parameters())
        if self.out_W is not None:
            params.append(self.out_W)
        params.append(self.out_b)
        return params

    def embed(self, token_ids: np.ndarray) -> np.ndarray:
        return self.tok_embed.value[np.asarray(token_ids, dtype=np.int64)]

    def embed_backward(self, token_ids: np.ndarray, grads: np.ndarray) -> None:
        np.add.at(self.tok_embed.grad, np.asarray(token_ids, dtype=np.int64), grads)

    def forward(self, x, pad_mask, train=False, rng=None):
        B, L, d = x.shape
        if d != self.d_model:
            raise ConfigError(f"embedded input dim {d} != d_model {self.d_model}")
        if L > self.config.max_len:
            raise ConfigError(f"sequence length {L} exceeds max_len {self.config.max_len}")
        drop_p = self.config.dropout if train else 0.0
        if drop_p > 0.0 and rng is None:
            raise ConfigError("training forward with dropout requires an rng")
        h = x + self.pos_embed.value[:L]
        in_mask = None
        if drop_p > 0.0:
            in_mask = dropout_mask(rng, h.shape, drop_p)
            h = h * in_mask
        block_caches = []
        for block in self.blocks:
            h, bc = block.forward(h, pad_mask, drop_p, rng)
            block_caches.append(bc)
        proj = self.out_W.value if self.out_W is not None else self.tok_embed.value.T
        logits = h @ proj + self.out_b.value
        cache = {"h": h, "in_mask": in_mask, "blocks": block_caches, "L": L}
        return logits, cache

    def backward(self, cache, dlogits):
        h = cache["h"]
        d = self.d_model
        V = len(self.vocab)
        proj = self.out_W.value if self.out_W is not None else self.tok_embed.value.T
        dproj = h.reshape(-1, d).T @ dlogits.reshape(-1, V)
        if self.out_W is not None:
            self.out_W.grad += dproj
        else:
            self.tok_embed.grad += dproj.T
        self.out_b.grad += dlogits.sum(axis=(0, 1))
        dh = dlogits @ proj.T
        for block, bc in zip(reversed(self.blocks), reversed(cache["blocks"])):
            dh = block.backward(bc, dh)
        if cache["in_mask"] is not None:
            dh = dh * cache["in_mask"]
        self.pos_embed.grad[: cache["L"]] += dh.sum(axis=0)
        return dh


# --- contract-level operations ------------------------------------------------

def mask_distribution(model: MlmContract, embedded: np.ndarray, mask_index: int) -> np.ndarray:
    """Probability over the vocabulary of each token filling the mask slot."""
    L = embedded.shape[0]
    if not 0 <= mask_index < L:
        raise ConfigError(f"mask index {mask_index} out of range for length {L}")
    pad_mask = np.ones((1, L), dtype=bool)
    logits, _ = model.forward(embedded[None, :, :], pad_mask, train=False)
    row = logits[0, mask_index]
    if not np.all(np.isfinite(row)):
        raise DivergenceError("non-finite logits at mask position")
    return softmax(row)


class TrainableBatch(Protocol):
    """What train_step needs from a rendered batch."""

    x: np.ndarray
    pad_mask: np.ndarray
    mask_index: np.ndarray
    gold_ids: np.ndarray

    def dispatch_input_grads(self, dX: np.ndarray) -> None: ...


def train_step(
    model: MlmContract,
    batch: TrainableBatch,
    optimizer: Adam,
    rng: np.random.Generator | None = None,
) -> float:
    """One joint update of MLM, soft-token, and knowledge parameters.

    Cross-entropy is taken at each example's mask position against its
    gold label word; input-side gradients are routed back through the
    batch to embedding rows, soft vectors, and the knowledge encoder.
    """
    n = batch.x.shape[0]
    if n == 0:
        raise ConfigError("empty training batch")
    logits, cache = model.forward(batch.x, batch.pad_mask, train=True, rng=rng)
    rows = logits[np.arange(n), batch.mask_index]
    loss, drows = cross_entropy(rows, batch.gold_ids)
    dlogits = np.zeros_like(logits)
    dlogits[np.arange(n), batch.mask_index] = drows
    dX = model.backward(cache, dlogits)
    batch.dispatch_input_grads(dX)
    optimizer.step()
    optimizer.zero_grad()
    return loss


# --- external adapters ----------------------------------------------------------

@dataclass
class AdapterConfig:
    """Locator for an externally supplied MLM factory.

    `factory` is a `module:callable` dotted path; the callable receives
    `kwargs` and must return an object satisfying MlmContract, including
    input-embedding injection (forward over embedded vectors).
    """

    factory: str
    kwargs: dict = field(default_factory=dict)


REQUIRED_ATTRS = ("vocab", "d_model", "embed", "embed_backward", "forward", "backward", "parameters")


def check_contract(model: MlmContract) -> None:
    """Conformance battery: shapes, softmax normalization, determinism."""
    for attr in REQUIRED_ATTRS:
        if not hasattr(model, attr):
            raise ConformanceError(f"adapter lacks required attribute {attr!r}")
    vocab = model.vocab
    for token in SPECIAL_TOKENS:
        if token not in vocab:
            raise ConformanceError(f"adapter vocabulary lacks {token!r}")
    rng = np.random.default_rng(0)
    L = 5
    ids = np.array([vocab.bos_id, vocab.mask_id, vocab.eos_id], dtype=np.int64)
    rows = model.embed(ids)
    if rows.shape != (3, model.d_model):
        raise ConformanceError(f"embed returned shape {rows.shape}, expected (3, {model.d_model})")
    x = rng.normal(0.0, 0.1, size=(2, L, model.d_model)).astype(DTYPE)
    pad_mask = np.ones((2, L), dtype=bool)
    pad_mask[1, -1] = False
    logits, _ = model.forward(x, pad_mask, train=False)
    if logits.shape[:2] != (2, L):
        raise ConformanceError(f"forward changed sequence shape: {logits.shape}")
    probs = softmax(logits, axis=-1)
    sums = probs.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ConformanceError("softmax over logits does not normalize within 1e-6")
    logits2, _ = model.forward(x, pad_mask, train=False)
    if not np.array_equal(logits, logits2):
        raise ConformanceError("forward is not deterministic in eval mode")


def external_adapter(config: AdapterConfig | dict) -> MlmContract:
    """Instantiate an external MLM through its factory and verify the contract."""
    if isinstance(config, dict):
        config = AdapterConfig(**config)
    if ":" not in config.factory:
        raise ConfigError(f"adapter factory must be 'module:callable', got {config.factory!r}")
    mod_name, func_name = config.factory.split(":", 1)
    try:
        factory = getattr(importlib.import_module(mod_name), func_name)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load adapter factory {config.factory!r}: {exc}") from None
    model = factory(**config.kwargs)
    check_contract(model)
    return model
