"""
Joint multi-head attention over [prompt | reference | target] and the in-context
mechanisms built on top of it: the nine-block partition of the attention map,
the alpha decomposition of the target hidden states, latent feature shift
injection and head-wise reweighting of the query component.

Per-head tensors are laid out as (heads, tokens, head_dim).
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .layout import SEGMENTS
from .numerics import DTYPE, ShapeError, as_tensor, gelu, layer_norm, matmul, row_softmax, row_sum


@dataclass(frozen=True)
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    num_heads: int
    scale: Optional[float] = None  # None -> 1/sqrt(head_dim); 1.0 is the unscaled form

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = as_tensor(getattr(self, name), name)
            if w.shape[0] != w.shape[1]:
                raise ShapeError(f"{name} must be square, got {w.shape}")
            if not np.isfinite(w).all():
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, w)
        dims = {getattr(self, name).shape[0] for name in ("w_q", "w_k", "w_v", "w_o")}
        if len(dims) != 1:
            raise ShapeError(f"attention matrices disagree on model dim: {sorted(dims)}")
        if self.num_heads < 1 or self.model_dim % self.num_heads != 0:
            raise ShapeError(f"model dim {self.model_dim} is not divisible by {self.num_heads} heads")
        if self.scale is not None and not self.scale > 0:
            raise ValueError(f"attention scale must be positive, got {self.scale}")

    @classmethod
    def random(cls, rng, model_dim, num_heads, scale=None):
        std = 1.0 / np.sqrt(model_dim)
        mats = [rng.standard_normal((model_dim, model_dim)) * std for _ in range(4)]
        return cls(*[m.astype(DTYPE) for m in mats], num_heads=num_heads, scale=scale)

    @property
    def model_dim(self):
        return self.w_q.shape[0]

    @property
    def head_dim(self):
        return self.model_dim // self.num_heads

    @property
    def softmax_scale(self):
        return float(self.scale) if self.scale is not None else 1.0 / float(np.sqrt(self.head_dim))


@dataclass(frozen=True)
class ShiftConfig:
    """Shift strengths: alpha1 scales the prompt term, alpha2 the reference term"""

    alpha1: float = 0.0
    alpha2: float = 0.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite value >= 0, got {value}")
            object.__setattr__(self, name, value)

    @property
    def is_zero(self):
        return self.alpha1 == 0.0 and self.alpha2 == 0.0


@dataclass(frozen=True)
class MechanismFlags:
    shift: bool = False
    reweight: bool = False

    @property
    def any(self):
        return self.shift or self.reweight


@dataclass(frozen=True)
class AttentionPartition:
    """Jointly normalized attention map (heads, L, L) viewed as nine segment blocks"""

    weights: np.ndarray
    layout: object

    def block(self, i, j):
        return self.weights[:, self.layout.slice(i), self.layout.slice(j)]

    @property
    def blocks(self):
        return {(i, j): self.block(i, j) for i in SEGMENTS for j in SEGMENTS}

    @property
    def num_heads(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class AlphaTriplet:
    """Per head and target query row: softmax mass on the prompt, reference and target keys"""

    values: np.ndarray  # (heads, L_s, 3)

    @property
    def alpha_p(self):
        return self.values[..., 0:1]

    @property
    def alpha_c(self):
        return self.values[..., 1:2]

    @property
    def alpha_s(self):
        return self.values[..., 2:3]


@dataclass(frozen=True)
class HeadActivation:
    raw: np.ndarray
    normalized: np.ndarray

    @classmethod
    def from_raw(cls, raw):
        raw = np.asarray(raw, dtype=np.float64).reshape(-1)
        lo, hi = raw.min(), raw.max()
        if hi == lo:
            # 0/0 min-max: every head keeps full weight, reweighting becomes a no-op
            normalized = np.ones_like(raw)
        else:
            normalized = (raw - lo) / (hi - lo)
        return cls(raw=raw, normalized=normalized)


@dataclass(frozen=True)
class HiddenStates:
    """
    Attention output of one block.

    `heads` holds the per-head hidden states before the output projection (h_p, h_c and
    h_s are row slices of it). `output` is the projected full sequence. The decomposed
    target components and alphas are present once `decompose_hs` has run; `shift`
    accumulates the feature shift added to the target rows.
    """

    heads: np.ndarray
    values: np.ndarray
    layout: object
    projection: np.ndarray
    output: np.ndarray
    demo_p: Optional[np.ndarray] = None
    demo_c: Optional[np.ndarray] = None
    query: Optional[np.ndarray] = None
    alphas: Optional[AlphaTriplet] = None
    shift: Optional[np.ndarray] = field(default=None)

    @property
    def h_p(self):
        return self.heads[:, self.layout.slice("p")]

    @property
    def h_c(self):
        return self.heads[:, self.layout.slice("c")]

    @property
    def h_s(self):
        return self.heads[:, self.layout.slice("s")]

    @property
    def num_heads(self):
        return self.heads.shape[0]

    @property
    def is_decomposed(self):
        return self.alphas is not None

    def recombine(self):
        """alpha_p * h(demo_p) + alpha_c * h(demo_c) + alpha_s * h(query)"""
        if not self.is_decomposed:
            raise ValueError("hidden states carry no decomposition; use decompose_hs")
        a = self.alphas
        return (a.alpha_p * self.demo_p + a.alpha_c * self.demo_c + a.alpha_s * self.query).astype(DTYPE)

    def with_target(self, h_s, **changes):
        heads = self.heads.copy()
        heads[:, self.layout.slice("s")] = h_s
        output = matmul(merge_heads(heads), self.projection)
        return replace(self, heads=heads, output=output, **changes)


def split_heads(t, num_heads):
    rows, dim = t.shape
    return np.ascontiguousarray(t.reshape(rows, num_heads, dim // num_heads).transpose(1, 0, 2))


def merge_heads(t):
    heads, rows, head_dim = t.shape
    return np.ascontiguousarray(t.transpose(1, 0, 2).reshape(rows, heads * head_dim))


def _key_bias(layout, masked_segments):
    bias = np.zeros(layout.total, dtype=DTYPE)
    for segment in masked_segments:
        bias[layout.slice(segment)] = -np.inf
    return bias


def _check_input(X, layout, w):
    X = as_tensor(X, "X")
    if X.shape != (layout.total, w.model_dim):
        raise ShapeError(f"X has shape {X.shape}, expected ({layout.total}, {w.model_dim})")
    return X


# -----------------------------------------------
# Shared forward pass: per-head projections, joint softmax map and hidden states
def _attend(X, layout, w, masked_segments=()):
    X = _check_input(X, layout, w)
    q = split_heads(matmul(X, w.w_q), w.num_heads)
    k = split_heads(matmul(X, w.w_k), w.num_heads)
    v = split_heads(matmul(X, w.w_v), w.num_heads)

    logits = matmul(q, k.transpose(0, 2, 1))
    if masked_segments:
        logits = logits + _key_bias(layout, masked_segments)
    probs = row_softmax(logits, w.softmax_scale)
    heads = matmul(probs, v)
    return q, k, v, probs, heads


def _hidden_states(heads, v, layout, w):
    return HiddenStates(
        heads=heads,
        values=v,
        layout=layout,
        projection=w.w_o,
        output=matmul(merge_heads(heads), w.w_o),
        shift=np.zeros((w.num_heads, layout.len_target, w.head_dim), dtype=DTYPE),
    )


def joint_attention(X, layout, w, masked_segments=()):
    _, _, v, _, heads = _attend(X, layout, w, masked_segments)
    return _hidden_states(heads, v, layout, w)


def partition_attention(X, layout, w, masked_segments=()):
    _, _, _, probs, _ = _attend(X, layout, w, masked_segments)
    return AttentionPartition(probs, layout)


def compute_alphas(partition):
    values = [row_sum(partition.block("s", seg), np.float64).astype(DTYPE) for seg in SEGMENTS]
    return AlphaTriplet(np.concatenate(values, axis=-1))


# -----------------------------------------------
# Segment-local attention of the target queries against one segment's keys/values
def _segment_attention(q_s, k, v, layout, segment, scale, masked):
    sl = layout.slice(segment)
    logits = matmul(q_s, k[:, sl].transpose(0, 2, 1))
    if masked:
        logits = np.full_like(logits, -np.inf)
    return matmul(row_softmax(logits, scale), v[:, sl])


def _decompose(hidden, q, k, v, partition, w, masked_segments=()):
    layout = hidden.layout
    q_s = q[:, layout.slice("s")]
    parts = {
        segment: _segment_attention(q_s, k, v, layout, segment, w.softmax_scale, segment in masked_segments)
        for segment in SEGMENTS
    }
    return replace(
        hidden,
        demo_p=parts["p"],
        demo_c=parts["c"],
        query=parts["s"],
        alphas=compute_alphas(partition),
    )


def decompose_hs(X, layout, w, masked_segments=()):
    q, k, v, probs, heads = _attend(X, layout, w, masked_segments)
    hidden = _hidden_states(heads, v, layout, w)
    return _decompose(hidden, q, k, v, AttentionPartition(probs, layout), w, masked_segments)


# -----------------------------------------------
# Feature shift: h_s + alpha1 * A_sp v_p + alpha2 * A_sc v_c, per head, before W_o
def shift_terms(partition, values):
    layout = partition.layout
    prompt_term = matmul(partition.block("s", "p"), values[:, layout.slice("p")])
    ref_term = matmul(partition.block("s", "c"), values[:, layout.slice("c")])
    return prompt_term, ref_term


def shift_inject(hidden, partition, values=None, cfg=ShiftConfig()):
    if cfg.is_zero:
        return hidden
    values = hidden.values if values is None else values
    prompt_term, ref_term = shift_terms(partition, values)

    delta = np.zeros_like(hidden.h_s)
    if cfg.alpha1 != 0.0:
        delta = delta + DTYPE(cfg.alpha1) * prompt_term
    if cfg.alpha2 != 0.0:
        delta = delta + DTYPE(cfg.alpha2) * ref_term

    shift = delta if hidden.shift is None else hidden.shift + delta
    return hidden.with_target(hidden.h_s + delta, shift=shift)


def head_activation(partition):
    """Entry sum of the prompt->target block A_ps per head, min-max normalized over heads"""
    block = partition.block("p", "s").astype(np.float64)
    return HeadActivation.from_raw(block.sum(axis=(1, 2)))


# -----------------------------------------------
# Scale each head's h(query) component by its normalized activation; the demo
# components and alphas stay as they are. Heads with weight 1 are left untouched
def reweight_query(hidden, act):
    if not hidden.is_decomposed:
        raise ValueError("reweight_query needs decomposed hidden states")
    scale = np.asarray(act.normalized, dtype=DTYPE).reshape(-1)
    if scale.shape[0] != hidden.num_heads:
        raise ShapeError(f"{scale.shape[0]} head weights for {hidden.num_heads} heads")

    changed = scale != DTYPE(1.0)
    if not changed.any():
        return hidden

    h_s = hidden.h_s.copy()
    query = hidden.query.copy()
    for h in np.flatnonzero(changed):
        h_s[h] = h_s[h] + hidden.alphas.alpha_s[h] * (scale[h] - DTYPE(1.0)) * hidden.query[h]
        query[h] = scale[h] * hidden.query[h]
    return hidden.with_target(h_s, query=query)


# -----------------------------------------------
# One MM-DiT block: norm -> joint attention (+ mechanisms) -> residual -> norm -> FFN -> residual
@dataclass(frozen=True)
class BlockWeights:
    attention: AttentionWeights
    norm1_gain: np.ndarray
    norm1_bias: np.ndarray
    norm2_gain: np.ndarray
    norm2_bias: np.ndarray
    ff_in: np.ndarray
    ff_out: np.ndarray

    @classmethod
    def random(cls, rng, model_dim, num_heads, ffn_mult=4, scale=None):
        hidden = ffn_mult * model_dim
        return cls(
            attention=AttentionWeights.random(rng, model_dim, num_heads, scale),
            norm1_gain=np.ones(model_dim, dtype=DTYPE),
            norm1_bias=np.zeros(model_dim, dtype=DTYPE),
            norm2_gain=np.ones(model_dim, dtype=DTYPE),
            norm2_bias=np.zeros(model_dim, dtype=DTYPE),
            ff_in=(rng.standard_normal((model_dim, hidden)) / np.sqrt(model_dim)).astype(DTYPE),
            ff_out=(rng.standard_normal((hidden, model_dim)) / np.sqrt(hidden)).astype(DTYPE),
        )


def feed_forward(x, block):
    return matmul(gelu(matmul(x, block.ff_in)), block.ff_out)


def block_forward(X, layout, block, cfg=ShiftConfig(), flags=MechanismFlags(), masked_segments=(), trace=None):
    """
    Returns the block output. `trace`, when given, is called as
    trace(partition, hidden) with the final hidden states of this block.
    """
    X = _check_input(X, layout, block.attention)
    w = block.attention

    normed = layer_norm(X, block.norm1_gain, block.norm1_bias)
    q, k, v, probs, heads = _attend(normed, layout, w, masked_segments)
    hidden = _hidden_states(heads, v, layout, w)

    partition = None
    if flags.any or trace is not None:
        partition = AttentionPartition(probs, layout)
    if flags.reweight:
        hidden = _decompose(hidden, q, k, v, partition, w, masked_segments)
        hidden = reweight_query(hidden, head_activation(partition))
    if flags.shift:
        hidden = shift_inject(hidden, partition, v, cfg)
    if trace is not None:
        trace(partition, hidden)

    x = X + hidden.output
    return (x + feed_forward(layer_norm(x, block.norm2_gain, block.norm2_bias), block)).astype(DTYPE)
