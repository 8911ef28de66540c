"""
Toy MM-DiT velocity network: prompt and fill-conditioned image tokens run through
a stack of joint-attention blocks, and a linear head reads a velocity for every
image token.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .attention import AttentionWeights, BlockWeights, MechanismFlags, ShiftConfig, block_forward
from .layout import positional_embedding
from .numerics import DTYPE, ShapeError, layer_norm, matmul
from .tensor_io import TensorFormatError, read_tensor, write_tensor


@dataclass(frozen=True)
class ModelWeights:
    input_proj: np.ndarray   # (2 * channels + 1, model_dim): [w | (1-M) clean | M]
    prompt_proj: np.ndarray  # (channels, model_dim)
    time_proj: np.ndarray    # (model_dim, model_dim)
    blocks: List[BlockWeights]
    final_gain: np.ndarray
    final_bias: np.ndarray
    head: np.ndarray         # (model_dim, channels)

    @property
    def model_dim(self):
        return self.time_proj.shape[0]

    @property
    def channels(self):
        return self.head.shape[1]

    @property
    def num_heads(self):
        return self.blocks[0].attention.num_heads


def _gaussian(rng, fan_in, fan_out):
    return (rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(DTYPE)


def init_weights(model_dim, heads, blocks, channels, ffn_mult=4, seed=0, attention_scale=None):
    """Seeded N(0, 1/fan_in) initializer; the draw order is fixed so a seed always gives the same model"""
    if model_dim % heads != 0:
        raise ShapeError(f"model_dim {model_dim} is not divisible by {heads} heads")
    rng = np.random.default_rng(seed)
    input_proj = _gaussian(rng, 2 * channels + 1, model_dim)
    prompt_proj = _gaussian(rng, channels, model_dim)
    time_proj = _gaussian(rng, model_dim, model_dim)
    stack = [BlockWeights.random(rng, model_dim, heads, ffn_mult, attention_scale) for _ in range(blocks)]
    head = _gaussian(rng, model_dim, channels)
    return ModelWeights(
        input_proj=input_proj,
        prompt_proj=prompt_proj,
        time_proj=time_proj,
        blocks=stack,
        final_gain=np.ones(model_dim, dtype=DTYPE),
        final_bias=np.zeros(model_dim, dtype=DTYPE),
        head=head,
    )


# -----------------------------------------------
# Weights on disk: one ICBT file per parameter
_TOP_LEVEL = ("input_proj", "prompt_proj", "time_proj", "final_gain", "final_bias", "head")
_BLOCK_ARRAYS = ("norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias", "ff_in", "ff_out")
_ATTENTION_ARRAYS = ("w_q", "w_k", "w_v", "w_o")


def save_weights(weights, weights_dir):
    weights_dir = Path(weights_dir)
    for name in _TOP_LEVEL:
        write_tensor(weights_dir / f"{name}.icbt", getattr(weights, name))
    for idx, block in enumerate(weights.blocks):
        for name in _BLOCK_ARRAYS:
            write_tensor(weights_dir / f"block{idx}_{name}.icbt", getattr(block, name))
        for name in _ATTENTION_ARRAYS:
            write_tensor(weights_dir / f"block{idx}_{name}.icbt", getattr(block.attention, name))
    return weights_dir


def _read_finite(path):
    value = read_tensor(path)
    if not np.isfinite(value).all():
        raise TensorFormatError(f"{path}: weights contain NaN or infinite values")
    return value


def load_weights(weights_dir, heads, blocks, attention_scale=None):
    weights_dir = Path(weights_dir)
    top = {name: _read_finite(weights_dir / f"{name}.icbt") for name in _TOP_LEVEL}
    stack = []
    for idx in range(blocks):
        arrays = {name: _read_finite(weights_dir / f"block{idx}_{name}.icbt") for name in _BLOCK_ARRAYS}
        attn = {name: _read_finite(weights_dir / f"block{idx}_{name}.icbt") for name in _ATTENTION_ARRAYS}
        stack.append(BlockWeights(attention=AttentionWeights(**attn, num_heads=heads, scale=attention_scale), **arrays))
    return ModelWeights(blocks=stack, **top)


def timestep_embedding(t, dim, max_period=10000.0):
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / max(half, 1))
    angles = float(t) * 1000.0 * freqs
    emb = np.concatenate([np.cos(angles), np.sin(angles)])
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb.astype(DTYPE)


class VelocityModel:
    """
    Velocity field v(w, t) over the image tokens of one insertion layout.

    Each image token enters as [w | (1-M) * clean | M] (inpainting-style fill
    conditioning), gets a 2D position embedding and the timestep embedding, and
    is joined with the projected prompt tokens before the block stack.
    """

    def __init__(self, weights, layout, prompt, clean_tokens, mask_tokens):
        self.weights = weights
        self.layout = layout
        self.positions = positional_embedding(layout, weights.model_dim)
        self.prompt_hidden = matmul(prompt.embeddings, weights.prompt_proj)

        mask_col = np.asarray(mask_tokens, dtype=DTYPE).reshape(-1, 1)
        clean = np.asarray(clean_tokens, dtype=DTYPE)
        if clean.shape[0] != layout.image_total or mask_col.shape[0] != layout.image_total:
            raise ShapeError(f"conditioning rows {clean.shape[0]}/{mask_col.shape[0]} != {layout.image_total} image tokens")
        self.conditioning = np.concatenate([(DTYPE(1.0) - mask_col) * clean, mask_col], axis=1)

    def embed(self, w, t):
        image_in = np.concatenate([np.asarray(w, dtype=DTYPE), self.conditioning], axis=1)
        image_hidden = matmul(image_in, self.weights.input_proj) + self.positions
        t_hidden = matmul(timestep_embedding(t, self.weights.model_dim)[None, :], self.weights.time_proj)
        return np.concatenate([self.prompt_hidden, image_hidden], axis=0) + t_hidden

    def __call__(self, w, t, cfg=ShiftConfig(), flags_for_block=None, trace=None):
        """
        flags_for_block(idx) -> MechanismFlags selects the mechanisms per block;
        trace(block_idx, partition, hidden) is forwarded from every block.
        """
        x = self.embed(w, t)
        for idx, block in enumerate(self.weights.blocks):
            flags = flags_for_block(idx) if flags_for_block is not None else MechanismFlags()
            block_trace = None
            if trace is not None:
                block_trace = lambda partition, hidden, idx=idx: trace(idx, partition, hidden)
            x = block_forward(x, self.layout, block, cfg, flags, trace=block_trace)

        image_rows = x[self.layout.len_prompt :]
        out = layer_norm(image_rows, self.weights.final_gain, self.weights.final_bias)
        return matmul(out, self.weights.head)
