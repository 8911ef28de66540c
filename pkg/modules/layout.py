"""
In-context input layout: latent grids, masks, prompt tokens and the
[prompt | reference | target] token sequence they are flattened into.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .numerics import DTYPE, ShapeError

SEGMENTS = ("p", "c", "s")


@dataclass(frozen=True)
class LatentGrid:
    """Row-major latent grid of shape (height, width, channels)"""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if data.ndim != 3:
            raise ShapeError(f"LatentGrid data must be (height, width, channels), got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, height, width, channels):
        return cls(np.zeros((height, width, channels), dtype=DTYPE))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def num_tokens(self):
        return self.height * self.width


@dataclass(frozen=True)
class BinaryMask:
    """Per-token {0,1} mask over a token grid"""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ShapeError(f"BinaryMask must be (height, width), got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("BinaryMask values must be 0 or 1")
        object.__setattr__(self, "bits", np.ascontiguousarray(bits, dtype=np.uint8))

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def ones(cls, height, width):
        return cls(np.ones((height, width), dtype=np.uint8))

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def flat(self):
        return self.bits.reshape(-1).copy()


@dataclass(frozen=True)
class PromptTokens:
    """Prompt embeddings of shape (L_p, channels)"""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=DTYPE)
        if emb.ndim != 2:
            raise ShapeError(f"PromptTokens must be (count, channels), got shape {emb.shape}")
        if emb.shape[0] < 1:
            raise ShapeError("PromptTokens needs at least one token")
        if not np.isfinite(emb).all():
            raise ValueError("PromptTokens must be finite")
        object.__setattr__(self, "embeddings", emb)

    @property
    def count(self):
        return self.embeddings.shape[0]

    @property
    def channels(self):
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class TokenLayout:
    """Segment geometry of the concatenated sequence [prompt | reference | target]"""

    len_prompt: int
    len_ref: int
    len_target: int
    ref_dims: Optional[Tuple[int, int]] = None
    target_dims: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        for name in ("len_prompt", "len_ref", "len_target"):
            if int(getattr(self, name)) < 0:
                raise ShapeError(f"TokenLayout {name} must be >= 0, got {getattr(self, name)}")
        if self.total < 1:
            raise ShapeError("TokenLayout needs at least one token")

    @property
    def offsets(self):
        return (0, self.len_prompt, self.len_prompt + self.len_ref)

    @property
    def total(self):
        return self.len_prompt + self.len_ref + self.len_target

    @property
    def image_total(self):
        return self.len_ref + self.len_target

    def length(self, segment):
        return {"p": self.len_prompt, "c": self.len_ref, "s": self.len_target}[segment]

    def slice(self, segment):
        start = self.offsets[SEGMENTS.index(segment)]
        return slice(start, start + self.length(segment))


# -----------------------------------------------
# Side-by-side concatenation [I_c; I_s] along the width
def build_icl_input(reference, target):
    if reference.height != target.height or reference.channels != target.channels:
        raise ShapeError(
            f"reference {reference.data.shape} and target {target.data.shape} must share height and channels"
        )
    return LatentGrid(np.concatenate([reference.data, target.data], axis=1))


def split_icl_grid(grid, ref_width):
    """Inverse of build_icl_input"""
    if not 0 < ref_width < grid.width:
        raise ShapeError(f"reference width {ref_width} does not split a grid of width {grid.width}")
    return LatentGrid(grid.data[:, :ref_width]), LatentGrid(grid.data[:, ref_width:])


# -----------------------------------------------
# Extended mask M = [0; m]: zero over the reference, m over the target
def extend_mask(m, ref_dims):
    ref_height, ref_width = ref_dims
    if ref_height != m.height or ref_width < 1:
        raise ShapeError(f"mask {m.bits.shape} cannot be extended by a reference of dims {ref_dims}")
    zeros = np.zeros((ref_height, ref_width), dtype=np.uint8)
    return BinaryMask(np.concatenate([zeros, m.bits], axis=1))


def flatten_tokens(grid):
    return grid.data.reshape(grid.num_tokens, grid.channels).copy()


def unflatten_tokens(tokens, height, width):
    tokens = np.asarray(tokens, dtype=DTYPE)
    if tokens.ndim != 2 or tokens.shape[0] != height * width:
        raise ShapeError(f"cannot unflatten tokens of shape {tokens.shape} to a {height}x{width} grid")
    return LatentGrid(tokens.reshape(height, width, tokens.shape[1]).copy())


def icl_tokens(reference, target):
    """Image token rows of the sequence: reference raster first, then target raster"""
    return np.concatenate([flatten_tokens(reference), flatten_tokens(target)], axis=0)


def make_layout(prompt, ref, target):
    if not (prompt.channels == ref.channels == target.channels):
        raise ShapeError(
            f"channels differ: prompt {prompt.channels}, reference {ref.channels}, target {target.channels}"
        )
    if ref.num_tokens < 1:
        raise ShapeError("reference grid must not be empty")
    if target.num_tokens < 1:
        raise ShapeError("target grid must not be empty")
    return TokenLayout(
        prompt.count,
        ref.num_tokens,
        target.num_tokens,
        ref_dims=(ref.height, ref.width),
        target_dims=(target.height, target.width),
    )


# Zero reference tokens outside the subject (stand-in for background removal)
def isolate_subject(reference, reference_mask):
    if (reference_mask.height, reference_mask.width) != (reference.height, reference.width):
        raise ShapeError(
            f"reference mask {reference_mask.bits.shape} does not match reference grid {reference.data.shape[:2]}"
        )
    keep = reference_mask.bits[:, :, None].astype(DTYPE)
    return LatentGrid(reference.data * keep)


# -----------------------------------------------
# 2D sinusoidal position embedding for the image tokens. The reference occupies
# columns [0, w_c) and the target columns [w_c, w_c + w_s) of the concatenated grid
def _sinusoid(positions, dim):
    out = np.zeros((len(positions), dim), dtype=np.float64)
    half = dim // 2
    if half == 0:
        return out
    freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) / half)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    out[:, :half] = np.sin(angles)
    out[:, half : 2 * half] = np.cos(angles)
    return out


def positional_embedding(layout, dim):
    if layout.ref_dims is None or layout.target_dims is None:
        raise ShapeError("positional_embedding needs a layout built from grids")
    (ref_h, ref_w), (tgt_h, tgt_w) = layout.ref_dims, layout.target_dims

    rows, cols = [], []
    for height, width, col_offset in ((ref_h, ref_w, 0), (tgt_h, tgt_w, ref_w)):
        r, c = np.meshgrid(np.arange(height), np.arange(width) + col_offset, indexing="ij")
        rows.append(r.reshape(-1))
        cols.append(c.reshape(-1))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)

    row_dim = dim // 2
    emb = np.concatenate([_sinusoid(rows, row_dim), _sinusoid(cols, dim - row_dim)], axis=1)
    return emb.astype(DTYPE)


# -----------------------------------------------
# Everything one insertion run consumes, with the derived sequence pieces
@dataclass(frozen=True)
class InsertionInputs:
    prompt: PromptTokens
    reference: LatentGrid
    target: LatentGrid
    mask: BinaryMask
    reference_mask: Optional[BinaryMask] = None

    def __post_init__(self):
        if (self.mask.height, self.mask.width) != (self.target.height, self.target.width):
            raise ShapeError(f"mask {self.mask.bits.shape} does not match target grid {self.target.data.shape[:2]}")

    @property
    def subject(self):
        if self.reference_mask is None:
            return self.reference
        return isolate_subject(self.reference, self.reference_mask)

    @property
    def layout(self):
        return make_layout(self.prompt, self.reference, self.target)

    def icl_grid(self):
        return build_icl_input(self.subject, self.target)

    def extended_mask(self):
        return extend_mask(self.mask, (self.reference.height, self.reference.width))

    def clean_tokens(self):
        return icl_tokens(self.subject, self.target)

    def mask_tokens(self):
        """Extended mask per image token, in sequence order"""
        return np.concatenate([np.zeros(self.reference.num_tokens, dtype=np.uint8), self.mask.flat()])
