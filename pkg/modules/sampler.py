"""
Rectified-flow Euler sampling over the concatenated [reference | target] tokens,
with inpainting-style token blending after every step.

Noising follows x_t = (1 - t) * x_0 + t * eps and sampling integrates from t=1 to t=0.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .attention import MechanismFlags, ShiftConfig, compute_alphas, head_activation
from .layout import BinaryMask, LatentGrid, flatten_tokens, split_icl_grid, unflatten_tokens
from .numerics import DTYPE, ShapeError, frobenius_norm


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10
    seed: int = 0
    blend_enabled: bool = True
    literal_blend: bool = False

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    @property
    def schedule(self):
        """Uniform timesteps 1 = t_T > ... > t_0 = 0"""
        return [float(t) for t in np.linspace(1.0, 0.0, self.steps + 1)]


@dataclass
class DenoiseState:
    w: np.ndarray           # (L_c + L_s, channels)
    t: float
    mask: BinaryMask        # extended mask over the concatenated grid
    noise: np.ndarray       # fixed per-run eps
    clean: np.ndarray       # clean input tokens I_in
    ref_width: int          # mask columns covering the reference
    mask_tokens: np.ndarray = field(init=False, repr=False)  # extended mask in sequence order

    def __post_init__(self):
        if not (self.w.shape == self.noise.shape == self.clean.shape):
            raise ShapeError(f"state shapes differ: w {self.w.shape}, noise {self.noise.shape}, clean {self.clean.shape}")
        ref, target = split_icl_grid(LatentGrid(self.mask.bits[:, :, None]), self.ref_width)
        if ref.data.any():
            raise ValueError("extended mask must be zero over the reference")
        self.mask_tokens = np.concatenate([flatten_tokens(ref), flatten_tokens(target)])[:, 0].astype(np.uint8)
        if self.mask_tokens.shape != (self.w.shape[0],):
            raise ShapeError(f"mask has {self.mask_tokens.shape} entries for {self.w.shape[0]} tokens")


# -----------------------------------------------
def noised_latent(clean, eps, t):
    clean = np.asarray(clean, dtype=DTYPE)
    eps = np.asarray(eps, dtype=DTYPE)
    if clean.shape != eps.shape:
        raise ShapeError(f"clean {clean.shape} and noise {eps.shape} differ")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return clean.copy()
    if t == 1.0:
        return eps.copy()
    return (DTYPE(1.0 - t) * clean + DTYPE(t) * eps).astype(DTYPE)


def euler_step(state, velocity, dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return (state.w - DTYPE(dt) * np.asarray(velocity, dtype=DTYPE)).astype(DTYPE)


def token_blend(w_out, state, t_next, literal=False):
    """
    Keep masked tokens from the model output, replace background tokens with the
    clean input noised to t_next. `literal` adds the noised (1-M) * I_in to
    M * w_out without masking the noised term.
    """
    w_out = np.asarray(w_out, dtype=DTYPE)
    if w_out.shape != state.clean.shape:
        raise ShapeError(f"w_out {w_out.shape} does not match state tokens {state.clean.shape}")
    keep = state.mask_tokens.astype(bool)[:, None]
    if literal:
        masked_clean = np.where(keep, DTYPE(0.0), state.clean)
        noised = noised_latent(masked_clean, state.noise, t_next)
        return np.where(keep, noised + w_out, noised).astype(DTYPE)
    return np.where(keep, w_out, noised_latent(state.clean, state.noise, t_next)).astype(DTYPE)


# -----------------------------------------------
# Per step and block: alphas, head activations and the shift magnitude
@dataclass
class TraceRecord:
    step: int
    block: int
    alphas: np.ndarray        # (heads, L_s, 3)
    activation_raw: np.ndarray
    activation_normalized: np.ndarray
    shift_magnitude: float


@dataclass
class AttentionTrace:
    records: List[TraceRecord] = field(default_factory=list)
    step: int = 0

    def __call__(self, block, partition, hidden):
        act = head_activation(partition)
        magnitude = frobenius_norm(hidden.shift) if hidden.shift is not None else 0.0
        self.records.append(
            TraceRecord(
                step=self.step,
                block=block,
                alphas=compute_alphas(partition).values.copy(),
                activation_raw=act.raw.copy(),
                activation_normalized=act.normalized.copy(),
                shift_magnitude=magnitude,
            )
        )

    def first(self):
        return self.records[0] if self.records else None

    def alpha_tensor(self):
        steps = max(r.step for r in self.records) + 1
        blocks = max(r.block for r in self.records) + 1
        out = np.zeros((steps, blocks) + self.records[0].alphas.shape, dtype=DTYPE)
        for r in self.records:
            out[r.step, r.block] = r.alphas
        return out

    def activation_tensor(self):
        steps = max(r.step for r in self.records) + 1
        blocks = max(r.block for r in self.records) + 1
        heads = self.records[0].activation_raw.shape[0]
        out = np.zeros((steps, blocks, heads, 2), dtype=DTYPE)
        for r in self.records:
            out[r.step, r.block, :, 0] = r.activation_raw
            out[r.step, r.block, :, 1] = r.activation_normalized
        return out


@dataclass(frozen=True)
class MechanismSchedule:
    """Which mechanisms run in which block at which step (None = everywhere)"""

    flags: MechanismFlags = MechanismFlags()
    enabled_blocks: Optional[Sequence[int]] = None
    enabled_steps: Optional[Sequence[int]] = None

    def for_step(self, step):
        active = self.flags.any and (self.enabled_steps is None or step in self.enabled_steps)

        def flags_for_block(block):
            if active and (self.enabled_blocks is None or block in self.enabled_blocks):
                return self.flags
            return MechanismFlags()

        return flags_for_block


@dataclass
class SamplingResult:
    generated: LatentGrid   # I_gen, the target segment
    full_grid: LatentGrid   # [I_c; I_gen]
    tokens: np.ndarray      # final image tokens in sequence order


def initial_state(inputs, cfg):
    clean = inputs.clean_tokens()
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(clean.shape).astype(DTYPE)
    return DenoiseState(
        w=noise.copy(),
        t=1.0,
        mask=inputs.extended_mask(),
        noise=noise,
        clean=clean,
        ref_width=inputs.reference.width,
    )


def run_sampling(inputs, model, cfg, shift=ShiftConfig(), schedule=MechanismSchedule(), trace=None, logger=None):
    """Full loop from seeded noise at t=1 down to t=0; returns the generated target grid"""
    state = initial_state(inputs, cfg)
    timesteps = cfg.schedule

    for step, (t, t_next) in enumerate(zip(timesteps[:-1], timesteps[1:])):
        if trace is not None:
            trace.step = step
        velocity = model(state.w, t, shift, schedule.for_step(step), trace)
        w_next = euler_step(state, velocity, t - t_next)
        if cfg.blend_enabled:
            w_next = token_blend(w_next, state, t_next, literal=cfg.literal_blend)
        state.w, state.t = w_next, t_next
        if logger is not None:
            logger.debug(f"- step {step + 1}/{cfg.steps}: t {t:.4f} -> {t_next:.4f}")

    layout = inputs.layout
    ref_grid = unflatten_tokens(state.w[: layout.len_ref], inputs.reference.height, inputs.reference.width)
    generated = unflatten_tokens(state.w[layout.len_ref :], inputs.target.height, inputs.target.width)
    full_grid = LatentGrid(np.concatenate([ref_grid.data, generated.data], axis=1))
    return SamplingResult(generated=generated, full_grid=full_grid, tokens=state.w.copy())
