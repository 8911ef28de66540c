import hashlib
from pathlib import Path

import numpy as np

from .layout import BinaryMask, InsertionInputs, LatentGrid, PromptTokens
from .numerics import DTYPE
from .tensor_io import TensorFormatError, read_tensor, write_tensor


class IdentityScoreError(ValueError):
    """Raised when a pooled region is empty or has zero norm"""


# Class for loading the tensors an insertion run needs (or synthesizing missing ones)
class InputObjects:
    def __init__(self, cfg, logger):
        self.logger = logger
        self.cfg = cfg

    # -----------------------------------------------
    # Load one tensor file if a path is configured, else return None
    def load_tensor(self, path, name):
        if not path:
            return None
        value = read_tensor(path)
        if not np.isfinite(value).all():
            raise TensorFormatError(f"{path}: {name} contains NaN or infinite values")
        self.logger.info(f"Loaded {name} {tuple(value.shape)} from {path}")
        return value

    # Masks are stored as float32 and must hold exactly 0 or 1
    def load_mask(self, path, name):
        value = self.load_tensor(path, name)
        if value is None:
            return None
        if not np.isin(value, (0.0, 1.0)).all():
            raise TensorFormatError(f"{path}: {name} values must be 0 or 1")
        return value.astype(np.uint8)

    # -----------------------------------------------
    # Assemble all inputs, falling back to seeded synthesis for anything not on disk
    def load_inputs(self):
        cfg = self.cfg
        synthetic = synthesize_inputs(cfg, cfg.seed)

        prompt = self.load_tensor(cfg.prompt_path, "prompt")
        reference = self.load_tensor(cfg.reference_path, "reference")
        reference_mask = self.load_mask(cfg.reference_mask_path, "reference mask")
        target = self.load_tensor(cfg.target_path, "target")
        mask = self.load_mask(cfg.mask_path, "mask")

        loaded = [v is not None for v in (prompt, reference, reference_mask, target, mask)]
        if not any(loaded):
            self.logger.info(f"No input paths configured - using seeded synthetic inputs (seed {cfg.seed})")
            return synthetic
        if not all(loaded):
            self.logger.info("Some input paths not configured - filling the gaps with seeded synthetic inputs")

        return InsertionInputs(
            prompt=PromptTokens(prompt) if prompt is not None else synthetic.prompt,
            reference=LatentGrid(reference) if reference is not None else synthetic.reference,
            target=LatentGrid(target) if target is not None else synthetic.target,
            mask=BinaryMask(mask) if mask is not None else synthetic.mask,
            reference_mask=(
                BinaryMask(reference_mask) if reference_mask is not None else synthetic.reference_mask
            ),
        )


# -----------------------------------------------------------
# Seeded synthetic inputs: a smooth background target with a masked rectangle,
# and a reference grid holding a distinct "subject" pattern on a dim background
def _smooth_field(rng, height, width, channels):
    base = rng.standard_normal((height + 2, width + 2, channels))
    smooth = (
        base[1:-1, 1:-1] * 4.0
        + base[:-2, 1:-1] + base[2:, 1:-1] + base[1:-1, :-2] + base[1:-1, 2:]
    ) / 8.0
    return smooth


def _centered_box(height, width):
    bits = np.zeros((height, width), dtype=np.uint8)
    top, left = height // 4, width // 4
    bits[top : max(top + 1, height - height // 4), left : max(left + 1, width - width // 4)] = 1
    return bits


def synthesize_inputs(cfg, seed):
    rng = np.random.default_rng(seed)
    c = cfg.channels

    prompt = rng.standard_normal((cfg.prompt_len, c))

    subject_code = rng.standard_normal(c)
    reference_mask = _centered_box(cfg.ref_height, cfg.ref_width)
    reference = 0.1 * _smooth_field(rng, cfg.ref_height, cfg.ref_width, c)
    reference += reference_mask[:, :, None] * (subject_code + 0.2 * rng.standard_normal((cfg.ref_height, cfg.ref_width, c)))

    target = _smooth_field(rng, cfg.target_height, cfg.target_width, c)
    mask = _centered_box(cfg.target_height, cfg.target_width)

    return InsertionInputs(
        prompt=PromptTokens(prompt.astype(DTYPE)),
        reference=LatentGrid(reference.astype(DTYPE)),
        target=LatentGrid(target.astype(DTYPE)),
        mask=BinaryMask(mask),
        reference_mask=BinaryMask(reference_mask),
    )


def write_inputs(inputs, out_dir):
    out_dir = Path(out_dir)
    paths = {
        "prompt_path": write_tensor(out_dir / "prompt.icbt", inputs.prompt.embeddings),
        "reference_path": write_tensor(out_dir / "reference.icbt", inputs.reference.data),
        "target_path": write_tensor(out_dir / "target.icbt", inputs.target.data),
        "mask_path": write_tensor(out_dir / "mask.icbt", inputs.mask.bits.astype(DTYPE)),
    }
    if inputs.reference_mask is not None:
        paths["reference_mask_path"] = write_tensor(out_dir / "reference_mask.icbt", inputs.reference_mask.bits.astype(DTYPE))
    return paths


# -----------------------------------------------------------
# Cosine similarity of the mean-pooled output region and the mean-pooled reference subject
def identity_proxy_score(output_region, reference_region):
    output_region = np.asarray(output_region, dtype=np.float64)
    reference_region = np.asarray(reference_region, dtype=np.float64)
    if output_region.size == 0 or reference_region.size == 0:
        raise IdentityScoreError("identity proxy score needs non-empty regions")

    pooled_out = output_region.reshape(-1, output_region.shape[-1]).mean(axis=0)
    pooled_ref = reference_region.reshape(-1, reference_region.shape[-1]).mean(axis=0)
    norm = np.linalg.norm(pooled_out) * np.linalg.norm(pooled_ref)
    if norm == 0:
        raise IdentityScoreError("identity proxy score is undefined for a zero-norm pooled vector")
    return float(np.clip(np.dot(pooled_out, pooled_ref) / norm, -1.0, 1.0))


def insertion_score(inputs, generated):
    """Proxy score between the masked region of I_gen and the reference subject region"""
    out_tokens = generated.data[inputs.mask.bits.astype(bool)]
    if inputs.reference_mask is not None:
        ref_tokens = inputs.reference.data[inputs.reference_mask.bits.astype(bool)]
    else:
        ref_tokens = inputs.reference.data.reshape(-1, inputs.reference.channels)
    return identity_proxy_score(out_tokens, ref_tokens)


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def format_float(value):
    """Fixed 9-significant-digit text used in every table and report"""
    return f"{value:.9g}"
