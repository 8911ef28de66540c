#!/usr/bin/env python3
"""
Shared helpers for the local tests: small seeded attention instances, small run
configs and config files written to a temporary directory.
"""

import logging

import numpy as np

from modules.attention import AttentionWeights, BlockWeights
from modules.config import RunConfig
from modules.layout import TokenLayout

logger = logging.getLogger("icb-tests")


def attention_instance(seed=0, lengths=(2, 3, 4), model_dim=8, num_heads=2, scale=None):
    """
    Seeded (X, layout, weights) triple for attention-level tests.

    Args:
        seed (int): seed of the numpy generator
        lengths (tuple): (L_p, L_c, L_s)
        model_dim (int): model dimension d
        num_heads (int): number of heads H
        scale: softmax scale, None for 1/sqrt(d_h)

    Returns:
        tuple: (X, layout, AttentionWeights)
    """
    rng = np.random.default_rng(seed)
    layout = TokenLayout(*lengths)
    w = AttentionWeights.random(rng, model_dim, num_heads, scale)
    X = rng.standard_normal((layout.total, model_dim)).astype(np.float32)
    return X, layout, w


def block_instance(seed=0, lengths=(2, 3, 4), model_dim=8, num_heads=2):
    rng = np.random.default_rng(seed)
    layout = TokenLayout(*lengths)
    block = BlockWeights.random(rng, model_dim, num_heads, ffn_mult=2)
    X = rng.standard_normal((layout.total, model_dim)).astype(np.float32)
    return X, layout, block


def small_config(tmp_path=None, **overrides):
    """A RunConfig small enough for an end-to-end run to finish in well under a second"""
    values = dict(
        model_dim=16,
        heads=2,
        blocks=2,
        ffn_mult=2,
        channels=4,
        prompt_len=3,
        ref_height=4,
        ref_width=4,
        target_height=4,
        target_width=4,
        steps=3,
        seed=0,
    )
    if tmp_path is not None:
        values["output_dir"] = str(tmp_path / "out")
    values.update(overrides)
    return RunConfig(**values).replace()


def config_text(cfg):
    """Render a RunConfig back to key=value text"""
    lines = []
    for key, value in vars(cfg).items():
        if isinstance(value, bool):
            text = "on" if value else "off"
        elif value is None:
            text = "auto" if key == "attention_scale" else "all"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def write_config(tmp_path, name="run.cfg", **overrides):
    cfg = small_config(tmp_path, **overrides)
    path = tmp_path / name
    path.write_text(config_text(cfg))
    return path
