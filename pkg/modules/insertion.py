from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from .attention import MechanismFlags, ShiftConfig
from .model import VelocityModel, init_weights, load_weights
from .sampler import AttentionTrace, MechanismSchedule, SamplerConfig, run_sampling
from .tensor_io import write_tensor
from .utils import IdentityScoreError, InputObjects, format_float, insertion_score


@dataclass
class InsertionResult:
    sampling: object
    trace: AttentionTrace
    score: float
    output_files: dict


TRACE_SCHEMA = pa.schema(
    [
        ("Step", pa.int64()),
        ("Block", pa.int64()),
        ("Head", pa.int64()),
        ("AlphaPrompt", pa.float64()),
        ("AlphaReference", pa.float64()),
        ("AlphaTarget", pa.float64()),
        ("ActivationRaw", pa.float64()),
        ("ActivationNormalized", pa.float64()),
        ("ShiftMagnitude", pa.float64()),
    ]
)


def sampler_config(cfg):
    return SamplerConfig(steps=cfg.steps, seed=cfg.seed, blend_enabled=cfg.blend, literal_blend=cfg.literal_blend)


def mechanism_schedule(cfg):
    return MechanismSchedule(
        flags=MechanismFlags(shift=cfg.shift, reweight=cfg.reweight),
        enabled_blocks=cfg.enabled_blocks,
        enabled_steps=cfg.enabled_steps,
    )


# Class for running one customized insertion and writing its outputs
class InsertionPipeline:
    def __init__(self, cfg, logger, inputs=None):
        self.cfg = cfg
        self.logger = logger
        self.inputs = inputs

    def load_model(self, inputs):
        cfg = self.cfg
        if cfg.weights_dir:
            self.logger.info(f"Loading weights from {cfg.weights_dir}")
            weights = load_weights(cfg.weights_dir, cfg.heads, cfg.blocks, cfg.attention_scale)
        else:
            weights = init_weights(cfg.model_dim, cfg.heads, cfg.blocks, cfg.channels, cfg.ffn_mult, cfg.seed, cfg.attention_scale)
        return VelocityModel(weights, inputs.layout, inputs.prompt, inputs.clean_tokens(), inputs.mask_tokens())

    def run(self, write_outputs=True):
        cfg = self.cfg

        self.logger.info("INPUTS")
        inputs = self.inputs if self.inputs is not None else InputObjects(cfg, self.logger).load_inputs()
        layout = inputs.layout
        self.logger.info(f"Layout (L_p, L_c, L_s) = ({layout.len_prompt}, {layout.len_ref}, {layout.len_target})")

        self.logger.info("SAMPLING")
        model = self.load_model(inputs)
        trace = AttentionTrace()
        shift = ShiftConfig(cfg.alpha1, cfg.alpha2)
        self.logger.info(
            f"Mechanisms: shift={cfg.shift} (alpha1={cfg.alpha1}, alpha2={cfg.alpha2}), "
            f"reweight={cfg.reweight}, blend={cfg.blend}, literal_blend={cfg.literal_blend}"
        )
        sampling = run_sampling(
            inputs, model, sampler_config(cfg), shift, mechanism_schedule(cfg), trace=trace, logger=self.logger
        )

        try:
            score = insertion_score(inputs, sampling.generated)
        except IdentityScoreError as e:
            self.logger.warning(f"Identity proxy score unavailable: {e}")
            score = float("nan")
        self.logger.info(f"Identity proxy score: {format_float(score)}")

        output_files = {}
        if write_outputs:
            self.logger.info("WRITE OUTPUTS")
            output_files = self.write_outputs(sampling, trace)

        return InsertionResult(sampling=sampling, trace=trace, score=score, output_files=output_files)

    # -----------------------------------------------
    def write_outputs(self, sampling, trace):
        out_dir = Path(self.cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "generated": write_tensor(out_dir / "generated.icbt", sampling.generated.data),
            "full_grid": write_tensor(out_dir / "full_grid.icbt", sampling.full_grid.data),
            "alphas": write_tensor(out_dir / "alphas.icbt", trace.alpha_tensor()),
            "head_activations": write_tensor(out_dir / "head_activations.icbt", trace.activation_tensor()),
        }
        files["trace_summary"] = self.write_trace_summary(trace, out_dir / "trace_summary.parquet")
        for name, path in files.items():
            self.logger.info(f"- Wrote {name} to {path}")
        return files

    # Per step/block/head summary with an explicit schema so column types never drift
    def write_trace_summary(self, trace, path):
        rows = []
        for record in trace.records:
            mean_alphas = record.alphas.astype(np.float64).mean(axis=1)
            for head in range(mean_alphas.shape[0]):
                rows.append(
                    [
                        record.step,
                        record.block,
                        head,
                        float(mean_alphas[head, 0]),
                        float(mean_alphas[head, 1]),
                        float(mean_alphas[head, 2]),
                        float(record.activation_raw[head]),
                        float(record.activation_normalized[head]),
                        float(record.shift_magnitude),
                    ]
                )
        df = pd.DataFrame(rows, columns=TRACE_SCHEMA.names)
        pq.write_table(pa.Table.from_pandas(df, schema=TRACE_SCHEMA, preserve_index=False), path)
        return path
