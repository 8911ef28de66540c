import hashlib
import itertools
from pathlib import Path

import pandas as pd

from .insertion import InsertionPipeline
from .utils import InputObjects

ALPHA_COLUMNS = ["Sweep", "Alpha1", "Alpha2", "ShiftMagnitude", "IdentityScore"]
MECHANISM_COLUMNS = ["Shift", "Reweight", "Blend", "IdentityScore", "OutputSha256"]


class AblationSweep:
    """
    Runs the insertion repeatedly while varying one knob and tabulates the results.

    Args:
        cfg (RunConfig): base configuration; the swept fields are replaced per run
        logger: Logger object for logging messages
    """

    def __init__(self, cfg, logger):
        self.cfg = cfg
        self.logger = logger
        self.inputs = None

    def load_inputs(self):
        if self.inputs is None:
            self.inputs = InputObjects(self.cfg, self.logger).load_inputs()
        return self.inputs

    def run_single(self, cfg):
        pipeline = InsertionPipeline(cfg, self.logger, inputs=self.load_inputs())
        return pipeline.run(write_outputs=False)

    # -----------------------------------------------
    # Shift strength sweep: one row per value, the other strength stays at its config value
    def sweep_alpha(self, which, values):
        if which not in ("alpha1", "alpha2"):
            raise ValueError(f"sweep must be alpha1 or alpha2, got {which!r}")
        values = [float(v) for v in values]
        if not values:
            raise ValueError("sweep needs at least one value")

        results = []
        for idx, value in enumerate(values, start=1):
            cfg = self.cfg.replace(**{which: value})
            self.logger.info(f"Processing {which} {idx}/{len(values)}: {value} (alpha1={cfg.alpha1}, alpha2={cfg.alpha2})")
            result = self.run_single(cfg)
            first = result.trace.first()
            magnitude = first.shift_magnitude if first is not None else 0.0
            results.append([which, cfg.alpha1, cfg.alpha2, magnitude, result.score])

        return pd.DataFrame(results, columns=ALPHA_COLUMNS)

    # -----------------------------------------------
    # All 2^3 on/off combinations of shift, reweight and blend
    def sweep_mechanisms(self):
        results = []
        for shift, reweight, blend in itertools.product((False, True), repeat=3):
            cfg = self.cfg.replace(shift=shift, reweight=reweight, blend=blend)
            self.logger.info(f"Processing mechanisms shift={shift} reweight={reweight} blend={blend}")
            result = self.run_single(cfg)
            digest = hashlib.sha256(result.sampling.generated.data.tobytes()).hexdigest()
            results.append([int(shift), int(reweight), int(blend), result.score, digest])

        return pd.DataFrame(results, columns=MECHANISM_COLUMNS)

    def write_table(self, df, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
        self.logger.info(f"- Stored ablation table | {len(df)} rows | {path}")
        return path
