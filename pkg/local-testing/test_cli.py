import struct

import numpy as np
import pandas as pd
import pyarrow.parquet as pq
import pytest

from modules.ablation import AblationSweep
from modules.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED, main
from modules.tensor_io import read_tensor, write_tensor
from utils_testing import logger, small_config, write_config

OUTPUT_FILES = ("generated.icbt", "full_grid.icbt", "alphas.icbt", "head_activations.icbt", "trace_summary.parquet")


def output_bytes(out_dir):
    return {name: (out_dir / name).read_bytes() for name in OUTPUT_FILES}


# -----------------------------------------------
# insert
def test_insert_writes_outputs_and_score(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["insert", "--config", str(config)]) == EXIT_OK

    stdout = capsys.readouterr().out.strip()
    assert stdout.startswith("identity_proxy_score=")
    assert -1.0 <= float(stdout.split("=", 1)[1]) <= 1.0

    out_dir = tmp_path / "out"
    assert read_tensor(out_dir / "generated.icbt").shape == (4, 4, 4)
    assert read_tensor(out_dir / "full_grid.icbt").shape == (4, 8, 4)
    assert read_tensor(out_dir / "alphas.icbt").shape == (3, 2, 2, 16, 3)
    summary = pq.read_table(out_dir / "trace_summary.parquet").to_pandas()
    assert len(summary) == 3 * 2 * 2
    assert list(summary.columns[:3]) == ["Step", "Block", "Head"]


def test_insert_is_byte_reproducible(tmp_path):
    config = write_config(tmp_path)
    assert main(["insert", "--config", str(config)]) == EXIT_OK
    first = output_bytes(tmp_path / "out")
    assert main(["insert", "--config", str(config)]) == EXIT_OK
    assert output_bytes(tmp_path / "out") == first


def test_insert_from_generated_inputs_matches_synthesis(tmp_path):
    synthetic = write_config(tmp_path, "synthetic.cfg", output_dir=str(tmp_path / "a"))
    assert main(["gen-inputs", "--seed", "0", "--out", str(tmp_path / "inputs"), "--config", str(synthetic)]) == EXIT_OK

    inputs = tmp_path / "inputs"
    from_files = write_config(
        tmp_path,
        "files.cfg",
        output_dir=str(tmp_path / "b"),
        prompt_path=str(inputs / "prompt.icbt"),
        reference_path=str(inputs / "reference.icbt"),
        reference_mask_path=str(inputs / "reference_mask.icbt"),
        target_path=str(inputs / "target.icbt"),
        mask_path=str(inputs / "mask.icbt"),
    )
    assert main(["insert", "--config", str(synthetic)]) == EXIT_OK
    assert main(["insert", "--config", str(from_files)]) == EXIT_OK
    assert (tmp_path / "a" / "generated.icbt").read_bytes() == (tmp_path / "b" / "generated.icbt").read_bytes()


def test_insert_with_saved_weights(tmp_path):
    synthetic = write_config(tmp_path, "synthetic.cfg", output_dir=str(tmp_path / "a"))
    assert main(["gen-inputs", "--seed", "0", "--out", str(tmp_path / "inputs"), "--config", str(synthetic), "--weights"]) == EXIT_OK
    loaded = write_config(tmp_path, "loaded.cfg", output_dir=str(tmp_path / "b"), weights_dir=str(tmp_path / "inputs" / "weights"))
    assert main(["insert", "--config", str(synthetic)]) == EXIT_OK
    assert main(["insert", "--config", str(loaded)]) == EXIT_OK
    assert (tmp_path / "a" / "generated.icbt").read_bytes() == (tmp_path / "b" / "generated.icbt").read_bytes()


def test_insert_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha1=-1\n")
    assert main(["insert", "--config", str(bad)]) == EXIT_USAGE
    assert main(["insert", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE


def test_insert_missing_tensor_is_io_error(tmp_path):
    config = write_config(tmp_path, reference_path=str(tmp_path / "absent.icbt"))
    assert main(["insert", "--config", str(config)]) == EXIT_IO


def test_insert_corrupt_tensor_is_io_error(tmp_path):
    corrupt = tmp_path / "corrupt.icbt"
    corrupt.write_bytes(b"NOPE")
    config = write_config(tmp_path, target_path=str(corrupt))
    assert main(["insert", "--config", str(config)]) == EXIT_IO


def test_insert_non_binary_mask_is_io_error(tmp_path):
    mask = np.zeros((4, 4), dtype=np.float32)
    mask[1:3, 1:3] = 0.5
    config = write_config(tmp_path, mask_path=str(write_tensor(tmp_path / "mask.icbt", mask)))
    assert main(["insert", "--config", str(config)]) == EXIT_IO
    assert not (tmp_path / "out" / "generated.icbt").exists()


def test_insert_non_finite_prompt_is_io_error(tmp_path):
    prompt = write_tensor(tmp_path / "prompt.icbt", np.full((3, 16), np.nan, dtype=np.float32))
    config = write_config(tmp_path, prompt_path=str(prompt))
    assert main(["insert", "--config", str(config)]) == EXIT_IO


def test_insert_non_finite_weights_is_io_error(tmp_path):
    synthetic = write_config(tmp_path, "synthetic.cfg")
    assert main(["gen-inputs", "--seed", "0", "--out", str(tmp_path / "inputs"), "--config", str(synthetic), "--weights"]) == EXIT_OK
    weights_dir = tmp_path / "inputs" / "weights"
    write_tensor(weights_dir / "head.icbt", np.full((16, 4), np.inf, dtype=np.float32))
    config = write_config(tmp_path, weights_dir=str(weights_dir))
    assert main(["insert", "--config", str(config)]) == EXIT_IO


def test_insert_tensor_with_overflowing_dims_is_io_error(tmp_path):
    header_only = tmp_path / "huge.icbt"
    header_only.write_bytes(b"ICBT" + bytes([1, 0, 2]) + struct.pack("<QQ", 2**62, 4))
    config = write_config(tmp_path, target_path=str(header_only))
    assert main(["insert", "--config", str(config)]) == EXIT_IO


def test_stray_value_error_is_usage_error(monkeypatch):
    def broken_suite(**kwargs):
        raise ValueError("shift grid must not be empty")

    monkeypatch.setattr("modules.oracle.run_suite", broken_suite)
    assert main(["verify", "--trials", "1"]) == EXIT_USAGE


# -----------------------------------------------
# verify
def test_verify_passes_and_is_reproducible(tmp_path, capsys):
    assert main(["verify", "--trials", "3", "--seed", "2", "--out", str(tmp_path / "a.txt")]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "decomposition max_error=" in stdout and "FAIL" not in stdout
    assert main(["verify", "--trials", "3", "--seed", "2", "--out", str(tmp_path / "b.txt")]) == EXIT_OK
    assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()


def test_verify_with_injected_fault_exits_one(capsys):
    assert main(["verify", "--trials", "2", "--inject-fault"]) == EXIT_VERIFY_FAILED
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("decomposition") and line.endswith("FAIL") for line in lines)


def test_verify_rejects_zero_trials():
    assert main(["verify", "--trials", "0"]) == EXIT_USAGE


# -----------------------------------------------
# ablate
def test_alpha2_sweep_shift_magnitude_is_proportional(tmp_path):
    config = write_config(tmp_path, alpha1=0.0, reweight=False)
    table = tmp_path / "alpha2.csv"
    assert main(["ablate", "--config", str(config), "--sweep", "alpha2", "--values", "0,0.1,0.2", "--out", str(table)]) == EXIT_OK

    df = pd.read_csv(table)
    assert list(df.columns) == ["Sweep", "Alpha1", "Alpha2", "ShiftMagnitude", "IdentityScore"]
    magnitude = df["ShiftMagnitude"].tolist()
    assert magnitude[0] == 0.0
    assert magnitude[1] > 0
    assert magnitude[2] == pytest.approx(2 * magnitude[1], rel=1e-8)


def test_alpha2_sweep_frame_is_exactly_proportional():
    sweep = AblationSweep(small_config(alpha1=0.0, reweight=False), logger)
    magnitude = sweep.sweep_alpha("alpha2", [0.0, 0.1, 0.2, 0.4])["ShiftMagnitude"].tolist()
    assert magnitude[0] == 0.0
    assert magnitude[2] == 2 * magnitude[1]
    assert magnitude[3] == 2 * magnitude[2]


def test_ablation_table_is_byte_reproducible(tmp_path):
    config = write_config(tmp_path, alpha1=0.0)
    args = ["ablate", "--config", str(config), "--sweep", "alpha1", "--values", "0,0.5"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_mechanism_sweep_gives_eight_distinct_outputs(tmp_path):
    config = write_config(tmp_path)
    table = tmp_path / "mechanisms.csv"
    assert main(["ablate", "--config", str(config), "--sweep", "mechanisms", "--out", str(table)]) == EXIT_OK
    df = pd.read_csv(table)
    assert len(df) == 8
    assert df["OutputSha256"].nunique() == 8


def test_ablate_usage_errors(tmp_path):
    config = write_config(tmp_path)
    assert main(["ablate", "--config", str(config), "--sweep", "alpha1"]) == EXIT_USAGE
    assert main(["ablate", "--config", str(config), "--sweep", "alpha1", "--values", "0,-1"]) == EXIT_USAGE
    assert main(["ablate", "--config", str(config), "--sweep", "beta"]) == EXIT_USAGE


# -----------------------------------------------
def test_gen_inputs_writes_tensors(tmp_path):
    assert main(["gen-inputs", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    mask = read_tensor(tmp_path / "mask.icbt")
    assert mask.shape == (8, 8)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert read_tensor(tmp_path / "prompt.icbt").shape == (8, 16)


def test_unknown_command_is_usage_error():
    assert main(["paint"]) == EXIT_USAGE
