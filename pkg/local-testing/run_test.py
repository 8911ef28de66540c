#!/usr/bin/env python3
"""
icb Local Test Runner

Runs the shipped example configs end to end through the icb CLI in subprocesses,
the same way a user would, and compares the SHA-256 of every output file with the
recorded golden hashes in local-testing/golden/hashes.json.

Usage examples:
  Insertion run:      python run_test.py --insert
  Verification suite: python run_test.py --verify --trials 20
  Ablation sweep:     python run_test.py --ablate
  Record new hashes:  python run_test.py --insert --update-golden
"""

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import tempfile
from pathlib import Path

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger("run_test")

REPO_ROOT = Path(__file__).resolve().parent.parent
CLI = REPO_ROOT / "icb-cli" / "icb.py"
CONFIG_DIR = REPO_ROOT / "config-examples"
GOLDEN_FILE = Path(__file__).resolve().parent / "golden" / "hashes.json"


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_cli(args, output_dir):
    """Run one icb command with output_dir redirected; returns the exit code"""
    env = os.environ.copy()
    env["ICB_OUTPUT_DIR"] = str(output_dir)
    cmd = [sys.executable, str(CLI)] + args
    logger.info(f"Executing: {' '.join(cmd)}")
    result = subprocess.run(cmd, env=env, cwd=REPO_ROOT)
    return result.returncode


def write_run_config(config_name, output_dir):
    """Copy an example config with its output_dir pointed at the scratch directory"""
    lines = [
        line
        for line in (CONFIG_DIR / config_name).read_text().splitlines()
        if not line.strip().startswith("output_dir")
    ]
    lines.append(f"output_dir={output_dir}")
    path = Path(output_dir) / config_name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def collect_hashes(output_dir, prefix):
    return {
        f"{prefix}/{path.name}": file_sha256(path)
        for path in sorted(Path(output_dir).iterdir())
        if path.suffix in (".icbt", ".parquet", ".csv", ".txt")
    }


def run_insert(scratch):
    hashes = {}
    for config_name in ("insert.cfg", "baseline.cfg"):
        out_dir = Path(scratch) / config_name.replace(".cfg", "")
        config = write_run_config(config_name, out_dir)
        if run_cli(["insert", "--config", str(config)], out_dir) != 0:
            logger.error(f"Insertion with {config_name} failed")
            return None
        hashes.update(collect_hashes(out_dir, config_name.replace(".cfg", "")))
    return hashes


def run_verify(scratch, trials):
    out_dir = Path(scratch) / "verify"
    code = run_cli(["verify", "--trials", str(trials), "--out", str(out_dir / "verify.txt")], out_dir)
    if code != 0:
        logger.error(f"Verification suite exited with {code}")
        return None
    # a perturbed alpha must be caught
    if run_cli(["verify", "--trials", "1", "--inject-fault"], out_dir) != 1:
        logger.error("Verification suite did not detect the injected fault")
        return None
    return collect_hashes(out_dir, "verify")


def run_ablate(scratch):
    out_dir = Path(scratch) / "ablation"
    config = write_run_config("ablate.cfg", out_dir)
    for sweep, values in (("alpha2", "0,0.1,0.2,0.4"), ("mechanisms", "")):
        args = ["ablate", "--config", str(config), "--sweep", sweep, "--out", str(out_dir / f"ablation_{sweep}.csv")]
        if values:
            args += ["--values", values]
        if run_cli(args, out_dir) != 0:
            logger.error(f"Ablation sweep {sweep} failed")
            return None
    return collect_hashes(out_dir, "ablation")


def compare_golden(hashes, update=False):
    golden = json.loads(GOLDEN_FILE.read_text()) if GOLDEN_FILE.is_file() else {}
    if update:
        golden.update(hashes)
        GOLDEN_FILE.parent.mkdir(parents=True, exist_ok=True)
        GOLDEN_FILE.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
        logger.info(f"Recorded {len(hashes)} hashes in {GOLDEN_FILE}")
        return True

    ok = True
    for key, digest in sorted(hashes.items()):
        expected = golden.get(key)
        if expected is None:
            logger.warning(f"- {key}: no golden hash recorded")
        elif expected != digest:
            logger.error(f"- {key}: hash {digest} differs from golden {expected}")
            ok = False
        else:
            logger.info(f"- {key}: matches golden hash")
    return ok


def main():
    parser = argparse.ArgumentParser(
        description="Run the icb example configs end to end and check output hashes",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("-i", "--insert", action="store_true", help="Run insert.cfg and baseline.cfg")
    parser.add_argument("-v", "--verify", action="store_true", help="Run the verification suite (and a fault injection)")
    parser.add_argument("-a", "--ablate", action="store_true", help="Run the alpha2 and mechanism sweeps of ablate.cfg")
    parser.add_argument("-t", "--trials", type=int, default=20, help="Trials for --verify (default: 20)")
    parser.add_argument("-u", "--update-golden", action="store_true", help="Record the produced hashes as golden")
    args = parser.parse_args()

    if not (args.insert or args.verify or args.ablate):
        parser.error("choose at least one of --insert, --verify, --ablate")

    hashes = {}
    with tempfile.TemporaryDirectory(prefix="icb-run-test-") as scratch:
        for enabled, label, runner in (
            (args.insert, "insertion", lambda: run_insert(scratch)),
            (args.verify, "verification", lambda: run_verify(scratch, args.trials)),
            (args.ablate, "ablation", lambda: run_ablate(scratch)),
        ):
            if not enabled:
                continue
            logger.info(f"\nRunning local {label} test\n")
            produced = runner()
            if produced is None:
                return 1
            hashes.update(produced)

    if not compare_golden(hashes, update=args.update_golden):
        return 1
    logger.info("Local test completed successfully")
    return 0


if __name__ == "__main__":
    sys.exit(main())
