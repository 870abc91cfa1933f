"""Shared fixtures.

All simulator artifacts are produced by invoking its CLI in a subprocess;
this package never imports the simulator. Fixtures are session-scoped
because the propagation runs are the expensive part of the suite.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest


def run_cli(*args, cwd=None) -> subprocess.CompletedProcess:
    """Invoke the simulator CLI; raise with its output on failure."""
    cmd = [sys.executable, "-m", "fiberwave.cli", *map(str, args)]
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=cwd)
    if proc.returncode != 0:
        raise RuntimeError(
            f"{' '.join(cmd)} exited {proc.returncode}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        )
    return proc


def write_config(path: Path, cfg: dict) -> Path:
    path.write_text(json.dumps(cfg, indent=1) + "\n")
    return path


# 3-channel geometry used across the suite; gamma = 0 turns every span into
# pure dispersion + loss, which the EDFA gain exactly undoes.
def three_channel_config(gamma: float, num_spans: int, num_symbols: int) -> dict:
    return {
        "wdm": {"num_channels": 3, "launch_power_dbm_per_channel": 4.0},
        "link": {
            "num_spans": num_spans,
            "span": {"gamma_per_w_km": gamma},
            "edfa": {"ase_enabled": False},
        },
        "prng": {"seed": 1},
        "num_symbols": num_symbols,
    }


@pytest.fixture(scope="session")
def linear_assets(tmp_path_factory):
    """gamma = 0, one span, 1024 symbols: FDD shard + the matching waveforms."""
    root = tmp_path_factory.mktemp("linear")
    cfg = three_channel_config(gamma=0.0, num_spans=1, num_symbols=1024)
    cfg["dataset"] = {"seeds": [1], "taps": [1], "mode": "FDD"}
    cfg_path = write_config(root / "run.json", cfg)
    run_cli("dataset", "--config", cfg_path, "--output-dir", root / "data")
    run_cli("simulate", "--config", cfg_path, "--output-dir", root / "sim",
            "--seed", 1)
    return {
        "shard": root / "data" / "span1_seed1.wds",
        "tx": root / "sim" / "tx.wfld",
        "span1": root / "sim" / "span1.wfld",
        "config": cfg,
    }


@pytest.fixture(scope="session")
def nonlinear_assets(tmp_path_factory):
    """Default-gamma 3-span reference cascade, 512 symbols, noiseless."""
    root = tmp_path_factory.mktemp("nonlinear")
    cfg = three_channel_config(gamma=1.3, num_spans=3, num_symbols=512)
    cfg["dataset"] = {"seeds": [1], "taps": [1], "mode": "FDD"}
    cfg_path = write_config(root / "run.json", cfg)
    run_cli("simulate", "--config", cfg_path, "--output-dir", root / "sim",
            "--seed", 3, "--dsp", "linear")
    run_cli("dataset", "--config", cfg_path, "--output-dir", root / "data")
    return {
        "tx": root / "sim" / "tx.wfld",
        "spans": [root / "sim" / f"span{n}.wfld" for n in (1, 2, 3)],
        "shard": root / "data" / "span1_seed1.wds",
    }
