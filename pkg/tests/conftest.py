"""Shared fixtures: a trained desk-scale model and acceptance reporting."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from phonemeda.config import desk_config
from phonemeda.dataset import SynthConfig, synth_generate
from phonemeda.pipeline import MODEL_FILE, run_training

DESK_SEED = 42
DESK_EPOCHS = 60

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@dataclass
class DeskRun:
    root: Path
    manifest: Path
    model: Path
    cfg: object
    params: dict
    model_cfg: object
    history: list
    data: object
    seconds: float


def desk_run(root: Path, seed: int = DESK_SEED, epochs: int = DESK_EPOCHS) -> DeskRun:
    """Synthesize the desk corpus under ``root`` and train on it single-threaded."""
    t0 = time.perf_counter()
    synth_generate(SynthConfig(), seed, root / "corpus")
    cfg = desk_config(epochs=epochs, seed=seed)
    params, model_cfg, history, data = run_training(root / "corpus" / "manifest.jsonl", cfg, root / "run")
    return DeskRun(root, root / "corpus" / "manifest.jsonl", root / "run" / MODEL_FILE, cfg, params,
                   model_cfg, history, data, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def trained(tmp_path_factory) -> DeskRun:
    return desk_run(tmp_path_factory.mktemp("desk"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
