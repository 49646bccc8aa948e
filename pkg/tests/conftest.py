from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from tripletdiff.data import AnnotatedFrame, Dataset, Triplet, Vocabulary, ToyWorldConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
torch.set_num_threads(1)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def mini_cholec() -> Path:
    return FIXTURES / "mini_cholec"


@pytest.fixture(scope="session")
def toy_cfg() -> ToyWorldConfig:
    return ToyWorldConfig()


def frames_with_instruments(instrument_sets, vocab=None, size=4):
    """Frames whose triplets use the given instrument ids (verb/target vary to stay distinct)."""
    vocab = vocab or Vocabulary(("grasper", "clipper", "hook"), ("retract", "clip"), ("liver", "gallbladder"))
    frames = []
    for n, insts in enumerate(instrument_sets):
        trips = tuple(Triplet(i, k % 2, (k // 2) % 2, vocab.name) for k, i in enumerate(insts))
        frames.append(AnnotatedFrame(np.zeros((size, size, 3), np.float32), trips, f"{n:06d}", "v"))
    return Dataset(frames, vocab, "synthetic")


TINY_INI = """\
[data]
n_frames = 120
[diffusion]
T = 10
steps = 12
checkpoint_every = 6
sample_every = 12
log_every = 3
base_channels = 8
sr_base_channels = 8
"""


@pytest.fixture
def tiny_ini(tmp_path) -> Path:
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


# acceptance criteria report one line each; they are repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
