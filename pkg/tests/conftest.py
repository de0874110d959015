import numpy as np
import pytest
import torch

from simit.config import PRESETS
from simit.datagen import ToyConfig, write_toy_dataset


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16 train / 4 val / 4 test scenes at 64x64, three classes."""
    root = tmp_path_factory.mktemp("tiny")
    return write_toy_dataset(root, 7, 24, ToyConfig(), counts=(16, 4, 4))


@pytest.fixture
def tiny_cfg():
    """Smallest config that still exercises every code path."""
    return PRESETS["toy"].replace(epochs=1, batch_size=2, base_width=4, d_base_width=4,
                                  num_resblocks=1, num_locations=16, val_samples=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[tuple[int, bool, str]] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        line = f"criterion {self.number} {'PASS' if ok else 'FAIL'}: {self.title}"
        if self.detail:
            line += f" ({self.detail})"
        _CRITERIA.append((self.number, ok, line))
        print(line)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records one pass/fail line for the summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
