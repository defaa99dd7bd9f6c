import numpy as np
import pytest

from ctn.model import AttentionConfig, ModelConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def narrow_cfg():
    """Same topology as the default plan with small widths, for fast structural tests."""
    return ModelConfig(
        height=32,
        width=32,
        local_filters=(4, 4, 6, 6, 8),
        nonlocal_filters=(8, 8, 12),
        attention=AttentionConfig(d=8, h=2, m=1),
        head_filters=(6, 5, 4, 1),
    )
