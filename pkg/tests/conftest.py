import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402

torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)
