import numpy as np
import pytest

from filmrecover.synthgen import make_sample, resolve_config


@pytest.fixture(scope="session")
def bundle():
    return make_sample(resolve_config(), 2024)


@pytest.fixture(scope="session")
def small_cfg():
    # 128 px renders keep per-test cost low while exercising the same code paths.
    return resolve_config({"out_h": 128, "out_w": 128, "grid_n": 33,
                           "camera": {"footprint_px": [82.0, 92.0], "principal_jitter": 2.0}})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
