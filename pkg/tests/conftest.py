import numpy as np
import pytest

from coreda.synthdata import SOURCE_DOMAIN, TARGET_DOMAIN, GenConfig, generate


@pytest.fixture(scope="session")
def small_gen():
    return GenConfig(L=16, h=8, w=8, jitter_max=1.5)


@pytest.fixture(scope="session")
def small_data(small_gen):
    """A tiny labeled source set and unlabeled target set (seconds to train on)."""
    D_S = generate(12, True, SOURCE_DOMAIN, small_gen, seed=0, domain="source")
    D_T = generate(6, False, TARGET_DOMAIN, small_gen, seed=0, domain="target")
    return D_S, D_T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_benchmark():
    """The default 120 source / 60 target benchmark at seed 0."""
    gen = GenConfig()
    return (
        generate(120, True, SOURCE_DOMAIN, gen, seed=0, domain="source"),
        generate(60, False, TARGET_DOMAIN, gen, seed=0, domain="target"),
    )


@pytest.fixture(scope="session")
def trained_default(default_benchmark):
    """Adaptation run on the default benchmark with the desk training profile."""
    from coreda.trainer import DESK_TRAIN, train_coreda

    D_S, D_T = default_benchmark
    return train_coreda(D_S, D_T, DESK_TRAIN)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_line():
    """Record one pass/fail line for the acceptance summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
