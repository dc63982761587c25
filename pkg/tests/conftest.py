import numpy as np
import pytest

from cmdkit.generators import (
    DatasetSpec,
    MlpTaskConfig,
    SyntheticModesConfig,
    generate_mlp_training,
    generate_synthetic_modes,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth5():
    """Noise-free, five modes, three interleaved layers."""
    return generate_synthetic_modes(
        SyntheticModesConfig(N=1500, T=60, M_true=5, seed=7, n_layers=3)
    )


@pytest.fixture(scope="session")
def small_mlp():
    cfg = MlpTaskConfig(
        layer_widths=(2, 8, 2),
        epochs=30,
        learning_rate=0.3,
        dataset=DatasetSpec(count=120, noise=0.5, seed=3),
        seed=3,
    )
    matrix, log = generate_mlp_training(cfg)
    return cfg, matrix, log


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
