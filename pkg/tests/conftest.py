import pytest

from fedsynth.attacks import StudentHyper
from fedsynth.config import (
    AttackSection,
    DapSection,
    ExperimentConfig,
    LearningSection,
    ModelSection,
    ShardingSection,
)
from fedsynth.gan import GanHyper

TINY_STUDENT = StudentHyper(hidden=(16,), epochs=2, batch_size=32)


def tiny_config(seed: int = 0, **changes) -> ExperimentConfig:
    """A few-second end-to-end configuration: four clients, three rounds."""
    cfg = ExperimentConfig(
        sharding=ShardingSection(n_clients=4, mean_points=60, min_points=20),
        gan=GanHyper(batch_size=32),
        model=ModelSection(noise_dim=4, generator_hidden=(16,), critic_hidden=(16,)),
        rounds=3,
        learning=LearningSection(student=TINY_STUDENT),
        dap=DapSection(trials=4),
        attack=AttackSection(steps=10, step_sizes=(0.05,), student=TINY_STUDENT),
        seed=seed,
    )
    return cfg.replace(**changes) if changes else cfg.validate()


@pytest.fixture
def tiny():
    return tiny_config()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
