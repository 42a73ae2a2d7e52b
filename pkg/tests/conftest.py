import pytest

from atc_arena.scenarios import build_dataset

DATASET_SEED = 7


@pytest.fixture(scope="session")
def dataset():
    return build_dataset(DATASET_SEED)


@pytest.fixture(scope="session")
def layering_transcripts(dataset):
    from atc_arena.agents.backends import layering_backend
    from atc_arena.agents.runtime import AgentConfig, run_single_agent

    cfg = AgentConfig(backend="scripted:layering")
    return [run_single_agent(s, cfg, layering_backend()) for s in dataset]


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
