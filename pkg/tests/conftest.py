import numpy as np
import pytest

from phenoseq.episode_store import LabelVocabulary, Observation, VariableSpec, make_episode


@pytest.fixture
def specs():
    return [VariableSpec("hr", 0.0, 250.0, 100.0), VariableSpec("temp", 30.0, 45.0, 37.0)]


@pytest.fixture
def vocab():
    return LabelVocabulary(("sepsis", "asthma", "fracture"))


def episode(episode_id="e1", obs=(), labels=()):
    """Build an episode from (t_minutes, variable, value) triples."""
    return make_episode(episode_id, [Observation(t, v, x) for t, v, x in obs], labels)


def random_grid_episodes(rng, n, n_vars=3, n_labels=4, min_t=1, max_t=30):
    from phenoseq.preprocess import GridEpisode
    out = []
    for i in range(n):
        T = int(rng.integers(min_t, max_t + 1))
        out.append(GridEpisode(f"g{i:04d}", rng.random((T, n_vars)),
                               (rng.random(n_labels) < 0.4).astype(np.float64)))
    return out


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
