import numpy as np
import pytest

from modalcomb.forecast import synthetic_panel, write_panels


def make_panels(n_entities=23, T=36, seed=0, missing=0.1):
    rng = np.random.default_rng(seed)
    return [synthetic_panel(f"E{i:02d}", rng, T=T, missing=missing) for i in range(n_entities)]


@pytest.fixture
def panel_csv(tmp_path):
    def _make(n_entities=23, T=36, seed=0, missing=0.1, name="panel.csv"):
        path = tmp_path / name
        write_panels(make_panels(n_entities, T, seed, missing), path)
        return path
    return _make


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
