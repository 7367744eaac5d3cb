import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class RecipeRuns:
    """Trains each bundled recipe at most once per test session."""

    def __init__(self):
        self._cache = {}

    def __call__(self, name, scheme=None):
        from sparseham.config import load_config
        from sparseham.experiment import make_datasets, run_training, training_set

        key = (name, scheme)
        if key not in self._cache:
            cfg = load_config(name, {"scheme": scheme})
            sets = make_datasets(cfg)
            report = run_training(cfg, training_set(sets))
            self._cache[key] = (cfg, sets, report)
        return self._cache[key]


@pytest.fixture(scope="session")
def recipe_run():
    return RecipeRuns()


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
