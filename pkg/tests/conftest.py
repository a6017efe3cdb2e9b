import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def inspection_brute_force():
    """Grid-search RQE of the inspection game at eps=0.2, tau=5 (KL/log-barrier)."""
    from rqe.environments import inspection_game
    from rqe.regularizers import RiskProfile
    from rqe.solver import brute_force_rqe

    prof = RiskProfile.symmetric(5, 0.2)
    return brute_force_rqe(inspection_game(), prof, grid_step=1e-3)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(name: str, ok: bool, detail: str) -> bool:
        store[name] = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(store[name])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(store, key=lambda k: (int(k.split()[1].rstrip(":").split("-")[0]), k)):
        terminalreporter.line(store[name])
