import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)



@pytest.fixture(scope="session")
def three_cycle_runs():
    """Calibrated 3-cycle run on both integration paths, with wall times."""
    import time

    from qotto.config import default_config
    from qotto.lindblad import simulate

    out = {}
    for method in ("populations", "density_matrix"):
        cfg = default_config(n_cycles=3, method=method)
        t0 = time.perf_counter()
        out[method] = simulate(cfg)
        out[method + "_seconds"] = time.perf_counter() - t0
    out["config"] = default_config(n_cycles=3)
    return out
