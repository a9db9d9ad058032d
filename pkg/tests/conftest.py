import time

import pytest

from philsim.harness.config import load_config, resolve_scenario, with_overrides
from philsim.harness.runner import run_scenario

_RESULTS = pytest.StashKey[dict]()

# full-horizon runs shared by the acceptance tests; key -> (bundled name, overrides)
RUNS = {
    "e2": ("e2-loadstep", {}),
    "e2-nodroop": ("e2-loadstep", {"bess.enabled": False}),
    "e3": ("e3-unbalance-b", {}),
    "e4": ("e4-unbalance-c", {}),
}


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record_criterion(request):
    """Store a criterion verdict for the end-of-session summary."""
    results = request.config.stash[_RESULTS]

    def record(number: int, ok: bool, detail: str) -> None:
        results[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def scenario_runs():
    """Lazily run and cache the full bundled scenarios; returns get(key) -> (cfg, rec, seconds)."""
    cache = {}

    def get(key):
        if key not in cache:
            name, changes = RUNS[key]
            cfg = with_overrides(load_config(resolve_scenario(name)), changes)
            t0 = time.perf_counter()
            rec = run_scenario(cfg)
            cache[key] = (cfg, rec, time.perf_counter() - t0)
        return cache[key]

    return get
