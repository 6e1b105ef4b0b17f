import os

import numpy as np
import pytest

from seocert.scenarios import random_state


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def rand_herm(n, rng):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (g + g.conj().T) / 2


def rand_op(n, rng):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def rand_rho(n, rng, rank=None):
    return random_state(n, rng, rank)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SEOCERT_HEAVY") == "1":
        return
    skip = pytest.mark.skip(reason="heavy cell; set SEOCERT_HEAVY=1 to run")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE_KEYS = [
    "1 qubit analytic thresholds",
    "2 reference table reproduction",
    "2b heavy (4,3,DPS) cell",
    "3 k=1 closed form and bisection",
    "4 hollow triangle",
    "5 simulable instances feasible at every tier",
    "6 SEO invariants",
    "7 two-copy decomposition round trip",
    "8 tier and k monotonicity",
]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for key in ACCEPTANCE_KEYS:
        if key in mod.RESULTS:
            ok, detail = mod.RESULTS[key]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
        elif key.startswith("2b"):
            terminalreporter.write_line(f"SKIP  {key}: opt-in, set SEOCERT_HEAVY=1")
        else:
            terminalreporter.write_line(f"NOT RUN  {key}")
