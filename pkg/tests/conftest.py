import copy
from importlib import resources

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, settings

from magloc.scenario import build_scenario

settings.register_profile(
    "magloc", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("magloc")

# criterion number -> (name, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def bundled_config(name: str) -> dict:
    text = (resources.files("magloc") / "scenarios" / f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def clean_config(name: str) -> dict:
    """Bundled scenario with noise, crosstalk and distorters removed."""
    cfg = copy.deepcopy(bundled_config(name))
    cfg["chain"] = {"noise": {"rms": 0.0}}
    cfg.setdefault("transmitter_defaults", {})["crosstalk"] = "ideal"
    for tx in cfg["transmitters"]:
        tx.pop("crosstalk", None)
    cfg["distorters"] = []
    return cfg


@pytest.fixture(scope="session")
def clean_office():
    return build_scenario(clean_config("office"), "clean-office")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {name}: {detail}")
