import numpy as np
import pytest

from uavnet.scenario import default_config, scenario_from_dict

# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_scenario(kind="ris", seed=1, gn=None, **overrides):
    """Default scenario with nested-key overrides such as radio__noise_power_dbm=-114.

    A None value removes the key.
    """
    cfg = default_config(kind)
    for key, value in overrides.items():
        *path, last = key.split("__")
        d = cfg
        for p in path:
            d = d[p]
        if value is None:
            d.pop(last, None)
        else:
            d[last] = value
    if gn is not None:
        cfg["gn_positions_m"] = np.asarray(gn, dtype=float).tolist()
        cfg.pop("num_gns", None)
    return scenario_from_dict(cfg, seed=seed)


@pytest.fixture
def ris():
    return make_scenario("ris")


@pytest.fixture
def fdr():
    return make_scenario("fdr")
