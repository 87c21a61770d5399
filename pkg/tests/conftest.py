import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multiquery.driver import DriverConfig, mock_solver_command
from multiquery.parameters import build_space

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def unit_square():
    return build_space({"x1": {"type": "uniform", "lower": 0, "upper": 1},
                        "x2": {"type": "uniform", "lower": 0, "upper": 1}})


def write_template(path, names, **settings_):
    lines = [f"{n} = {{{{ {n} }}}}" for n in names]
    lines += [f"{k} = {v}" for k, v in settings_.items()]
    Path(path).write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def mock_driver(tmp_path):
    """Factory for mock-solver driver configs: ``mock_driver(names, **solver_settings)``."""

    def make(names=("x1", "x2"), output_dim=1, timeout=30.0, **solver):
        tpl = write_template(tmp_path / f"tpl_{len(list(tmp_path.iterdir()))}.in", names, **solver)
        return DriverConfig(mock_solver_command(), tpl, output_dim=output_dim, timeout=timeout)

    return make


def write_config(directory, document, name="config.json"):
    path = Path(directory) / name
    path.write_text(json.dumps(document, indent=2))
    return path


def grid_document(output_dir, max_concurrent=4, points=10):
    return {
        "global_settings": {"run_name": "grid_study", "output_dir": str(output_dir), "seed": 3},
        "parameters": {
            "k": {"type": "uniform", "lower": 0.0, "upper": 1.0},
            "r": {"type": "uniform", "lower": 0.0, "upper": 1.0},
        },
        "pool": {"type": "local", "max_concurrent": max_concurrent},
        "solver": {
            "type": "driver",
            "executable": "mock",
            "template": "grid.tmpl",
            "scheduler": "pool",
            "timeout": 30,
        },
        "method": {"type": "grid", "model": "solver", "points_per_axis": points},
    }


GRID_FAIL_CORNER = (0.75, 0.25)


@pytest.fixture
def grid_case(tmp_path):
    """A 10x10 mock-solver grid study that fails for k > 0.75 and r < 0.25."""
    write_template(
        tmp_path / "grid.tmpl", ("k", "r"), solver_mode="sum",
        solver_fail_corner=f"{GRID_FAIL_CORNER[0]}, {GRID_FAIL_CORNER[1]}",
    )
    doc = grid_document(tmp_path / "out")
    return write_config(tmp_path, doc), doc


def assert_close(actual, expected, tol):
    assert np.max(np.abs(np.asarray(actual) - np.asarray(expected))) <= tol, (actual, expected)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}")
