import pytest

from fieldnet.grid import GridSpec, build_topology
from fieldnet.materials import MaterialBox, assemble_materials


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full fixture verifications")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size fixture runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def cube():
    """2x2x2 uniform grid with 1 m cells."""
    return build_topology(GridSpec.uniform(2, 2, 2, 1.0))


@pytest.fixture
def box3():
    return build_topology(GridSpec.uniform(3, 3, 3, 0.1))


@pytest.fixture
def vacuum3(box3):
    return assemble_materials(box3, [MaterialBox((0, 0, 0), (0.3, 0.3, 0.3))])


@pytest.fixture
def bar_data() -> dict:
    """Resistive 2x1x1 bar ramped from the xmin face; the middle plane follows half the drive."""
    return {
        "name": "bar",
        "physics": "et",
        "grid": {"x": {"length": 2e-6, "cells": 2}, "y": [1e-6], "z": [1e-6]},
        "materials": [{"lo": [0, 0, 0], "hi": [2e-6, 1e-6, 1e-6], "sigma": 1.0}],
        "boundary": {
            "electric_dirichlet": [
                {"face": "xmin", "waveform": {"type": "step_exp", "amplitude": 1, "tau": 2e-10}},
                {"face": "xmax", "waveform": {"type": "dc", "value": 0}},
            ]
        },
        "analysis": {"type": "transient", "tstop": 1e-9, "tstep": 1e-11},
        "observe": [{"name": "mid", "kind": "potential", "at": [1, 0, 0]}],
        "expect": {"census": True},
    }
