"""Shared fixtures: bundled feeder files plus small hand-built networks."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import pytest

from triscp.ingest import parse_feeder, to_network
from triscp.netmodel import Branch, Bus, Load, Network, PhaseMask, nominal_phasors
from triscp.scp import solve_opf

FEEDER_DIR = Path(__file__).parent / "fixtures" / "feeders"

TINY_LOAD_ONLY = ("tiny_t1", "tiny_t2", "tiny_t3", "tiny_t4", "tiny_t5")
DESK_RADIAL = ("desk02", "desk04", "desk07", "desk10", "desk13")
DESK_TIE = ("desk04_tie", "desk07_tie", "desk10_tie", "desk13_tie")


def fixture_path(name: str) -> Path:
    return FEEDER_DIR / f"{name}.json"


def load_network(name: str) -> Network:
    return to_network(parse_feeder(fixture_path(name)))


def single_phase_network(z: complex = 0.01 + 0.02j, p: float = 2.0, q: float = 0.6) -> Network:
    """Two buses, phase a only, one branch, one load (per-unit quantities)."""
    y = np.zeros((3, 3), dtype=complex)
    y[0, 0] = 1.0 / z
    mask = PhaseMask(True, False, False)
    return Network(
        buses=(Bus("b1", mask), Bus("slack", mask)),
        branches=(Branch("slack", "b1", y),),
        loads=(Load("b1", "a", p, q),),
        generators=(),
        slack_bus="slack",
        slack_voltage=nominal_phasors(),
    )


@pytest.fixture
def tiny_doc() -> dict:
    """Mutable copy of the tiny_t1 feeder document, for schema-error tests."""
    return copy.deepcopy(json.loads(fixture_path("tiny_t1").read_text()))


@pytest.fixture(scope="session")
def solved():
    """Memoized solve_opf over bundled fixtures (acceptance + integration reuse)."""
    cache: dict = {}

    def get(name: str, **kwargs):
        key = (name, tuple(sorted(kwargs.items())))
        if key not in cache:
            cache[key] = solve_opf(load_network(name), **kwargs)
        return cache[key]

    return get
