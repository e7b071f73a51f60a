"""Regenerate the bundled feeder fixtures under tests/fixtures/feeders/.

Run from anywhere: python tests/fixtures/make_feeders.py
Everything is deterministic; re-running must reproduce the committed files
byte for byte.

Fixture families:

* tiny_*   -- hand-specified single-phase instances small enough for the
              brute-force reference (<= 3 non-slack nodes).  Loads are heavy
              (1-2.5 p.u. apparent power per node) so the relative optimality
              gap is a meaningful number rather than noise over a ~0 objective.
* desk*    -- synthesized three-phase / mixed-phase feeders, 2-13 buses,
              light kW-scale loads; `_tie` variants add one loop-closing
              tie-line to the same tree.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from triscp.ingest import (
    RandomizationSpec,
    feeder_from_dict,
    generate_feeder,
    randomize_loads,
    to_feeder,
    write_feeder,
)

OUT = Path(__file__).parent / "feeders"

_S3 = math.sqrt(3.0) / 2.0
_SLACK_V = [[1.0, 0.0], [-0.5, -_S3], [-0.5, _S3]]


def _phase_a_matrix(r: float, x: float) -> list:
    m = [[[0.0, 0.0] for _ in range(3)] for _ in range(3)]
    m[0][0] = [r, x]
    return m


def _bus(bid: str) -> dict:
    return {"id": bid, "phases": "a", "vmin_pu": 0.9, "vmax_pu": 1.1}


def _branch(frm: str, to: str, r: float, x: float) -> dict:
    return {"from": frm, "to": to, "kind": "z_pu", "matrix": _phase_a_matrix(r, x)}


def _load(bus: str, p_kw: float, q_kvar: float) -> dict:
    return {"bus": bus, "phase": "a", "p_kw": p_kw, "q_kvar": q_kvar}


def _tiny(name: str, buses, branches, loads, generators=()) -> dict:
    return {
        "version": 1,
        "base": {"s_kva": 100.0, "v_kv": 0.4},
        "buses": [_bus(b) for b in buses],
        "branches": list(branches),
        "loads": list(loads),
        "generators": list(generators),
        "slack": {"bus": "slack", "v_pu": _SLACK_V},
    }


TINY = {
    "tiny_t1": _tiny(
        "tiny_t1",
        ["slack", "b1"],
        [_branch("slack", "b1", 0.010, 0.020)],
        [_load("b1", 200.0, 60.0)],
    ),
    "tiny_t2": _tiny(
        "tiny_t2",
        ["slack", "b1"],
        [_branch("slack", "b1", 0.008, 0.015)],
        [_load("b1", 230.0, 75.0)],
    ),
    "tiny_t3": _tiny(
        "tiny_t3",
        ["slack", "b1", "b2"],
        [_branch("slack", "b1", 0.006, 0.012), _branch("b1", "b2", 0.005, 0.009)],
        [_load("b1", 150.0, 50.0), _load("b2", 130.0, 40.0)],
    ),
    "tiny_t4": _tiny(
        "tiny_t4",
        ["slack", "b1"],
        [_branch("slack", "b1", 0.015, 0.010)],
        [_load("b1", 150.0, 50.0)],
    ),
    "tiny_t5": _tiny(
        "tiny_t5",
        ["slack", "b1", "b2", "b3"],
        [
            _branch("slack", "b1", 0.006, 0.012),
            _branch("b1", "b2", 0.005, 0.010),
            _branch("slack", "b3", 0.008, 0.016),
        ],
        [_load("b1", 120.0, 40.0), _load("b2", 110.0, 35.0), _load("b3", 160.0, 50.0)],
    ),
    # fully dispatchable injection at the only free node: optimum is the
    # nominal profile with zero net injection, objective exactly 0
    "tiny_gen1": _tiny(
        "tiny_gen1",
        ["slack", "b1"],
        [_branch("slack", "b1", 0.010, 0.020)],
        [],
        [
            {
                "bus": "b1",
                "phase": "a",
                "pmin_kw": -100.0,
                "pmax_kw": 100.0,
                "qmin_kvar": -100.0,
                "qmax_kvar": 100.0,
            }
        ],
    ),
}

# (name, n_buses, phase policy, tie lines, seed); loads redrawn per seed
DESK = [
    ("desk02", 2, "abc", 0, 2),
    ("desk04", 4, "abc", 0, 3),
    ("desk07", 7, "abc", 0, 5),
    ("desk10", 10, "mixed", 0, 9),
    ("desk13", 13, "abc", 0, 7),
    ("desk04_tie", 4, "abc", 1, 3),
    ("desk07_tie", 7, "abc", 1, 5),
    ("desk10_tie", 10, "mixed", 1, 9),
    ("desk13_tie", 13, "abc", 1, 7),
]


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in TINY.items():
        feeder_from_dict(doc)  # schema check before writing
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(name)
    for name, n, policy, ties, seed in DESK:
        network = generate_feeder(n, phase_policy=policy, tie_lines=ties, seed=seed)
        network = randomize_loads(
            network, RandomizationSpec(p_lo_kw=0.2, p_hi_kw=0.8, pf_lo=0.92, pf_hi=0.98, seed=seed)
        )
        write_feeder(to_feeder(network), OUT / f"{name}.json")
        print(name)


if __name__ == "__main__":
    main()
