"""Feeder files: parsing, per-unit conversion, synthesis, load randomization.

The on-disk format is a small versioned JSON document (see ``serialize_feeder``
for the exact field layout).  Branch blocks may be given as impedance in ohms,
impedance in per-unit, or admittance in per-unit; impedance blocks are
inverted on the present-phase submatrix during conversion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Any

import numpy as np

from .netmodel import (
    PHASES,
    Branch,
    Bus,
    Generator,
    Load,
    Network,
    NetworkError,
    PhaseMask,
    nominal_phasors,
    validate_network,
)

BRANCH_KINDS = ("z_ohm", "z_pu", "y_pu")


class FeederFormatError(ValueError):
    """A feeder document violates the schema; the message carries the location."""


@dataclass(frozen=True)
class BusRecord:
    id: str
    phases: str
    vmin_pu: float
    vmax_pu: float


@dataclass(frozen=True)
class BranchRecord:
    from_bus: str
    to_bus: str
    kind: str
    matrix: np.ndarray  # 3x3 complex, units per ``kind``


@dataclass(frozen=True)
class LoadRecord:
    bus: str
    phase: str
    p_kw: float
    q_kvar: float


@dataclass(frozen=True)
class GeneratorRecord:
    bus: str
    phase: str
    pmin_kw: float
    pmax_kw: float
    qmin_kvar: float
    qmax_kvar: float


@dataclass(frozen=True)
class SlackRecord:
    bus: str
    v_pu: np.ndarray  # complex triple


@dataclass(frozen=True)
class FeederFile:
    version: int
    base_s_kva: float
    base_v_kv: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]
    loads: tuple[LoadRecord, ...]
    generators: tuple[GeneratorRecord, ...]
    slack: SlackRecord


@dataclass(frozen=True)
class RandomizationSpec:
    """Uniform load-randomization protocol: P in kW, power factor in (0, 1]."""

    p_lo_kw: float
    p_hi_kw: float
    pf_lo: float
    pf_hi: float
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.p_lo_kw <= self.p_hi_kw:
            raise ValueError("need 0 < p_lo_kw <= p_hi_kw")
        if not 0.0 < self.pf_lo <= self.pf_hi <= 1.0:
            raise ValueError("need 0 < pf_lo <= pf_hi <= 1")


def _no_dupes(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise FeederFormatError(f"duplicate key {key!r}")
        out[key] = value
    return out


def _expect(obj: Any, keys: dict[str, type | tuple[type, ...]], where: str) -> None:
    if not isinstance(obj, dict):
        raise FeederFormatError(f"{where}: expected an object")
    unknown = set(obj) - set(keys)
    if unknown:
        raise FeederFormatError(f"{where}: unknown field {sorted(unknown)[0]!r}")
    for key, types in keys.items():
        if key not in obj:
            raise FeederFormatError(f"{where}: missing field {key!r}")
        if not isinstance(obj[key], types) or isinstance(obj[key], bool):
            raise FeederFormatError(f"{where}.{key}: wrong type")


_NUM = (int, float)


def _complex_pair(entry: Any, where: str) -> complex:
    if (
        not isinstance(entry, list)
        or len(entry) != 2
        or any(isinstance(v, bool) or not isinstance(v, _NUM) for v in entry)
    ):
        raise FeederFormatError(f"{where}: expected [re, im]")
    value = complex(entry[0], entry[1])
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise FeederFormatError(f"{where}: non-finite value")
    return value


def _matrix3(entry: Any, where: str) -> np.ndarray:
    if not isinstance(entry, list) or len(entry) != 3:
        raise FeederFormatError(f"{where}: expected 3 rows")
    out = np.zeros((3, 3), dtype=complex)
    for r, row in enumerate(entry):
        if not isinstance(row, list) or len(row) != 3:
            raise FeederFormatError(f"{where}[{r}]: expected 3 entries")
        for c, cell in enumerate(row):
            out[r, c] = _complex_pair(cell, f"{where}[{r}][{c}]")
    return out


def parse_feeder(source: str | Path | bytes | IO) -> FeederFile:
    """Parse a feeder JSON document from a path, bytes, or readable stream."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    elif isinstance(source, bytes):
        text = source.decode()
    else:
        data = source.read()
        text = data.decode() if isinstance(data, bytes) else data
    try:
        doc = json.loads(text, object_pairs_hook=_no_dupes)
    except json.JSONDecodeError as exc:
        raise FeederFormatError(f"invalid JSON: {exc}") from exc
    return feeder_from_dict(doc)


def feeder_from_dict(doc: Any) -> FeederFile:
    _expect(
        doc,
        {
            "version": int,
            "base": dict,
            "buses": list,
            "branches": list,
            "loads": list,
            "generators": list,
            "slack": dict,
        },
        "feeder",
    )
    if doc["version"] != 1:
        raise FeederFormatError(f"feeder.version: unsupported version {doc['version']!r}")
    _expect(doc["base"], {"s_kva": _NUM, "v_kv": _NUM}, "base")
    s_kva = float(doc["base"]["s_kva"])
    v_kv = float(doc["base"]["v_kv"])
    if s_kva <= 0 or v_kv <= 0:
        raise FeederFormatError("base: s_kva and v_kv must be positive")

    buses = []
    for i, rec in enumerate(doc["buses"]):
        where = f"buses[{i}]"
        _expect(rec, {"id": str, "phases": str, "vmin_pu": _NUM, "vmax_pu": _NUM}, where)
        try:
            mask = PhaseMask.from_string(rec["phases"])
        except NetworkError as exc:
            raise FeederFormatError(f"{where}.phases: {exc}") from exc
        if mask.count == 0:
            raise FeederFormatError(f"{where}.phases: at least one phase required")
        buses.append(BusRecord(rec["id"], mask.to_string(), float(rec["vmin_pu"]), float(rec["vmax_pu"])))
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise FeederFormatError("buses: duplicate bus id")

    branches = []
    for i, rec in enumerate(doc["branches"]):
        where = f"branches[{i}]"
        _expect(rec, {"from": str, "to": str, "kind": str, "matrix": list}, where)
        if rec["kind"] not in BRANCH_KINDS:
            raise FeederFormatError(f"{where}.kind: must be one of {BRANCH_KINDS}")
        branches.append(BranchRecord(rec["from"], rec["to"], rec["kind"], _matrix3(rec["matrix"], f"{where}.matrix")))

    loads = []
    for i, rec in enumerate(doc["loads"]):
        where = f"loads[{i}]"
        _expect(rec, {"bus": str, "phase": str, "p_kw": _NUM, "q_kvar": _NUM}, where)
        if rec["phase"] not in PHASES:
            raise FeederFormatError(f"{where}.phase: must be one of {PHASES}")
        loads.append(LoadRecord(rec["bus"], rec["phase"], float(rec["p_kw"]), float(rec["q_kvar"])))

    generators = []
    for i, rec in enumerate(doc["generators"]):
        where = f"generators[{i}]"
        _expect(
            rec,
            {"bus": str, "phase": str, "pmin_kw": _NUM, "pmax_kw": _NUM, "qmin_kvar": _NUM, "qmax_kvar": _NUM},
            where,
        )
        if rec["phase"] not in PHASES:
            raise FeederFormatError(f"{where}.phase: must be one of {PHASES}")
        generators.append(
            GeneratorRecord(
                rec["bus"],
                rec["phase"],
                float(rec["pmin_kw"]),
                float(rec["pmax_kw"]),
                float(rec["qmin_kvar"]),
                float(rec["qmax_kvar"]),
            )
        )

    _expect(doc["slack"], {"bus": str, "v_pu": list}, "slack")
    v_entry = doc["slack"]["v_pu"]
    if not isinstance(v_entry, list) or len(v_entry) != 3:
        raise FeederFormatError("slack.v_pu: expected 3 [re, im] pairs")
    v_pu = np.array([_complex_pair(v_entry[k], f"slack.v_pu[{k}]") for k in range(3)])
    if doc["slack"]["bus"] not in set(ids):
        raise FeederFormatError("slack.bus: unknown bus")

    return FeederFile(
        version=1,
        base_s_kva=s_kva,
        base_v_kv=v_kv,
        buses=tuple(buses),
        branches=tuple(branches),
        loads=tuple(loads),
        generators=tuple(generators),
        slack=SlackRecord(doc["slack"]["bus"], v_pu),
    )


def serialize_feeder(file: FeederFile) -> dict:
    """Inverse of parse: a JSON-ready dict with the exact schema field names."""

    def pair(z: complex) -> list[float]:
        return [float(z.real), float(z.imag)]

    return {
        "version": file.version,
        "base": {"s_kva": file.base_s_kva, "v_kv": file.base_v_kv},
        "buses": [
            {"id": b.id, "phases": b.phases, "vmin_pu": b.vmin_pu, "vmax_pu": b.vmax_pu}
            for b in file.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "kind": br.kind,
                "matrix": [[pair(br.matrix[r, c]) for c in range(3)] for r in range(3)],
            }
            for br in file.branches
        ],
        "loads": [
            {"bus": ld.bus, "phase": ld.phase, "p_kw": ld.p_kw, "q_kvar": ld.q_kvar}
            for ld in file.loads
        ],
        "generators": [
            {
                "bus": g.bus,
                "phase": g.phase,
                "pmin_kw": g.pmin_kw,
                "pmax_kw": g.pmax_kw,
                "qmin_kvar": g.qmin_kvar,
                "qmax_kvar": g.qmax_kvar,
            }
            for g in file.generators
        ],
        "slack": {"bus": file.slack.bus, "v_pu": [pair(v) for v in file.slack.v_pu]},
    }


def write_feeder(file: FeederFile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_feeder(file), indent=2) + "\n")


def _branch_admittance_pu(rec: BranchRecord, masks: dict[str, PhaseMask], z_base: float) -> np.ndarray:
    for end in (rec.from_bus, rec.to_bus):
        if end not in masks:
            raise FeederFormatError(f"branch {rec.from_bus}-{rec.to_bus}: unknown bus {end!r}")
    live = [k for k, p in enumerate(PHASES) if p in masks[rec.from_bus] and p in masks[rec.to_bus]]
    dead = np.ones(3, dtype=bool)
    dead[live] = False
    if np.any(rec.matrix[dead, :] != 0) or np.any(rec.matrix[:, dead] != 0):
        raise FeederFormatError(
            f"branch {rec.from_bus}-{rec.to_bus}: matrix touches a phase absent at an endpoint"
        )
    sub = rec.matrix[np.ix_(live, live)]
    if rec.kind == "y_pu":
        y_sub = sub
    else:
        z_sub = sub / z_base if rec.kind == "z_ohm" else sub
        try:
            y_sub = np.linalg.inv(z_sub)
        except np.linalg.LinAlgError as exc:
            raise FeederFormatError(
                f"branch {rec.from_bus}-{rec.to_bus}: impedance block is singular"
            ) from exc
    y = np.zeros((3, 3), dtype=complex)
    y[np.ix_(live, live)] = y_sub
    return y


def to_network(file: FeederFile) -> Network:
    """Convert a parsed feeder to a per-unit Network and validate it."""
    z_base = file.base_v_kv**2 * 1000.0 / file.base_s_kva
    masks = {b.id: PhaseMask.from_string(b.phases) for b in file.buses}
    buses = tuple(Bus(b.id, masks[b.id], b.vmin_pu, b.vmax_pu) for b in file.buses)
    branches = tuple(
        Branch(r.from_bus, r.to_bus, _branch_admittance_pu(r, masks, z_base)) for r in file.branches
    )
    loads = tuple(
        Load(r.bus, r.phase, r.p_kw / file.base_s_kva, r.q_kvar / file.base_s_kva) for r in file.loads
    )
    generators = tuple(
        Generator(
            r.bus,
            r.phase,
            r.pmin_kw / file.base_s_kva,
            r.pmax_kw / file.base_s_kva,
            r.qmin_kvar / file.base_s_kva,
            r.qmax_kvar / file.base_s_kva,
        )
        for r in file.generators
    )
    kind = "radial" if len(branches) == len(buses) - 1 else "meshed"
    network = Network(
        buses=buses,
        branches=branches,
        loads=loads,
        generators=generators,
        slack_bus=file.slack.bus,
        slack_voltage=np.asarray(file.slack.v_pu, dtype=complex),
        base_s_kva=file.base_s_kva,
        base_v_kv=file.base_v_kv,
        kind=kind,
    )
    validate_network(network)
    return network


def to_feeder(network: Network) -> FeederFile:
    """Reverse per-unit conversion back to physical units (branches as y_pu)."""
    s = network.base_s_kva
    return FeederFile(
        version=1,
        base_s_kva=s,
        base_v_kv=network.base_v_kv,
        buses=tuple(BusRecord(b.id, b.phases.to_string(), b.vmin, b.vmax) for b in network.buses),
        branches=tuple(
            BranchRecord(br.from_bus, br.to_bus, "y_pu", np.array(br.y, dtype=complex))
            for br in network.branches
        ),
        loads=tuple(LoadRecord(ld.bus, ld.phase, ld.p * s, ld.q * s) for ld in network.loads),
        generators=tuple(
            GeneratorRecord(g.bus, g.phase, g.pmin * s, g.pmax * s, g.qmin * s, g.qmax * s)
            for g in network.generators
        ),
        slack=SlackRecord(network.slack_bus, np.array(network.slack_voltage, dtype=complex)),
    )


def randomize_loads(network: Network, spec: RandomizationSpec) -> Network:
    """Redraw every load record: P ~ U[p_lo, p_hi] kW, pf ~ U[pf_lo, pf_hi],
    Q = P tan(acos(pf)).  Deterministic for a fixed seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    new_loads = []
    for load in network.loads:
        p_kw = rng.uniform(spec.p_lo_kw, spec.p_hi_kw)
        pf = rng.uniform(spec.pf_lo, spec.pf_hi)
        q_kvar = p_kw * math.tan(math.acos(pf))
        new_loads.append(
            Load(load.bus, load.phase, p_kw / network.base_s_kva, q_kvar / network.base_s_kva)
        )
    return replace(network, loads=tuple(new_loads))


def generate_feeder(
    n_buses: int,
    *,
    phase_policy: str = "abc",
    tie_lines: int = 0,
    z_self: complex = 0.002 + 0.004j,
    z_mutual: complex = 0.0005 + 0.001j,
    seed: int = 0,
    load_kw: float = 0.4,
    load_pf: float = 0.95,
    vmin: float = 0.9,
    vmax: float = 1.1,
    base_s_kva: float = 100.0,
    base_v_kv: float = 0.4,
) -> Network:
    """Synthesize a feeder: random recursive tree rooted at the slack bus,
    plus ``tie_lines`` extra branches between non-adjacent buses (each closes
    an independent loop).  Deterministic per seed.

    ``phase_policy``: "abc" (all three-phase), "a" (single-phase), or "mixed"
    (random non-empty subsets; the slack always carries every phase present).
    """
    if n_buses < 2:
        raise ValueError("need at least 2 buses")
    if tie_lines < 0:
        raise ValueError("tie_lines must be >= 0")
    if phase_policy not in ("abc", "a", "mixed"):
        raise ValueError(f"unknown phase policy {phase_policy!r}")
    rng = np.random.default_rng(seed)
    width = len(str(n_buses - 1))
    ids = [str(i).zfill(width) for i in range(n_buses)]

    edges = [(int(rng.integers(0, i)), i) for i in range(1, n_buses)]
    parent = {child: par for par, child in edges}

    if phase_policy == "abc":
        masks = [PhaseMask(True, True, True) for _ in ids]
    elif phase_policy == "a":
        masks = [PhaseMask(True, False, False) for _ in ids]
    else:
        # Phases drop off downstream: each bus carries a non-empty subset of
        # its tree parent's phases, so every branch couples at least one phase.
        masks = [PhaseMask(True, True, True)]
        for i in range(1, n_buses):
            avail = masks[parent[i]].phases()
            keep = rng.random(len(avail)) < 0.7
            if not keep.any():
                keep[int(rng.integers(0, len(avail)))] = True
            chosen = {p for p, k in zip(avail, keep) if k}
            masks.append(PhaseMask("a" in chosen, "b" in chosen, "c" in chosen))

    adjacent = {(min(a, b), max(a, b)) for a, b in edges}
    candidates = [
        (i, j)
        for i in range(n_buses)
        for j in range(i + 1, n_buses)
        if (i, j) not in adjacent and any(p in masks[i] and p in masks[j] for p in PHASES)
    ]
    if tie_lines > len(candidates):
        raise ValueError(
            f"cannot add {tie_lines} tie-lines: only {len(candidates)} non-adjacent pairs"
        )
    ties = [candidates[k] for k in sorted(rng.choice(len(candidates), size=tie_lines, replace=False))] if tie_lines else []

    def block(i: int, j: int) -> np.ndarray:
        live = [k for k, p in enumerate(PHASES) if p in masks[i] and p in masks[j]]
        z = np.zeros((3, 3), dtype=complex)
        for a in live:
            for b in live:
                z[a, b] = z_self if a == b else z_mutual
        y = np.zeros((3, 3), dtype=complex)
        sub = z[np.ix_(live, live)]
        y[np.ix_(live, live)] = np.linalg.inv(sub)
        return y

    branches = [Branch(ids[a], ids[b], block(a, b)) for a, b in edges]
    branches += [Branch(ids[a], ids[b], block(a, b)) for a, b in ties]

    q_kvar = load_kw * math.tan(math.acos(load_pf))
    loads = [
        Load(ids[i], p, load_kw / base_s_kva, q_kvar / base_s_kva)
        for i in range(1, n_buses)
        for p in masks[i].phases()
    ]

    slack_v = np.where([p in masks[0] for p in PHASES], nominal_phasors(), 0.0 + 0.0j)
    network = Network(
        buses=tuple(Bus(ids[i], masks[i], vmin, vmax) for i in range(n_buses)),
        branches=tuple(branches),
        loads=tuple(loads),
        generators=(),
        slack_bus=ids[0],
        slack_voltage=slack_v,
        base_s_kva=base_s_kva,
        base_v_kv=base_v_kv,
        kind="radial" if not ties else "meshed",
    )
    validate_network(network)
    return network
