"""Unbalanced three-phase network model and bus-admittance assembly.

Electrical quantities live on *bus-phase nodes*: a bus carrying phases a and
c contributes two nodes.  Nodes are ordered by ascending bus id, then phase
(a, b, c), and every vector or matrix in the package uses that ordering.
Branches are generic 3x3 complex admittance blocks in per-unit, which is
enough to express lines, cables, transformers, regulators and shunts after
external preprocessing; rows/columns of a block that touch a phase absent at
either endpoint must be identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

PHASES = ("a", "b", "c")


class NetworkError(ValueError):
    """A network description violates a structural invariant."""


def nominal_phasors() -> np.ndarray:
    """Balanced unit reference phasors (1∠0°, 1∠-120°, 1∠+120°), order a, b, c."""
    s = math.sqrt(3.0) / 2.0
    return np.array([1.0 + 0.0j, -0.5 - 1j * s, -0.5 + 1j * s])


@dataclass(frozen=True)
class PhaseMask:
    """Which of the three phases exist at a bus."""

    a: bool = False
    b: bool = False
    c: bool = False

    @classmethod
    def from_string(cls, text: str) -> PhaseMask:
        extra = set(text) - set(PHASES)
        if extra:
            raise NetworkError(f"unknown phase letters {sorted(extra)!r} in {text!r}")
        return cls("a" in text, "b" in text, "c" in text)

    def to_string(self) -> str:
        return "".join(self.phases())

    def phases(self) -> tuple[str, ...]:
        return tuple(p for p in PHASES if getattr(self, p))

    def __contains__(self, phase: str) -> bool:
        return phase in PHASES and getattr(self, phase)

    @property
    def count(self) -> int:
        return int(self.a) + int(self.b) + int(self.c)


@dataclass(frozen=True)
class Bus:
    id: str
    phases: PhaseMask
    vmin: float = 0.9
    vmax: float = 1.1


@dataclass(frozen=True)
class Branch:
    """Two-terminal element with a 3x3 per-unit admittance block ``y``.

    The block is oriented from ``from_bus``; assembly uses y_ji = y_ij^T
    (passive reciprocal convention), so the assembled matrix is symmetric.
    """

    from_bus: str
    to_bus: str
    y: np.ndarray


@dataclass(frozen=True)
class Load:
    """Wye-connected complex demand at one bus-phase node, per-unit."""

    bus: str
    phase: str
    p: float
    q: float

    @property
    def s(self) -> complex:
        return complex(self.p, self.q)


@dataclass(frozen=True)
class Generator:
    """Dispatchable injection bounds at one bus-phase node, per-unit."""

    bus: str
    phase: str
    pmin: float
    pmax: float
    qmin: float
    qmax: float


@dataclass(frozen=True)
class Network:
    """Immutable unbalanced three-phase network in per-unit."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...]
    generators: tuple[Generator, ...]
    slack_bus: str
    slack_voltage: np.ndarray  # complex, indexed by phase position a=0, b=1, c=2
    base_s_kva: float = 100.0
    base_v_kv: float = 0.4
    ref_phasors: np.ndarray = field(default_factory=nominal_phasors)
    kind: str = "radial"  # informational only

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise NetworkError(f"unknown bus {bus_id!r}")


@dataclass(frozen=True)
class BusPhaseIndex:
    """Deterministic bijection (bus id, phase) -> dense node index."""

    pairs: tuple[tuple[str, str], ...]
    position: dict[tuple[str, str], int]

    @property
    def n_ph(self) -> int:
        return len(self.pairs)

    def node(self, bus: str, phase: str) -> int:
        try:
            return self.position[(bus, phase)]
        except KeyError:
            raise NetworkError(f"no node for bus {bus!r} phase {phase!r}") from None

    def nodes_of(self, bus: str) -> tuple[int, ...]:
        return tuple(i for i, (b, _) in enumerate(self.pairs) if b == bus)


@dataclass(frozen=True)
class YBus:
    """Sparse complex nodal admittance matrix with slack/non-slack partition."""

    matrix: sp.csc_matrix
    slack: np.ndarray  # node indices of the slack bus's phases
    nonslack: np.ndarray


def build_index(network: Network) -> BusPhaseIndex:
    """Number the bus-phase nodes: ascending bus id, then phase order a, b, c."""
    ids = [b.id for b in network.buses]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError(f"duplicate bus ids {dupes!r}")
    pairs: list[tuple[str, str]] = []
    for bus in sorted(network.buses, key=lambda b: b.id):
        if bus.phases.count == 0:
            raise NetworkError(f"bus {bus.id!r} has no phases")
        pairs.extend((bus.id, p) for p in bus.phases.phases())
    return BusPhaseIndex(tuple(pairs), {pair: i for i, pair in enumerate(pairs)})


def _check_connected(network: Network) -> None:
    if len(network.buses) <= 1:
        return
    adjacency: dict[str, set[str]] = {b.id: set() for b in network.buses}
    for br in network.branches:
        adjacency[br.from_bus].add(br.to_bus)
        adjacency[br.to_bus].add(br.from_bus)
    seen = {network.buses[0].id}
    stack = [network.buses[0].id]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != len(network.buses):
        missing = sorted(set(adjacency) - seen)
        raise NetworkError(f"network is not connected; unreachable buses {missing!r}")


def assemble_ybus(network: Network, index: BusPhaseIndex) -> YBus:
    """Assemble the bus-phase admittance matrix from the branch blocks.

    Diagonal block (i, i) is the sum of incident branch blocks; off-diagonal
    block (i, j) is -y_ij when branch (i, j) exists and zero otherwise.
    """
    masks = {b.id: b.phases for b in network.buses}
    n = index.n_ph
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    def add(block_rows, block_cols, block) -> None:
        for a, ra in enumerate(block_rows):
            for b, cb in enumerate(block_cols):
                v = block[a, b]
                if v != 0:
                    rows.append(ra)
                    cols.append(cb)
                    vals.append(v)

    for br in network.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in masks:
                raise NetworkError(f"branch references unknown bus {end!r}")
        y = np.asarray(br.y, dtype=complex)
        if y.shape != (3, 3):
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: block must be 3x3")
        if not np.all(np.isfinite(y.view(float))):
            raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: non-finite admittance")
        common = [p for p in PHASES if p in masks[br.from_bus] and p in masks[br.to_bus]]
        live = [PHASES.index(p) for p in common]
        dead = np.ones(3, dtype=bool)
        dead[live] = False
        if np.any(y[dead, :] != 0) or np.any(y[:, dead] != 0):
            raise NetworkError(
                f"branch {br.from_bus}-{br.to_bus}: nonzero admittance on a phase "
                "absent at an endpoint"
            )
        sub = y[np.ix_(live, live)]
        f_nodes = [index.node(br.from_bus, p) for p in common]
        t_nodes = [index.node(br.to_bus, p) for p in common]
        add(f_nodes, f_nodes, sub)
        add(t_nodes, t_nodes, sub.T)
        add(f_nodes, t_nodes, -sub)
        add(t_nodes, f_nodes, -sub.T)

    _check_connected(network)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsc()
    slack = np.array(index.nodes_of(network.slack_bus), dtype=int)
    nonslack = np.array([i for i in range(n) if i not in set(slack.tolist())], dtype=int)
    return YBus(matrix, slack, nonslack)


def reference_voltages(network: Network, index: BusPhaseIndex) -> np.ndarray:
    """Per-node reference phasor V̂ (the network's per-phase references)."""
    out = np.empty(index.n_ph, dtype=complex)
    for i, (_, phase) in enumerate(index.pairs):
        out[i] = network.ref_phasors[PHASES.index(phase)]
    return out


def slack_voltages(network: Network, index: BusPhaseIndex) -> np.ndarray:
    """Fixed complex voltage for each slack node, in node order."""
    nodes = index.nodes_of(network.slack_bus)
    return np.array(
        [network.slack_voltage[PHASES.index(index.pairs[i][1])] for i in nodes],
        dtype=complex,
    )


def validate_network(network: Network) -> None:
    """Raise NetworkError on the first violated Network invariant."""
    index = build_index(network)  # catches duplicate ids / empty masks
    masks = {b.id: b.phases for b in network.buses}
    if network.slack_bus not in masks:
        raise NetworkError(f"slack bus {network.slack_bus!r} does not exist")
    present = PhaseMask(
        any(m.a for m in masks.values()),
        any(m.b for m in masks.values()),
        any(m.c for m in masks.values()),
    )
    for p in present.phases():
        if p not in masks[network.slack_bus]:
            raise NetworkError(f"slack bus lacks phase {p!r} which exists in the network")
    if np.asarray(network.slack_voltage).shape != (3,):
        raise NetworkError("slack voltage must have three phase entries")
    for bus in network.buses:
        if bus.id == network.slack_bus:
            continue
        if not 0.0 < bus.vmin < bus.vmax:
            raise NetworkError(f"bus {bus.id!r}: need 0 < vmin < vmax")
    for load in network.loads:
        if load.bus not in masks or load.phase not in masks[load.bus]:
            raise NetworkError(f"load references missing node ({load.bus!r}, {load.phase!r})")
        if not (math.isfinite(load.p) and math.isfinite(load.q)):
            raise NetworkError(f"load at ({load.bus!r}, {load.phase!r}) is non-finite")
    seen_gen: set[tuple[str, str]] = set()
    for gen in network.generators:
        if gen.bus not in masks or gen.phase not in masks[gen.bus]:
            raise NetworkError(f"generator references missing node ({gen.bus!r}, {gen.phase!r})")
        if gen.pmin > gen.pmax or gen.qmin > gen.qmax:
            raise NetworkError(f"generator at ({gen.bus!r}, {gen.phase!r}) has an empty box")
        if (gen.bus, gen.phase) in seen_gen:
            raise NetworkError(f"duplicate generator at ({gen.bus!r}, {gen.phase!r})")
        seen_gen.add((gen.bus, gen.phase))
    assemble_ybus(network, index)  # branch references, finiteness, connectivity
