"""Three-phase feeder description, per-unit scaling and JSON ingestion.

Networks are immutable. A network is either in SI units (volts, ohms,
siemens, watts, vars) as read from disk, or in per-unit on the pair
``(s_base, v_base_phase)``; ``Network.unit`` says which. Solvers accept
either and convert on entry.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_V_BASE_PHASE = 400.0 / math.sqrt(3.0)
DEFAULT_S_BASE = 1000.0
COND_LIMIT = 1e12
SYM_TOL = 1e-9


class Phase(IntEnum):
    a = 0
    b = 1
    c = 2

    @classmethod
    def parse(cls, value: "str | int | Phase") -> "Phase":
        if isinstance(value, Phase):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().lower()]
            except KeyError:
                raise ValueError(f"unknown phase {value!r}") from None
        return cls(int(value))


PHASES = (Phase.a, Phase.b, Phase.c)


class NetworkFormatError(ValueError):
    """The network document does not match the expected schema."""


class NetworkValidationError(ValueError):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        lines = "\n".join(f"  {d}" for d in diagnostics)
        super().__init__(f"network failed validation:\n{lines}")


@dataclass(frozen=True)
class Diagnostic:
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: {self.message}"


def _frozen(a, dtype=complex) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Node:
    id: int
    nominal_phase_voltage: float = DEFAULT_V_BASE_PHASE
    is_slack: bool = False


@dataclass(frozen=True, eq=False)
class Line:
    from_node: int
    to_node: int
    z_series: np.ndarray
    y_shunt: np.ndarray = field(default_factory=lambda: _frozen(np.zeros((3, 3))))
    p_flow_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "z_series", _frozen(self.z_series))
        object.__setattr__(self, "y_shunt", _frozen(self.y_shunt))

    @property
    def name(self) -> str:
        return f"line {self.from_node}-{self.to_node}"

    def __eq__(self, other):
        if not isinstance(other, Line):
            return NotImplemented
        return (self.from_node == other.from_node and self.to_node == other.to_node
                and np.array_equal(self.z_series, other.z_series)
                and np.array_equal(self.y_shunt, other.y_shunt)
                and self.p_flow_max == other.p_flow_max)

    __hash__ = None


@dataclass(frozen=True)
class Load:
    node: int
    phase: Phase
    p_demand: float
    q_demand: float = 0.0  # positive = inductive absorption


@dataclass(frozen=True)
class ConventionalGenerator:
    """Per-phase bounds apply identically to phases a, b and c."""

    node: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: float = 1.0


@dataclass(frozen=True)
class PvInverter:
    node: int
    phase: Phase
    s_available: float


@dataclass(frozen=True)
class OperatingLimits:
    v_min: float = 0.97
    v_max: float = 1.03


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    loads: tuple[Load, ...] = ()
    conventional_generators: tuple[ConventionalGenerator, ...] = ()
    pv_inverters: tuple[PvInverter, ...] = ()
    limits: OperatingLimits = OperatingLimits()
    s_base: float = DEFAULT_S_BASE
    v_base_phase: float = DEFAULT_V_BASE_PHASE
    unit: str = "si"

    def __post_init__(self):
        for name in ("nodes", "lines", "loads", "conventional_generators", "pv_inverters"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @property
    def slack(self) -> Node:
        return next(n for n in self.nodes if n.is_slack)

    def node_position(self, node_id: int) -> int:
        return self._positions()[node_id]

    def index(self, node_id: int, phase: "Phase | str | int") -> int:
        """Matrix row of ``(node, phase)``; node-major, phase-minor."""
        return 3 * self.node_position(node_id) + int(Phase.parse(phase))

    def _positions(self) -> dict[int, int]:
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {n.id: k for k, n in enumerate(self.nodes)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache

    def slack_voltages(self) -> np.ndarray:
        """Balanced positive-sequence phasors of the slack node, in the network's unit."""
        mag = self.slack.nominal_phase_voltage
        return mag * np.exp(-2j * np.pi / 3 * np.arange(3))

    def total_load(self) -> complex:
        return complex(sum(ld.p_demand for ld in self.loads), sum(ld.q_demand for ld in self.loads))

    def total_pv(self) -> float:
        return float(sum(pv.s_available for pv in self.pv_inverters))


# -- per-unit -----------------------------------------------------------------

def _check_bases(network: Network) -> None:
    if not (network.s_base > 0 and network.v_base_phase > 0
            and math.isfinite(network.s_base) and math.isfinite(network.v_base_phase)):
        raise ValueError(f"bases must be positive and finite, got s_base={network.s_base}, "
                         f"v_base_phase={network.v_base_phase}")


def _rescale(network: Network, power: float, impedance: float, voltage: float, unit: str) -> Network:
    """Divide powers, impedances and voltages by the given factors."""
    admittance = 1.0 / impedance
    return replace(
        network,
        nodes=tuple(replace(n, nominal_phase_voltage=n.nominal_phase_voltage / voltage)
                    for n in network.nodes),
        lines=tuple(Line(ln.from_node, ln.to_node, ln.z_series / impedance,
                         ln.y_shunt / admittance, ln.p_flow_max / power)
                    for ln in network.lines),
        loads=tuple(replace(ld, p_demand=ld.p_demand / power, q_demand=ld.q_demand / power)
                    for ld in network.loads),
        conventional_generators=tuple(
            replace(g, p_min=g.p_min / power, p_max=g.p_max / power,
                    q_min=g.q_min / power, q_max=g.q_max / power, cost=g.cost * power)
            for g in network.conventional_generators),
        pv_inverters=tuple(replace(pv, s_available=pv.s_available / power)
                           for pv in network.pv_inverters),
        unit=unit,
    )


def to_per_unit(network: Network) -> Network:
    """Express every quantity in per-unit of ``(s_base, v_base_phase)``.

    Generator cost is carried per unit power (currency per pu), so the
    objective value is unit-independent.
    """
    _check_bases(network)
    if network.unit == "pu":
        raise ValueError("network is already in per-unit")
    z_base = network.v_base_phase ** 2 / network.s_base
    return _rescale(network, network.s_base, z_base, network.v_base_phase, "pu")


def from_per_unit(network: Network) -> Network:
    _check_bases(network)
    if network.unit == "si":
        raise ValueError("network is already in SI units")
    z_base = network.v_base_phase ** 2 / network.s_base
    return _rescale(network, 1.0 / network.s_base, 1.0 / z_base, 1.0 / network.v_base_phase, "si")


def as_per_unit(network: Network) -> Network:
    return network if network.unit == "pu" else to_per_unit(network)


# -- validation ---------------------------------------------------------------

def _finite(*values) -> bool:
    return all(np.all(np.isfinite(np.asarray(v))) for v in values)


def validate_network(network: Network) -> list[Diagnostic]:
    """Check every type invariant; an empty list means the network is valid."""
    diags: list[Diagnostic] = []

    def bad(element, message):
        diags.append(Diagnostic(element, message))

    if not (network.s_base > 0 and network.v_base_phase > 0):
        bad("bases", "bases must be positive")
    lim = network.limits
    if not (0 < lim.v_min < lim.v_max):
        bad("limits", f"require 0 < v_min < v_max, got {lim.v_min}, {lim.v_max}")

    ids = [n.id for n in network.nodes]
    seen = set()
    for n in network.nodes:
        if n.id in seen:
            bad(f"node {n.id}", "duplicate node id")
        seen.add(n.id)
        if not (n.nominal_phase_voltage > 0 and math.isfinite(n.nominal_phase_voltage)):
            bad(f"node {n.id}", "nominal phase voltage must be positive")
    n_slack = sum(1 for n in network.nodes if n.is_slack)
    if n_slack == 0:
        bad("nodes", "no slack node")
    elif n_slack > 1:
        bad("nodes", "multiple slack nodes")

    known = set(ids)
    for ln in network.lines:
        el = ln.name
        for end in (ln.from_node, ln.to_node):
            if end not in known:
                bad(el, f"unknown node {end}")
        if ln.from_node == ln.to_node:
            bad(el, "from and to node coincide")
        z, ysh = ln.z_series, ln.y_shunt
        if z.shape != (3, 3) or ysh.shape != (3, 3):
            bad(el, "impedance matrices must be 3x3")
            continue
        if not _finite(z, ysh):
            bad(el, "non-finite impedance data")
            continue
        scale = max(np.abs(z).max(), 1e-300)
        if np.abs(z - z.T).max() > SYM_TOL * scale:
            bad(el, "series impedance not symmetric")
        if not np.any(z) or np.linalg.cond(z) > COND_LIMIT:
            bad(el, "singular series impedance")
        if np.abs(ysh - ysh.T).max() > SYM_TOL * max(np.abs(ysh).max(), 1e-300):
            bad(el, "shunt admittance not symmetric")
        if np.any(np.diag(ysh).real < 0):
            bad(el, "shunt admittance has negative conductance on the diagonal")
        if not ln.p_flow_max > 0:
            bad(el, "flow limit must be positive")

    for k, ld in enumerate(network.loads):
        el = f"load {k} (node {ld.node})"
        if ld.node not in known:
            bad(el, f"unknown node {ld.node}")
        if not _finite(ld.p_demand, ld.q_demand):
            bad(el, "non-finite demand")
        elif ld.p_demand < 0:
            bad(el, "negative active demand")

    for k, g in enumerate(network.conventional_generators):
        el = f"generator {k} (node {g.node})"
        if g.node not in known:
            bad(el, f"unknown node {g.node}")
        if not g.p_min <= g.p_max:
            bad(el, "p_min exceeds p_max")
        if not g.q_min <= g.q_max:
            bad(el, "q_min exceeds q_max")
        if not g.cost >= 0:
            bad(el, "negative cost")

    for k, pv in enumerate(network.pv_inverters):
        el = f"pv {k} (node {pv.node})"
        if pv.node not in known:
            bad(el, f"unknown node {pv.node}")
        if not (pv.s_available >= 0 and math.isfinite(pv.s_available)):
            bad(el, "available apparent power must be non-negative")

    if network.nodes and not diags:
        adj: dict[int, set[int]] = {i: set() for i in ids}
        for ln in network.lines:
            adj[ln.from_node].add(ln.to_node)
            adj[ln.to_node].add(ln.from_node)
        stack, reached = [ids[0]], {ids[0]}
        while stack:
            for nb in adj[stack.pop()] - reached:
                reached.add(nb)
                stack.append(nb)
        if len(reached) != len(ids):
            missing = sorted(known - reached)
            bad("topology", f"network is not connected; unreachable nodes {missing}")
    return diags


# -- JSON ---------------------------------------------------------------------

def _need(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise NetworkFormatError(f"{where}: expected an object")
    if key not in obj:
        raise NetworkFormatError(f"{where}: missing field '{key}'")
    return obj[key]


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _matrix(value, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise NetworkFormatError(f"{where}: expected a 3x3 matrix of [re, im] pairs") from None
    if arr.shape != (3, 3, 2):
        raise NetworkFormatError(f"{where}: expected a 3x3 matrix of [re, im] pairs, "
                                 f"got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def _phase(value, where: str) -> Phase:
    try:
        return Phase.parse(value)
    except (ValueError, TypeError):
        raise NetworkFormatError(f"{where}: unknown phase {value!r}") from None


def network_from_dict(doc: dict[str, Any]) -> Network:
    """Build an SI-unit network from the parsed JSON document (no validation)."""
    bases = _need(doc, "bases", "document")
    limits = _need(doc, "limits", "document")
    nodes = []
    for k, nd in enumerate(_need(doc, "nodes", "document")):
        where = f"nodes[{k}]"
        nodes.append(Node(
            id=int(_num(_need(nd, "id", where), f"{where}.id")),
            nominal_phase_voltage=_num(nd.get("v_nominal_v", bases.get("v_base_phase_v")),
                                       f"{where}.v_nominal_v"),
            is_slack=bool(nd.get("is_slack", False)),
        ))
    lines = []
    for k, ln in enumerate(doc.get("lines", [])):
        where = f"lines[{k}]"
        pmax = ln.get("p_flow_max_w")
        lines.append(Line(
            from_node=int(_num(_need(ln, "from", where), f"{where}.from")),
            to_node=int(_num(_need(ln, "to", where), f"{where}.to")),
            z_series=_matrix(_need(ln, "z_series", where), f"{where}.z_series"),
            y_shunt=(_matrix(ln["y_shunt"], f"{where}.y_shunt") if "y_shunt" in ln
                     else np.zeros((3, 3), complex)),
            p_flow_max=math.inf if pmax is None else _num(pmax, f"{where}.p_flow_max_w"),
        ))
    loads = [
        Load(node=int(_num(_need(ld, "node", f"loads[{k}]"), f"loads[{k}].node")),
             phase=_phase(_need(ld, "phase", f"loads[{k}]"), f"loads[{k}].phase"),
             p_demand=_num(_need(ld, "p_w", f"loads[{k}]"), f"loads[{k}].p_w"),
             q_demand=_num(ld.get("q_var", 0.0), f"loads[{k}].q_var"))
        for k, ld in enumerate(doc.get("loads", []))
    ]
    gens = []
    for k, g in enumerate(doc.get("conv_generators", [])):
        where = f"conv_generators[{k}]"
        gens.append(ConventionalGenerator(
            node=int(_num(_need(g, "node", where), f"{where}.node")),
            p_min=_num(_need(g, "p_min_w", where), f"{where}.p_min_w"),
            p_max=_num(_need(g, "p_max_w", where), f"{where}.p_max_w"),
            q_min=_num(_need(g, "q_min_var", where), f"{where}.q_min_var"),
            q_max=_num(_need(g, "q_max_var", where), f"{where}.q_max_var"),
            cost=_num(g.get("cost_per_w", 1.0), f"{where}.cost_per_w"),
        ))
    pvs = [
        PvInverter(node=int(_num(_need(pv, "node", f"pv_inverters[{k}]"), f"pv_inverters[{k}].node")),
                   phase=_phase(_need(pv, "phase", f"pv_inverters[{k}]"), f"pv_inverters[{k}].phase"),
                   s_available=_num(_need(pv, "s_available_va", f"pv_inverters[{k}]"),
                                    f"pv_inverters[{k}].s_available_va"))
        for k, pv in enumerate(doc.get("pv_inverters", []))
    ]
    return Network(
        nodes=tuple(nodes), lines=tuple(lines), loads=tuple(loads),
        conventional_generators=tuple(gens), pv_inverters=tuple(pvs),
        limits=OperatingLimits(_num(_need(limits, "v_min_pu", "limits"), "limits.v_min_pu"),
                               _num(_need(limits, "v_max_pu", "limits"), "limits.v_max_pu")),
        s_base=_num(_need(bases, "s_base_va", "bases"), "bases.s_base_va"),
        v_base_phase=_num(_need(bases, "v_base_phase_v", "bases"), "bases.v_base_phase_v"),
    )


def _pairs(m: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in m]


def network_to_dict(network: Network) -> dict[str, Any]:
    if network.unit != "si":
        network = from_per_unit(network)
    lines = []
    for ln in network.lines:
        entry = {"from": ln.from_node, "to": ln.to_node,
                 "z_series": _pairs(ln.z_series), "y_shunt": _pairs(ln.y_shunt)}
        if math.isfinite(ln.p_flow_max):
            entry["p_flow_max_w"] = ln.p_flow_max
        lines.append(entry)
    return {
        "bases": {"s_base_va": network.s_base, "v_base_phase_v": network.v_base_phase},
        "limits": {"v_min_pu": network.limits.v_min, "v_max_pu": network.limits.v_max},
        "nodes": [{"id": n.id, "is_slack": n.is_slack, "v_nominal_v": n.nominal_phase_voltage}
                  for n in network.nodes],
        "lines": lines,
        "loads": [{"node": ld.node, "phase": ld.phase.name, "p_w": ld.p_demand, "q_var": ld.q_demand}
                  for ld in network.loads],
        "conv_generators": [{"node": g.node, "p_min_w": g.p_min, "p_max_w": g.p_max,
                             "q_min_var": g.q_min, "q_max_var": g.q_max, "cost_per_w": g.cost}
                            for g in network.conventional_generators],
        "pv_inverters": [{"node": pv.node, "phase": pv.phase.name, "s_available_va": pv.s_available}
                         for pv in network.pv_inverters],
    }


def parse_network(doc: dict[str, Any]) -> Network:
    network = network_from_dict(doc)
    diags = validate_network(network)
    if diags:
        raise NetworkValidationError(diags)
    return network


def load_network(path: "str | Path") -> Network:
    """Read and validate a network file."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"{path}: invalid JSON ({exc})") from None
    return parse_network(doc)


def save_network(network: Network, path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(network), fh, indent=1)
        fh.write("\n")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("lvopf") / "data" / name))


def reference_network() -> Network:
    """The bundled 18-node residential feeder."""
    return load_network(bundled_path("ref18.json"))


def loads_by_phase(network: Network, attr: str = "p_demand") -> np.ndarray:
    out = np.zeros(3)
    for ld in network.loads:
        out[int(ld.phase)] += getattr(ld, attr)
    return out

