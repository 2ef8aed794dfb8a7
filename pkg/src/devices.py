"""
Simulated non-signaling devices, their strategies and the message auditor.

Eight devices are split into two clusters of four. Within a cluster the
roles are ``vv_a``, ``vv_b`` (the VV pair) and ``ruv_a``, ``ruv_b`` (the RUV
pair). Device ``D1`` is cluster 0's ``vv_a``, ``D5`` cluster 1's ``vv_a``.

The referee talks to a device only through ``play_round``: one input
message in, one output message back. Devices never see each other's inputs;
quantum strategies share entanglement through an ``EntanglementGroup`` that
allocates a fresh register for every round on demand.

HOW TO ADD A NEW STRATEGY:
==========================

1. Subclass ``Strategy`` and implement ``respond``:

   class MyStrategy(Strategy):
       kind = "mine"

       def respond(self, device, inp, iteration):
           # device.measure_own(angle) for quantum strategies,
           # device.memory for local state
           return inp

2. Register a factory in STRATEGY_REGISTRY:

   STRATEGY_REGISTRY["mine"] = lambda arg, base_dir: MyStrategy()

3. Use it from a strategy file: ``strategy.cluster0.vv_a = mine``.

STRATEGY FILE FORMAT:
=====================

    strategy.cluster0.vv_a = ideal
    strategy.cluster0.ruv_b = noisy:0.01
    strategy.cluster1.vv_b = classical:01
    strategy.cluster1.ruv_a = script:scripts/adversary.json

Missing roles default to ``ideal``. Script paths are relative to the
strategy file.
"""

import json
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from scipy.stats import chi2_contingency

from src.errors import ConfigError, InputError
from src.qsim import MeasurementRequest, QuantumBackend
from src.utils.logging_setup import get_logger
from src.utils.rng import RngTree

logger = get_logger(__name__)

ROLES = ("vv_a", "vv_b", "ruv_a", "ruv_b")
PAIRS = {"vv": ("vv_a", "vv_b"), "ruv": ("ruv_a", "ruv_b")}
REFEREE = "referee"
EAVESDROPPER = "E"

# Ideal CHSH measurement angles by side and input
IDEAL_ANGLES = {"a": (0.0, math.pi / 2), "b": (math.pi / 4, -math.pi / 4)}

ALLOWED_INPUT_KEYS = frozenset({"input", "round", "iteration", "protocol", "device"})


@dataclass(frozen=True)
class DeviceId:
    """Index 1..8, cluster 0 or 1, and role within the cluster."""

    index: int
    cluster: int
    role: str

    @classmethod
    def of(cls, cluster: int, role: str) -> "DeviceId":
        if cluster not in (0, 1) or role not in ROLES:
            raise ConfigError(f"No device for cluster {cluster}, role {role}")
        return cls(cluster * 4 + ROLES.index(role) + 1, cluster, role)

    @classmethod
    def from_name(cls, name: str) -> "DeviceId":
        match = re.fullmatch(r"D([1-8])", str(name).strip())
        if not match:
            raise ConfigError(f"Unknown device {name!r}")
        index = int(match.group(1))
        return cls(index, (index - 1) // 4, ROLES[(index - 1) % 4])

    @property
    def name(self) -> str:
        return f"D{self.index}"

    @property
    def side(self) -> str:
        return self.role[-1]


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    kind: str
    payload: Dict[str, Any]


# ============================================================================
# STRATEGIES
# ============================================================================

class Strategy(ABC):
    """How a device maps its input to an output."""

    kind: str = ""
    quantum: bool = False

    @abstractmethod
    def respond(self, device: "DeviceEndpoint", inp: int, iteration: int) -> int:
        """Output bit for ``inp``; may use only the device's own state."""

    def describe(self) -> str:
        return self.kind


class IdealStrategy(Strategy):
    """Measure the shared EPR half at the Tsirelson angles."""

    kind = "ideal"
    quantum = True

    def respond(self, device, inp, iteration):
        return device.measure_own(IDEAL_ANGLES[device.id.side][inp])


class NoisyStrategy(Strategy):
    """Ideal strategy after depolarizing the device's own qubit."""

    kind = "noisy"
    quantum = True

    def __init__(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"noise probability must lie in [0, 1], got {p}")
        self.p = p

    def respond(self, device, inp, iteration):
        device.depolarize_own(self.p)
        return device.measure_own(IDEAL_ANGLES[device.id.side][inp])

    def describe(self) -> str:
        return f"noisy:{self.p}"


class ClassicalStrategy(Strategy):
    """Deterministic table: output = table[input]."""

    kind = "classical"

    def __init__(self, table: Sequence[int], label: Optional[str] = None):
        table = tuple(int(t) for t in table)
        if len(table) != 2 or any(t not in (0, 1) for t in table):
            raise ConfigError(f"classical table must be two bits, got {table}")
        self.table = table
        self.label = label

    def respond(self, device, inp, iteration):
        return self.table[inp]

    def describe(self) -> str:
        return self.label or f"classical:{self.table[0]}{self.table[1]}"


class AnglesStrategy(Strategy):
    """Measure the shared qubit at arbitrary per-input angles."""

    kind = "angles"
    quantum = True

    def __init__(self, angles: Sequence[float], noise: float = 0.0):
        if len(angles) != 2:
            raise ConfigError("angles script needs exactly two angles")
        self.angles = tuple(float(a) for a in angles)
        self.noise = float(noise)

    def respond(self, device, inp, iteration):
        if self.noise:
            device.depolarize_own(self.noise)
        return device.measure_own(self.angles[inp])


class AutomatonStrategy(Strategy):
    """Finite automaton over the device's own input history."""

    kind = "automaton"

    def __init__(self, initial: str, transitions: Mapping[str, Sequence[str]], outputs: Mapping[str, Sequence[int]]):
        states = set(transitions) | set(outputs)
        if initial not in transitions or initial not in outputs:
            raise ConfigError(f"automaton initial state {initial!r} is undefined")
        for state in states:
            if state not in transitions or state not in outputs:
                raise ConfigError(f"automaton state {state!r} needs both transitions and outputs")
            if len(transitions[state]) != 2 or len(outputs[state]) != 2:
                raise ConfigError(f"automaton state {state!r} needs one entry per input bit")
            for target in transitions[state]:
                if target not in transitions:
                    raise ConfigError(f"automaton transition to unknown state {target!r}")
        self.initial = initial
        self.transitions = {k: tuple(v) for k, v in transitions.items()}
        self.outputs = {k: tuple(int(b) for b in v) for k, v in outputs.items()}

    def respond(self, device, inp, iteration):
        state = device.memory.get("state", self.initial)
        device.memory["state"] = self.transitions[state][inp]
        return self.outputs[state][inp]


class ScriptedStrategy(Strategy):
    """A script loaded from JSON, with optional abort and entanglement requests."""

    kind = "script"

    def __init__(
        self,
        inner: Strategy,
        source: str,
        abort_after_iteration: Optional[int] = None,
        entangle_with: Sequence[str] = (),
    ):
        self.inner = inner
        self.source = source
        self.abort_after_iteration = abort_after_iteration
        self.entangle_with = tuple(entangle_with)
        self.quantum = inner.quantum

    def respond(self, device, inp, iteration):
        if self.abort_after_iteration is not None and iteration > self.abort_after_iteration:
            return 0
        return self.inner.respond(device, inp, iteration)

    def describe(self) -> str:
        return f"script:{self.source}"


def load_script(path: Union[str, Path]) -> ScriptedStrategy:
    """
    Load a scripted strategy from JSON.

    Args:
        path: Script file with a ``kind`` of table, automaton or angles

    Returns:
        ScriptedStrategy wrapping the decoded program

    Raises:
        ConfigError: unreadable file or malformed program
    """
    path = Path(path)
    try:
        program = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read strategy script {path}: {e}") from e

    kind = program.get("kind")
    try:
        if kind == "table":
            inner: Strategy = ClassicalStrategy(program["table"])
        elif kind == "automaton":
            inner = AutomatonStrategy(program["initial"], program["transitions"], program["outputs"])
        elif kind == "angles":
            inner = AnglesStrategy(program["angles"], program.get("noise", 0.0))
        else:
            raise ConfigError(f"Unknown script kind {kind!r} in {path}")
    except KeyError as e:
        raise ConfigError(f"Script {path} is missing {e}") from e

    entangle = [str(d) if str(d).startswith("D") else f"D{d}" for d in program.get("entangle_with", [])]
    for name in entangle:
        DeviceId.from_name(name)
    return ScriptedStrategy(inner, path.name, program.get("abort_after_iteration"), entangle)


def _parse_noise(arg: str, base_dir: Path) -> Strategy:
    try:
        return NoisyStrategy(float(arg))
    except ValueError as e:
        raise ConfigError(f"Bad noise level {arg!r}") from e


def _parse_classical(arg: str, base_dir: Path) -> Strategy:
    if not re.fullmatch(r"[01]{2}", arg or ""):
        raise ConfigError(f"classical strategy needs two bits, got {arg!r}")
    return ClassicalStrategy((int(arg[0]), int(arg[1])))


# ============================================================================
# STRATEGY REGISTRY
# ============================================================================

STRATEGY_REGISTRY: Dict[str, Callable[[str, Path], Strategy]] = {
    "ideal": lambda arg, base_dir: IdealStrategy(),
    "noisy": _parse_noise,
    "classical": _parse_classical,
    "zeros": lambda arg, base_dir: ClassicalStrategy((0, 0), label="zeros"),
    "ones": lambda arg, base_dir: ClassicalStrategy((1, 1), label="ones"),
    "script": lambda arg, base_dir: load_script(base_dir / arg),
}


def parse_strategy(spec: str, base_dir: Union[str, Path] = ".") -> Strategy:
    """Build a strategy from ``name`` or ``name:argument``."""
    name, _, arg = spec.strip().partition(":")
    factory = STRATEGY_REGISTRY.get(name)
    if factory is None:
        raise ConfigError(f"Unknown strategy {spec!r}; known: {', '.join(STRATEGY_REGISTRY)}")
    return factory(arg, Path(base_dir))


StrategyTable = Dict[int, Dict[str, Strategy]]


def load_strategy_file(path: Union[str, Path]) -> Dict[Tuple[int, str], str]:
    """Read ``strategy.clusterC.role = spec`` lines into a dict of specs."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Strategy file not found: {path}")
    specs = {}
    for key, value in dotenv_values(path).items():
        match = re.fullmatch(r"strategy\.cluster([01])\.(vv_a|vv_b|ruv_a|ruv_b)", key)
        if not match:
            raise ConfigError(f"Unknown key {key!r} in {path}")
        if not value:
            raise ConfigError(f"Key {key!r} in {path} has no value")
        specs[(int(match.group(1)), match.group(2))] = value
    return specs


def resolve_strategies(
    specs: Optional[Mapping[Tuple[int, str], str]] = None,
    base_dir: Union[str, Path] = ".",
) -> StrategyTable:
    """Strategies for all eight devices; roles without a spec are ideal."""
    specs = specs or {}
    return {
        cluster: {role: parse_strategy(specs.get((cluster, role), "ideal"), base_dir) for role in ROLES}
        for cluster in (0, 1)
    }


def load_strategies(path: Optional[Union[str, Path]] = None) -> StrategyTable:
    if path is None:
        return resolve_strategies()
    return resolve_strategies(load_strategy_file(path), Path(path).parent)


# ============================================================================
# ENDPOINTS AND ENTANGLEMENT
# ============================================================================

class Eavesdropper:
    """Passive holder of purifying qubits; never receives protocol messages."""

    name = EAVESDROPPER

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.guesses: List[Tuple[str, int, int]] = []
        self.groups: List["EntanglementGroup"] = []

    def measure(self, backend: QuantumBackend, handle: int, qubit: int, group: str, index: int) -> None:
        bit = backend.measure(MeasurementRequest(handle, qubit, 0.0, self.name), self.rng)
        self.guesses.append((group, index, bit))

    def guess_all(self) -> List[Tuple[str, int, int]]:
        """Measure every held qubit in Z and return (group, round, bit) guesses."""
        for group in self.groups:
            group.flush()
        return list(self.guesses)


class EntanglementGroup:
    """Devices sharing a fresh entangled register every round."""

    def __init__(
        self,
        name: str,
        members: Sequence[str],
        backend: QuantumBackend,
        eavesdropper: Optional[Eavesdropper] = None,
        requested_by: Sequence[str] = (),
    ):
        self.name = name
        self.members = tuple(members)
        self.backend = backend
        self.eavesdropper = eavesdropper
        self.requested_by = tuple(requested_by)
        self._live: Dict[int, int] = {}
        self._latest: Dict[str, int] = {}
        if eavesdropper is not None:
            eavesdropper.groups.append(self)

    def _allocate(self) -> int:
        owners = list(self.members)
        if self.eavesdropper is not None:
            owners.append(self.eavesdropper.name)
        if len(owners) == 2:
            return self.backend.allocate_epr_pairs(1, owners[0], owners[1])
        return self.backend.allocate_ghz(owners)

    def _retire(self, index: int) -> None:
        handle = self._live.pop(index)
        if handle not in self.backend.registers:
            return
        if self.eavesdropper is not None:
            self.eavesdropper.measure(self.backend, handle, len(self.members), self.name, index)
        self.backend.release(handle)

    def qubit_for(self, member: str, index: int) -> Tuple[int, int]:
        """Register handle and qubit position of ``member`` for round ``index``."""
        if index not in self._live:
            self._live[index] = self._allocate()
        self._latest[member] = index
        floor = min(self._latest.values())
        for old in [i for i in self._live if i < floor]:
            self._retire(old)
        return self._live[index], self.members.index(member)

    def flush(self) -> None:
        for index in sorted(self._live):
            self._retire(index)


class DeviceEndpoint:
    """One device: strategy, private streams, local memory."""

    def __init__(
        self,
        device_id: DeviceId,
        strategy: Strategy,
        backend: QuantumBackend,
        rng: np.random.Generator,
        noise_rng: np.random.Generator,
        group: Optional[EntanglementGroup] = None,
    ):
        self.id = device_id
        self.name = device_id.name
        self.strategy = strategy
        self.backend = backend
        self.rng = rng
        self.noise_rng = noise_rng
        self.group = group
        self.memory: Dict[str, Any] = {}
        self.inputs = bytearray()
        self.outputs = bytearray()

    @property
    def rounds_played(self) -> int:
        return len(self.inputs)

    def _own_qubit(self) -> Tuple[int, int]:
        if self.group is None:
            raise ConfigError(f"{self.name} has no entangled partner")
        return self.group.qubit_for(self.name, self.rounds_played)

    def measure_own(self, angle: float) -> int:
        handle, qubit = self._own_qubit()
        return self.backend.measure(MeasurementRequest(handle, qubit, angle, self.name), self.rng)

    def depolarize_own(self, p: float) -> None:
        handle, qubit = self._own_qubit()
        self.backend.depolarize(handle, qubit, p, self.noise_rng)

    def receive(self, message: Message) -> Message:
        """Handle one input message and return the output message."""
        inp = int(message.payload["input"])
        if inp not in (0, 1):
            raise InputError(f"Device input must be a bit, got {inp}")
        out = int(self.strategy.respond(self, inp, int(message.payload.get("iteration", 0))))
        self.inputs.append(inp)
        self.outputs.append(out)
        return Message(self.name, REFEREE, "output", {"output": out, "round": message.payload.get("round")})


# ============================================================================
# AUDIT
# ============================================================================

class AuditLog:
    """Compact record of every message crossing a referee-device channel.

    With ``retain=False`` messages are checked as they arrive and only the
    violations are kept; long expansion runs use this.
    """

    def __init__(self, retain: bool = True):
        self.retain = retain
        self.records: List[Tuple[int, str, str, str, Tuple[Tuple[str, Any], ...]]] = []
        self.count = 0
        self.violations: List["Violation"] = []

    def record(self, message: Message) -> None:
        payload = tuple(sorted(message.payload.items()))
        entry = (self.count, message.sender, message.recipient, message.kind, payload)
        self.count += 1
        if self.retain:
            self.records.append(entry)
            return
        violation = _check_entry(*entry)
        if violation is not None:
            self.violations.append(violation)

    def __len__(self) -> int:
        return self.count

    def to_rows(self) -> List[list]:
        return [[seq, s, r, k, [list(p) for p in payload]] for seq, s, r, k, payload in self.records]

    @classmethod
    def from_rows(cls, rows) -> "AuditLog":
        log = cls()
        for seq, sender, recipient, kind, payload in rows:
            log.records.append((seq, sender, recipient, kind, tuple((k, v) for k, v in payload)))
        log.count = len(log.records)
        return log


@dataclass(frozen=True)
class Violation:
    seq: int
    kind: str
    sender: str
    recipient: str
    round: Optional[int]
    detail: str


@dataclass
class AuditReport:
    messages_checked: int = 0
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "messages_checked": self.messages_checked,
            "violations": [v.__dict__ for v in self.violations],
        }


def _check_entry(
    seq: int, sender: str, recipient: str, kind: str, payload: Tuple[Tuple[str, Any], ...]
) -> Optional[Violation]:
    fields = dict(payload)
    round_index = fields.get("round")
    if sender != REFEREE and recipient != REFEREE:
        return Violation(seq, "channel", sender, recipient, round_index, "device-to-device message")
    if recipient == REFEREE:
        return None
    extra = sorted(set(fields) - ALLOWED_INPUT_KEYS)
    if extra:
        return Violation(seq, "input", sender, recipient, round_index, f"foreign fields {extra}")
    if "device" in fields and fields["device"] != recipient:
        return Violation(seq, "input", sender, recipient, round_index, f"names {fields['device']}")
    return None


def audit_transcript(source: Any) -> AuditReport:
    """
    Check the message discipline of a run.

    Every message must travel between the referee and one device. A message
    to device d may carry only its own input and round bookkeeping; a
    ``device`` field must name d itself.

    Args:
        source: An AuditLog, or anything with an ``audit`` attribute holding one

    Returns:
        AuditReport listing channel and input violations
    """
    log = source if isinstance(source, AuditLog) else getattr(source, "audit", None)
    report = AuditReport()
    if log is None:
        return report
    if not log.retain:
        report.messages_checked = log.count
        report.violations = list(log.violations)
    else:
        for entry in log.records:
            report.messages_checked += 1
            violation = _check_entry(*entry)
            if violation is not None:
                report.violations.append(violation)
    if report.violations:
        logger.warning(f"Audit found {len(report.violations)} violation(s) in {report.messages_checked} messages")
    return report


def play_round(
    endpoint: DeviceEndpoint,
    inp: int,
    round_index: int = 0,
    protocol: str = "",
    iteration: int = 0,
    audit: Optional[AuditLog] = None,
) -> int:
    """
    Send one input to a device and collect its output.

    Args:
        endpoint: Target device
        inp: Input bit
        round_index: Round number within the protocol
        protocol: "vv" or "ruv"
        iteration: Expansion iteration (1-based; 0 outside an expansion)
        audit: Log receiving both messages

    Returns:
        Output bit
    """
    message = Message(
        REFEREE,
        endpoint.name,
        "input",
        {"input": int(inp), "round": round_index, "protocol": protocol, "iteration": iteration},
    )
    reply = endpoint.receive(message)
    if audit is not None:
        audit.record(message)
        audit.record(reply)
    return reply.payload["output"]


# ============================================================================
# SPAWNING
# ============================================================================

@dataclass
class Cluster:
    cluster_id: int
    endpoints: Dict[str, DeviceEndpoint]
    groups: List[EntanglementGroup] = field(default_factory=list)

    def pair(self, protocol: str) -> Tuple[DeviceEndpoint, DeviceEndpoint]:
        a, b = PAIRS[protocol]
        return self.endpoints[a], self.endpoints[b]

    def device_names(self) -> List[str]:
        return [self.endpoints[role].name for role in ROLES]

    def strategies(self) -> Dict[str, str]:
        return {role: self.endpoints[role].strategy.describe() for role in ROLES}


def _normalize_roles(strategies: Union[Mapping[str, Strategy], Sequence[Tuple[str, Strategy]]]) -> Dict[str, Strategy]:
    items = list(strategies.items()) if isinstance(strategies, Mapping) else list(strategies)
    table: Dict[str, Strategy] = {}
    for role, strategy in items:
        if role not in ROLES:
            raise ConfigError(f"Unknown role {role!r}")
        if role in table:
            raise ConfigError(f"Duplicate role {role!r}")
        table[role] = strategy
    missing = [role for role in ROLES if role not in table]
    if missing:
        raise ConfigError(f"Missing strategies for roles: {', '.join(missing)}")
    return table


def _build_groups(
    devices: Dict[str, Tuple[DeviceId, Strategy]],
    backend: QuantumBackend,
    eavesdropper: Optional[Eavesdropper],
    label: str,
) -> Dict[str, EntanglementGroup]:
    """Pair groups, merged along script ``entangle_with`` requests."""
    parent = {name: name for name in devices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    by_cluster_role = {(d.cluster, d.role): name for name, (d, _) in devices.items()}
    for name, (device_id, _) in devices.items():
        partner_role = PAIRS["vv" if device_id.role.startswith("vv") else "ruv"]
        for role in partner_role:
            other = by_cluster_role.get((device_id.cluster, role))
            if other:
                parent[find(other)] = find(name)

    requests: Dict[str, List[str]] = {}
    for name, (_, strategy) in devices.items():
        for target in getattr(strategy, "entangle_with", ()):
            if target not in devices:
                logger.warning(f"{name} asks to entangle with {target}, which is not spawned with it; ignored")
                continue
            parent[find(target)] = find(name)
            requests.setdefault(name, []).append(target)
            logger.info(f"{name} shares entanglement with {target} (script request)")

    members: Dict[str, List[str]] = {}
    for name in sorted(devices, key=lambda n: devices[n][0].index):
        members.setdefault(find(name), []).append(name)

    groups = {}
    for root, names in members.items():
        if len(names) < 2:
            continue
        requesters = [n for n in names if n in requests]
        group = EntanglementGroup(f"{label}:{'-'.join(names)}", names, backend, eavesdropper, requesters)
        for n in names:
            groups[n] = group
    return groups


def _spawn(
    table: Dict[int, Dict[str, Strategy]],
    backend: QuantumBackend,
    rng_tree: RngTree,
    eavesdropper: Optional[Eavesdropper],
    generation: int,
) -> Dict[int, Cluster]:
    devices = {}
    for cluster_id, roles in table.items():
        for role, strategy in _normalize_roles(roles).items():
            device_id = DeviceId.of(cluster_id, role)
            devices[device_id.name] = (device_id, strategy)
    groups = _build_groups(devices, backend, eavesdropper, f"g{generation}")

    clusters: Dict[int, Cluster] = {}
    for name, (device_id, strategy) in devices.items():
        endpoint = DeviceEndpoint(
            device_id,
            strategy,
            backend,
            rng_tree.get(f"device:{name}:measure:{generation}"),
            rng_tree.get(f"device:{name}:noise:{generation}"),
            groups.get(name),
        )
        if strategy.quantum and endpoint.group is None:
            raise ConfigError(f"{name} uses a quantum strategy but has no partner")
        cluster = clusters.setdefault(device_id.cluster, Cluster(device_id.cluster, {}))
        cluster.endpoints[device_id.role] = endpoint
    for cluster in clusters.values():
        seen = []
        for endpoint in cluster.endpoints.values():
            if endpoint.group is not None and endpoint.group not in seen:
                seen.append(endpoint.group)
        cluster.groups = seen
    return clusters


def spawn_cluster(
    cluster_id: int,
    strategies: Union[Mapping[str, Strategy], Sequence[Tuple[str, Strategy]]],
    backend: QuantumBackend,
    rng_tree: RngTree,
    eavesdropper: Optional[Eavesdropper] = None,
    generation: int = 0,
) -> Cluster:
    """
    Spawn the four devices of one cluster.

    Args:
        cluster_id: 0 or 1
        strategies: One strategy per role
        backend: Shared quantum backend
        rng_tree: Source of per-device streams
        eavesdropper: Optional passive tap on every pair
        generation: Bumped when a cluster is re-spawned, for fresh streams

    Returns:
        Cluster of live endpoints

    Raises:
        ConfigError: duplicate, missing or unknown roles
    """
    if cluster_id not in (0, 1):
        raise ConfigError(f"Cluster id must be 0 or 1, got {cluster_id}")
    table = {cluster_id: _normalize_roles(strategies)}
    return _spawn(table, backend, rng_tree, eavesdropper, generation)[cluster_id]


class DevicePool:
    """All eight devices, with optional eavesdropper and cluster re-spawning."""

    def __init__(
        self,
        strategies: StrategyTable,
        backend: QuantumBackend,
        rng_tree: RngTree,
        tap: bool = False,
    ):
        self.strategies = strategies
        self.backend = backend
        self.rng_tree = rng_tree
        self.eavesdropper = Eavesdropper(rng_tree.get("eavesdropper")) if tap else None
        self.generations = {0: 0, 1: 0}
        self.clusters = _spawn(strategies, backend, rng_tree, self.eavesdropper, 0)

    def cluster(self, cluster_id: int) -> Cluster:
        return self.clusters[cluster_id]

    def reset_cluster(self, cluster_id: int) -> Cluster:
        """Replace a cluster's devices with fresh ones (no memory, new streams)."""
        self.generations[cluster_id] += 1
        generation = self.generations[cluster_id]
        self.clusters[cluster_id] = _spawn(
            {cluster_id: self.strategies[cluster_id]}, self.backend, self.rng_tree, self.eavesdropper, generation
        )[cluster_id]
        logger.debug(f"Cluster {cluster_id} re-spawned (generation {generation})")
        return self.clusters[cluster_id]


def spawn_all(
    strategies: StrategyTable,
    backend: QuantumBackend,
    rng_tree: RngTree,
    tap: bool = False,
) -> DevicePool:
    """Spawn both clusters; script entanglement requests may cross clusters."""
    return DevicePool(strategies, backend, rng_tree, tap=tap)


def spawn_pair(
    strategy_a: Strategy,
    strategy_b: Strategy,
    seed: int = 0,
    protocol: str = "vv",
    tap: bool = False,
    backend: Optional[QuantumBackend] = None,
) -> Tuple[DeviceEndpoint, DeviceEndpoint]:
    """Two devices of cluster 0 playing ``protocol``; the rest of the cluster is ideal."""
    a_role, b_role = PAIRS[protocol]
    roles = {role: IdealStrategy() for role in ROLES}
    roles[a_role], roles[b_role] = strategy_a, strategy_b
    tree = RngTree(seed)
    eavesdropper = Eavesdropper(tree.get("eavesdropper")) if tap else None
    cluster = spawn_cluster(0, roles, backend or QuantumBackend(), tree, eavesdropper)
    return cluster.pair(protocol)


# ============================================================================
# CHECKS
# ============================================================================

def chsh_win(x: int, y: int, a: int, b: int) -> bool:
    return (a ^ b) == (x & y)


def classical_ceiling() -> Tuple[Fraction, List[Tuple[Tuple[int, int], Tuple[int, int]]]]:
    """
    Best uniform-input CHSH win probability over all 16 deterministic pairs.

    Returns:
        (maximum win probability, list of optimal (table_a, table_b) pairs)
    """
    tables = list(product((0, 1), repeat=2))
    scores = {}
    for ta, tb in product(tables, tables):
        wins = sum(chsh_win(x, y, ta[x], tb[y]) for x, y in product((0, 1), repeat=2))
        scores[(ta, tb)] = Fraction(wins, 4)
    best = max(scores.values())
    return best, [pair for pair, score in scores.items() if score == best]


@dataclass
class LocalityReport:
    table: List[List[int]]
    p_value: float
    significance: float

    @property
    def holds(self) -> bool:
        return self.p_value > self.significance


def locality_check(
    make_pair: Callable[[], Tuple[DeviceEndpoint, DeviceEndpoint]],
    inputs_a: Sequence[int],
    inputs_b: Sequence[int],
    seed: int = 0,
    significance: float = 1e-3,
) -> LocalityReport:
    """
    Replay a pair with the B-side inputs permuted and compare A's behaviour.

    A's (input, output) counts from the original and the permuted replay
    form a 2x4 contingency table; a chi-square test at ``significance``
    decides whether A's output distribution moved.
    """
    if len(inputs_a) != len(inputs_b):
        raise InputError("input sequences differ in length")
    permuted = np.random.default_rng(seed).permutation(np.asarray(inputs_b))
    table = []
    for b_inputs in (inputs_b, permuted):
        dev_a, dev_b = make_pair()
        counts = [0, 0, 0, 0]
        for k, (x, y) in enumerate(zip(inputs_a, b_inputs)):
            a = play_round(dev_a, int(x), k, "locality")
            play_round(dev_b, int(y), k, "locality")
            counts[2 * int(x) + a] += 1
        table.append(counts)
    observed = np.array(table)
    observed = observed[:, observed.sum(axis=0) > 0]
    if observed.shape[1] < 2:
        return LocalityReport(table, 1.0, significance)
    _, p_value, _, _ = chi2_contingency(observed)
    return LocalityReport(table, float(p_value), significance)
