"""
Referee side of the VV sub-protocol.

The seed is split in halves S1 and S2. An entropy source (Protocol B by
default) plays n rounds against two devices using S1 for its test rounds;
if the devices pass, the extractor turns device A's n output bits into v(s)
bits using the start of S2 as extractor seed.

HOW TO ADD A NEW ENTROPY SOURCE:
================================

1. Implement the ``EntropySource`` protocol:

   class MySource:
       name = "mine"
       placeholder_flags = ()

       def generate(self, dev_a, dev_b, s1, params, consts, transcript, iteration=0, progress=False):
           ...
           return EntropyResult(...)

2. Register it:

   ENTROPY_SOURCES["mine"] = MySource()

3. Select it with ``run_vv(..., source="mine")``.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Protocol, Tuple

import numpy as np
from tqdm import tqdm

from src.devices import AuditLog, DeviceEndpoint, chsh_win, play_round
from src.errors import CapacityError, ConfigError, NonSignalingViolation, ProtocolError
from src.extractor import ExtractorSpec, extract, solve_spec
from src.params import COS2_PI_8, ProtocolConstants, VvParams, vv_params
from src.transcript import ProtocolTranscript
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger
from src.utils.rng import keyed_stream

logger = get_logger(__name__)

DEVICE_FAULTS = (NonSignalingViolation, ProtocolError, CapacityError)


@dataclass
class EntropyResult:
    """Outcome of an entropy-generation phase."""

    output: Optional[BitString]
    aborted: bool
    cause: str = ""
    test_rounds: int = 0
    test_wins: int = 0
    threshold: float = 0.0
    seed_consumed: int = 0
    flags: Tuple[str, ...] = ()

    @property
    def win_fraction(self) -> Optional[float]:
        return self.test_wins / self.test_rounds if self.test_rounds else None


class EntropySource(Protocol):
    name: str
    placeholder_flags: Tuple[str, ...]

    def generate(
        self,
        dev_a: DeviceEndpoint,
        dev_b: DeviceEndpoint,
        s1: BitString,
        params: VvParams,
        consts: ProtocolConstants,
        transcript: ProtocolTranscript,
        iteration: int = 0,
        progress: bool = False,
    ) -> EntropyResult:
        ...


def protocol_b_budget(n: int, s1_len: int, consts: ProtocolConstants) -> Tuple[int, int]:
    """(T, seed bits needed) for n Protocol-B rounds; T = 0 needs no bits."""
    num_tests = int(math.floor(n * consts.vv_test_density))
    if num_tests == 0:
        return 0, 0
    return num_tests, min(consts.vv_key_bits, s1_len) + 2 * num_tests


def plan_test_rounds(n: int, s1: BitString, consts: ProtocolConstants) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Test positions and inputs derived from S1.

    The first min(vv_key_bits, |S1|) bits key a Philox permutation of the
    n rounds; its first T entries are the test rounds. The next 2T bits are
    the test inputs, (x, y) for the j-th test position.

    Returns:
        (positions, x_inputs, y_inputs, bits consumed)

    Raises:
        ConfigError: S1 too short for T test rounds
    """
    num_tests, needed = protocol_b_budget(n, len(s1), consts)
    if num_tests == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.astype(np.uint8), empty.astype(np.uint8), 0
    key_bits = min(consts.vv_key_bits, len(s1))
    if needed > len(s1):
        raise ConfigError(
            f"Protocol B needs {needed} seed bits for {num_tests} test rounds, S1 has {len(s1)}"
        )
    key = s1[:key_bits].to_int()
    positions = keyed_stream(key).permutation(n)[:num_tests]
    inputs = s1.bits[key_bits:needed]
    return positions, inputs[0::2].copy(), inputs[1::2].copy(), needed


def run_protocol_b(
    dev_a: DeviceEndpoint,
    dev_b: DeviceEndpoint,
    s1: BitString,
    params: VvParams,
    consts: ProtocolConstants,
    transcript: Optional[ProtocolTranscript] = None,
    iteration: int = 0,
    progress: bool = False,
) -> EntropyResult:
    """
    Rare seeded test rounds among fixed-input (0, 0) rounds.

    Args:
        dev_a: Device whose outputs form Y
        dev_b: Its partner
        s1: First half of the VV seed
        params: VV parameters; params.n rounds are played
        consts: Density, margin and key length
        transcript: Receives every round and the audit log
        iteration: Expansion iteration (for device scripts)
        progress: Show a tqdm bar

    Returns:
        EntropyResult; output holds dev_a's n bits unless aborted

    Raises:
        ConfigError: S1 exhausted by the test-round plan
    """
    n = params.n
    transcript = transcript or ProtocolTranscript("vv")
    positions, test_x, test_y, consumed = plan_test_rounds(n, s1, consts)
    x_in = np.zeros(n, dtype=np.uint8)
    y_in = np.zeros(n, dtype=np.uint8)
    is_test = np.zeros(n, dtype=bool)
    x_in[positions], y_in[positions], is_test[positions] = test_x, test_y, True

    threshold = COS2_PI_8 - consts.vv_margin
    flags = []
    num_tests = len(positions)
    if num_tests == 0:
        flags.append("vacuous_acceptance")
        logger.warning(f"Protocol B with n={n} has no test rounds; accepting vacuously")

    outputs = np.zeros(n, dtype=np.uint8)
    wins = 0
    rounds = tqdm(range(n), desc="Protocol B", disable=not progress)
    for k in rounds:
        x, y = int(x_in[k]), int(y_in[k])
        try:
            a = play_round(dev_a, x, k, "vv", iteration, transcript.audit)
            b = play_round(dev_b, y, k, "vv", iteration, transcript.audit)
        except DEVICE_FAULTS as e:
            logger.error(f"Device fault in Protocol B round {k}: {e}")
            return EntropyResult(None, True, f"device fault: {e}", num_tests, wins, threshold, consumed, tuple(flags))
        outputs[k] = a
        if is_test[k]:
            wins += chsh_win(x, y, a, b)
        transcript.record_round(bool(is_test[k]), x, y, a, b)

    if num_tests and wins / num_tests < threshold:
        cause = f"test-round win fraction {wins}/{num_tests} below {threshold:.4f}"
        logger.info(f"Protocol B abort: {cause}")
        return EntropyResult(None, True, cause, num_tests, wins, threshold, consumed, tuple(flags))

    logger.debug(f"Protocol B passed with {wins}/{num_tests} test wins over {n} rounds")
    return EntropyResult(BitString(outputs), False, "", num_tests, wins, threshold, consumed, tuple(flags))


class ProtocolB:
    """Default entropy source; its density and margin are desk placeholders."""

    name = "protocol_b"
    placeholder_flags = ("protocol_b_density_placeholder", "protocol_b_margin_placeholder")

    def generate(self, dev_a, dev_b, s1, params, consts, transcript, iteration=0, progress=False):
        return run_protocol_b(dev_a, dev_b, s1, params, consts, transcript, iteration, progress)


ENTROPY_SOURCES: Dict[str, EntropySource] = {
    "protocol_b": ProtocolB(),
}


@dataclass
class VvRun:
    params: VvParams
    s1: BitString
    s2: BitString
    transcript: ProtocolTranscript
    y: Optional[BitString] = None
    x: Optional[BitString] = None
    aborted: bool = False
    cause: str = ""
    spec: Optional[ExtractorSpec] = None
    entropy: Optional[EntropyResult] = None
    seed_consumed: int = 0
    flags: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def output(self) -> Optional[BitString]:
        return self.x


def _abort(run: VvRun, cause: str) -> VvRun:
    run.aborted = True
    run.cause = cause
    run.x = None
    run.transcript.summary = vv_summary(run)
    logger.info(f"VV aborted: {cause}")
    return run


def vv_summary(run: VvRun) -> dict:
    entropy = run.entropy
    return {
        "decision": "abort" if run.aborted else "pass",
        "cause": run.cause,
        "test_rounds": entropy.test_rounds if entropy else 0,
        "test_wins": entropy.test_wins if entropy else 0,
        "threshold": entropy.threshold if entropy else None,
        "seed_consumed": run.seed_consumed,
        "y": run.y.serialize() if run.y is not None else None,
        "x": run.x.serialize() if run.x is not None else None,
        "flags": sorted(run.flags),
    }


def run_vv(
    dev_a: DeviceEndpoint,
    dev_b: DeviceEndpoint,
    seed: BitString,
    consts: ProtocolConstants,
    iteration: int = 0,
    cluster: int = 0,
    source: str = "protocol_b",
    progress: bool = False,
    retain_audit: bool = True,
) -> VvRun:
    """
    One VV call.

    Args:
        dev_a, dev_b: The cluster's VV pair
        seed: s-bit seed, s >= 8
        consts: Protocol constants
        iteration: Expansion iteration number
        cluster: Cluster index, for the transcript
        source: Key into ENTROPY_SOURCES
        progress: Show a tqdm bar over rounds
        retain_audit: Keep every message (False checks them on the fly)

    Returns:
        VvRun; on success |x| = v(s)

    Raises:
        InvalidSeedLength: s < 8
        ConfigError: unknown entropy source, or seed budget exceeded
    """
    if source not in ENTROPY_SOURCES:
        raise ConfigError(f"Unknown entropy source {source!r}")
    entropy_source = ENTROPY_SOURCES[source]
    params = vv_params(len(seed), consts)
    s1 = seed[: params.s1_len]
    s2 = seed[params.s1_len: params.s1_len + params.s2_len]
    transcript = ProtocolTranscript(
        "vv", iteration, cluster, (dev_a.name, dev_b.name), audit=AuditLog(retain=retain_audit)
    )
    transcript.header = {
        "seed": seed.serialize(),
        "params": params.to_dict(),
        "entropy_source": entropy_source.name,
        "placeholder_flags": list(entropy_source.placeholder_flags),
        "h_claimed": params.h,
        "h_status": "assumed",
        "mode": consts.mode,
    }
    run = VvRun(params, s1, s2, transcript, flags=tuple(params.flags))
    logger.info(f"VV start: s={len(seed)} on {dev_a.name}/{dev_b.name}, n={params.n}, v={params.v}")

    if not params.feasible:
        return _abort(run, f"infeasible parameters: {', '.join(params.flags)}")

    spec = solve_spec(params.n, params.v, params.epsilon, consts, h=params.h)
    run.spec = spec
    transcript.header["extractor"] = spec.to_dict()
    if spec.d > len(s2):
        return _abort(run, f"infeasible parameters: extractor seed {spec.d} > |S2| = {len(s2)}")

    entropy = entropy_source.generate(dev_a, dev_b, s1, params, consts, transcript, iteration, progress)
    run.entropy = entropy
    run.seed_consumed = entropy.seed_consumed
    run.flags = tuple(run.flags) + tuple(entropy.flags) + tuple(entropy_source.placeholder_flags)
    if entropy.aborted:
        return _abort(run, entropy.cause)

    run.y = entropy.output
    run.x = extract(run.y, s2[: spec.d], spec)
    run.seed_consumed += spec.d
    transcript.summary = vv_summary(run)
    logger.info(f"VV passed: {entropy.test_wins}/{entropy.test_rounds} test wins, {len(run.x)} bits out")
    return run


def replay_vv(transcript: ProtocolTranscript, consts: ProtocolConstants) -> dict:
    """
    Recompute the VV decision and output from a transcript.

    Returns:
        Dict of recomputed values and whether each matches the record
    """
    seed = BitString.from_hex(transcript.header["seed"])
    params = vv_params(len(seed), consts)
    s1 = seed[: params.s1_len]
    s2 = seed[params.s1_len: params.s1_len + params.s2_len]
    recorded = transcript.summary
    checks: Dict[str, bool] = {}

    result = {"decision": "abort" if not params.feasible else None}
    if params.feasible and transcript.num_rounds:
        positions, test_x, test_y, _ = plan_test_rounds(params.n, s1, consts)
        cols = transcript.arrays()
        planned = np.zeros(params.n, dtype=np.uint8)
        planned[positions] = 1
        checks["test_positions"] = bool(np.array_equal(planned[: transcript.num_rounds], cols["test"]))
        wins = transcript.win_count()
        checks["test_wins"] = wins == recorded.get("test_wins")
        threshold = COS2_PI_8 - consts.vv_margin
        passed = len(positions) == 0 or wins / len(positions) >= threshold
        if transcript.num_rounds < params.n:
            passed = False
        result["decision"] = "pass" if passed else "abort"
        if passed:
            spec = solve_spec(params.n, params.v, params.epsilon, consts, h=params.h)
            y = BitString(cols["a"])
            x = extract(y, s2[: spec.d], spec)
            result["x"] = x.serialize()
            checks["x"] = recorded.get("x") == result["x"]
    elif params.feasible:
        result["decision"] = recorded.get("decision")
    checks["decision"] = result["decision"] == recorded.get("decision")
    result["checks"] = checks
    result["ok"] = all(checks.values())
    return result
