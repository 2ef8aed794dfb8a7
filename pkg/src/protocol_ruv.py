"""Referee side of the RUV sub-protocol.

N = s/4 sequential CHSH games are played with inputs read from S1 (a from
its first N bits, b from its last N). If the win count clears the threshold
cos^2(pi/8) N - sqrt(N log N) / (2 sqrt 2), one sub-block of device A's
outputs is chosen with S2 and returned.

Blocks are numbered from 1 and laid out row-major: block i, sub-block j of
length L covers x[(i-1) t + (j-1) L : (i-1) t + j L] (0-based slice).
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from src.devices import AuditLog, DeviceEndpoint, chsh_win, play_round
from src.errors import ConfigError, InputError
from src.params import ProtocolConstants, RuvParams, ruv_params
from src.protocol_vv import DEVICE_FAULTS
from src.transcript import ProtocolTranscript
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger

logger = get_logger(__name__)


def run_games(
    dev_a: DeviceEndpoint,
    dev_b: DeviceEndpoint,
    a: BitString,
    b: BitString,
    transcript: Optional[ProtocolTranscript] = None,
    iteration: int = 0,
    progress: bool = False,
) -> Tuple[BitString, BitString, int]:
    """
    Play N CHSH games strictly in sequence.

    Args:
        dev_a: Receives a_i only
        dev_b: Receives b_i only
        a, b: N input bits each
        transcript: Receives every round and the audit log
        iteration: Expansion iteration
        progress: Show a tqdm bar

    Returns:
        (x, y, w): both output strings and the referee's win count

    Raises:
        InputError: |a| != |b|
        NonSignalingViolation, ProtocolError, CapacityError: device fault
    """
    if len(a) != len(b):
        raise InputError(f"Input strings differ in length: {len(a)} vs {len(b)}")
    n_games = len(a)
    x = np.zeros(n_games, dtype=np.uint8)
    y = np.zeros(n_games, dtype=np.uint8)
    wins = 0
    for i in tqdm(range(n_games), desc="RUV games", disable=not progress):
        ai, bi = a[i], b[i]
        x[i] = play_round(dev_a, ai, i, "ruv", iteration, transcript.audit if transcript else None)
        y[i] = play_round(dev_b, bi, i, "ruv", iteration, transcript.audit if transcript else None)
        wins += chsh_win(ai, bi, int(x[i]), int(y[i]))
        if transcript is not None:
            transcript.record_round(True, ai, bi, int(x[i]), int(y[i]))
    return BitString(x), BitString(y), wins


def check_threshold(w: int, params: RuvParams) -> bool:
    """Pass iff w >= params.win_threshold."""
    if not 0 <= w <= params.n_games:
        raise InputError(f"Win count {w} outside [0, {params.n_games}]")
    return w >= params.win_threshold


def sub_block_slice(i: int, j: int, params: RuvParams) -> slice:
    """0-based slice of x for block i, sub-block j (both 1-based)."""
    start = (i - 1) * params.t + (j - 1) * params.sub_block_len
    return slice(start, start + params.sub_block_len)


def fallback_probability(choices: int, chunk_bits: int, s2_len: int) -> float:
    """Probability that every chunk of S2 is rejected."""
    if choices <= 1 or chunk_bits == 0:
        return 0.0
    return (1 - choices / 2 ** chunk_bits) ** (s2_len // chunk_bits)


@dataclass(frozen=True)
class Selection:
    i: Optional[int]
    j: Optional[int]
    z: Optional[BitString]
    fallback: bool = False
    aborted: bool = False
    cause: str = ""
    bits_consumed: int = 0
    fallback_probability: float = 0.0


def select_sub_block(
    x: BitString,
    s2: BitString,
    params: RuvParams,
    policy: str = "modulo",
) -> Selection:
    """
    Choose (i, j) uniformly with S2 and slice z out of x.

    S2 is read in ceil(log2 M)-bit big-endian chunks, M = blocks x sub-blocks;
    the first chunk below M is taken. If none is, ``policy="modulo"`` reduces
    the last chunk mod M (flagged) and ``policy="abort"`` aborts.

    Returns:
        Selection with 1-based (i, j) and z, or an aborted Selection
    """
    if policy not in ("modulo", "abort"):
        raise ConfigError(f"Unknown selection fallback {policy!r}")
    subs = params.subs_per_block
    choices = params.num_blocks * subs
    if choices == 1:
        return Selection(1, 1, x[sub_block_slice(1, 1, params)])

    chunk_bits = math.ceil(math.log2(choices))
    p_fallback = fallback_probability(choices, chunk_bits, len(s2))
    num_chunks = len(s2) // chunk_bits
    if num_chunks == 0:
        return Selection(None, None, None, aborted=True, cause="S2 shorter than one selection chunk",
                         fallback_probability=1.0)

    value, fallback, consumed = None, False, 0
    for c in range(num_chunks):
        consumed = (c + 1) * chunk_bits
        candidate = s2[c * chunk_bits: consumed].to_int()
        if candidate < choices:
            value = candidate
            break
    if value is None:
        if policy == "abort":
            return Selection(None, None, None, aborted=True, cause="S2 exhausted before an accepted sample",
                             bits_consumed=consumed, fallback_probability=p_fallback)
        value = candidate % choices
        fallback = True
        logger.warning(f"Sub-block selection fell back to modulo reduction (probability {p_fallback:.3g})")

    i, j = value // subs + 1, value % subs + 1
    return Selection(i, j, x[sub_block_slice(i, j, params)], fallback, False, "", consumed, p_fallback)


@dataclass
class RuvRun:
    params: RuvParams
    s1: BitString
    s2: BitString
    a: BitString
    b: BitString
    transcript: ProtocolTranscript
    x: Optional[BitString] = None
    y: Optional[BitString] = None
    w: int = 0
    aborted: bool = False
    cause: str = ""
    chosen_block: Optional[int] = None
    chosen_sub: Optional[int] = None
    z: Optional[BitString] = None
    selection: Optional[Selection] = None

    @property
    def output(self) -> Optional[BitString]:
        return self.z

    @property
    def seed_consumed(self) -> int:
        used = 2 * self.params.n_games
        return used + (self.selection.bits_consumed if self.selection else 0)


def ruv_summary(run: RuvRun) -> dict:
    selection = run.selection
    return {
        "decision": "abort" if run.aborted else "pass",
        "cause": run.cause,
        "w": run.w,
        "threshold": run.params.win_threshold,
        "log_base": run.params.log_base,
        "i": run.chosen_block,
        "j": run.chosen_sub,
        "z": run.z.serialize() if run.z is not None else None,
        "fallback": selection.fallback if selection else False,
        "fallback_probability": selection.fallback_probability if selection else None,
        "r_nominal": run.params.r,
        "realized_length": run.params.sub_block_len,
        "t_constraint_ok": run.params.t_constraint_ok,
        "seed_consumed": run.seed_consumed,
    }


def _split(seed: BitString, params: RuvParams) -> Tuple[BitString, BitString, BitString, BitString]:
    half = len(seed) // 2
    s1, s2 = seed[:half], seed[half: 2 * half]
    n_games = params.n_games
    return s1, s2, s1[:n_games], s1[half - n_games:]


def run_ruv(
    dev_a: DeviceEndpoint,
    dev_b: DeviceEndpoint,
    seed: BitString,
    consts: ProtocolConstants,
    iteration: int = 0,
    cluster: int = 0,
    progress: bool = False,
    retain_audit: bool = True,
) -> RuvRun:
    """
    One RUV call.

    Args:
        dev_a, dev_b: The cluster's RUV pair
        seed: s-bit seed, s >= 16
        consts: Protocol constants
        iteration: Expansion iteration number
        cluster: Cluster index, for the transcript
        progress: Show a tqdm bar over games
        retain_audit: Keep every message (False checks them on the fly)

    Returns:
        RuvRun; on success |z| = floor(sqrt(t))

    Raises:
        InvalidSeedLength: s < 16
        ConfigError: paper mode with t <= 85
    """
    params = ruv_params(len(seed), consts)
    if not params.t_constraint_ok:
        if consts.mode == "paper":
            raise ConfigError(f"RUV block length t={params.t} must exceed 85 in paper mode")
        logger.warning(f"RUV block length t={params.t} <= 85; the rigidity guarantee does not apply")

    s1, s2, a, b = _split(seed, params)
    transcript = ProtocolTranscript(
        "ruv", iteration, cluster, (dev_a.name, dev_b.name), audit=AuditLog(retain=retain_audit)
    )
    transcript.header = {
        "seed": seed.serialize(),
        "params": params.to_dict(),
        "selection_fallback": consts.selection_fallback,
        "mode": consts.mode,
    }
    run = RuvRun(params, s1, s2, a, b, transcript)
    logger.info(f"RUV start: s={len(seed)} on {dev_a.name}/{dev_b.name}, N={params.n_games}, t={params.t}")

    try:
        run.x, run.y, run.w = run_games(dev_a, dev_b, a, b, transcript, iteration, progress)
    except DEVICE_FAULTS as e:
        logger.error(f"Device fault during RUV games: {e}")
        run.aborted, run.cause = True, f"device fault: {e}"
        run.w = transcript.win_count()
        transcript.summary = ruv_summary(run)
        return run

    if not check_threshold(run.w, params):
        run.aborted = True
        run.cause = f"win count {run.w} below threshold {params.win_threshold:.2f}"
        logger.info(f"RUV abort: {run.cause}")
        transcript.summary = ruv_summary(run)
        return run

    selection = select_sub_block(run.x, s2, params, consts.selection_fallback)
    run.selection = selection
    if selection.aborted:
        run.aborted, run.cause = True, f"selection: {selection.cause}"
        logger.info(f"RUV abort: {run.cause}")
    else:
        run.chosen_block, run.chosen_sub, run.z = selection.i, selection.j, selection.z
        logger.info(f"RUV passed: w={run.w}/{params.n_games}, block ({selection.i}, {selection.j}), {len(run.z)} bits")
    transcript.summary = ruv_summary(run)
    return run


def replay_ruv(transcript: ProtocolTranscript, consts: ProtocolConstants) -> dict:
    """
    Recompute w, the threshold decision, (i, j) and z from a transcript.

    Returns:
        Dict of recomputed values, per-field match flags and ``ok``
    """
    seed = BitString.from_hex(transcript.header["seed"])
    params = ruv_params(len(seed), consts)
    _, s2, a, b = _split(seed, params)
    recorded = transcript.summary
    cols = transcript.arrays()
    rounds = transcript.num_rounds
    checks = {
        "inputs": bool(np.array_equal(cols["x"], a.bits[:rounds]) and np.array_equal(cols["y"], b.bits[:rounds])),
    }
    w = transcript.win_count()
    checks["w"] = w == recorded.get("w")
    result = {"w": w, "threshold": params.win_threshold}
    checks["threshold"] = recorded.get("threshold") == params.win_threshold

    if rounds < params.n_games:
        decision = "abort"
    elif not check_threshold(w, params):
        decision = "abort"
    else:
        selection = select_sub_block(BitString(cols["a"]), s2, params, consts.selection_fallback)
        decision = "abort" if selection.aborted else "pass"
        result.update({
            "i": selection.i,
            "j": selection.j,
            "z": selection.z.serialize() if selection.z is not None else None,
        })
        checks["selection"] = (selection.i, selection.j) == (recorded.get("i"), recorded.get("j"))
        checks["z"] = result["z"] == recorded.get("z")
    result["decision"] = decision
    checks["decision"] = decision == recorded.get("decision")
    result["checks"] = checks
    result["ok"] = all(checks.values())
    return result
