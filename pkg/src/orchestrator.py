"""
Cluster expansion, infinite expansion and run directories.

One cluster expansion feeds the seed to the cluster's VV pair and VV's
output to its RUV pair; the RUV sub-block is the new seed. Infinite
expansion alternates the two clusters, iteration i running on cluster
i mod 2 (iterations count from 1), and stops at the first abort.

Before any device runs, ``plan_chain`` works out every stage's parameters
and refuses chains that cannot finish.

A run directory holds::

    config.json                  constants, strategies, seed, options, plan
    transcript-<i>-vv.jsonl      one per iteration
    transcript-<i>-ruv.jsonl     absent when VV aborted
    summary.json / summary.txt   the report

``replay`` rebuilds the report from the directory and checks every referee
decision against the recorded one.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.devices import ROLES, Cluster, DevicePool, StrategyTable, spawn_cluster
from src.errors import ConfigError, InputError
from src.extractor import solve_spec
from src.params import (
    BLOCKING_FLAGS,
    ErrorBounds,
    ErrorLedger,
    ProtocolConstants,
    RuvParams,
    VvParams,
    delta_ledger,
    error_bounds,
    ruv_params,
    vv_params,
)
from src.protocol_ruv import RuvRun, replay_ruv, run_ruv
from src.protocol_vv import VvRun, protocol_b_budget, replay_vv, run_vv
from src.qsim import QuantumBackend
from src.report import RunReport, build_report, render_json, render_text
from src.transcript import ProtocolTranscript
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger
from src.utils.rng import RngTree

logger = get_logger(__name__)

MIN_VV_SEED = 8
MIN_RUV_SEED = 16


# ============================================================================
# PRE-FLIGHT
# ============================================================================

@dataclass
class StagePlan:
    """Parameters of one planned iteration; ``issues`` block the chain."""

    iteration: int
    cluster: int
    m: int
    vv: Optional[VvParams] = None
    extractor: Optional[Dict[str, Any]] = None
    test_rounds: int = 0
    test_bits: int = 0
    ruv: Optional[RuvParams] = None
    output_len: int = 0
    issues: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "cluster": self.cluster,
            "m": self.m,
            "vv": self.vv.to_dict() if self.vv else None,
            "extractor": self.extractor,
            "test_rounds": self.test_rounds,
            "test_bits": self.test_bits,
            "ruv": self.ruv.to_dict() if self.ruv else None,
            "output_len": self.output_len,
            "issues": list(self.issues),
            "notes": list(self.notes),
        }


@dataclass
class ChainPlan:
    m: int
    k: int
    stages: List[StagePlan]

    @property
    def feasible(self) -> bool:
        return len(self.stages) == self.k and all(stage.feasible for stage in self.stages)

    @property
    def lengths(self) -> List[int]:
        return [self.m] + [stage.output_len for stage in self.stages]

    def first_failure(self) -> Optional[StagePlan]:
        return next((stage for stage in self.stages if not stage.feasible), None)

    def table(self) -> str:
        header = (
            f"{'it':>3} {'cl':>2} {'m':>7} {'h':>9} {'n':>9} {'T':>6} {'bits/S1':>13} "
            f"{'d/S2':>11} {'v':>8} {'N':>7} {'t':>7} {'out':>5}  status"
        )
        lines = [header, "-" * len(header)]
        for stage in self.stages:
            vv, ruv = stage.vv, stage.ruv
            h = vv.h if vv and vv.h is not None else "-"
            n = vv.n if vv and vv.n is not None else "-"
            s1 = f"{stage.test_bits}/{vv.s1_len}" if vv else "-"
            d = f"{stage.extractor['d']}/{vv.s2_len}" if stage.extractor and vv else "-"
            v = vv.v if vv else "-"
            n_games = ruv.n_games if ruv else "-"
            t = ruv.t if ruv else "-"
            status = "ok" if stage.feasible else ", ".join(stage.issues)
            lines.append(
                f"{stage.iteration:>3} {stage.cluster:>2} {stage.m:>7} {h:>9} {n:>9} {stage.test_rounds:>6} "
                f"{s1:>13} {d:>11} {v:>8} {n_games:>7} {t:>7} {stage.output_len:>5}  {status}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "lengths": self.lengths,
            "feasible": self.feasible,
            "stages": [stage.to_dict() for stage in self.stages],
        }


def _plan_stage(iteration: int, m: int, last: bool, consts: ProtocolConstants) -> StagePlan:
    stage = StagePlan(iteration, iteration % 2, m)
    if m < MIN_VV_SEED:
        stage.issues.append("seed_below_minimum")
        return stage

    vv = vv_params(m, consts)
    stage.vv = vv
    stage.issues += [flag for flag in vv.flags if flag in BLOCKING_FLAGS]
    stage.notes += [flag for flag in vv.flags if flag not in BLOCKING_FLAGS] + list(vv.notes)
    if vv.feasible:
        try:
            spec = solve_spec(vv.n, vv.v, vv.epsilon, consts, h=vv.h)
            stage.extractor = spec.to_dict()
            if spec.d > vv.s2_len:
                stage.issues.append("extractor_seed_exceeds_s2")
        except ConfigError as e:
            stage.issues.append("extractor_infeasible")
            stage.notes.append(str(e))
        stage.test_rounds, stage.test_bits = protocol_b_budget(vv.n, vv.s1_len, consts)
        if stage.test_bits > vv.s1_len:
            stage.issues.append("protocol_b_seed_exhausted")
        if stage.test_rounds == 0:
            stage.notes.append("vacuous_acceptance")

    if vv.v < MIN_RUV_SEED:
        stage.issues.append("ruv_seed_too_short")
        return stage
    ruv = ruv_params(vv.v, consts)
    stage.ruv = ruv
    stage.output_len = ruv.sub_block_len
    if not ruv.t_constraint_ok:
        (stage.issues if consts.mode == "paper" else stage.notes).append("t_not_above_85")
    if not last and stage.output_len < consts.min_next_seed:
        stage.issues.append("output_below_next_seed")
    if last and stage.output_len < 1:
        stage.issues.append("empty_output")
    return stage


def plan_chain(m: int, k: int, consts: ProtocolConstants) -> ChainPlan:
    """
    Work out every stage of a k-iteration expansion from an m-bit seed.

    Per stage: the VV parameters, the extractor design, the Protocol-B seed
    budget, the RUV geometry and the realized output length. Planning stops
    at the first stage that cannot even start.

    Args:
        m: Input seed length
        k: Number of iterations (>= 1)
        consts: Protocol constants

    Returns:
        ChainPlan; ``feasible`` is False when any stage has issues
    """
    if k < 1:
        raise InputError(f"Expansion needs k >= 1 iterations, got {k}")
    stages: List[StagePlan] = []
    current = m
    for i in range(1, k + 1):
        stage = _plan_stage(i, current, i == k, consts)
        stages.append(stage)
        if stage.ruv is None:
            break
        current = stage.output_len
    return ChainPlan(m, k, stages)


def require_feasible(plan: ChainPlan) -> None:
    """Raise ConfigError carrying the plan table if the chain cannot finish."""
    if plan.feasible:
        return
    failing = plan.first_failure()
    where = f"iteration {failing.iteration}: {', '.join(failing.issues)}" if failing else "chain ends early"
    raise ConfigError(f"Infeasible parameter chain from {plan.m} bits ({where})", table=plan.table())


# ============================================================================
# CLUSTER EXPANSION
# ============================================================================

@dataclass
class ClusterRun:
    cluster: int
    iteration: int
    input_seed: BitString
    vv_run: VvRun
    ruv_run: Optional[RuvRun] = None
    output: Optional[BitString] = None
    aborted: bool = False
    cause: str = ""
    p_hat: float = 1.0
    p_label: str = "assumed"
    bounds: Optional[ErrorBounds] = None

    @property
    def m(self) -> int:
        return len(self.input_seed)

    def transcripts(self) -> List[ProtocolTranscript]:
        runs = [self.vv_run] + ([self.ruv_run] if self.ruv_run is not None else [])
        return [run.transcript for run in runs]


def _check_cluster(cluster: Cluster) -> None:
    if set(cluster.endpoints) != set(ROLES):
        raise ConfigError(f"Cluster {cluster.cluster_id} lacks roles {sorted(set(ROLES) - set(cluster.endpoints))}")
    names = cluster.device_names()
    if len(set(names)) != len(names):
        raise ConfigError(f"Cluster {cluster.cluster_id} reuses a device: {names}")


def record_pass_rate(run: ClusterRun, p_hat: float, label: str, consts: ProtocolConstants) -> None:
    """Attach the pass-rate estimate and the ledger bounds it implies."""
    run.p_hat, run.p_label = p_hat, label
    if run.aborted:
        return
    run.bounds = error_bounds(run.m, p_hat, consts)
    run.ruv_run.transcript.summary["pass_rate"] = p_hat
    run.ruv_run.transcript.summary["pass_rate_label"] = label


def cluster_expansion(
    cluster: Cluster,
    seed: BitString,
    consts: ProtocolConstants,
    iteration: int = 1,
    p_hat: float = 1.0,
    p_label: str = "assumed",
    progress: bool = False,
    retain_audit: bool = True,
) -> ClusterRun:
    """
    Run VV then RUV on one cluster.

    Args:
        cluster: Four live devices with distinct roles
        seed: Input seed X_i
        consts: Protocol constants
        iteration: Iteration number seen by the devices
        p_hat: Pass-probability estimate used for this run's ledger bounds
        p_label: "assumed" or "estimated"
        progress: Show tqdm bars inside the sub-protocols
        retain_audit: Keep every referee-device message in memory

    Returns:
        ClusterRun; on success ``output`` is the RUV sub-block z

    Raises:
        ConfigError: malformed cluster
    """
    _check_cluster(cluster)
    cid = cluster.cluster_id
    vv_a, vv_b = cluster.pair("vv")
    vv = run_vv(vv_a, vv_b, seed, consts, iteration, cid, progress=progress, retain_audit=retain_audit)
    run = ClusterRun(cid, iteration, seed, vv)
    if vv.aborted:
        run.aborted, run.cause = True, f"vv: {vv.cause}"
        logger.info(f"Iteration {iteration} (cluster {cid}) aborted in VV: {vv.cause}")
        return run
    if len(vv.x) < MIN_RUV_SEED:
        run.aborted, run.cause = True, f"vv: output of {len(vv.x)} bits is too short for RUV"
        return run

    ruv_a, ruv_b = cluster.pair("ruv")
    ruv = run_ruv(ruv_a, ruv_b, vv.x, consts, iteration, cid, progress=progress, retain_audit=retain_audit)
    run.ruv_run = ruv
    if ruv.aborted:
        run.aborted, run.cause = True, f"ruv: {ruv.cause}"
        logger.info(f"Iteration {iteration} (cluster {cid}) aborted in RUV: {ruv.cause}")
        return run
    run.output = ruv.z
    record_pass_rate(run, p_hat, p_label, consts)
    logger.info(f"Iteration {iteration} (cluster {cid}): {len(seed)} -> {len(run.output)} bits")
    return run


def estimate_pass_rate(
    strategies: Dict[str, Any],
    cluster_id: int,
    m: int,
    consts: ProtocolConstants,
    repetitions: int,
    rng_tree: RngTree,
    iteration: int = 1,
) -> Tuple[float, str]:
    """
    Pass-probability estimate from shadow runs on fresh cluster copies.

    Each repetition spawns a new copy of the cluster and runs one cluster
    expansion on an independent m-bit seed.

    Returns:
        (max(passes, 1) / R, "estimated"), or (1.0, "assumed") when R = 0
    """
    if repetitions < 0:
        raise InputError(f"pass_rate_repetitions must be >= 0, got {repetitions}")
    if repetitions == 0:
        return 1.0, "assumed"
    passes = 0
    for r in range(repetitions):
        tree = rng_tree.child(f"shadow:{iteration}:{r}")
        shadow = spawn_cluster(cluster_id, strategies, QuantumBackend(), tree)
        seed = BitString(tree.get("seed").integers(0, 2, m))
        run = cluster_expansion(shadow, seed, consts, iteration, retain_audit=False)
        passes += not run.aborted
    p_hat = max(passes, 1) / repetitions
    logger.info(f"Pass rate at iteration {iteration}: {passes}/{repetitions} shadow runs passed")
    return p_hat, "estimated"


# ============================================================================
# INFINITE EXPANSION
# ============================================================================

def make_run_id(seed: BitString, master_seed: int) -> str:
    digest = hashlib.sha256(seed.serialize().encode("utf-8")).hexdigest()
    return f"run-{master_seed}-{digest[:12]}"


@dataclass
class ExpansionState:
    seed: BitString
    k: int
    consts: ProtocolConstants
    config: Dict[str, Any]
    current_seed: BitString
    plan: Optional[ChainPlan] = None
    iteration: int = 0
    cluster_runs: List[ClusterRun] = field(default_factory=list)
    ledger: Optional[ErrorLedger] = None
    halted: bool = False
    cause: str = ""
    detail: str = ""

    @property
    def completed(self) -> bool:
        return not self.halted and self.iteration == self.k

    @property
    def run_id(self) -> str:
        return self.config["run_id"]

    def transcripts(self) -> List[ProtocolTranscript]:
        return [t for run in self.cluster_runs for t in run.transcripts()]


def _describe_strategies(strategies: StrategyTable) -> Dict[str, Dict[str, str]]:
    return {
        f"cluster{cid}": {role: strategies[cid][role].describe() for role in ROLES}
        for cid in sorted(strategies)
    }


def new_state(
    pool: DevicePool,
    seed: BitString,
    k: int,
    consts: ProtocolConstants,
    plan: Optional[ChainPlan] = None,
    fresh_devices: bool = False,
    pass_rate_repetitions: int = 0,
) -> ExpansionState:
    """State before the first iteration, with the run's config snapshot."""
    master_seed = pool.rng_tree.master_seed
    snapshot = {
        "run_id": make_run_id(seed, master_seed),
        "master_seed": master_seed,
        "seed": seed.serialize(),
        "k": k,
        "constants": consts.model_dump(mode="json"),
        "overrides": consts.overrides(),
        "strategies": _describe_strategies(pool.strategies),
        "options": {
            "fresh_devices": fresh_devices,
            "tap": pool.eavesdropper is not None,
            "pass_rate_repetitions": pass_rate_repetitions,
        },
        "planned_lengths": plan.lengths if plan else [len(seed)],
    }
    return ExpansionState(seed, k, consts, snapshot, seed, plan)


def infinite_expansion(
    pool: DevicePool,
    seed: BitString,
    k: int,
    consts: ProtocolConstants,
    fresh_devices: bool = False,
    pass_rate_repetitions: int = 0,
    progress: bool = False,
) -> ExpansionState:
    """
    Alternate cluster expansions for k iterations or until one aborts.

    Args:
        pool: Both clusters; iteration i runs on cluster i mod 2
        seed: Initial seed X_1
        k: Iterations (>= 1)
        consts: Protocol constants
        fresh_devices: Re-spawn the cluster before each of its iterations
        pass_rate_repetitions: Shadow runs per iteration for the pass-rate
            estimate; 0 assumes every pass probability is 1
        progress: Show an iteration progress bar

    Returns:
        ExpansionState with the final seed, every cluster run and the ledger

    Raises:
        ConfigError: the parameter chain is infeasible (``table`` holds the plan)
        InputError: k < 1
    """
    plan = plan_chain(len(seed), k, consts)
    require_feasible(plan)
    state = new_state(pool, seed, k, consts, plan, fresh_devices, pass_rate_repetitions)
    shadow_tree = pool.rng_tree.child("shadow")
    history: List[Tuple[int, float, str]] = []
    logger.info(f"Expansion {state.run_id}: {k} iterations planned, {' -> '.join(map(str, plan.lengths))} bits")

    for i in tqdm(range(1, k + 1), desc="Iterations", disable=not progress):
        cluster_id = i % 2
        cluster = pool.reset_cluster(cluster_id) if fresh_devices else pool.cluster(cluster_id)
        run = cluster_expansion(cluster, state.current_seed, consts, i, progress=False, retain_audit=False)
        state.cluster_runs.append(run)
        state.iteration = i
        if run.aborted:
            state.halted = True
            state.cause = f"iteration-{i}"
            state.detail = run.cause
            logger.warning(f"Expansion halted at iteration {i}: {run.cause}")
            break

        p_hat, label = estimate_pass_rate(
            pool.strategies[cluster_id], cluster_id, run.m, consts, pass_rate_repetitions, shadow_tree, i
        )
        record_pass_rate(run, p_hat, label, consts)
        history.append((run.m, p_hat, label))
        state.ledger = delta_ledger(history, consts)
        state.current_seed = run.output
        if len(run.output) != plan.lengths[i]:
            logger.warning(f"Iteration {i} produced {len(run.output)} bits, plan said {plan.lengths[i]}")

    if state.completed:
        logger.info(f"Expansion completed: {len(state.current_seed)} bits, 2 delta(k) = {state.ledger.final_bound:.3e}")
    return state


def report(state: ExpansionState) -> RunReport:
    return build_report(state.config, state.transcripts(), state.consts)


# ============================================================================
# RUN DIRECTORIES
# ============================================================================

def transcript_name(transcript: ProtocolTranscript) -> str:
    return f"transcript-{transcript.iteration}-{transcript.protocol}.jsonl"


def write_run(state: ExpansionState, out_dir: Union[str, Path]) -> Path:
    """
    Persist a run under ``out_dir/<run_id>/``.

    Returns:
        The run directory
    """
    run_dir = Path(out_dir) / state.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(state.config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for transcript in state.transcripts():
        transcript.write_jsonl(run_dir / transcript_name(transcript))
    result = report(state)
    (run_dir / "summary.json").write_text(render_json(result), encoding="utf-8")
    (run_dir / "summary.txt").write_text(render_text(result), encoding="utf-8")
    logger.info(f"Run written to {run_dir}")
    return run_dir


def read_run(run_dir: Union[str, Path]) -> Tuple[Dict[str, Any], List[ProtocolTranscript]]:
    """Config snapshot and transcripts of a run directory."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.exists():
        raise InputError(f"No config.json in {run_dir}")
    snapshot = json.loads(config_path.read_text(encoding="utf-8"))
    transcripts = [ProtocolTranscript.read_jsonl(p) for p in sorted(run_dir.glob("transcript-*.jsonl"))]
    return snapshot, transcripts


@dataclass
class ReplayResult:
    run_dir: Path
    report: RunReport
    checks: List[Dict[str, Any]]
    summary_json_match: Optional[bool]
    summary_txt_match: Optional[bool]
    chain_ok: bool

    @property
    def ok(self) -> bool:
        decisions_ok = all(check["ok"] for check in self.checks)
        return decisions_ok and self.chain_ok and self.summary_json_match is not False \
            and self.summary_txt_match is not False


def _chain_links(transcripts: Sequence[ProtocolTranscript]) -> bool:
    """The only datum passed between iterations is the RUV output."""
    by_key = {(t.iteration, t.protocol): t for t in transcripts}
    for (iteration, protocol), transcript in by_key.items():
        if protocol != "ruv":
            continue
        following = by_key.get((iteration + 1, "vv"))
        if following is not None and following.header["seed"] != transcript.summary.get("z"):
            return False
        if by_key[(iteration, "vv")].summary.get("x") != transcript.header["seed"]:
            return False
    return True


def replay(run_dir: Union[str, Path]) -> ReplayResult:
    """
    Recompute a persisted run.

    Every referee decision (test wins, thresholds, extractor output, RUV
    win count, sub-block choice) is recomputed from the transcripts and
    compared to the record; the report is rebuilt and compared to the
    stored summaries byte for byte.
    """
    run_dir = Path(run_dir)
    snapshot, transcripts = read_run(run_dir)
    consts = ProtocolConstants(**snapshot["constants"])
    checks = []
    for transcript in transcripts:
        replayer = replay_vv if transcript.protocol == "vv" else replay_ruv
        result = replayer(transcript, consts)
        checks.append({"iteration": transcript.iteration, "protocol": transcript.protocol,
                       "ok": result["ok"], "checks": result["checks"]})
    rebuilt = build_report(snapshot, transcripts, consts)

    def matches(name: str, text: str) -> Optional[bool]:
        path = run_dir / name
        return path.read_text(encoding="utf-8") == text if path.exists() else None

    result = ReplayResult(
        run_dir=run_dir,
        report=rebuilt,
        checks=checks,
        summary_json_match=matches("summary.json", render_json(rebuilt)),
        summary_txt_match=matches("summary.txt", render_text(rebuilt)),
        chain_ok=_chain_links(transcripts),
    )
    logger.info(f"Replay of {run_dir}: {'ok' if result.ok else 'MISMATCH'}")
    return result


def random_seed(length: int, rng: np.random.Generator) -> BitString:
    return BitString(rng.integers(0, 2, length))
