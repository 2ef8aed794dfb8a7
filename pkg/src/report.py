"""Run reports.

A report is built from a run's config snapshot and its protocol transcripts
and nothing else, so a run directory can be re-reported byte for byte.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.params import (
    ProtocolConstants,
    composed_cluster_bound,
    delta_ledger,
    tower_bound,
)
from src.transcript import ProtocolTranscript
from src.utils.bitstring import BitString

BANNER = "=" * 60


@dataclass
class IterationRow:
    """What one cluster expansion did, as read back from its transcripts."""

    iteration: int
    cluster: int
    devices: List[str]
    m: int
    vv_decision: str
    vv_cause: str
    test_wins: int
    test_rounds: int
    vv_threshold: Optional[float]
    vv_output_len: int
    ruv_decision: str
    ruv_cause: str = ""
    w: Optional[int] = None
    n_games: Optional[int] = None
    ruv_threshold: Optional[float] = None
    i: Optional[int] = None
    j: Optional[int] = None
    output_len: int = 0
    fallback: bool = False
    p: Optional[float] = None
    p_label: Optional[str] = None
    flags: List[str] = field(default_factory=list)

    @property
    def aborted(self) -> bool:
        return self.vv_decision != "pass" or self.ruv_decision != "pass"

    @property
    def cause(self) -> str:
        if self.vv_decision != "pass":
            return f"vv: {self.vv_cause}"
        if self.ruv_decision != "pass":
            return f"ruv: {self.ruv_cause}"
        return ""


@dataclass
class RunReport:
    run_id: str
    seed: str
    m: int
    k: int
    mode: str
    constants: Dict[str, Any]
    overrides: Dict[str, Any]
    strategies: Dict[str, Dict[str, str]]
    options: Dict[str, Any]
    planned_lengths: List[int]
    iterations: List[IterationRow] = field(default_factory=list)
    ledger: Optional[Dict[str, Any]] = None
    closed_bound: Optional[float] = None
    final_bound: Optional[float] = None
    tower_bound: Optional[float] = None
    composed_bounds: List[Optional[float]] = field(default_factory=list)
    outcome: str = "empty"
    cause: str = ""
    detail: str = ""

    @property
    def completed(self) -> bool:
        return self.outcome == "completed"

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["iterations"] = [asdict(row) for row in self.iterations]
        return out


def _row(vv: ProtocolTranscript, ruv: Optional[ProtocolTranscript]) -> IterationRow:
    vv_sum = vv.summary
    x = vv_sum.get("x")
    row = IterationRow(
        iteration=vv.iteration,
        cluster=vv.cluster,
        devices=list(vv.devices),
        m=len(BitString.from_hex(vv.header["seed"])),
        vv_decision=vv_sum.get("decision", "abort"),
        vv_cause=vv_sum.get("cause", ""),
        test_wins=vv_sum.get("test_wins", 0),
        test_rounds=vv_sum.get("test_rounds", 0),
        vv_threshold=vv_sum.get("threshold"),
        vv_output_len=len(BitString.from_hex(x)) if x else 0,
        ruv_decision="not started",
        flags=list(vv_sum.get("flags", [])),
    )
    if ruv is None:
        return row
    ruv_sum = ruv.summary
    z = ruv_sum.get("z")
    row.devices += list(ruv.devices)
    row.ruv_decision = ruv_sum.get("decision", "abort")
    row.ruv_cause = ruv_sum.get("cause", "")
    row.w = ruv_sum.get("w")
    row.n_games = ruv.header["params"]["n_games"]
    row.ruv_threshold = ruv_sum.get("threshold")
    row.i, row.j = ruv_sum.get("i"), ruv_sum.get("j")
    row.output_len = len(BitString.from_hex(z)) if z else 0
    row.fallback = bool(ruv_sum.get("fallback"))
    row.p = ruv_sum.get("pass_rate")
    row.p_label = ruv_sum.get("pass_rate_label")
    if row.fallback:
        row.flags.append("selection_fallback")
    if not ruv_sum.get("t_constraint_ok", True):
        row.flags.append("t_not_above_85")
    return row


def group_transcripts(
    transcripts: Sequence[ProtocolTranscript],
) -> List[Tuple[ProtocolTranscript, Optional[ProtocolTranscript]]]:
    """(vv, ruv or None) per iteration, in iteration order."""
    by_key = {(t.iteration, t.protocol): t for t in transcripts}
    iterations = sorted({t.iteration for t in transcripts})
    return [(by_key[(i, "vv")], by_key.get((i, "ruv"))) for i in iterations]


def build_report(
    snapshot: Dict[str, Any],
    transcripts: Sequence[ProtocolTranscript],
    consts: ProtocolConstants,
) -> RunReport:
    """
    Assemble the report for a run.

    Args:
        snapshot: The run's config snapshot (as written to config.json)
        transcripts: Every VV and RUV transcript of the run
        consts: Constants the run used

    Returns:
        RunReport with one row per iteration and the error ledger over the
        iterations that passed
    """
    seed = BitString.from_hex(snapshot["seed"])
    report = RunReport(
        run_id=snapshot["run_id"],
        seed=snapshot["seed"],
        m=len(seed),
        k=snapshot["k"],
        mode=consts.mode,
        constants=snapshot["constants"],
        overrides=snapshot["overrides"],
        strategies=snapshot["strategies"],
        options=snapshot["options"],
        planned_lengths=snapshot["planned_lengths"],
    )
    report.iterations = [_row(vv, ruv) for vv, ruv in group_transcripts(transcripts)]

    history = [(row.m, row.p if row.p is not None else 1.0, row.p_label or "assumed")
               for row in report.iterations if not row.aborted]
    if history:
        ledger = delta_ledger(history, consts)
        report.ledger = ledger.to_dict()
        report.closed_bound = ledger.closed_bound
        report.final_bound = ledger.final_bound
        report.tower_bound = tower_bound(report.m, ledger.lam, consts)
        report.composed_bounds = [composed_cluster_bound(m, p, consts) for m, p, _ in history]

    if not report.iterations:
        report.outcome = "empty"
    elif report.iterations[-1].aborted:
        last = report.iterations[-1]
        report.outcome = "aborted"
        report.cause = f"iteration-{last.iteration}"
        report.detail = last.cause
    elif len(report.iterations) == report.k:
        report.outcome = "completed"
    else:
        report.outcome = "partial"
    return report


def _fmt(value: Optional[float], spec: str = ".4g") -> str:
    return "-" if value is None else format(value, spec)


def render_text(report: RunReport) -> str:
    """Human-readable summary with aligned iteration and ledger tables."""
    lines = [
        BANNER,
        f"RUN {report.run_id}",
        BANNER,
        f"Input seed:  {report.m} bits",
        f"Iterations:  {len(report.iterations)} of {report.k}",
        f"Mode:        {report.mode}",
        f"Planned:     {' -> '.join(str(m) for m in report.planned_lengths)}",
        f"Options:     {json.dumps(report.options, sort_keys=True)}",
    ]
    if report.overrides:
        lines.append("Overrides:")
        lines += [f"  {key} = {report.overrides[key]}" for key in sorted(report.overrides)]

    if report.iterations:
        lines += ["", "Iterations", "-" * 60]
        lines.append(
            f"{'it':>3} {'cl':>2} {'m':>7} {'VV tests':>10} {'VV':>6} "
            f"{'w / N':>13} {'thr':>9} {'RUV':>6} {'(i,j)':>8} {'out':>5} {'p':>6}"
        )
        for row in report.iterations:
            tests = f"{row.test_wins}/{row.test_rounds}"
            games = f"{row.w}/{row.n_games}" if row.w is not None else "-"
            choice = f"({row.i},{row.j})" if row.i is not None else "-"
            ruv = row.ruv_decision if row.ruv_decision != "not started" else "-"
            lines.append(
                f"{row.iteration:>3} {row.cluster:>2} {row.m:>7} {tests:>10} {row.vv_decision:>6} "
                f"{games:>13} {_fmt(row.ruv_threshold, '.2f'):>9} {ruv:>6} {choice:>8} "
                f"{row.output_len:>5} {_fmt(row.p, '.3f'):>6}"
            )
            if row.flags:
                lines.append(f"      flags: {', '.join(sorted(set(row.flags)))}")

    if report.ledger:
        lines += ["", "Error ledger", "-" * 60]
        lines.append(f"{'it':>3} {'m':>7} {'p':>8} {'eps_VV':>10} {'eps_RUV':>10} {'eps_EC':>10} {'delta':>10}")
        for entry in report.ledger["entries"]:
            lines.append(
                f"{entry['iteration']:>3} {entry['m']:>7} {entry['p']:>8.4f} {entry['eps_vv']:>10.3e} "
                f"{entry['eps_ruv']:>10.3e} {entry['eps_ec']:>10.3e} {entry['delta']:>10.3e}"
            )
        lines += [
            f"Final bound 2 delta(k):   {_fmt(report.final_bound, '.3e')}",
            f"Closed bound 2 eps_1/lam: {_fmt(report.closed_bound, '.3e')}",
            f"Tower bound:              {_fmt(report.tower_bound, '.3e')}",
        ]

    lines += ["", BANNER, f"Outcome: {report.outcome}"]
    if report.cause:
        lines.append(f"Cause:   {report.cause} ({report.detail})")
    lines.append(BANNER)
    return "\n".join(lines) + "\n"


def render_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
