"""Command line for the certirand lab.

Usage:
    python -m src.cli params --s 388 2048
    python -m src.cli run-infinite --seed 242:<hex> --rounds 2 --consts configs/quick.consts
    python -m src.cli replay runs/<run-id>
    python -m src.cli verify-lemmas --trials 200

Exit codes: 0 completed, 2 protocol abort (or a failed check), 1 error in
configuration or input.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from src.config import config
from src.devices import load_strategies, parse_strategy, spawn_all, spawn_pair
from src.errors import CertirandError, ConfigError, InputError
from src.extractor import extract, solve_spec
from src.infotheory import (
    entropies,
    fidelity,
    load_matrix,
    trace_norm_dist,
)
from src.lemma_suite import FAMILIES, parse_dims, run_lemma_suite
from src.orchestrator import infinite_expansion, random_seed, replay, report, write_run
from src.params import describe, load_constants
from src.protocol_ruv import run_ruv
from src.protocol_vv import run_vv
from src.qsim import QuantumBackend
from src.report import BANNER, render_text
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger, setup_logging
from src.utils.rng import RngTree

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORT = 2


def _consts(args):
    return load_constants(args.consts or config.default_consts)


def _seed(text: str) -> BitString:
    seed = BitString.from_hex(text)
    if len(seed) == 0:
        raise InputError("Seed is empty")
    return seed


def _hex_int(text: str) -> int:
    try:
        return int(text.lower().removeprefix("0x"), 16)
    except ValueError:
        raise InputError(f"Bad hex seed {text!r}") from None


# ============================================================================
# PARAMS
# ============================================================================

PARAM_ROWS = [
    ("s1_len", "vv", "s1_len"),
    ("h", "vv", "h"),
    ("n (Protocol B)", "vv", "n"),
    ("d", "vv", "d"),
    ("v", "vv", "v"),
    ("epsilon", "vv", "epsilon"),
    ("VV feasible", "vv", "feasible"),
    ("N games", "ruv", "n_games"),
    ("t", "ruv", "t"),
    ("blocks", "ruv", "num_blocks"),
    ("sub-block len", "ruv", "sub_block_len"),
    ("r (formula)", "ruv", "r"),
    ("win threshold", "ruv", "win_threshold"),
    ("t > 85", "ruv", "t_constraint_ok"),
    ("g(s)", "g", "realized"),
]


def params_table(records: List[dict]) -> str:
    """Aligned table, one column per seed length."""
    width = 14
    lines = [f"{'s':<16}" + "".join(f"{r['s']:>{width}}" for r in records), "-" * (16 + width * len(records))]
    for label, section, key in PARAM_ROWS:
        cells = []
        for record in records:
            value = (record.get(section) or {}).get(key)
            if isinstance(value, float):
                cells.append(f"{value:>{width}.4g}")
            else:
                cells.append(f"{'-' if value is None else str(value):>{width}}")
        lines.append(f"{label:<16}" + "".join(cells))
    flags = sorted({flag for r in records for flag in r["vv"]["flags"]})
    if flags:
        lines.append(f"flags: {', '.join(flags)}")
    return "\n".join(lines)


def cmd_params(args) -> int:
    consts = _consts(args)
    records = [describe(s, consts) for s in args.s]
    if args.json:
        for record in records:
            print(json.dumps(record, sort_keys=True))
    else:
        print(f"Parameters ({consts.mode} mode, log base {consts.log_base})")
        print(params_table(records))
    return EXIT_OK


# ============================================================================
# SINGLE PROTOCOL RUNS
# ============================================================================

def _run_pair(args, protocol: str) -> int:
    consts = _consts(args)
    seed = _seed(args.seed)
    strategy_a = parse_strategy(args.strategy)
    strategy_b = parse_strategy(args.strategy_b or args.strategy)
    dev_a, dev_b = spawn_pair(
        strategy_a, strategy_b, seed=args.master_seed, protocol=protocol, tap=args.tap
    )
    runner = run_vv if protocol == "vv" else run_ruv
    run = runner(dev_a, dev_b, seed, consts, progress=args.progress)

    summary = run.transcript.summary
    print(BANNER)
    print(f"{protocol.upper()} on {len(seed)} bits: {summary['decision']}")
    if run.aborted:
        print(f"Cause: {run.cause}")
    else:
        print(f"Output: {run.output.serialize()}")
    print(BANNER)
    if args.out:
        path = run.transcript.write_jsonl(args.out)
        print(f"Transcript written to {path}")
    return EXIT_ABORT if run.aborted else EXIT_OK


def cmd_run_vv(args) -> int:
    return _run_pair(args, "vv")


def cmd_run_ruv(args) -> int:
    return _run_pair(args, "ruv")


# ============================================================================
# INFINITE EXPANSION AND REPLAY
# ============================================================================

def cmd_run_infinite(args) -> int:
    consts = _consts(args)
    master_seed = config.rng_seed if args.master_seed is None else args.master_seed
    tree = RngTree(master_seed)
    if args.seed:
        seed = _seed(args.seed)
    elif args.seed_bits:
        seed = random_seed(args.seed_bits, tree.get("input-seed"))
    else:
        raise InputError("Give --seed or --seed-bits")

    pool = spawn_all(load_strategies(args.strategies), QuantumBackend(), tree, tap=args.tap)
    state = infinite_expansion(
        pool,
        seed,
        args.rounds,
        consts,
        fresh_devices=args.fresh_devices,
        pass_rate_repetitions=args.pass_rate_reps,
        progress=args.progress,
    )
    run_dir = write_run(state, args.out or config.out_dir)
    print(render_text(report(state)), end="")
    print(f"Run directory: {run_dir}")
    return EXIT_OK if state.completed else EXIT_ABORT


def cmd_replay(args) -> int:
    result = replay(args.run_dir)
    print(BANNER)
    print(f"REPLAY {result.run_dir}")
    print(BANNER)
    for check in result.checks:
        status = "ok" if check["ok"] else "MISMATCH"
        print(f"  iteration {check['iteration']:>2} {check['protocol']:<4} {status}")
        if not check["ok"]:
            for name, ok in sorted(check["checks"].items()):
                if not ok:
                    print(f"      {name} differs")
    print(f"  seed chain          {'ok' if result.chain_ok else 'MISMATCH'}")
    for name, match in (("summary.json", result.summary_json_match), ("summary.txt", result.summary_txt_match)):
        text = "missing" if match is None else ("identical" if match else "DIFFERS")
        print(f"  {name:<19} {text}")
    print(BANNER)
    return EXIT_OK if result.ok else EXIT_ABORT


# ============================================================================
# EXTRACT
# ============================================================================

def _read_sources(args) -> List[BitString]:
    if args.source_hex:
        return [_seed(args.source_hex)]
    path = Path(args.source)
    if not path.exists():
        raise InputError(f"Source file not found: {path}")
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    return [_seed(line) for line in lines if line and not line.startswith("#")]


def cmd_extract(args) -> int:
    consts = _consts(args)
    sources = _read_sources(args)
    if not sources:
        raise InputError("No source strings given")
    seed = _seed(args.seed)
    for source in sources:
        spec = solve_spec(len(source), args.r, args.eps, consts, mode=args.mode)
        if len(seed) < spec.d:
            raise InputError(f"Extractor needs {spec.d} seed bits, got {len(seed)}")
        logger.info(f"Extracting {spec.r} bits from {spec.n} with d={spec.d} ({spec.one_bit})")
        print(extract(source, seed[: spec.d], spec).serialize())
    return EXIT_OK


# ============================================================================
# VERIFY LEMMAS
# ============================================================================

def matrix_report(rho_path: str, sigma_path: Optional[str] = None) -> dict:
    """Entropies of a loaded state, plus distance and fidelity to a second one."""
    rho = load_matrix(rho_path)
    out = {"dims": list(rho.dims), "labels": list(rho.labels)}
    if len(rho.labels) >= 2:
        c = rho.labels[2] if len(rho.labels) >= 3 else None
        out["entropies"] = entropies(rho, rho.labels[0], rho.labels[1], c).to_dict()
    if sigma_path:
        sigma = load_matrix(sigma_path)
        out["trace_distance"] = trace_norm_dist(rho, sigma)
        out["fidelity"] = fidelity(rho, sigma)
    return out


def cmd_verify_lemmas(args) -> int:
    if args.matrix:
        print(json.dumps(matrix_report(args.matrix, args.sigma), sort_keys=True, indent=2))
        return EXIT_OK
    families = [f.strip() for f in args.families.split(",")] if args.families else None
    result = run_lemma_suite(
        trials=args.trials,
        seed=_hex_int(args.seed),
        dims=parse_dims(args.dims),
        families=families,
        progress=args.progress,
    )
    print(BANNER)
    print(f"LEMMA CHECKS (seed {args.seed}, dims {'x'.join(map(str, result.dims))})")
    print(BANNER)
    print(result.table())
    print(BANNER)
    print("All families passed" if result.passed else "Violations found")
    return EXIT_OK if result.passed else EXIT_ABORT


# ============================================================================
# PARSER
# ============================================================================

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--consts", type=str, default=None, help="Constants file (default: $CERTIRAND_CONSTS)")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="certirand",
        description="Desk-scale device-independent randomness expansion (simulated devices only)",
    )
    parser.add_argument(
        "--log_level",
        type=str,
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="Print the parameter table for seed lengths")
    p.add_argument("--s", type=int, nargs="+", required=True, help="Seed lengths in bits")
    p.add_argument("--json", action="store_true", help="One JSON record per seed length")
    _add_common(p)
    p.set_defaults(func=cmd_params)

    for name, func, help_text in (
        ("run-vv", cmd_run_vv, "Run one VV call against two devices"),
        ("run-ruv", cmd_run_ruv, "Run one RUV call against two devices"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=str, required=True, help="Seed as hex or <bits>:<hex>")
        p.add_argument("--strategy", type=str, default="ideal", help="Strategy of both devices (or device A)")
        p.add_argument("--strategy-b", type=str, default=None, help="Strategy of device B")
        p.add_argument("--master-seed", type=int, default=0, help="Master seed for device randomness")
        p.add_argument("--tap", action="store_true", help="Hold purifications in an eavesdropper register")
        p.add_argument("--out", type=str, default=None, help="Write the JSON-lines transcript here")
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("run-infinite", help="Run the alternating two-cluster expansion")
    p.add_argument("--seed", type=str, default=None, help="Initial seed as hex or <bits>:<hex>")
    p.add_argument("--seed-bits", type=int, default=None, help="Draw a random seed of this length instead")
    p.add_argument("--rounds", type=int, required=True, help="Number of iterations k")
    p.add_argument("--strategies", type=str, default=None, help="Strategy file (default: all ideal)")
    p.add_argument("--out", type=str, default=None, help="Output directory (default: $CERTIRAND_OUT_DIR)")
    p.add_argument("--fresh-devices", action="store_true", help="Re-spawn a cluster before each iteration")
    p.add_argument("--pass-rate-reps", type=int, default=0, help="Shadow runs per iteration for p estimates")
    p.add_argument("--master-seed", type=int, default=None, help="Master seed (default: $CERTIRAND_RNG_SEED)")
    p.add_argument("--tap", action="store_true", help="Hold purifications in an eavesdropper register")
    _add_common(p)
    p.set_defaults(func=cmd_run_infinite)

    p = sub.add_parser("extract", help="Run the extractor on hex source strings")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--source", type=str, help="File with one <bits>:<hex> source per line")
    source.add_argument("--source-hex", type=str, help="A single source as hex or <bits>:<hex>")
    p.add_argument("--seed", type=str, required=True, help="Extractor seed; the first d bits are used")
    p.add_argument("--r", type=int, required=True, help="Output length in bits")
    p.add_argument("--eps", type=float, default=0.01, help="Extractor error")
    p.add_argument("--mode", type=str, default=None, help="One-bit extractor (default from constants)")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("verify-lemmas", help="Randomized checks of the entropy and distance facts")
    p.add_argument("--trials", type=int, default=1000, help="Instances per family")
    p.add_argument("--dims", type=str, default="2x2x2", help="Factor dimensions, e.g. 2x3x2")
    p.add_argument("--seed", type=str, default="0", help="Hex master seed")
    p.add_argument("--families", type=str, default=None, help=f"Comma list from: {', '.join(FAMILIES)}")
    p.add_argument("--matrix", type=str, default=None, help="Report on a plain-text matrix file instead")
    p.add_argument("--sigma", type=str, default=None, help="Second matrix for distance and fidelity")
    p.add_argument("--progress", action="store_true", help="Show progress bars")
    p.set_defaults(func=cmd_verify_lemmas)

    p = sub.add_parser("replay", help="Recompute and compare a persisted run")
    p.add_argument("run_dir", type=str, help="Run directory written by run-infinite")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(level=args.log_level, log_file=config.log_file)

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        if e.table:
            print(e.table, file=sys.stderr)
        return EXIT_ERROR
    except CertirandError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
