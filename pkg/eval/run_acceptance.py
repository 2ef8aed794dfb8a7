"""Acceptance harness for the certirand lab.

Runs the statistical and exhaustive acceptance criteria at full sample sizes
and writes one JSON record per criterion.

Usage:
    python eval/run_acceptance.py
    python eval/run_acceptance.py --only 1 2 5 --scale 0.1
"""

import argparse
import json
import math
import sys
import time
from collections import Counter
from itertools import product
from pathlib import Path
from typing import Any, Callable, Dict, List

import numpy as np
from tqdm import tqdm

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.devices import (
    ClassicalStrategy,
    IdealStrategy,
    chsh_win,
    classical_ceiling,
    load_strategies,
    play_round,
    spawn_all,
    spawn_pair,
)
from src.extractor import extract, solve_spec
from src.lemma_suite import run_lemma_suite
from src.orchestrator import infinite_expansion, replay, write_run
from src.params import delta_ledger, g_iter, load_constants
from src.protocol_ruv import run_ruv
from src.protocol_vv import run_vv
from src.qsim import QuantumBackend
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger, setup_logging
from src.utils.rng import RngTree

logger = get_logger(__name__)

ROOT = Path(__file__).parent.parent
CONFIG_DIR = ROOT / "configs"
COS2_PI_8 = math.cos(math.pi / 8) ** 2


def _bits(rng: np.random.Generator, length: int) -> BitString:
    return BitString(rng.integers(0, 2, length))


def _count(n: int, scale: float) -> int:
    return max(1, int(round(n * scale)))


# ============================================================================
# CRITERIA
# ============================================================================

def tsirelson_point(scale: float, tmp: Path) -> Dict[str, Any]:
    games = _count(100_000, scale)
    dev_a, dev_b = spawn_pair(IdealStrategy(), IdealStrategy(), seed=101)
    inputs = np.random.default_rng(102).integers(0, 2, size=(games, 2))
    wins = 0
    for k, (x, y) in enumerate(tqdm(inputs, desc="CHSH games")):
        wins += chsh_win(int(x), int(y), play_round(dev_a, int(x), k, "vv"), play_round(dev_b, int(y), k, "vv"))
    rate = wins / games
    return {"games": games, "win_rate": rate, "passed": abs(rate - COS2_PI_8) <= 0.01}


def classical_limit(scale: float, tmp: Path) -> Dict[str, Any]:
    best, optimal = classical_ceiling()
    return {"max_win": str(best), "optimal_pairs": len(optimal), "passed": best * 4 == 3}


def ruv_completeness(scale: float, tmp: Path) -> Dict[str, Any]:
    consts = load_constants(CONFIG_DIR / "test.consts")
    runs = _count(100, scale)
    rng = np.random.default_rng(301)
    ideal_passes = classical_aborts = 0
    for r in tqdm(range(runs), desc="RUV runs"):
        dev_a, dev_b = spawn_pair(IdealStrategy(), IdealStrategy(), seed=1000 + r, protocol="ruv")
        ideal_passes += not run_ruv(dev_a, dev_b, _bits(rng, 4 * 4096), consts, retain_audit=False).aborted
        dev_a, dev_b = spawn_pair(ClassicalStrategy((0, 0)), ClassicalStrategy((0, 0)), seed=2000 + r, protocol="ruv")
        classical_aborts += run_ruv(dev_a, dev_b, _bits(rng, 4 * 4096), consts, retain_audit=False).aborted
    return {
        "runs": runs,
        "ideal_pass_rate": ideal_passes / runs,
        "classical_abort_rate": classical_aborts / runs,
        "passed": ideal_passes >= 0.9 * runs and classical_aborts >= 0.99 * runs,
    }


def vv_completeness(scale: float, tmp: Path) -> Dict[str, Any]:
    consts = load_constants(CONFIG_DIR / "test.consts")
    runs = _count(100, scale)
    rng = np.random.default_rng(401)
    ideal_passes = zero_aborts = 0
    for r in tqdm(range(runs), desc="VV runs"):
        dev_a, dev_b = spawn_pair(IdealStrategy(), IdealStrategy(), seed=3000 + r)
        ideal_passes += not run_vv(dev_a, dev_b, _bits(rng, 2048), consts, retain_audit=False).aborted
        dev_a, dev_b = spawn_pair(ClassicalStrategy((0, 0)), ClassicalStrategy((0, 0)), seed=4000 + r)
        zero_aborts += run_vv(dev_a, dev_b, _bits(rng, 2048), consts, retain_audit=False).aborted
    return {
        "runs": runs,
        "ideal_pass_rate": ideal_passes / runs,
        "zeros_abort_rate": zero_aborts / runs,
        "passed": ideal_passes >= 0.95 * runs and zero_aborts >= 0.99 * runs,
    }


def _joint_distance(spec, sources: List[BitString]) -> float:
    counts = Counter()
    for seed in (BitString(s) for s in product((0, 1), repeat=spec.d)):
        for x in sources:
            counts[(extract(x, seed, spec).to_int(), seed.to_int())] += 1
    total = len(sources) * 2 ** spec.d
    cells = 2 ** (spec.r + spec.d)
    seen = sum(abs(c / total - 1 / cells) for c in counts.values())
    return 0.5 * (seen + (cells - len(counts)) / cells)


def extractor_exactness(scale: float, tmp: Path) -> Dict[str, Any]:
    cases = []
    for n in (8, 10, 12):
        spec = solve_spec(n, 2, 2 ** -5)
        uniform = [BitString(x) for x in product((0, 1), repeat=n)]
        deficient = uniform[:]
        deficient.remove(BitString([1, 0] * (n // 2)))
        cases.append({
            "n": n,
            "d": spec.d,
            "r": spec.r,
            "uniform_distance": _joint_distance(spec, uniform),
            "deficient_distance": _joint_distance(spec, deficient),
            "epsilon": spec.epsilon,
        })
    passed = all(
        c["d"] <= 10 and c["uniform_distance"] <= 1e-12 and c["deficient_distance"] <= c["epsilon"] for c in cases
    )
    return {"cases": cases, "passed": passed}


def end_to_end(scale: float, tmp: Path) -> Dict[str, Any]:
    consts = load_constants(CONFIG_DIR / "chain.consts")
    runs = _count(20, scale)
    expected = list(g_iter(3, 388, consts).lengths)
    completed = length_mismatches = 0
    for r in tqdm(range(runs), desc="Expansions"):
        tree = RngTree(500 + r)
        pool = spawn_all(load_strategies(), QuantumBackend(), tree)
        state = infinite_expansion(pool, _bits(tree.get("input-seed"), 388), 3, consts)
        if state.completed:
            completed += 1
            lengths = [388] + [len(run.output) for run in state.cluster_runs]
            length_mismatches += lengths != expected
    return {
        "runs": runs,
        "completed": completed,
        "expected_lengths": expected,
        "length_mismatches": length_mismatches,
        "passed": completed >= 0.8 * runs and length_mismatches == 0,
    }


def ledger_fidelity(scale: float, tmp: Path) -> Dict[str, Any]:
    consts = load_constants(CONFIG_DIR / "test.consts")
    histories = _count(10_000, scale)
    rng = np.random.default_rng(701)
    violations = outside_regime = 0
    for _ in tqdm(range(histories), desc="Histories"):
        root = rng.uniform(5, 15)
        length = int(rng.integers(1, 40))
        history = [(int(math.ceil((root + i) ** 3)), float(rng.uniform(0.5, 1.0))) for i in range(length)]
        ledger = delta_ledger(history, consts)
        raw = [e.eps_ec_raw for e in ledger.entries]
        if not all(b <= a / 2 for a, b in zip(raw, raw[1:])):
            outside_regime += 1
            continue
        violations += ledger.delta > ledger.closed_bound * (1 + 1e-12)
    return {
        "histories": histories,
        "outside_regime": outside_regime,
        "violations": violations,
        "passed": violations == 0 and outside_regime < histories,
    }


def lemma_suite(scale: float, tmp: Path) -> Dict[str, Any]:
    trials = _count(1000, scale)
    report = run_lemma_suite(trials=trials, seed=801, progress=True)
    return {"trials": trials, "families": [r.to_dict() for r in report.results], "passed": report.passed}


def replay_determinism(scale: float, tmp: Path) -> Dict[str, Any]:
    consts = load_constants(CONFIG_DIR / "quick.consts")
    runs = _count(50, scale)
    failures = []
    for r in tqdm(range(runs), desc="Replays"):
        tree = RngTree(900 + r)
        strategies = load_strategies(CONFIG_DIR / "strategies" / "noisy.strategies") if r % 5 == 4 else load_strategies()
        pool = spawn_all(strategies, QuantumBackend(), tree)
        state = infinite_expansion(pool, _bits(tree.get("input-seed"), 242), 1, consts)
        result = replay(write_run(state, tmp))
        if not result.ok:
            failures.append(str(result.run_dir))
    return {"runs": runs, "failures": failures, "passed": not failures}


CRITERIA: Dict[int, Callable[[float, Path], Dict[str, Any]]] = {
    1: tsirelson_point,
    2: classical_limit,
    3: ruv_completeness,
    4: vv_completeness,
    5: extractor_exactness,
    6: end_to_end,
    7: ledger_fidelity,
    8: lemma_suite,
    9: replay_determinism,
}


def print_summary(results: List[Dict[str, Any]]):
    print("\n" + "=" * 60)
    print("ACCEPTANCE SUMMARY")
    print("=" * 60)
    for result in results:
        status = "PASS" if result["passed"] else "FAIL"
        print(f"{result['criterion']:>2}. {result['name']:<22} {status}  ({result['seconds']:.1f}s)")
    passed = sum(r["passed"] for r in results)
    print("=" * 60)
    print(f"{passed}/{len(results)} criteria passed")
    print("=" * 60)


def main():
    """Acceptance entry point."""
    parser = argparse.ArgumentParser(description="Run the certirand acceptance criteria")
    parser.add_argument("--only", type=int, nargs="+", default=None, help="Criterion numbers to run")
    parser.add_argument("--scale", type=float, default=1.0, help="Multiply every sample size (smoke runs)")
    parser.add_argument(
        "--output", type=str, default="eval/acceptance_results.jsonl", help="JSONL results file"
    )
    parser.add_argument("--runs_dir", type=str, default="eval/acceptance_runs", help="Where replay runs go")
    parser.add_argument(
        "--log_level",
        type=str,
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    args = parser.parse_args()
    setup_logging(level=args.log_level)

    selected = args.only or sorted(CRITERIA)
    unknown = [c for c in selected if c not in CRITERIA]
    if unknown:
        print(f"Error: unknown criteria {unknown}")
        return 1
    if not 0.0 < args.scale <= 1.0:
        print("Error: --scale must lie in (0, 1]")
        return 1

    runs_dir = Path(args.runs_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for number in selected:
        func = CRITERIA[number]
        print(f"\nCriterion {number}: {func.__name__}")
        start = time.perf_counter()
        result = func(args.scale, runs_dir)
        result = {"criterion": number, "name": func.__name__, "scale": args.scale,
                  "seconds": time.perf_counter() - start, **result}
        logger.info(f"Criterion {number} {'passed' if result['passed'] else 'FAILED'}")
        results.append(result)

    output_path = Path(args.output)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        for result in results:
            f.write(json.dumps(result, sort_keys=True) + "\n")

    print_summary(results)
    print(f"\nDetailed results saved to: {output_path}")
    return 0 if all(r["passed"] for r in results) else 1


if __name__ == "__main__":
    exit(main())
