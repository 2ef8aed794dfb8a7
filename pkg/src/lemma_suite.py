"""Randomized checks of the information-theoretic facts the security argument uses.

Each family draws a random small instance, evaluates both sides of one
inequality (or one construction's certificates) and reports the margin
``rhs - lhs``; a trial is a violation when the margin drops below the
family's tolerance.

HOW TO ADD A NEW FAMILY:
========================

1. Write a trial function taking a generator and the factor dimensions:

   def _my_trial(rng: np.random.Generator, dims: Tuple[int, ...]) -> Trial:
       ...
       return Trial(ok=lhs <= rhs + INEQUALITY_TOL, margin=rhs - lhs)

2. Register it:

   FAMILIES["my_family"] = _my_trial

3. ``verify-lemmas --families my_family`` now runs it.
"""

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.errors import InputError
from src.infotheory import (
    MAX_DIMENSION,
    INEQUALITY_TOL,
    DensityMatrix,
    check_pinsker,
    check_subblock_chain,
    conditional_entropy,
    conditional_mutual_information,
    conditioning_bound_check,
    entropy,
    fidelity_trick_construct,
    guessing_probability,
    helstrom_probability,
    mutual_information,
    random_cq_state,
    random_density,
    trace_norm_dist,
)
from src.utils.logging_setup import get_logger
from src.utils.rng import RngTree

logger = get_logger(__name__)

DEFAULT_DIMS = (2, 2, 2)
CLOSED_FORM_TOL = 1e-6


@dataclass
class Trial:
    ok: bool
    margin: float
    note: Optional[str] = None


def parse_dims(spec: str) -> Tuple[int, ...]:
    """Parse ``"2x2x2"`` (or ``"2,3"``) into factor dimensions.

    Raises:
        InputError: On a malformed spec, a factor below 2, or a product above 64
    """
    parts = spec.replace(",", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts if p.strip())
    except ValueError:
        raise InputError(f"bad dims spec {spec!r}") from None
    if not dims or any(d < 2 for d in dims):
        raise InputError(f"bad dims spec {spec!r}")
    if int(np.prod(dims)) > MAX_DIMENSION:
        raise InputError(f"dims {dims} exceed total dimension {MAX_DIMENSION}")
    return dims


def _factors(dims: Tuple[int, ...], k: int) -> Tuple[int, ...]:
    """First ``k`` factors, repeating the last one if ``dims`` is short."""
    return tuple(dims[i] if i < len(dims) else dims[-1] for i in range(k))


def _two(rng, dims):
    return random_density(_factors(dims, 2), rng, ("A", "B"))


def _three(rng, dims):
    return random_density(_factors(dims, 3), rng, ("A", "B", "C"))


def _pinsker_trial(rng, dims) -> Trial:
    check = check_pinsker(_two(rng, dims), "A", "B")
    return Trial(check.holds, check.rhs - check.lhs)


def _chain_rule_trial(rng, dims) -> Trial:
    rho = _three(rng, dims)
    whole = mutual_information(rho, "A", ("B", "C"))
    parts = mutual_information(rho, "A", "B") + conditional_mutual_information(rho, "A", "C", "B")
    error = abs(whole - parts)
    return Trial(error <= INEQUALITY_TOL, -error)


def _conditioning_trial(rng, dims) -> Trial:
    rho = _two(rng, dims)
    margin = entropy(rho, "A") - conditional_entropy(rho, "A", "B")
    return Trial(margin >= -INEQUALITY_TOL, margin)


def _data_processing_trial(rng, dims) -> Trial:
    rho, sigma = _three(rng, dims), _three(rng, dims)
    full = trace_norm_dist(rho, sigma)
    margin = min(
        full - trace_norm_dist(rho.partial_trace(("A", "B")), sigma.partial_trace(("A", "B"))),
        full - trace_norm_dist(rho.partial_trace("A"), sigma.partial_trace("A")),
    )
    return Trial(margin >= -INEQUALITY_TOL, margin)


def _metric_trial(rng, dims) -> Trial:
    shape = _factors(dims, 2)
    a, b, c = (random_density(shape, rng) for _ in range(3))
    margin = trace_norm_dist(a, b) + trace_norm_dist(b, c) - trace_norm_dist(a, c)
    return Trial(margin >= -INEQUALITY_TOL, margin)


def _conditioning_bound_trial(rng, dims) -> Trial:
    outcomes, side = _factors(dims, 2)
    rho, sigma = random_cq_state(outcomes, side, rng, "F", "Q"), random_cq_state(outcomes, side, rng, "F", "Q")
    size = int(rng.integers(1, outcomes + 1))
    event = rng.choice(outcomes, size=size, replace=False).tolist()
    check = conditioning_bound_check(rho, sigma, event)
    return Trial(check.holds, check.rhs - check.lhs)


def _random_cq_marginal(rng: np.random.Generator, dims: Tuple[int, int], labels=("A1", "A2")) -> DensityMatrix:
    return random_density(dims, rng, labels).dephase(labels[0])


def _fidelity_trick_trial(rng, dims) -> Trial:
    d1, d2, d3 = _factors(dims, 3)
    rho = random_density((d1, d2, d3), rng, ("A1", "A2", "B")).dephase("A1")
    rho_a = rho.reduced(("A1", "A2"))
    mu = float(rng.uniform(0.0, 0.2))
    sigma = DensityMatrix(
        (1 - mu) * rho_a.data + mu * _random_cq_marginal(rng, (d1, d2)).data, (d1, d2), ("A1", "A2")
    )
    eps = trace_norm_dist(rho_a, sigma)
    result = fidelity_trick_construct(rho, sigma, eps)
    note = None if result.sqrt_eps_holds else "sqrt_eps_exceeded"
    return Trial(result.holds, result.uhlmann_bound - result.distance, note)


def _min_entropy_trial(rng, dims) -> Trial:
    side = _factors(dims, 2)[1]
    state = random_cq_state(2, side, rng)
    error = abs(guessing_probability(state).p_guess - helstrom_probability(state))
    return Trial(error <= CLOSED_FORM_TOL, CLOSED_FORM_TOL - error)


def random_block_state(rng: np.random.Generator, mix: float) -> DensityMatrix:
    """
    Block of two 2-bit sub-blocks with a flag F and side E, all qubit-sized.

    The ideal part is U_4 (x) rho_FE; ``mix`` of it is replaced by a random
    state that is classical on the block, so the block's distance from
    uniform-given-E grows with ``mix``.
    """
    rho_fe = random_density((2, 2), rng).data
    ideal = np.kron(np.eye(16) / 16, rho_fe)
    noise = random_cq_state(16, 4, rng).base.data
    return DensityMatrix((1 - mix) * ideal + mix * noise, (4, 4, 2, 2), ("X0", "X1", "F", "E"))


def _subblock_chain_trial(rng, dims) -> Trial:
    state = random_block_state(rng, float(rng.uniform(0.0, 0.3)))
    check = check_subblock_chain(state, ("X0", "X1"), "F", "E")
    margin = min(
        check.good_fraction - check.required_fraction,
        check.mi_bound - check.mi_total,
        check.mi_fraction - check.required_fraction,
    )
    return Trial(check.holds, margin)


TrialFn = Callable[[np.random.Generator, Tuple[int, ...]], Trial]

FAMILIES: Dict[str, TrialFn] = {
    "pinsker": _pinsker_trial,
    "chain_rule": _chain_rule_trial,
    "conditioning_reduces_entropy": _conditioning_trial,
    "data_processing": _data_processing_trial,
    "conditioning_bound": _conditioning_bound_trial,
    "fidelity_trick": _fidelity_trick_trial,
    "metric": _metric_trial,
    "min_entropy_closed_form": _min_entropy_trial,
    "subblock_chain": _subblock_chain_trial,
}


@dataclass
class FamilyResult:
    name: str
    trials: int
    violations: int
    worst_margin: float
    seconds: float
    notes: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


@dataclass
class LemmaSuiteReport:
    seed: int
    dims: Tuple[int, ...]
    results: List[FamilyResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def table(self) -> str:
        lines = [
            f"{'family':<30} {'trials':>7} {'viol':>5} {'worst margin':>13} {'secs':>7}  status",
            "-" * 75,
        ]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(
                f"{r.name:<30} {r.trials:>7} {r.violations:>5} {r.worst_margin:>13.3e} {r.seconds:>7.2f}  {status}"
            )
            for note, count in sorted(r.notes.items()):
                lines.append(f"{'':<30} note: {note} x{count}")
        return "\n".join(lines)


def run_family(name: str, trials: int, rng: np.random.Generator,
               dims: Tuple[int, ...] = DEFAULT_DIMS, progress: bool = False) -> FamilyResult:
    if name not in FAMILIES:
        raise InputError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    trial_fn = FAMILIES[name]
    violations = 0
    worst = float("inf")
    notes: Dict[str, int] = {}
    start = time.perf_counter()
    for _ in tqdm(range(trials), desc=name, disable=not progress):
        trial = trial_fn(rng, dims)
        violations += not trial.ok
        worst = min(worst, trial.margin)
        if trial.note:
            notes[trial.note] = notes.get(trial.note, 0) + 1
    result = FamilyResult(name, trials, violations, worst, time.perf_counter() - start, notes)
    if violations:
        logger.warning(f"{name}: {violations}/{trials} violations, worst margin {worst:.3e}")
    else:
        logger.info(f"{name}: {trials} trials passed (worst margin {worst:.3e})")
    return result


def run_lemma_suite(
    trials: int = 1000,
    seed: int = 0,
    dims: Tuple[int, ...] = DEFAULT_DIMS,
    families: Optional[Sequence[str]] = None,
    progress: bool = False,
) -> LemmaSuiteReport:
    """
    Run each family ``trials`` times.

    Args:
        trials: Random instances per family
        seed: Master seed; each family draws from its own stream
        dims: Factor dimensions for the families with free shapes
        families: Subset of FAMILIES to run (all by default)
        progress: Show tqdm bars

    Returns:
        LemmaSuiteReport with one row per family
    """
    if trials < 1:
        raise InputError("trials must be positive")
    names = list(families) if families else list(FAMILIES)
    tree = RngTree(seed)
    results = [run_family(name, trials, tree.fresh(f"lemma:{name}"), dims, progress) for name in names]
    return LemmaSuiteReport(seed, dims, results)
