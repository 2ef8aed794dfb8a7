"""Parameter functions and error bounds for the expansion protocols.

Everything here is a pure function of a seed length and a
``ProtocolConstants`` instance. Infeasible configurations are reported with
flags on the returned records instead of raising, so a caller can tabulate a
whole chain before deciding what to do with it.

Constants come in two modes. ``paper`` enforces the relations between
alpha, kappa_star and gamma that the soundness analysis relies on; ``test``
relaxes them (alpha >= 1, any gamma in (0, 1)) and unlocks the desk-scale
overrides for the Protocol-B length. The mode is recorded in every report.
"""

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError, InputError, InvalidProbability, InvalidSeedLength
from src.utils.logging_setup import get_logger

logger = get_logger(__name__)

COS2_PI_8 = math.cos(math.pi / 8) ** 2

# Flags that make a stage unusable; other flags are informational.
BLOCKING_FLAGS = {
    "h_overflow",
    "v_zero",
    "n_astronomical",
    "n_exceeds_desk_limit",
    "d_exceeds_s2",
    "ruv_seed_too_short",
    "output_below_next_seed",
    "seed_below_minimum",
}

TEST_ONLY_FIELDS = ("protocol_b_rounds", "protocol_b_length_factor")


class ProtocolConstants(BaseModel):
    """Constants shared by every parameter function."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: int = Field(default=20, ge=1)
    gamma: float = Field(default=1 / 170, gt=0.0, lt=1.0)
    kappa_star: float = Field(default=1.1, gt=1.0)
    big_c: Optional[int] = Field(default=None, ge=1)
    k1: float = Field(default=1.0, gt=0.0)
    k4: float = Field(default=1.0, gt=0.0)
    c_prime: float = Field(default=1.0, gt=0.0)
    c_dprime: float = Field(default=1.0, gt=0.0)
    log_base: Literal["two", "natural"] = "two"
    mode: Literal["paper", "test"] = "paper"

    # Protocol B (entropy generation inside VV)
    vv_test_density: float = Field(default=2 ** -4, ge=0.0, le=1.0)
    vv_margin: float = Field(default=0.05, ge=0.0, lt=1.0)
    vv_key_bits: int = Field(default=32, ge=0, le=128)
    protocol_b_rounds: Optional[int] = Field(default=None, ge=1)
    protocol_b_length_factor: Optional[float] = Field(default=None, gt=0.0)
    max_protocol_b_rounds: int = Field(default=10_000_000, ge=1)

    # Extractor
    extractor_mode: Literal["parity_of_selected", "rs_hadamard"] = "parity_of_selected"
    extractor_c0: float = Field(default=4.0, gt=0.0)
    extractor_c1: float = Field(default=1.0, ge=0.0)
    extractor_c2: float = Field(default=1.0, ge=0.0)
    extractor_max_field: int = Field(default=256, ge=2)

    # RUV sub-block selection and chaining
    selection_fallback: Literal["modulo", "abort"] = "modulo"
    min_next_seed: int = Field(default=8, ge=1)

    @field_validator("gamma", mode="before")
    @classmethod
    def _parse_fraction(cls, value):
        if isinstance(value, str) and "/" in value:
            try:
                return float(Fraction(value.replace(" ", "")))
            except (ValueError, ZeroDivisionError) as e:
                raise ValueError(f"gamma {value!r} is not a fraction") from e
        return value

    @model_validator(mode="before")
    @classmethod
    def _default_big_c(cls, data):
        if isinstance(data, dict) and data.get("big_c") in (None, ""):
            data = dict(data)
            alpha = int(data.get("alpha", 20))
            data["big_c"] = math.ceil(100 * alpha)
        return data

    @model_validator(mode="after")
    def _check_mode(self) -> "ProtocolConstants":
        if self.mode == "paper":
            expected_alpha = math.ceil(16 * self.kappa_star ** 2)
            if self.alpha != expected_alpha:
                raise ValueError(
                    f"paper mode requires alpha = ceil(16 kappa_star^2) = {expected_alpha}, got {self.alpha}"
                )
            if self.gamma > 1 / (10 + 8 * self.alpha) + 1e-15:
                raise ValueError(f"paper mode requires gamma <= 1/(10 + 8 alpha), got {self.gamma}")
            for name in TEST_ONLY_FIELDS:
                if getattr(self, name) is not None:
                    raise ValueError(f"{name} is a test-mode override")
        return self

    def log(self, x: float) -> float:
        """Logarithm in the configured base."""
        return math.log2(x) if self.log_base == "two" else math.log(x)

    def overrides(self) -> dict:
        """Fields whose values differ from the paper-mode defaults."""
        defaults = ProtocolConstants()
        return {
            name: value
            for name, value in self.model_dump().items()
            if value != getattr(defaults, name)
        }


def load_constants(path: Union[str, Path]) -> ProtocolConstants:
    """
    Load constants from a flat ``key = value`` file.

    Args:
        path: Constants file; ``#`` starts a comment

    Returns:
        Validated ProtocolConstants

    Raises:
        ConfigError: missing file, unknown key, or invalid value
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Constants file not found: {path}")
    raw = dotenv_values(path)
    empty = [key for key, value in raw.items() if value is None or value == ""]
    if empty:
        raise ConfigError(f"Constants without a value in {path}: {', '.join(empty)}")
    try:
        consts = ProtocolConstants(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid constants in {path}: {e}") from e
    logger.debug(f"Loaded constants from {path} (mode={consts.mode}, alpha={consts.alpha})")
    return consts


def iroot(n: int, k: int) -> int:
    """Largest integer x with x**k <= n."""
    if n < 0 or k < 1:
        raise InputError("iroot needs n >= 0 and k >= 1")
    if n < 2 or k == 1:
        return n
    x = int(round(n ** (1.0 / k)))
    while x ** k > n:
        x -= 1
    while (x + 1) ** k <= n:
        x += 1
    return x


def _floor_pow2(y: float) -> Optional[int]:
    """floor(2**y) with a guard against float noise at integers."""
    if y > 1000:
        return None
    value = 2.0 ** y
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return int(nearest)
    return int(math.floor(value))


def r_of(s: int, consts: ProtocolConstants) -> int:
    """RUV output length r(s) = floor((s/4)^(1/(2 alpha))), computed exactly."""
    if s < 4:
        return 0
    # largest x with 4 x^(2 alpha) <= s
    return iroot(s // 4, 2 * consts.alpha) if (s // 4) > 0 else 0


@dataclass(frozen=True)
class VvParams:
    """Parameter record for one VV call on an s-bit seed."""

    s: int
    s1_len: int
    s2_len: int
    h: Optional[int]
    n: Optional[int]
    n_formula: Optional[int]
    n_closed_form: Optional[int]
    d: int
    v: int
    epsilon: Optional[float]
    feasible: bool
    flags: Tuple[str, ...] = ()
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RuvParams:
    """Parameter record for one RUV call on an s-bit seed."""

    s: int
    n_games: int
    t: int
    num_blocks: int
    sub_block_len: int
    subs_per_block: int
    r: int
    nu: float
    zeta: float
    win_threshold: float
    t_constraint_ok: bool
    log_base: str

    def to_dict(self) -> dict:
        return asdict(self)


def _n_formula(h: int, consts: ProtocolConstants) -> Optional[int]:
    if h < 2:
        return 0
    log2_t = math.log2(h) / consts.gamma
    if log2_t > 900:
        return None
    t = 2.0 ** log2_t
    log_t = log2_t if consts.log_base == "two" else log2_t * math.log(2)
    return math.ceil(10 * log_t ** 2) * math.ceil(consts.big_c * t * log_t ** 2)


def _n_closed_form(s: int, consts: ProtocolConstants) -> Optional[int]:
    u = s / (2 * consts.k1)
    cube = u ** (1 / 3)
    if cube > 900:
        return None
    return int(math.floor(10 * consts.big_c * u ** (4 / 3) * 2.0 ** cube))


def vv_params(s: int, consts: ProtocolConstants) -> VvParams:
    """
    Compute the VV parameter set for an s-bit seed.

    Args:
        s: Seed length in bits (>= 8)
        consts: Protocol constants

    Returns:
        VvParams with h, n (realized and formula), d, v, epsilon and flags
    """
    if s < 8:
        raise InvalidSeedLength(f"VV needs s >= 8, got {s}")
    s1 = s // 2
    flags: List[str] = []
    notes: List[str] = []

    h = _floor_pow2(consts.gamma * (s1 / consts.k1) ** (1 / 3))
    if h is None:
        flags.append("h_overflow")
        return VvParams(s, s1, s1, None, None, None, None, 0, 0, None, False, tuple(flags))

    v = h // 2
    epsilon = 1.0 / h if h >= 1 else None
    d = math.ceil((consts.k4 / consts.k1) * consts.gamma ** 3 * s1)
    n_formula = _n_formula(h, consts)
    n_closed = _n_closed_form(s, consts)

    n = n_formula
    if consts.protocol_b_rounds is not None:
        n = consts.protocol_b_rounds
        notes.append("n_overridden")
    elif consts.protocol_b_length_factor is not None:
        target = math.ceil(consts.protocol_b_length_factor * h)
        n = target if n_formula is None else min(n_formula, target)
        notes.append("n_scaled")

    if v < 1:
        flags.append("v_zero")
    if n is None:
        flags.append("n_astronomical")
    elif n > consts.max_protocol_b_rounds:
        flags.append("n_exceeds_desk_limit")
    if d > s1:
        flags.append("d_exceeds_s2")

    feasible = not (set(flags) & BLOCKING_FLAGS)
    return VvParams(
        s=s,
        s1_len=s1,
        s2_len=s1,
        h=h,
        n=n,
        n_formula=n_formula,
        n_closed_form=n_closed,
        d=d,
        v=v,
        epsilon=epsilon,
        feasible=feasible,
        flags=tuple(flags),
        notes=tuple(notes),
    )


def ruv_params(s: int, consts: ProtocolConstants) -> RuvParams:
    """
    Compute the RUV block geometry and threshold for an s-bit seed.

    Args:
        s: Seed length in bits (>= 16)
        consts: Protocol constants

    Returns:
        RuvParams; t_constraint_ok records whether t > 85
    """
    if s < 16:
        raise InvalidSeedLength(f"RUV needs s >= 16, got {s}")
    n_games = s // 4
    t = iroot(n_games, consts.alpha)
    num_blocks = n_games // t
    sub = math.isqrt(t)
    log_n = consts.log(n_games)
    nu = (12 / math.sqrt(2)) * math.sqrt(log_n) * t / n_games ** 0.25
    zeta = consts.kappa_star * t ** (-consts.kappa_star)
    threshold = COS2_PI_8 * n_games - math.sqrt(n_games * log_n) / (2 * math.sqrt(2))
    return RuvParams(
        s=s,
        n_games=n_games,
        t=t,
        num_blocks=num_blocks,
        sub_block_len=sub,
        subs_per_block=sub,
        r=r_of(s, consts),
        nu=nu,
        zeta=zeta,
        win_threshold=threshold,
        t_constraint_ok=t > 85,
        log_base=consts.log_base,
    )


@dataclass(frozen=True)
class GValue:
    """One application of g(s) = r(v(s))."""

    s: int
    v: int
    nominal: int
    realized: int
    feasible: bool
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GChain:
    """k-fold composition of g; ``lengths[0]`` is the input length."""

    lengths: Tuple[int, ...]
    nominal_lengths: Tuple[int, ...]
    stages: Tuple[GValue, ...]
    feasible: bool

    @property
    def value(self) -> int:
        return self.lengths[-1]

    @property
    def nominal_value(self) -> int:
        return self.nominal_lengths[-1]

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "nominal_lengths": list(self.nominal_lengths),
            "stages": [stage.to_dict() for stage in self.stages],
            "feasible": self.feasible,
        }


def realized_ruv_output(v: int, consts: ProtocolConstants) -> int:
    """floor(sqrt(floor(N^(1/alpha)))) for N = floor(v/4)."""
    n_games = v // 4
    if n_games < 1:
        return 0
    return math.isqrt(iroot(n_games, consts.alpha))


def g(s: int, consts: ProtocolConstants) -> GValue:
    """
    Seed length after one cluster expansion.

    Reports both the formula value r(v(s)) and the realized slice length the
    RUV stage actually outputs; the realized one is what flows onward.
    """
    if s < 8:
        raise InvalidSeedLength(f"g needs s >= 8, got {s}")
    vv = vv_params(s, consts)
    flags = list(vv.flags)
    v = vv.v
    nominal = r_of(v, consts)
    realized = realized_ruv_output(v, consts)
    if v < 16:
        flags.append("ruv_seed_too_short")
    if realized < consts.min_next_seed:
        flags.append("output_below_next_seed")
    feasible = not (set(flags) & BLOCKING_FLAGS)
    return GValue(s=s, v=v, nominal=nominal, realized=realized, feasible=feasible, flags=tuple(flags))


def g_iter(k: int, m: int, consts: ProtocolConstants) -> GChain:
    """
    Compose g k times starting from an m-bit seed.

    Returns:
        GChain; the chain stops early (and is infeasible) once a seed drops
        below the 8-bit minimum
    """
    if k < 1:
        raise InputError(f"g_iter needs k >= 1, got {k}")
    if m < 8:
        raise InvalidSeedLength(f"g_iter needs m >= 8, got {m}")
    lengths = [m]
    nominal_lengths = [m]
    stages: List[GValue] = []
    feasible = True
    current, nominal_current = m, m
    for i in range(k):
        if current < 8:
            stages.append(GValue(current, 0, 0, 0, False, ("seed_below_minimum",)))
            feasible = False
            break
        stage = g(current, consts)
        stages.append(stage)
        blocking = set(stage.flags) & BLOCKING_FLAGS
        if i == k - 1 and stage.realized >= 1:
            # the last output seeds nothing
            blocking.discard("output_below_next_seed")
        feasible = feasible and not blocking
        current = stage.realized
        nominal_current = g(nominal_current, consts).nominal if nominal_current >= 8 else 0
        lengths.append(current)
        nominal_lengths.append(nominal_current)
    return GChain(tuple(lengths), tuple(nominal_lengths), tuple(stages), feasible)


# ---------------------------------------------------------------------------
# Error bounds
# ---------------------------------------------------------------------------

def _check_probability(lam: float) -> None:
    if not (0.0 < lam <= 1.0):
        raise InvalidProbability(f"probability must lie in (0, 1], got {lam}")


def eps_vv(m: float, consts: ProtocolConstants) -> float:
    return math.sqrt(3 * math.exp(-consts.c_prime * m ** (1 / 3)))


def eps_ruv(m: float, lam: float, consts: ProtocolConstants) -> float:
    _check_probability(lam)
    return math.sqrt(192 * (m / 4) ** (-1 / (8 * consts.alpha)) / lam)


def eps_ec(m: float, lam: float, consts: ProtocolConstants) -> float:
    _check_probability(lam)
    return math.exp(-consts.c_dprime * m ** (1 / 3)) / lam


def input_robust_bound(eps: float, delta: float, lam: float) -> float:
    """Error of a protocol run on a seed that is only delta-close to independent."""
    _check_probability(lam)
    return eps + delta / lam


def composed_cluster_bound(m: int, lam: float, consts: ProtocolConstants) -> Optional[float]:
    """(eps_RUV(v(m), lam) + eps_VV(m)) / lam, or None when v(m) is empty."""
    _check_probability(lam)
    v = vv_params(m, consts).v
    if v < 4:
        return None
    return (eps_ruv(v, lam, consts) + eps_vv(m, consts)) / lam


def tower_bound(m: int, lam: float, consts: ProtocolConstants) -> float:
    """4 exp(-C'' m^(1/3)) / lam^2, the end-to-end closeness bound."""
    _check_probability(lam)
    return 4 * math.exp(-consts.c_dprime * m ** (1 / 3)) / lam ** 2


@dataclass(frozen=True)
class ErrorBounds:
    eps_vv: float
    eps_ruv: float
    eps_ec: float
    raw_eps_vv: float
    raw_eps_ruv: float
    raw_eps_ec: float
    clamped: bool

    def to_dict(self) -> dict:
        return asdict(self)


def error_bounds(m: int, lam: float, consts: ProtocolConstants) -> ErrorBounds:
    """
    Evaluate the VV, RUV and cluster-expansion error bounds at m.

    Args:
        m: Seed length in bits (>= 1)
        lam: Success probability lower bound in (0, 1]
        consts: Protocol constants

    Returns:
        ErrorBounds with values clamped to [0, 1] and the raw values
    """
    _check_probability(lam)
    if m < 1:
        raise InputError(f"error bounds need m >= 1, got {m}")
    raw = (eps_vv(m, consts), eps_ruv(m, lam, consts), eps_ec(m, lam, consts))
    clamped = tuple(min(1.0, max(0.0, value)) for value in raw)
    was_clamped = any(c != r for c, r in zip(clamped, raw))
    if was_clamped:
        logger.debug(f"Error bounds clamped at m={m}, lambda={lam}")
    return ErrorBounds(*clamped, *raw, clamped=was_clamped)


@dataclass(frozen=True)
class LedgerEntry:
    iteration: int
    m: int
    p: float
    p_label: str
    eps_vv: float
    eps_ruv: float
    eps_ec: float
    eps_ec_raw: float
    delta: float
    clamped: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ErrorLedger:
    """Per-iteration error accounting for a chain of cluster expansions."""

    entries: List[LedgerEntry] = field(default_factory=list)
    lam: float = 1.0
    closed_bound: Optional[float] = None
    final_bound: Optional[float] = None

    @property
    def delta(self) -> Optional[float]:
        return self.entries[-1].delta if self.entries else None

    def history(self) -> List[Tuple[int, float, str]]:
        return [(e.m, e.p, e.p_label) for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "lambda": self.lam,
            "delta": self.delta,
            "closed_bound": self.closed_bound,
            "final_bound": self.final_bound,
        }


HistoryItem = Union[Tuple[int, float], Tuple[int, float, str]]


def delta_ledger(history: Sequence[HistoryItem], consts: ProtocolConstants) -> ErrorLedger:
    """
    Run the delta recursion over a sequence of (m_i, p_i) pairs.

    delta(1) = eps_EC(m_1, p_1) and delta(i) = eps_EC(m_i, p_i) + delta(i-1)/p_i,
    where m_i is the seed length entering iteration i. The recursion uses
    unclamped eps_EC values; clamped ones are reported alongside.

    Args:
        history: (m_i, p_i) or (m_i, p_i, label) per iteration
        consts: Protocol constants

    Returns:
        ErrorLedger with closed bound 2 eps_1 / prod(p_i) and final bound 2 delta(k)
    """
    if not history:
        raise InputError("delta_ledger needs a non-empty history")
    ledger = ErrorLedger()
    delta = 0.0
    lam = 1.0
    for i, item in enumerate(history, start=1):
        m, p = int(item[0]), float(item[1])
        label = item[2] if len(item) > 2 else "given"
        _check_probability(p)
        bounds = error_bounds(m, p, consts)
        if i == 1:
            delta = bounds.raw_eps_ec
        else:
            delta = input_robust_bound(bounds.raw_eps_ec, delta, p)
        lam *= p
        ledger.entries.append(
            LedgerEntry(
                iteration=i,
                m=m,
                p=p,
                p_label=label,
                eps_vv=bounds.eps_vv,
                eps_ruv=bounds.eps_ruv,
                eps_ec=bounds.eps_ec,
                eps_ec_raw=bounds.raw_eps_ec,
                delta=delta,
                clamped=bounds.clamped,
            )
        )
    ledger.lam = lam
    ledger.closed_bound = 2 * ledger.entries[0].eps_ec_raw / lam
    ledger.final_bound = 2 * delta
    return ledger


def describe(s: int, consts: ProtocolConstants) -> dict:
    """All parameter quantities for an s-bit seed, for the ``params`` command."""
    out = {"s": s, "mode": consts.mode, "log_base": consts.log_base, "vv": vv_params(s, consts).to_dict()}
    out["ruv"] = ruv_params(s, consts).to_dict() if s >= 16 else None
    out["g"] = g(s, consts).to_dict()
    return out
