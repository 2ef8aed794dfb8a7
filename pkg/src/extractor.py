"""Trevisan-style strong extractor: weak designs over a linear one-bit extractor.

Design sets are graphs of low-degree polynomials over GF(t_w): set ``i`` is
``{a * t_w + f_i(a)}`` where the coefficients of ``f_i`` are the base-t_w
digits of ``i``. The seed has ``d = t_w**2`` bits; output bit ``i`` runs the
one-bit extractor on the seed restricted to set ``i``.

Two one-bit extractors are available:

- ``parity_of_selected``: x is folded into ``r + t_w`` parity chunks. Bit i
  is chunk i XOR the inner product of the last t_w chunks with the seed
  restriction. For every fixed seed the r output functionals are linearly
  independent, so a full-entropy source gives exactly uniform output.
- ``rs_hadamard``: x is read as a polynomial over GF(2^l), l = t_w // 2,
  evaluated at a seed-chosen point; the output is the inner product of that
  value with the mask (1 || beta) taken from the rest of the seed chunk.

Only the classical strong-extractor behaviour is tested here, exhaustively at
tiny sizes. Quantum-proofness is a property of the construction, not
something these tests re-establish.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from src.errors import ConfigError, InputError, InvalidProbability
from src.params import ProtocolConstants
from src.utils.bitstring import BitString
from src.utils.fields import get_field, is_prime_power
from src.utils.logging_setup import get_logger

logger = get_logger(__name__)

MODES = ("parity_of_selected", "rs_hadamard")
MAX_RS_BITS = 8


@dataclass(frozen=True)
class WeakDesign:
    num_sets: int
    set_size: int
    universe: int
    degree: int
    sets: np.ndarray
    overlap_bound: float

    def max_intersection(self) -> int:
        """Largest pairwise intersection, by direct counting."""
        best = 0
        as_sets = [set(row.tolist()) for row in self.sets]
        for i in range(len(as_sets)):
            for j in range(i):
                best = max(best, len(as_sets[i] & as_sets[j]))
        return best

    def overlap_holds(self) -> bool:
        """sum_{j<i} 2^{|S_i ∩ S_j|} <= overlap_bound * (i - 1) for every set i (1-based)."""
        as_sets = [set(row.tolist()) for row in self.sets]
        for i in range(len(as_sets)):
            total = sum(2 ** len(as_sets[i] & as_sets[j]) for j in range(i))
            if total > self.overlap_bound * i:
                return False
        return True


def design_degree(r: int, t_w: int) -> int:
    """Smallest degree with t_w**(degree + 1) >= r."""
    degree = 0
    while t_w ** (degree + 1) < r:
        degree += 1
    return degree


@lru_cache(maxsize=32)
def build_weak_design(r: int, t_w: int) -> WeakDesign:
    """
    Polynomial weak design of r sets of size t_w in a universe of t_w**2.

    Args:
        r: Number of sets (output bits)
        t_w: Set size; must be a prime power

    Returns:
        WeakDesign; designs with r <= 64 are checked by intersection counting

    Raises:
        ConfigError: t_w not a prime power, or r beyond the design's capacity
    """
    if r < 1:
        raise InputError(f"A design needs r >= 1, got {r}")
    if t_w < 2 or not is_prime_power(t_w):
        raise ConfigError(f"Design set size {t_w} is not a prime power >= 2")
    if r > t_w ** t_w:
        raise ConfigError(f"{r} sets exceed the capacity {t_w}^{t_w} of a GF({t_w}) design")

    field = get_field(t_w)
    degree = design_degree(r, t_w)
    indices = np.arange(r)
    coeffs = np.stack([(indices // t_w ** j) % t_w for j in range(degree + 1)], axis=1)

    points = np.arange(t_w)
    values = np.zeros((r, t_w), dtype=np.int64)
    for j in range(degree, -1, -1):
        values = field.add_table[field.mul_table[values, points[None, :]], coeffs[:, j][:, None]]
    sets = points[None, :] * t_w + values
    sets.setflags(write=False)

    design = WeakDesign(r, t_w, t_w * t_w, degree, sets, float(2 ** degree))
    if r <= 64 and design.max_intersection() > degree:
        raise ConfigError(f"Design ({r}, {t_w}) has intersections above degree {degree}")
    return design


@dataclass(frozen=True)
class ExtractorSpec:
    n: int
    r: int
    epsilon: float
    d: int
    design: WeakDesign
    one_bit: str
    c0: float
    envelope: float
    envelope_ok: bool
    entropy_needed: Optional[float] = None
    entropy_ok: Optional[bool] = None

    @property
    def t_w(self) -> int:
        return self.design.set_size

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "r": self.r,
            "epsilon": self.epsilon,
            "d": self.d,
            "t_w": self.t_w,
            "degree": self.design.degree,
            "one_bit": self.one_bit,
            "c0": self.c0,
            "envelope": self.envelope,
            "envelope_ok": self.envelope_ok,
            "entropy_needed": self.entropy_needed,
            "entropy_ok": self.entropy_ok,
        }


def smallest_design_size(r: int) -> int:
    """Smallest prime power q >= 2 with q**q >= r."""
    q = 2
    while not (is_prime_power(q) and q ** q >= r):
        q += 1
    return q


def solve_spec(
    n: int,
    r: int,
    epsilon: float,
    consts: Optional[ProtocolConstants] = None,
    mode: Optional[str] = None,
    h: Optional[float] = None,
) -> ExtractorSpec:
    """
    Choose the design for an (n, r, epsilon) extractor.

    Args:
        n: Source length in bits
        r: Output length in bits
        epsilon: Target error in (0, 1)
        consts: Supplies c0, c1, c2, the field limit and the default mode
        mode: One-bit extractor; overrides consts.extractor_mode
        h: Source min-entropy, for the h >= r + c1 log r + c2 log(1/eps) check

    Returns:
        ExtractorSpec with d = t_w**2 and the c0 envelope recorded

    Raises:
        ConfigError: r beyond the largest allowed field, or n too short for the mode
    """
    consts = consts or ProtocolConstants(mode="test")
    mode = mode or consts.extractor_mode
    if mode not in MODES:
        raise ConfigError(f"Unknown one-bit extractor {mode!r}")
    if r < 1:
        raise InputError(f"Extractor output length must be >= 1, got {r}")
    if not 0.0 < epsilon < 1.0:
        raise InvalidProbability(f"Extractor error must lie in (0, 1), got {epsilon}")

    t_w = smallest_design_size(r)
    if t_w > consts.extractor_max_field:
        raise ConfigError(
            f"r={r} needs a design over GF({t_w}), above extractor_max_field={consts.extractor_max_field}"
        )
    if mode == "parity_of_selected" and n < r + t_w:
        raise ConfigError(f"parity_of_selected needs n >= r + t_w = {r + t_w}, got n={n}")
    if mode == "rs_hadamard" and t_w // 2 > MAX_RS_BITS:
        raise ConfigError(f"rs_hadamard supports t_w <= {2 * MAX_RS_BITS + 1}, got {t_w}")

    design = build_weak_design(r, t_w)
    d = t_w * t_w
    envelope = consts.extractor_c0 * math.ceil(math.log2(n / epsilon)) ** 2 * math.ceil(math.log2(max(r, 2)))
    envelope_ok = d <= envelope
    if not envelope_ok:
        logger.warning(f"Extractor seed d={d} exceeds the c0 envelope {envelope:.0f}")

    entropy_needed = entropy_ok = None
    if h is not None:
        entropy_needed = r + consts.extractor_c1 * math.log2(r) + consts.extractor_c2 * math.log2(1 / epsilon)
        entropy_ok = h >= entropy_needed
    return ExtractorSpec(n, r, epsilon, d, design, mode, consts.extractor_c0, envelope, envelope_ok, entropy_needed, entropy_ok)


def fold(x: np.ndarray, length: int) -> np.ndarray:
    """Parity chunks: chunk k is the XOR of x[p] over p = k mod length."""
    padded = np.zeros(-(-x.size // length) * length, dtype=np.uint8)
    padded[: x.size] = x
    return np.bitwise_xor.reduce(padded.reshape(-1, length), axis=0)


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    """Rows of MSB-first bits to integers."""
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def _rs_values(x: np.ndarray, ell: int) -> np.ndarray:
    """RS(x)(alpha) for every alpha in GF(2^ell), x read as ell-bit coefficients."""
    padded = np.zeros(-(-x.size // ell) * ell, dtype=np.uint8)
    padded[: x.size] = x
    coeffs = _bits_to_int(padded.reshape(-1, ell))
    return get_field(2 ** ell).poly_eval_all(coeffs.tolist())


def _parity(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    v = values.copy()
    while v.any():
        out ^= v & 1
        v >>= 1
    return out


def one_bit_extract(
    x: BitString,
    y: BitString,
    mode: str = "parity_of_selected",
) -> int:
    """
    Single-output one-bit extractor.

    In parity mode x is folded into 1 + |y| chunks and the bit is chunk 0
    XOR <chunks 1.., y>; with n = 1 + |y| the code is the identity. In
    rs_hadamard mode l = |y| // 2 must lie in [1, 8].

    Raises:
        InputError: x too short for the seed chunk, or an unusable |y|
    """
    if mode == "parity_of_selected":
        if len(x) < 1 + len(y):
            raise InputError(f"parity extractor needs |x| >= 1 + |y| = {1 + len(y)}, got {len(x)}")
        chunks = fold(x.bits, 1 + len(y))
        return int(chunks[0] ^ (int(np.sum(chunks[1:] & y.bits)) & 1))
    if mode == "rs_hadamard":
        ell = len(y) // 2
        if ell < 1 or ell > MAX_RS_BITS:
            raise InputError(f"rs_hadamard needs 2 <= |y| <= {2 * MAX_RS_BITS + 1}, got {len(y)}")
        values = _rs_values(x.bits, ell)
        alpha = int(_bits_to_int(y.bits[:ell]))
        mask = (1 << (ell - 1)) | int(_bits_to_int(y.bits[ell: 2 * ell - 1])) if ell > 1 else 1
        return int(_parity(np.array([values[alpha] & mask]))[0])
    raise InputError(f"Unknown one-bit extractor {mode!r}")


def extract(x: BitString, seed: BitString, spec: ExtractorSpec) -> BitString:
    """
    Run the extractor.

    Args:
        x: Source, exactly spec.n bits
        seed: Seed, exactly spec.d bits
        spec: From solve_spec

    Returns:
        spec.r output bits; bit i uses the seed restricted to design set i

    Raises:
        InputError: length mismatches
    """
    if len(x) != spec.n:
        raise InputError(f"Source has {len(x)} bits, spec expects {spec.n}")
    if len(seed) != spec.d:
        raise InputError(f"Seed has {len(seed)} bits, spec expects {spec.d}")
    restricted = seed.bits[spec.design.sets]
    t_w = spec.t_w

    if spec.one_bit == "parity_of_selected":
        chunks = fold(x.bits, spec.r + t_w)
        tail = chunks[spec.r:]
        inner = (restricted & tail[None, :]).sum(axis=1) & 1
        out = chunks[: spec.r] ^ inner.astype(np.uint8)
    else:
        ell = t_w // 2
        values = _rs_values(x.bits, ell)
        alphas = _bits_to_int(restricted[:, :ell])
        if ell > 1:
            masks = (1 << (ell - 1)) | _bits_to_int(restricted[:, ell: 2 * ell - 1])
        else:
            masks = np.ones(spec.r, dtype=np.int64)
        out = _parity(values[alphas] & masks).astype(np.uint8)
    return BitString(out)
