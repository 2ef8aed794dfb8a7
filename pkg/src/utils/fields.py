"""Small finite fields GF(p^k) with table arithmetic.

Elements are the integers ``0..q-1``; the base-``p`` digits of an element
are the coefficients of its polynomial representative (digit ``j`` is the
coefficient of ``X^j``). Multiplication goes through exp/log tables built
from a primitive polynomial found by brute force, so the fields are meant
for the small sizes weak designs and RS codes use here (q <= a few hundred).
"""

from functools import lru_cache
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ConfigError


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    f = 2
    while f * f <= n:
        if n % f == 0:
            return False
        f += 1
    return True


def prime_power_decomposition(q: int) -> Optional[Tuple[int, int]]:
    """Return ``(p, k)`` with ``q = p**k`` and ``p`` prime, or None."""
    if q < 2:
        return None
    for p in range(2, q + 1):
        if q % p == 0:
            if not _is_prime(p):
                return None
            k, rest = 0, q
            while rest % p == 0:
                rest //= p
                k += 1
            return (p, k) if rest == 1 else None
    return None


def is_prime_power(q: int) -> bool:
    return prime_power_decomposition(q) is not None


class GaloisField:
    """Arithmetic in GF(q) for a prime power q."""

    def __init__(self, q: int):
        decomposition = prime_power_decomposition(q)
        if decomposition is None:
            raise ConfigError(f"Field size {q} is not a prime power")
        self.q = q
        self.p, self.k = decomposition
        self.modulus = self._primitive_modulus()
        self.exp, self.log = self._build_tables()
        self.add_table = self._build_add_table()
        self.mul_table = self._build_mul_table()

    def _digits(self, a: int) -> List[int]:
        out = []
        for _ in range(self.k):
            out.append(a % self.p)
            a //= self.p
        return out

    def _from_digits(self, digits: Sequence[int]) -> int:
        value = 0
        for d in reversed(digits):
            value = value * self.p + d
        return value

    def _times_x(self, digits: List[int], modulus: Sequence[int]) -> List[int]:
        # X^k = -(f_0 + f_1 X + ... + f_{k-1} X^{k-1})
        top = digits[-1]
        shifted = [0] + digits[:-1]
        return [(c - top * f) % self.p for c, f in zip(shifted, modulus)]

    def _primitive_modulus(self) -> Tuple[int, ...]:
        """Low coefficients of a monic degree-k polynomial with X primitive."""
        if self.k == 1:
            return ()
        order = self.q - 1
        for low in product(range(self.p), repeat=self.k):
            if low[0] == 0:
                continue
            seen = set()
            current = [1] + [0] * (self.k - 1)
            ok = True
            for _ in range(order):
                key = tuple(current)
                if key in seen:
                    ok = False
                    break
                seen.add(key)
                current = self._times_x(current, low)
            if ok and current == [1] + [0] * (self.k - 1) and len(seen) == order:
                return tuple(low)
        raise ConfigError(f"No primitive polynomial found for GF({self.q})")

    def _primitive_root(self) -> int:
        for g in range(1, self.p):
            value, seen = 1, set()
            for _ in range(self.p - 1):
                seen.add(value)
                value = value * g % self.p
            if len(seen) == self.p - 1:
                return g
        raise ConfigError(f"No primitive root modulo {self.p}")

    def _build_tables(self):
        order = self.q - 1
        exp = np.zeros(2 * order if order else 1, dtype=np.int64)
        log = np.full(self.q, -1, dtype=np.int64)
        if self.k == 1:
            g = self._primitive_root()
            value = 1
            for i in range(order):
                exp[i] = value
                log[value] = i
                value = value * g % self.p
        else:
            current = [1] + [0] * (self.k - 1)
            for i in range(order):
                element = self._from_digits(current)
                exp[i] = element
                log[element] = i
                current = self._times_x(current, self.modulus)
        exp[order:] = exp[:order]
        return exp, log

    def _build_add_table(self) -> np.ndarray:
        if self.p == 2:
            idx = np.arange(self.q)
            return idx[:, None] ^ idx[None, :]
        digits = np.array([self._digits(a) for a in range(self.q)], dtype=np.int64)
        summed = (digits[:, None, :] + digits[None, :, :]) % self.p
        weights = self.p ** np.arange(self.k)
        return summed @ weights

    def _build_mul_table(self) -> np.ndarray:
        table = np.zeros((self.q, self.q), dtype=np.int64)
        logs = self.log[1:]
        table[1:, 1:] = self.exp[(logs[:, None] + logs[None, :]) % (self.q - 1)]
        return table

    def add(self, a: int, b: int) -> int:
        return int(self.add_table[a, b])

    def mul(self, a: int, b: int) -> int:
        return int(self.mul_table[a, b])

    def power(self, a: int, e: int) -> int:
        if e == 0:
            return 1
        if a == 0:
            return 0
        return int(self.exp[(self.log[a] * e) % (self.q - 1)])

    def poly_eval(self, coeffs: Sequence[int], a: int) -> int:
        """Evaluate ``sum coeffs[j] * a**j`` by Horner's rule."""
        acc = 0
        for c in reversed(coeffs):
            acc = int(self.add_table[self.mul_table[acc, a], c])
        return acc

    def poly_eval_all(self, coeffs: Sequence[int]) -> np.ndarray:
        """Evaluate a polynomial at every field element, vectorized."""
        points = np.arange(self.q)
        acc = np.zeros(self.q, dtype=np.int64)
        for c in reversed(coeffs):
            acc = self.add_table[self.mul_table[acc, points], c]
        return acc


@lru_cache(maxsize=64)
def get_field(q: int) -> GaloisField:
    """Shared, cached field instance."""
    return GaloisField(q)
