"""Immutable bit strings with MSB-first hex serialization.

Seeds, device inputs, device outputs and extractor outputs all travel as
``BitString``. Bit ``i`` is the ``i``-th most significant bit of the hex
rendering; a length that is not a multiple of four is padded with zero bits
on the right of the final nibble. The canonical text form is
``"<length>:<hex>"`` so the length survives the round trip.
"""

from typing import Iterable, Union

import numpy as np

from src.errors import InputError


class BitString:
    """Read-only sequence of bits backed by a ``uint8`` numpy array."""

    __slots__ = ("_bits",)

    def __init__(self, bits: Union[Iterable[int], np.ndarray] = ()):
        arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
        if arr.size == 0:
            arr = np.zeros(0, dtype=np.uint8)
        if arr.ndim != 1:
            raise InputError("BitString expects a one-dimensional sequence")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise InputError("BitString entries must be 0 or 1")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def zeros(cls, length: int) -> "BitString":
        return cls(np.zeros(length, dtype=np.uint8))

    @classmethod
    def from_hex(cls, text: str, length: int = None) -> "BitString":
        """
        Parse ``"<length>:<hex>"`` or a bare hex string.

        Args:
            text: Hex text, optionally prefixed by a bit length and a colon
            length: Explicit bit length; overrides a prefix when given

        Returns:
            BitString of the requested length (4 bits per digit by default)
        """
        text = text.strip()
        if ":" in text:
            prefix, text = text.split(":", 1)
            if length is None:
                try:
                    length = int(prefix)
                except ValueError as e:
                    raise InputError(f"Bad length prefix in {prefix!r}") from e
        text = text.lower().removeprefix("0x")
        if length is None:
            length = 4 * len(text)
        if length > 4 * len(text) or length < 0:
            raise InputError(f"{len(text)} hex digits cannot hold {length} bits")
        padded = text + "0" * (len(text) % 2)
        try:
            raw = bytes.fromhex(padded)
        except ValueError as e:
            raise InputError(f"Invalid hex string: {text!r}") from e
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        return cls(bits[:length])

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitString":
        """Big-endian binary expansion of ``value`` on ``length`` bits."""
        if value < 0 or value >= (1 << length):
            raise InputError(f"{value} does not fit in {length} bits")
        return cls([(value >> (length - 1 - i)) & 1 for i in range(length)])

    @property
    def bits(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._bits

    def to_hex(self) -> str:
        """Hex digits only (no length prefix)."""
        if len(self) == 0:
            return ""
        packed = np.packbits(self._bits).tobytes().hex()
        return packed[: -(-len(self) // 4)]

    def serialize(self) -> str:
        return f"{len(self)}:{self.to_hex()}"

    def to_int(self) -> int:
        value = 0
        for b in self._bits.tolist():
            value = (value << 1) | b
        return value

    def to_list(self) -> list:
        return self._bits.tolist()

    def weight(self) -> int:
        return int(self._bits.sum())

    def __len__(self) -> int:
        return int(self._bits.size)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return BitString(self._bits[key])
        return int(self._bits[key])

    def __iter__(self):
        return iter(self._bits.tolist())

    def __add__(self, other: "BitString") -> "BitString":
        return BitString(np.concatenate([self._bits, other.bits]))

    def __xor__(self, other: "BitString") -> "BitString":
        if len(self) != len(other):
            raise InputError(f"XOR of lengths {len(self)} and {len(other)}")
        return BitString(self._bits ^ other.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self._bits, other.bits))

    def __hash__(self) -> int:
        return hash((len(self), self._bits.tobytes()))

    def __repr__(self) -> str:
        shown = self.serialize()
        if len(shown) > 40:
            shown = shown[:37] + "..."
        return f"BitString({shown})"
