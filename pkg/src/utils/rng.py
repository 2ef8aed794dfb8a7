"""Domain-separated deterministic random streams.

Every consumer of simulation randomness (each device's measurements, each
device's noise, analysis tasks) draws from its own counter-based Philox
stream. Stream keys are derived from the master seed and a label with
SHA-256, so adding a new consumer never shifts the draws of another.
"""

import hashlib

import numpy as np


def derive_key(master_seed: int, label: str) -> int:
    """128-bit Philox key for ``label`` under ``master_seed``."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


def stream(master_seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, label)))


def keyed_stream(key_bits: int) -> np.random.Generator:
    """Generator keyed directly by an integer taken from referee seed bits."""
    return np.random.Generator(np.random.Philox(key=key_bits))


class RngTree:
    """Factory of named streams under one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._issued = {}

    def get(self, label: str) -> np.random.Generator:
        """Return the stream for ``label``; repeated calls share one generator."""
        if label not in self._issued:
            self._issued[label] = stream(self.master_seed, label)
        return self._issued[label]

    def fresh(self, label: str) -> np.random.Generator:
        """A new generator for ``label``, independent of any issued one."""
        return stream(self.master_seed, label)

    def child(self, label: str) -> "RngTree":
        return RngTree(derive_key(self.master_seed, f"child:{label}"))
