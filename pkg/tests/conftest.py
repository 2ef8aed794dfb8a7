"""Shared fixtures for the test suite."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.params import ProtocolConstants, load_constants
from src.utils.rng import RngTree

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture(scope="session")
def test_consts() -> ProtocolConstants:
    """Desk-scale constants (alpha=2, gamma=0.5, 8000 Protocol-B rounds)."""
    return load_constants(CONFIG_DIR / "test.consts")


@pytest.fixture(scope="session")
def chain_consts() -> ProtocolConstants:
    """Constants with a feasible three-iteration chain from 388 bits."""
    return load_constants(CONFIG_DIR / "chain.consts")


@pytest.fixture(scope="session")
def paper_consts() -> ProtocolConstants:
    return ProtocolConstants()


@pytest.fixture
def rng_tree() -> RngTree:
    return RngTree(1234)


@pytest.fixture(scope="session")
def quick_consts() -> ProtocolConstants:
    """Two-iteration chain 242 -> 64 -> 10 that runs in seconds."""
    return load_constants(CONFIG_DIR / "quick.consts")
