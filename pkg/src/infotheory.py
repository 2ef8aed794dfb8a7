"""Density-matrix toolkit for checking the security calculus on small states.

States are ``DensityMatrix`` objects over a labelled tensor factorization,
e.g. ``dims=(2, 4), labels=("X", "E")``. Every quantity is in bits. Trace
distance is the half-normalized ``0.5 * ||rho - sigma||_1`` throughout, so
two orthogonal pure states are at distance 1.

Sizes are capped: 64 for the total dimension of any state and 8 for the
quantum side of a cq-state handed to the guessing-probability solver.

Matrix files for ad-hoc checks are plain text::

    # dims: A:2 B:2
    0.5+0j 0+0j 0+0j 0.5+0j
    ...

one matrix row per line, entries written as Python complex literals.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigh, eigvalsh, polar, svdvals

from src.config import config
from src.errors import CapacityError, InputError, InvalidProbability
from src.qsim import PAULIS
from src.utils.logging_setup import get_logger

logger = get_logger(__name__)

MAX_DIMENSION = 64
MAX_SIDE_DIMENSION = 8
INEQUALITY_TOL = 1e-9
MARGINAL_TOL = 1e-8

Labels = Union[str, Sequence[str]]


def _as_labels(labels: Labels) -> Tuple[str, ...]:
    if isinstance(labels, str):
        return (labels,)
    return tuple(labels)


def _herm(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = eigh(_herm(m))
    # rounding-level eigenvalues count as zero
    w = np.where(w > config.eigen_floor, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def _psd_inv_sqrt(m: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse square root and the projector onto the kept support."""
    w, v = eigh(_herm(m))
    keep = w > floor
    vk = v[:, keep]
    return (vk / np.sqrt(w[keep])) @ vk.conj().T, vk @ vk.conj().T


def _trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(svdvals(a - b)))


def _entropy_of(m: np.ndarray) -> float:
    w = eigvalsh(_herm(m))
    w = w[w > config.eigen_floor]
    return max(0.0, float(-np.sum(w * np.log2(w))))


class DensityMatrix:
    """Unit-trace positive semidefinite matrix over labelled factors."""

    def __init__(
        self,
        data: np.ndarray,
        dims: Optional[Sequence[int]] = None,
        labels: Optional[Sequence[str]] = None,
        validate: bool = True,
    ):
        data = np.array(data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise InputError(f"density matrix must be square, got shape {data.shape}")
        dims = tuple(int(d) for d in dims) if dims is not None else (data.shape[0],)
        if labels is None:
            labels = tuple(chr(ord("A") + i) for i in range(len(dims)))
        labels = tuple(labels)

        if math.prod(dims) != data.shape[0]:
            raise InputError(f"dims {dims} do not multiply to {data.shape[0]}")
        if len(labels) != len(dims):
            raise InputError(f"{len(labels)} labels for {len(dims)} factors")
        if len(set(labels)) != len(labels):
            raise InputError(f"duplicate labels {labels}")
        if data.shape[0] > MAX_DIMENSION:
            raise CapacityError(f"dimension {data.shape[0]} exceeds {MAX_DIMENSION}")

        if validate:
            tol = config.tolerance
            if np.max(np.abs(data - data.conj().T), initial=0.0) > tol:
                raise InputError("matrix is not Hermitian")
            if abs(np.trace(data) - 1) > tol:
                raise InputError(f"trace {np.trace(data).real:.12g} is not 1")
            if eigvalsh(_herm(data))[0] < -tol:
                raise InputError("matrix has a negative eigenvalue")

        data.flags.writeable = False
        self.data = data
        self.dims = dims
        self.labels = labels

    def __repr__(self) -> str:
        factors = " ".join(f"{l}:{d}" for l, d in zip(self.labels, self.dims))
        return f"DensityMatrix({factors})"

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return eigvalsh(_herm(self.data))

    def allclose(self, other: "DensityMatrix", atol: float = 1e-10) -> bool:
        return self.dims == other.dims and bool(np.allclose(self.data, other.data, atol=atol))

    def _index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"label {label!r} not in {self.labels}") from None

    def _tensor(self) -> np.ndarray:
        return self.data.reshape(self.dims + self.dims)

    # Constructors

    @classmethod
    def from_pure(cls, vector: np.ndarray, dims: Optional[Sequence[int]] = None,
                  labels: Optional[Sequence[str]] = None) -> "DensityMatrix":
        vector = np.asarray(vector, dtype=complex).reshape(-1)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise InputError("zero vector")
        vector = vector / norm
        return cls(np.outer(vector, vector.conj()), dims, labels)

    @classmethod
    def maximally_mixed(cls, dims: Sequence[int], labels: Optional[Sequence[str]] = None) -> "DensityMatrix":
        d = math.prod(dims)
        return cls(np.eye(d) / d, dims, labels)

    @classmethod
    def classical(cls, probs: Sequence[float], dims: Optional[Sequence[int]] = None,
                  labels: Optional[Sequence[str]] = None) -> "DensityMatrix":
        """Diagonal state with ``probs`` on the computational basis."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1) > config.tolerance:
            raise InvalidProbability(f"not a distribution: {probs}")
        return cls(np.diag(probs), dims if dims is not None else (len(probs),), labels)

    # Structure

    def partial_trace(self, keep: Labels) -> "DensityMatrix":
        """Trace out every factor not in ``keep``; kept factors stay in their order."""
        keep = _as_labels(keep)
        for label in keep:
            self._index(label)
        n = len(self.dims)
        kept = [i for i, label in enumerate(self.labels) if label in keep]
        traced = [i for i in range(n) if i not in kept]
        order = kept + traced
        dk = math.prod(self.dims[i] for i in kept)
        dt = math.prod(self.dims[i] for i in traced)
        tensor = self._tensor().transpose(order + [n + i for i in order]).reshape(dk, dt, dk, dt)
        out = np.einsum("ijkj->ik", tensor)
        return DensityMatrix(
            out, [self.dims[i] for i in kept], [self.labels[i] for i in kept], validate=False
        )

    def ptrace_out(self, label: Labels) -> "DensityMatrix":
        drop = set(_as_labels(label))
        for name in drop:
            self._index(name)
        return self.partial_trace([l for l in self.labels if l not in drop])

    def permute(self, labels: Labels) -> "DensityMatrix":
        labels = _as_labels(labels)
        if sorted(labels) != sorted(self.labels):
            raise InputError(f"{labels} is not a permutation of {self.labels}")
        order = [self._index(label) for label in labels]
        n = len(self.dims)
        out = self._tensor().transpose(order + [n + i for i in order]).reshape(self.dim, self.dim)
        return DensityMatrix(out, [self.dims[i] for i in order], labels, validate=False)

    def reduced(self, labels: Labels) -> "DensityMatrix":
        """Marginal on ``labels``, factors in the order given."""
        labels = _as_labels(labels)
        return self.partial_trace(labels).permute(labels)

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        if set(self.labels) & set(other.labels):
            raise InputError(f"labels overlap: {self.labels} and {other.labels}")
        return DensityMatrix(
            np.kron(self.data, other.data), self.dims + other.dims, self.labels + other.labels,
            validate=False,
        )

    def dephase(self, label: Labels) -> "DensityMatrix":
        """Measure ``label`` in the computational basis and forget the outcome."""
        n = len(self.dims)
        tensor = self._tensor()
        for name in _as_labels(label):
            i = self._index(name)
            shape = [1] * (2 * n)
            shape[i] = shape[n + i] = self.dims[i]
            tensor = tensor * np.eye(self.dims[i]).reshape(shape)
        return DensityMatrix(tensor.reshape(self.dim, self.dim), self.dims, self.labels, validate=False)

    def is_classical_on(self, label: Labels, tol: Optional[float] = None) -> bool:
        tol = config.tolerance if tol is None else tol
        return float(np.max(np.abs(self.data - self.dephase(label).data))) <= tol


def random_density(dims: Sequence[int], rng: np.random.Generator,
                   labels: Optional[Sequence[str]] = None, rank: Optional[int] = None) -> DensityMatrix:
    """Ginibre-ensemble state; full rank unless ``rank`` is given."""
    d = math.prod(dims)
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return DensityMatrix(_herm(rho / np.trace(rho).real), dims, labels)


def random_pure(dims: Sequence[int], rng: np.random.Generator,
                labels: Optional[Sequence[str]] = None) -> DensityMatrix:
    """Haar-random pure state."""
    d = math.prod(dims)
    return DensityMatrix.from_pure(rng.normal(size=d) + 1j * rng.normal(size=d), dims, labels)


def parse_matrix(text: str) -> DensityMatrix:
    """Parse the plain-text matrix format described in the module docstring."""
    dims: Optional[List[int]] = None
    labels: Optional[List[str]] = None
    rows: List[List[complex]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("dims:"):
                labels, dims = [], []
                for factor in body[len("dims:"):].split():
                    name, _, size = factor.partition(":")
                    if not size.isdigit():
                        raise InputError(f"line {lineno}: bad factor {factor!r}")
                    labels.append(name)
                    dims.append(int(size))
            continue
        try:
            rows.append([complex(token) for token in line.split()])
        except ValueError:
            raise InputError(f"line {lineno}: bad complex entry in {line!r}") from None
    if not rows or any(len(row) != len(rows) for row in rows):
        raise InputError("matrix must be square with one row per line")
    return DensityMatrix(np.array(rows), dims, labels)


def load_matrix(path: Union[str, Path]) -> DensityMatrix:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def format_matrix(rho: DensityMatrix) -> str:
    header = "# dims: " + " ".join(f"{l}:{d}" for l, d in zip(rho.labels, rho.dims))
    rows = [" ".join(f"{z.real:.17g}{z.imag:+.17g}j" for z in row) for row in rho.data]
    return "\n".join([header] + rows) + "\n"


@dataclass(frozen=True)
class CqState:
    """State classical on ``classical_label`` and arbitrary on the rest."""

    base: DensityMatrix
    classical_label: str

    def __post_init__(self):
        if self.classical_label not in self.base.labels:
            raise InputError(f"label {self.classical_label!r} not in {self.base.labels}")
        if not self.base.is_classical_on(self.classical_label):
            raise InputError(f"state is not classical on {self.classical_label!r}")

    @classmethod
    def from_ensemble(
        cls,
        probs: Sequence[float],
        states: Sequence[Union[DensityMatrix, np.ndarray]],
        x_label: str = "X",
        e_label: str = "E",
    ) -> "CqState":
        """Build sum_x p_x |x><x| (x) rho_x with a single quantum factor ``e_label``."""
        probs = np.asarray(probs, dtype=float)
        if len(probs) != len(states):
            raise InputError(f"{len(probs)} probabilities for {len(states)} states")
        if np.any(probs < 0) or abs(probs.sum() - 1) > config.tolerance:
            raise InvalidProbability(f"not a distribution: {probs}")
        mats = [s.data if isinstance(s, DensityMatrix) else np.asarray(s, dtype=complex) for s in states]
        d_e = mats[0].shape[0]
        data = np.zeros((len(probs) * d_e,) * 2, dtype=complex)
        for x, (p, m) in enumerate(zip(probs, mats)):
            data[x * d_e:(x + 1) * d_e, x * d_e:(x + 1) * d_e] = p * m
        return cls(DensityMatrix(data, (len(probs), d_e), (x_label, e_label)), x_label)

    @property
    def side_labels(self) -> Tuple[str, ...]:
        return tuple(l for l in self.base.labels if l != self.classical_label)

    @property
    def num_outcomes(self) -> int:
        return self.base.dims[self.base.labels.index(self.classical_label)]

    @property
    def side_dim(self) -> int:
        return self.base.dim // self.num_outcomes

    def ordered(self) -> DensityMatrix:
        """The base state with the classical factor first."""
        return self.base.permute((self.classical_label,) + self.side_labels)

    def blocks(self) -> List[np.ndarray]:
        """Sub-normalized conditional states p_x rho_E^x."""
        n, d = self.num_outcomes, self.side_dim
        t = self.ordered().data.reshape(n, d, n, d)
        return [t[x, :, x, :].copy() for x in range(n)]

    def ensemble(self) -> Tuple[np.ndarray, List[Optional[np.ndarray]]]:
        """Probabilities and normalized conditional states (None where p_x = 0)."""
        blocks = self.blocks()
        probs = np.array([np.trace(b).real for b in blocks])
        states = [b / p if p > config.eigen_floor else None for b, p in zip(blocks, probs)]
        return probs, states


def random_cq_state(num_outcomes: int, side_dim: int, rng: np.random.Generator,
                    x_label: str = "X", e_label: str = "E") -> CqState:
    probs = rng.dirichlet(np.ones(num_outcomes))
    states = [random_density((side_dim,), rng).data for _ in range(num_outcomes)]
    return CqState.from_ensemble(probs, states, x_label, e_label)


# Distances


def trace_norm_dist(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Half trace norm of ``rho - sigma``, in [0, 1].

    Raises:
        InputError: If the factor dimensions differ
    """
    if rho.dims != sigma.dims:
        raise InputError(f"dims differ: {rho.dims} vs {sigma.dims}")
    return min(1.0, _trace_distance(rho.data, sigma.data))


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Root fidelity ||sqrt(rho) sqrt(sigma)||_1."""
    if rho.dims != sigma.dims:
        raise InputError(f"dims differ: {rho.dims} vs {sigma.dims}")
    return min(1.0, float(np.sum(svdvals(_psd_sqrt(rho.data) @ _psd_sqrt(sigma.data)))))


def security_distance(state: Union[CqState, DensityMatrix], x_label: Optional[str] = None) -> float:
    """Distance of rho_XE from U_X (x) rho_E.

    Args:
        state: A cq-state, or a density matrix together with ``x_label``

    Raises:
        InputError: If X is not classical
    """
    if not isinstance(state, CqState):
        if x_label is None:
            raise InputError("x_label is required for a plain density matrix")
        state = CqState(state, x_label)
    ordered = state.ordered()
    x_dim = state.num_outcomes
    ideal = DensityMatrix.maximally_mixed((x_dim,), (state.classical_label,))
    if state.side_labels:
        ideal = ideal.tensor(ordered.partial_trace(state.side_labels))
    return trace_norm_dist(ordered, ideal)


# Entropies


def von_neumann_entropy(rho: DensityMatrix) -> float:
    return _entropy_of(rho.data)


def entropy(state: DensityMatrix, labels: Labels) -> float:
    """H of the marginal on ``labels``; the empty marginal has entropy 0."""
    return _entropy_of(state.partial_trace(_as_labels(labels)).data)


def conditional_entropy(state: DensityMatrix, a: Labels, b: Labels) -> float:
    """H(A|B) = H(AB) - H(B)."""
    a, b = _as_labels(a), _as_labels(b)
    return entropy(state, a + b) - entropy(state, b)


def mutual_information(state: DensityMatrix, a: Labels, b: Labels) -> float:
    a, b = _as_labels(a), _as_labels(b)
    return entropy(state, a) + entropy(state, b) - entropy(state, a + b)


def conditional_mutual_information(state: DensityMatrix, a: Labels, b: Labels, given: Labels) -> float:
    """I(A:B|C) = H(A|C) - H(A|BC)."""
    a, b, c = _as_labels(a), _as_labels(b), _as_labels(given)
    return conditional_entropy(state, a, c) - conditional_entropy(state, a, b + c)


@dataclass
class Entropies:
    von_neumann: float
    conditional: float
    mutual_info: float
    conditional_mutual_info: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def entropies(state: DensityMatrix, a: Labels, b: Labels, c: Optional[Labels] = None) -> Entropies:
    """
    Standard entropic quantities of one state, in bits.

    Args:
        state: Density matrix containing every named factor
        a: Factor(s) A
        b: Factor(s) B
        c: Optional factor(s) C for I(A:C|B)

    Returns:
        Entropies with H(state), H(A|B), I(A:B) and, when ``c`` is given, I(A:C|B)

    Raises:
        InputError: If a label is not a factor of ``state``
    """
    result = Entropies(
        von_neumann=von_neumann_entropy(state),
        conditional=conditional_entropy(state, a, b),
        mutual_info=mutual_information(state, a, b),
    )
    if c is not None:
        result.conditional_mutual_info = conditional_mutual_information(state, a, c, b)
    return result


# Guessing probability and min-entropy


@dataclass
class GuessingResult:
    """Primal value of the optimal-measurement search with its dual certificate."""

    p_guess: float
    dual_bound: float
    iterations: int
    certified: bool
    measurement: List[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def gap(self) -> float:
        return self.dual_bound - self.p_guess

    @property
    def min_entropy(self) -> float:
        return -math.log2(self.p_guess)


def _guess_bounds(blocks: Sequence[np.ndarray], povm: Sequence[np.ndarray]) -> Tuple[float, float]:
    gamma = _herm(sum(b @ m for b, m in zip(blocks, povm)))
    primal = float(np.trace(gamma).real)
    excess = max(float(eigvalsh(_herm(b - gamma))[-1]) for b in blocks)
    return primal, primal + blocks[0].shape[0] * max(0.0, excess)


def guess_blocks(
    blocks: Sequence[np.ndarray],
    gap: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> GuessingResult:
    """
    Maximize sum_x tr(M_x b_x) over measurements {M_x}.

    Starts from the pretty-good measurement and applies the iteration
    M_x <- R^-1/2 b_x M_x b_x R^-1/2 with R = sum_x b_x M_x b_x. The dual
    point Y = G + lam I, G = sum_x b_x M_x, lam = max_x lambda_max(b_x - G),
    bounds the optimum from above; the loop stops once tr Y minus the primal
    value is below ``gap``. Blocks may be sub-normalized.

    Raises:
        CapacityError: If the quantum side has dimension above 8
    """
    gap = config.solver_gap if gap is None else gap
    max_iter = config.solver_max_iter if max_iter is None else max_iter
    blocks = [_herm(np.asarray(b, dtype=complex)) for b in blocks]
    n, d = len(blocks), blocks[0].shape[0]
    if d > MAX_SIDE_DIMENSION:
        raise CapacityError(f"side dimension {d} exceeds {MAX_SIDE_DIMENSION}")
    eye = np.eye(d)

    inv_sqrt, support = _psd_inv_sqrt(sum(blocks), config.eigen_floor)
    povm = [_herm(inv_sqrt @ b @ inv_sqrt) + (eye - support) / n for b in blocks]
    primal, dual = _guess_bounds(blocks, povm)
    iterations = 0
    while dual - primal >= gap and iterations < max_iter:
        r = sum(b @ m @ b for b, m in zip(blocks, povm))
        inv_sqrt, support = _psd_inv_sqrt(r, config.eigen_floor)
        povm = [_herm(inv_sqrt @ b @ m @ b @ inv_sqrt) + (eye - support) / n for b, m in zip(blocks, povm)]
        primal, dual = _guess_bounds(blocks, povm)
        iterations += 1

    certified = dual - primal < gap
    if not certified:
        logger.warning(f"p_guess not certified after {iterations} iterations: gap {dual - primal:.3e}")
    else:
        logger.debug(f"p_guess {primal:.9f} certified after {iterations} iterations")
    return GuessingResult(primal, dual, iterations, certified, povm)


def guessing_probability(state: CqState, gap: Optional[float] = None,
                         max_iter: Optional[int] = None) -> GuessingResult:
    return guess_blocks(state.blocks(), gap, max_iter)


def min_entropy_cq(state: CqState) -> float:
    """H_min(X|E) = -log2 p_guess(X|E).

    Raises:
        CapacityError: If dim(E) exceeds 8
    """
    if state.side_dim > MAX_SIDE_DIMENSION:
        raise CapacityError(f"side dimension {state.side_dim} exceeds {MAX_SIDE_DIMENSION}")
    return guessing_probability(state).min_entropy


def helstrom_probability(state: CqState) -> float:
    """Closed-form optimum 0.5 * (1 + ||p0 rho0 - p1 rho1||_1) for two outcomes."""
    if state.num_outcomes != 2:
        raise InputError(f"two outcomes required, got {state.num_outcomes}")
    b0, b1 = state.blocks()
    return 0.5 * (1 + float(np.sum(svdvals(b0 - b1))))


def grid_guessing_probability(state: CqState, resolution: float = 1e-3) -> float:
    """Best two-outcome qubit measurement on a Bloch-sphere angle grid.

    Covers every projective measurement up to ``resolution`` in both angles,
    plus the two trivial ones.
    """
    if state.num_outcomes != 2 or state.side_dim != 2:
        raise InputError("grid search needs two outcomes and a qubit side")
    b0, b1 = state.blocks()
    delta = b0 - b1
    base = float(np.trace(b1).real)
    r = np.array([np.trace(delta @ p).real for p in PAULIS[1:]])
    best = max(base, float(np.trace(b0).real))

    thetas = np.arange(0.0, math.pi + resolution, resolution)
    phis = np.arange(0.0, 2 * math.pi, resolution)
    cos_phi, sin_phi = np.cos(phis), np.sin(phis)
    half_trace = 0.5 * float(np.trace(delta).real)
    for start in range(0, len(thetas), 256):
        theta = thetas[start:start + 256, None]
        proj = np.sin(theta) * (r[0] * cos_phi + r[1] * sin_phi) + np.cos(theta) * r[2]
        best = max(best, base + half_trace + 0.5 * float(proj.max()))
    return best


@dataclass
class SmoothedMinEntropy:
    """A lower bound on the smoothed min-entropy, not its exact value."""

    value: float
    unsmoothed: float
    eps: float
    kind: str
    parameter: float
    family_size: int
    label: str = "lower bound"


def smoothed_min_entropy_lower_bound(state: CqState, eps: float, family_size: int = 11) -> SmoothedMinEntropy:
    """
    Lower-bound H_min^eps(X|E) by searching a finite family inside the eps-ball.

    Two families, each with ``family_size`` members:

    - mixing toward U_X (x) rho_E: (1 - mu) rho + mu U (x) rho_E
    - trimming the block with the largest eigenvalue, which leaves the state
      sub-normalized

    Args:
        state: cq-state with dim(E) <= 8
        eps: Smoothing radius in trace distance, in [0, 1)
        family_size: Members per family, at least 2

    Returns:
        SmoothedMinEntropy naming the family member that attained the bound
    """
    if not 0.0 <= eps < 1.0:
        raise InvalidProbability(f"eps must lie in [0, 1), got {eps}")
    if family_size < 2:
        raise InputError("family_size must be at least 2")
    blocks = state.blocks()
    n = len(blocks)
    rho_e = sum(blocks)
    base = guess_blocks(blocks).min_entropy
    best = (base, "none", 0.0)

    far = security_distance(state)
    mu_max = min(1.0, eps / far) if far > 0 else 0.0
    for mu in np.linspace(0.0, mu_max, family_size)[1:]:
        mixed = [(1 - mu) * b + mu * rho_e / n for b in blocks]
        value = guess_blocks(mixed).min_entropy
        if value > best[0]:
            best = (value, "mix", float(mu))

    top = int(np.argmax([eigvalsh(b)[-1] for b in blocks]))
    weight = float(np.trace(blocks[top]).real)
    c_max = min(1.0, 2 * eps / weight) if weight > 0 else 0.0
    for c in np.linspace(0.0, c_max, family_size)[1:]:
        trimmed = [b * (1 - c) if x == top else b for x, b in enumerate(blocks)]
        if sum(np.trace(b).real for b in trimmed) <= config.eigen_floor:
            continue
        value = guess_blocks(trimmed).min_entropy
        if value > best[0]:
            best = (value, "trim", float(c))

    return SmoothedMinEntropy(best[0], base, eps, best[1], best[2], family_size)


# Inequality checks


@dataclass
class BoundCheck:
    """Both sides of an inequality lhs <= rhs and whether it held."""

    name: str
    lhs: float
    rhs: float
    holds: bool
    details: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, **self.details}


def check_pinsker(state: DensityMatrix, a: Labels, b: Labels) -> BoundCheck:
    """||rho_AB - rho_A (x) rho_B||^2 <= 2 I(A:B), mutual information in bits.

    With the half-normalized distance and base-2 logarithms this is weaker
    than the natural-log form, so it holds with room to spare.
    """
    a, b = _as_labels(a), _as_labels(b)
    joint = state.reduced(a + b)
    product = state.reduced(a).tensor(state.reduced(b))
    lhs = trace_norm_dist(joint, product) ** 2
    rhs = 2 * mutual_information(state, a, b)
    return BoundCheck("pinsker", lhs, rhs, lhs <= rhs + INEQUALITY_TOL, {"base": 2.0})


def _condition(ordered: np.ndarray, mask: np.ndarray, side: int) -> Tuple[np.ndarray, float]:
    proj = np.kron(np.diag(mask.astype(float)), np.eye(side))
    kept = proj @ ordered @ proj
    p = float(np.trace(kept).real)
    if p <= config.eigen_floor:
        return np.zeros_like(kept), 0.0
    return kept / p, p


def conditioning_bound_check(
    rho: CqState,
    sigma: CqState,
    event: Sequence[int],
) -> BoundCheck:
    """
    Check ||rho|E - sigma|E|| <= ||rho - sigma|| / max(Pr_rho(E), Pr_sigma(E)).

    ``event`` is a set of outcomes of the classical factor F. A state that
    gives the event probability zero is conditioned to the zero matrix.

    Raises:
        InputError: If the states differ in shape or labels, an outcome is out
            of range, or the event has probability zero under both
    """
    if rho.base.labels != sigma.base.labels or rho.base.dims != sigma.base.dims:
        raise InputError("states must share labels and dims")
    if rho.classical_label != sigma.classical_label:
        raise InputError("states must be classical on the same factor")
    n, side = rho.num_outcomes, rho.side_dim
    mask = np.zeros(n, dtype=bool)
    for outcome in event:
        if not 0 <= int(outcome) < n:
            raise InputError(f"outcome {outcome} outside 0..{n - 1}")
        mask[int(outcome)] = True

    rho_data, sigma_data = rho.ordered().data, sigma.ordered().data
    rho_e, p_rho = _condition(rho_data, mask, side)
    sigma_e, p_sigma = _condition(sigma_data, mask, side)
    if p_rho == 0.0 and p_sigma == 0.0:
        raise InputError("event has probability zero under both states")

    distance = _trace_distance(rho_data, sigma_data)
    lhs = _trace_distance(rho_e, sigma_e)
    rhs = distance / max(p_rho, p_sigma)
    return BoundCheck(
        "conditioning", lhs, rhs, lhs <= rhs + INEQUALITY_TOL,
        {"p_rho": p_rho, "p_sigma": p_sigma, "distance": distance},
    )


@dataclass
class FidelityTrickResult:
    """The constructed tau and the certificates it carries."""

    tau: DensityMatrix
    eps: float
    fidelity: float
    distance: float
    uhlmann_bound: float
    marginal_error: float

    @property
    def marginal_ok(self) -> bool:
        return self.marginal_error <= MARGINAL_TOL

    @property
    def holds(self) -> bool:
        return self.marginal_ok and self.distance <= self.uhlmann_bound + config.cert_slack

    @property
    def sqrt_eps_holds(self) -> bool:
        return self.distance <= math.sqrt(self.eps) + config.cert_slack

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "fidelity": self.fidelity,
            "distance": self.distance,
            "uhlmann_bound": self.uhlmann_bound,
            "marginal_error": self.marginal_error,
            "holds": self.holds,
            "sqrt_eps_holds": self.sqrt_eps_holds,
        }


def fidelity_trick_construct(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    eps: float,
    a1: Labels = "A1",
    a2: Labels = "A2",
    b: Optional[Labels] = None,
) -> FidelityTrickResult:
    """
    Extend sigma_{A1A2} to a state tau_{A1A2B} close to rho_{A1A2B}.

    Purify rho_A and sigma_A on A(x)Q so that the overlap of the purifications
    equals F(rho_A, sigma_A), map Q into the purifying system BR of rho_AB
    with the isometry relating the two purifications of rho_A, trace out R
    and dephase A1. The result has tau_A = sigma_A and
    ||rho - tau|| <= sqrt(1 - F^2).

    Args:
        rho: State classical on ``a1``; factors ``a1``, ``a2`` and ``b``
        sigma: State on ``a1`` and ``a2``, classical on ``a1``
        eps: Claimed bound on ||rho_A - sigma_A||
        a1: Classical factor(s)
        a2: Quantum factor(s) shared with sigma
        b: Extra factor(s) of rho; defaults to every remaining factor

    Returns:
        FidelityTrickResult with tau ordered as a1 + a2 + b

    Raises:
        InputError: If a state is not classical on ``a1`` or the distance
            precondition fails
    """
    a1, a2 = _as_labels(a1), _as_labels(a2)
    a = a1 + a2
    b = tuple(l for l in rho.labels if l not in a) if b is None else _as_labels(b)
    if not rho.is_classical_on(a1):
        raise InputError(f"rho is not classical on {a1}")
    if not sigma.is_classical_on(a1):
        raise InputError(f"sigma is not classical on {a1}")

    rho_ab = rho.reduced(a + b)
    rho_a = rho_ab.partial_trace(a)
    sigma_a = sigma.reduced(a)
    if rho_a.dims != sigma_a.dims:
        raise InputError(f"marginal dims differ: {rho_a.dims} vs {sigma_a.dims}")
    start = trace_norm_dist(rho_a, sigma_a)
    if start > eps + config.cert_slack:
        raise InputError(f"||rho_A - sigma_A|| = {start:.6g} exceeds eps = {eps}")

    d_a = rho_a.dim
    d_ab = rho_ab.dim
    # |theta> purifies rho_AB on R; read as a map from A to BR.
    theta = _psd_sqrt(rho_ab.data).reshape(d_a, -1)
    to_br, psi = polar(theta, side="left")
    phi = _psd_sqrt(sigma_a.data)
    align, _ = polar(psi.conj().T @ phi)
    phi = phi @ align.conj().T
    fid = min(1.0, abs(np.trace(psi.conj().T @ phi)))

    tau_abr = (phi @ to_br).reshape(d_ab, d_ab)
    tau = DensityMatrix(_herm(tau_abr @ tau_abr.conj().T), rho_ab.dims, rho_ab.labels)
    tau = tau.dephase(a1)

    result = FidelityTrickResult(
        tau=tau,
        eps=eps,
        fidelity=fid,
        distance=trace_norm_dist(rho_ab, tau),
        uhlmann_bound=math.sqrt(max(0.0, 1 - fid ** 2)),
        marginal_error=float(np.max(np.abs(tau.partial_trace(a).data - sigma_a.data))),
    )
    logger.debug(f"fidelity trick: F={fid:.6f} distance={result.distance:.3e} bound={result.uhlmann_bound:.3e}")
    return result


@dataclass
class SubblockChainCheck:
    t: int
    zeta: float
    zeta_actual: float
    bound: float
    distances: List[float]
    good_fraction: float
    required_fraction: float
    mi_total: float
    mi_bound: float
    subblock_mi: List[float]
    mi_threshold: float
    mi_fraction: float
    trick: FidelityTrickResult

    @property
    def fraction_holds(self) -> bool:
        return self.good_fraction >= self.required_fraction - INEQUALITY_TOL

    @property
    def mi_holds(self) -> bool:
        return self.mi_total <= self.mi_bound + INEQUALITY_TOL

    @property
    def mi_fraction_holds(self) -> bool:
        return self.mi_fraction >= self.required_fraction - INEQUALITY_TOL

    @property
    def holds(self) -> bool:
        return self.fraction_holds and self.mi_holds and self.mi_fraction_holds and self.trick.holds


def check_subblock_chain(
    state: DensityMatrix,
    blocks: Sequence[str],
    flag: str,
    side: str,
    zeta: Optional[float] = None,
) -> SubblockChainCheck:
    """
    Check the per-sub-block security that follows from whole-block security.

    The block X = ``blocks`` has t = R^2 bits split into R sub-blocks of R
    bits, one factor each. If ||rho_XE - U_t (x) rho_E|| <= zeta, then at
    least a 1 - t^-1/4 fraction of sub-blocks j satisfy
    ||rho_{X_j F E} - U (x) rho_FE|| <= 2 (sqrt(zeta) + t^-1/8).

    The argument runs through the fidelity-trick state tau with
    tau_XE = U_t (x) rho_E; on tau the check also confirms I(X : FE) <= 2 log2 |F|
    and that a 1 - t^-1/4 fraction of sub-blocks have I(X_j : FE) at most
    t^-1/4 times that.

    Args:
        state: State on ``blocks``, ``flag`` and ``side``, classical on the blocks
        blocks: One label per sub-block, each of dimension 2^R
        flag: The flag factor F
        side: The eavesdropper factor E
        zeta: Hypothesis radius; defaults to the actual distance

    Raises:
        InputError: If the sub-block shapes are wrong or ``zeta`` is below the
            actual distance
    """
    blocks = tuple(blocks)
    r = len(blocks)
    ordered = state.reduced(blocks + (flag, side))
    if any(d != 2 ** r for d in ordered.dims[:r]):
        raise InputError(f"each of the {r} sub-blocks must have dimension 2^{r}")
    t = r * r

    block_e = ordered.reduced(blocks + (side,))
    rho_e = ordered.reduced((side,))
    uniform = DensityMatrix.maximally_mixed([2 ** r] * r, blocks)
    ideal_xe = uniform.tensor(rho_e)
    zeta_actual = trace_norm_dist(block_e, ideal_xe)
    if zeta is None:
        zeta = zeta_actual
    elif zeta < zeta_actual - INEQUALITY_TOL:
        raise InputError(f"hypothesis fails: distance {zeta_actual:.6g} exceeds zeta {zeta}")

    bound = 2 * (math.sqrt(zeta) + t ** (-1 / 8))
    required = 1 - t ** (-1 / 4)
    rho_fe = ordered.reduced((flag, side))
    distances = []
    for label in blocks:
        sub = DensityMatrix.maximally_mixed((2 ** r,), (label,)).tensor(rho_fe)
        distances.append(trace_norm_dist(ordered.reduced((label, flag, side)), sub))
    good = sum(d <= bound + INEQUALITY_TOL for d in distances) / r

    trick = fidelity_trick_construct(ordered, ideal_xe, zeta, a1=blocks, a2=(side,), b=(flag,))
    tau = trick.tau
    mi_bound = 2 * math.log2(ordered.dims[r])
    mi_total = mutual_information(tau, blocks, (flag, side))
    subblock_mi = [mutual_information(tau, label, (flag, side)) for label in blocks]
    mi_threshold = mi_bound * t ** (-1 / 4)
    mi_fraction = sum(m <= mi_threshold + INEQUALITY_TOL for m in subblock_mi) / r

    logger.debug(f"sub-block chain t={t} zeta={zeta:.4g}: {good:.2f} of sub-blocks within {bound:.4g}")
    return SubblockChainCheck(
        t=t,
        zeta=zeta,
        zeta_actual=zeta_actual,
        bound=bound,
        distances=distances,
        good_fraction=good,
        required_fraction=required,
        mi_total=mi_total,
        mi_bound=mi_bound,
        subblock_mi=subblock_mi,
        mi_threshold=mi_threshold,
        mi_fraction=mi_fraction,
        trick=trick,
    )
