"""
Exact state-vector simulation of the periodic spin-1/2 Ising chain

Basis convention: site 0 is the least-significant bit of the basis index and
bit value 0 is spin up (S^z = +1/2), so |up...up> is basis state 0. Spin
operators are S^a = sigma^a / 2.
"""

import logging
import threading
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import NUMERICS_CONFIG, PHYSICS_CONFIG, IsingParams
from .exceptions import DimensionError, DomainError, ProtocolError

logger = logging.getLogger(__name__)

SX = np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex)
SY = np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex)
SZ = np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

GAUGE_LABELS = ("Y", "X|Y", "Y|Z")


def _check_size(n_sites: int) -> None:
    if n_sites < 2:
        raise DimensionError(f"n_sites must be >= 2 for a periodic chain, got {n_sites}")
    if n_sites > PHYSICS_CONFIG["max_sites"]:
        raise DimensionError(
            f"Hilbert space 2^{n_sites} exceeds the configured maximum 2^{PHYSICS_CONFIG['max_sites']}"
        )


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator; the right-most Kronecker factor is site 0."""
    factors = [op if k == site else IDENTITY for k in reversed(range(n_sites))]
    return reduce(np.kron, factors)


def _fix_phase(vector: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude amplitude is real positive."""
    pivot = vector[int(np.argmax(np.abs(vector)))]
    return vector * (np.abs(pivot) / pivot)


@dataclass
class QuantumState:
    """Normalized complex amplitude vector over the 2^N computational basis."""

    amplitudes: np.ndarray
    n_sites: int

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2 ** self.n_sites,):
            raise DimensionError(
                f"state of length {self.amplitudes.shape} does not match 2^{self.n_sites}"
            )
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > NUMERICS_CONFIG["norm_tolerance"]:
            raise DomainError(f"state is not normalized (norm = {norm:.3e})")

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_sites: int) -> "QuantumState":
        vector = np.asarray(vector, dtype=complex)
        return cls(vector / np.linalg.norm(vector), n_sites)

    @classmethod
    def _trusted(cls, amplitudes: np.ndarray, n_sites: int) -> "QuantumState":
        # Skips the norm check for outputs of unitary propagation
        state = cls.__new__(cls)
        state.amplitudes = amplitudes
        state.n_sites = n_sites
        return state

    @classmethod
    def all_up(cls, n_sites: int) -> "QuantumState":
        amplitudes = np.zeros(2 ** n_sites, dtype=complex)
        amplitudes[0] = 1.0
        return cls(amplitudes, n_sites)

    @classmethod
    def basis(cls, n_sites: int, index: int) -> "QuantumState":
        amplitudes = np.zeros(2 ** n_sites, dtype=complex)
        amplitudes[index] = 1.0
        return cls(amplitudes, n_sites)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]


class HermitianOperator:
    """Dense Hermitian matrix with a lazily computed, cached eigendecomposition."""

    def __init__(self, matrix: np.ndarray, label: str = ""):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"operator must be square, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.conj().T, rtol=0.0, atol=NUMERICS_CONFIG["hermitian_tolerance"]):
            raise DomainError(f"operator '{label}' is not Hermitian")
        self.matrix = matrix
        self.label = label
        self._eigenvalues: Optional[np.ndarray] = None
        self._eigenvectors: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def _diagonalize(self) -> None:
        with self._lock:
            if self._eigenvalues is not None:
                return
            values, vectors = np.linalg.eigh(self.matrix)
            for k in range(vectors.shape[1]):
                vectors[:, k] = _fix_phase(vectors[:, k])
            self._eigenvectors = vectors
            self._eigenvalues = values

    def warm(self) -> "HermitianOperator":
        """Populate the eigendecomposition cache (call before concurrent use)."""
        if self._eigenvalues is None:
            self._diagonalize()
        return self

    def clear_cache(self) -> None:
        with self._lock:
            self._eigenvalues = None
            self._eigenvectors = None

    @property
    def eigenvalues(self) -> np.ndarray:
        self.warm()
        return self._eigenvalues

    @property
    def eigenvectors(self) -> np.ndarray:
        self.warm()
        return self._eigenvectors

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        if self.dim != other.dim:
            raise DimensionError(f"cannot add operators of dimension {self.dim} and {other.dim}")
        return HermitianOperator(self.matrix + other.matrix, label=f"{self.label}+{other.label}")

    def scaled(self, factor: float, label: Optional[str] = None) -> "HermitianOperator":
        return HermitianOperator(factor * self.matrix, label=label or self.label)

    # Drop the lock when pickling for process pools
    def __getstate__(self) -> Dict:
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state: Dict) -> None:
        self.__dict__.update(state)
        self._lock = threading.Lock()


@dataclass
class GeneratorSet:
    """Ordered, labelled set of protocol generators (the discrete action set)."""

    generators: List[HermitianOperator]
    labels: List[str]

    def __post_init__(self):
        if len(self.generators) != len(self.labels):
            raise DimensionError("generators and labels must have the same length")
        if len(set(self.labels)) != len(self.labels):
            raise DomainError(f"generator labels must be unique, got {self.labels}")
        dims = {g.dim for g in self.generators}
        if len(dims) > 1:
            raise DimensionError(f"generators have mixed dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.generators)

    def __getitem__(self, index: int) -> HermitianOperator:
        return self.generators[index]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def warm(self) -> "GeneratorSet":
        for generator in self.generators:
            generator.warm()
        return self


@dataclass
class Protocol:
    """Ordered (generator index, duration) steps whose durations sum to total_T."""

    steps: List[Tuple[int, float]]
    total_T: float
    tolerance: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        self.steps = [(int(i), float(d)) for i, d in self.steps]
        if self.total_T <= 0:
            raise ProtocolError(f"total_T must be positive, got {self.total_T}")
        for k in range(1, len(self.steps)):
            if self.steps[k][0] == self.steps[k - 1][0]:
                raise ProtocolError(f"generator {self.steps[k][0]} repeated at steps {k - 1} and {k}")
        if any(d < 0 for _, d in self.steps):
            raise ProtocolError("protocol durations must be nonnegative")
        if self.steps and abs(sum(d for _, d in self.steps) - self.total_T) > self.tolerance:
            raise ProtocolError(
                f"durations sum to {sum(d for _, d in self.steps)!r}, expected {self.total_T!r}"
            )

    @property
    def indices(self) -> List[int]:
        return [i for i, _ in self.steps]

    @property
    def durations(self) -> np.ndarray:
        return np.array([d for _, d in self.steps], dtype=float)

    def describe(self, generators: GeneratorSet) -> List[Tuple[str, float]]:
        return [(generators.labels[i], d) for i, d in self.steps]


# Hamiltonian construction

def build_ising(params: IsingParams) -> Tuple[HermitianOperator, HermitianOperator, HermitianOperator]:
    """
    Build H1 = sum_i (J S^z_{i+1} S^z_i + h_z S^z_i), H2 = sum_i h_x S^x_i and H = H1 + H2

    Args:
        params: Chain couplings; bonds are periodic (i + 1 taken mod N)

    Returns:
        (H1, H2, H)
    """
    n = params.n_sites
    _check_size(n)
    sz = [site_operator(SZ, i, n) for i in range(n)]
    sx = [site_operator(SX, i, n) for i in range(n)]
    dim = 2 ** n
    h1 = np.zeros((dim, dim), dtype=complex)
    h2 = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        h1 += params.J * sz[(i + 1) % n] @ sz[i] + params.h_z * sz[i]
        h2 += params.h_x * sx[i]
    H1 = HermitianOperator(h1, "H1")
    H2 = HermitianOperator(h2, "H2")
    return H1, H2, HermitianOperator(h1 + h2, "H")


def build_gauge_terms(n_sites: int) -> GeneratorSet:
    """Variational gauge-potential terms Y, X|Y and Y|Z of the periodic chain."""
    _check_size(n_sites)
    sx = [site_operator(SX, i, n_sites) for i in range(n_sites)]
    sy = [site_operator(SY, i, n_sites) for i in range(n_sites)]
    sz = [site_operator(SZ, i, n_sites) for i in range(n_sites)]
    dim = 2 ** n_sites
    y = np.zeros((dim, dim), dtype=complex)
    xy = np.zeros((dim, dim), dtype=complex)
    yz = np.zeros((dim, dim), dtype=complex)
    for i in range(n_sites):
        j = (i + 1) % n_sites
        y += sy[i]
        xy += sx[i] @ sy[j] + sy[i] @ sx[j]
        yz += sy[i] @ sz[j] + sz[i] @ sy[j]
    return GeneratorSet(
        [HermitianOperator(y, "Y"), HermitianOperator(xy, "X|Y"), HermitianOperator(yz, "Y|Z")],
        list(GAUGE_LABELS),
    )


def build_action_set(params: IsingParams, labels: Sequence[str]) -> GeneratorSet:
    """Select generators by label from {H1, H2, Y, X|Y, Y|Z}."""
    H1, H2, _ = build_ising(params)
    catalogue = {"H1": H1, "H2": H2}
    gauge = build_gauge_terms(params.n_sites)
    catalogue.update(zip(gauge.labels, gauge.generators))
    unknown = [label for label in labels if label not in catalogue]
    if unknown:
        raise DomainError(f"unknown generator labels {unknown}; choose from {sorted(catalogue)}")
    return GeneratorSet([catalogue[label] for label in labels], list(labels))


def longitudinal_field(n_sites: int) -> HermitianOperator:
    """H_tilde = -sum_i S^z_i, whose ground state is |up...up>."""
    _check_size(n_sites)
    matrix = -sum(site_operator(SZ, i, n_sites) for i in range(n_sites))
    return HermitianOperator(matrix, "H_tilde")


# Propagation

def evolve(state: QuantumState, G: HermitianOperator, duration: float) -> QuantumState:
    """Apply exp(-i * duration * G) through the cached eigendecomposition of G."""
    if state.dim != G.dim:
        raise DimensionError(f"state dimension {state.dim} does not match operator dimension {G.dim}")
    V = G.eigenvectors
    phases = np.exp(-1j * duration * G.eigenvalues)
    amplitudes = V @ (phases * (V.conj().T @ state.amplitudes))
    return QuantumState._trusted(amplitudes, state.n_sites)


def apply_protocol(
    initial: QuantumState,
    protocol: Protocol,
    generators: GeneratorSet,
    duration_offsets: Optional[np.ndarray] = None,
) -> QuantumState:
    """
    Apply the protocol steps in order (step 1 acts first)

    Args:
        initial: Starting state
        protocol: Generator indices and durations
        generators: Action set the indices refer to
        duration_offsets: Optional per-step additive duration errors (gate noise);
            the resulting effective durations are applied as-is, even if negative

    Returns:
        Final state
    """
    if duration_offsets is not None and len(duration_offsets) != len(protocol.steps):
        raise DimensionError("one duration offset per protocol step is required")
    state = initial
    for k, (index, duration) in enumerate(protocol.steps):
        if not 0 <= index < len(generators):
            raise ProtocolError(f"generator index {index} out of range [0, {len(generators)})")
        if duration_offsets is not None:
            duration = duration + float(duration_offsets[k])
        state = evolve(state, generators[index], duration)
    return state


# Observables

def expectation(state: QuantumState, H: HermitianOperator) -> complex:
    if state.dim != H.dim:
        raise DimensionError(f"state dimension {state.dim} does not match operator dimension {H.dim}")
    return np.vdot(state.amplitudes, H.matrix @ state.amplitudes)


def energy_density(state: QuantumState, H: HermitianOperator, n_sites: int) -> float:
    value = expectation(state, H)
    if abs(value.imag) > NUMERICS_CONFIG["norm_tolerance"]:
        logger.warning(f"energy expectation has imaginary residual {value.imag:.3e}")
    return float(value.real) / n_sites


def energy_variance_density(state: QuantumState, H: HermitianOperator, n_sites: int) -> float:
    """Delta E = sqrt(<H^2> - <H>^2) / N, evaluated as ||(H - <H>) psi|| / N."""
    h_psi = H.matrix @ state.amplitudes
    mean = np.vdot(state.amplitudes, h_psi).real
    variance = float(np.vdot(h_psi - mean * state.amplitudes, h_psi - mean * state.amplitudes).real)
    return float(np.sqrt(max(variance, 0.0))) / n_sites


def ground_state(H: HermitianOperator) -> Tuple[float, QuantumState]:
    n_sites = int(round(np.log2(H.dim)))
    vector = _fix_phase(H.eigenvectors[:, 0].copy())
    return float(H.eigenvalues[0]), QuantumState(vector / np.linalg.norm(vector), n_sites)


def energy_ratio(state: QuantumState, H: HermitianOperator, e_gs: float) -> float:
    n_sites = state.n_sites
    return energy_density(state, H, n_sites) / (e_gs / n_sites)


def fidelity(a: QuantumState, b: QuantumState) -> float:
    if a.dim != b.dim:
        raise DimensionError(f"cannot compare states of dimension {a.dim} and {b.dim}")
    return float(min(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2, 1.0))


def _permutation_expectation(state: QuantumState, image: np.ndarray) -> complex:
    # <psi| P |psi> where P maps basis state b to basis state image[b]
    permuted = np.zeros_like(state.amplitudes)
    permuted[image] = state.amplitudes
    return np.vdot(state.amplitudes, permuted)


def translation_expectation(state: QuantumState) -> complex:
    """<psi|T|psi> for the one-site lattice translation i -> i + 1 (mod N)."""
    n = state.n_sites
    b = np.arange(2 ** n)
    image = ((b << 1) | (b >> (n - 1))) & (2 ** n - 1)
    return _permutation_expectation(state, image)


def parity_expectation(state: QuantumState) -> complex:
    """<psi|P|psi> for the reflection i -> N - 1 - i."""
    n = state.n_sites
    b = np.arange(2 ** n)
    image = np.zeros_like(b)
    for i in range(n):
        image |= ((b >> i) & 1) << (n - 1 - i)
    return _permutation_expectation(state, image)


# Adiabatic reference

def adiabatic_schedule(t: np.ndarray, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """lambda(t) = sin^2(pi t / 2T) and its time derivative."""
    t = np.asarray(t, dtype=float)
    lam = np.sin(np.pi * t / (2.0 * T)) ** 2
    lam_dot = (np.pi / (2.0 * T)) * np.sin(np.pi * t / T)
    return lam, lam_dot


def adiabatic_evolve(params: IsingParams, T: float, dt: float = PHYSICS_CONFIG["adiabatic_dt"]) -> QuantumState:
    """
    Drive |up...up> under H(lambda) = lambda H + (1 - lambda) H_tilde

    Piecewise-constant stepping with the Hamiltonian evaluated at each step
    midpoint; the step is shrunk slightly so an integer number of steps spans T.

    Args:
        params: Target Ising couplings
        T: Protocol duration (1/J)
        dt: Nominal step size

    Returns:
        Final state at t = T
    """
    if T <= 0 or dt <= 0:
        raise DomainError(f"T and dt must be positive, got T={T}, dt={dt}")
    if dt >= T:
        raise DomainError(f"step dt={dt} must be smaller than the duration T={T}")
    _, _, H = build_ising(params)
    H_tilde = longitudinal_field(params.n_sites)
    n_steps = int(np.ceil(T / dt - 1e-9))
    step = T / n_steps
    midpoints = (np.arange(n_steps) + 0.5) * step
    lams, _ = adiabatic_schedule(midpoints, T)
    psi = QuantumState.all_up(params.n_sites).amplitudes
    for lam in lams:
        values, vectors = np.linalg.eigh(lam * H.matrix + (1.0 - lam) * H_tilde.matrix)
        psi = vectors @ (np.exp(-1j * step * values) * (vectors.conj().T @ psi))
    logger.debug(f"adiabatic evolution: T={T}, {n_steps} steps of {step:.3e}")
    return QuantumState.from_vector(psi, params.n_sites)
