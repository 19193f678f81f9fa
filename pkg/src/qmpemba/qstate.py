"""Qubit state algebra: density matrices, Bloch vectors and thermal states.

Basis convention: ``|0>`` is the sigma^z = +1 eigenstate and sigma_minus maps
``|0> -> |1>``.  Every matrix in the package uses this ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BlochNormExceededError,
    DegenerateHamiltonianError,
    InvalidParameterError,
    InvalidStateError,
    InvalidTemperatureError,
    UnequalRatesUnsupportedError,
)

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)

STATE_TOL = 1e-12
# eigenvalues below this are treated as roundoff and dropped
CLIP_TOL = 1e-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DensityMatrix:
    """Immutable 2x2 qubit density matrix.

    Construction validates Hermiticity, unit trace and positivity at
    ``tol`` (default 1e-12).
    """

    elements: np.ndarray
    tol: float = field(default=STATE_TOL, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.elements, dtype=complex)
        if m.shape != (2, 2):
            raise InvalidStateError(f"expected a 2x2 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidStateError("matrix has non-finite entries")
        tol = self.tol
        if abs(m[1, 0] - np.conj(m[0, 1])) > tol or np.max(np.abs(m.diagonal().imag)) > tol:
            raise InvalidStateError("matrix is not Hermitian")
        tr = m[0, 0].real + m[1, 1].real
        if abs(tr - 1.0) > tol:
            raise InvalidStateError(f"trace is {tr!r}, expected 1")
        if min_eigenvalue(m) < -tol:
            raise InvalidStateError(f"matrix is not positive semidefinite (min eig {min_eigenvalue(m):.3e})")
        object.__setattr__(self, "elements", _frozen(m))

    def __array__(self, dtype=None, copy=None):
        return np.array(self.elements, dtype=dtype)

    @property
    def matrix(self) -> np.ndarray:
        return self.elements

    def vec(self) -> np.ndarray:
        """Row-major vectorization (rho00, rho01, rho10, rho11)."""
        return self.elements.reshape(-1).copy()

    def purity(self) -> float:
        return float(np.real(np.trace(self.elements @ self.elements)))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.elements)

    def allclose(self, other: "DensityMatrix | np.ndarray", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.elements, np.asarray(other), rtol=0, atol=atol))

    @classmethod
    def from_array(cls, m, hermitize: bool = True, tol: float = STATE_TOL) -> "DensityMatrix":
        """Build from a numerically produced matrix, symmetrizing roundoff first."""
        m = np.asarray(m, dtype=complex)
        if hermitize:
            m = 0.5 * (m + m.conj().T)
        return cls(m, tol=tol)

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).reshape(2)
        psi = psi / np.linalg.norm(psi)
        return cls.from_array(np.outer(psi, psi.conj()))


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of a 2x2 Hermitian matrix in closed form."""
    a, d = m[0, 0].real, m[1, 1].real
    half = 0.5 * (a - d)
    return 0.5 * (a + d) - math.sqrt(half * half + abs(m[0, 1]) ** 2)


@dataclass(frozen=True)
class SystemParams:
    """Hamiltonian ``omega_y sigma^y + omega_z sigma^z`` and the two decay rates."""

    omega_y: float
    omega_z: float
    gamma_minus: float
    gamma_y: float

    def __post_init__(self):
        for name in ("omega_y", "omega_z", "gamma_minus", "gamma_y"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidParameterError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.gamma_minus < 0 or self.gamma_y < 0:
            raise InvalidParameterError("decay rates must be non-negative")

    @classmethod
    def symmetric(cls, omega_y: float, omega_z: float, gamma: float) -> "SystemParams":
        return cls(omega_y, omega_z, gamma, gamma)

    @property
    def equal_rates(self) -> bool:
        return self.gamma_minus == self.gamma_y

    @property
    def gamma(self) -> float:
        """Common decay rate; only defined for equal rates."""
        if not self.equal_rates:
            raise UnequalRatesUnsupportedError(
                f"gamma_minus={self.gamma_minus} != gamma_y={self.gamma_y}"
            )
        return self.gamma_minus

    @property
    def omega(self) -> float:
        return math.hypot(self.omega_y, self.omega_z)

    @property
    def rate_scale(self) -> float:
        """Largest decay rate, used to express times as gamma*t."""
        return max(self.gamma_minus, self.gamma_y)

    def hamiltonian(self) -> np.ndarray:
        return self.omega_y * SIGMA_Y + self.omega_z * SIGMA_Z

    def to_dict(self) -> dict[str, float]:
        return {
            "omega_y": self.omega_y,
            "omega_z": self.omega_z,
            "gamma_minus": self.gamma_minus,
            "gamma_y": self.gamma_y,
        }


@dataclass(frozen=True)
class PureStateEnsemble:
    """Convex decomposition ``sum_j p_j |psi_j><psi_j|``."""

    entries: tuple[tuple[float, np.ndarray], ...]

    def __post_init__(self):
        entries = []
        for p, psi in self.entries:
            psi = _frozen(np.asarray(psi, dtype=complex).reshape(2))
            if not 0.0 <= p <= 1.0 + STATE_TOL:
                raise InvalidStateError(f"probability {p} outside [0, 1]")
            if abs(np.linalg.norm(psi) - 1.0) > STATE_TOL:
                raise InvalidStateError("ensemble state vectors must have unit norm")
            entries.append((float(p), psi))
        if entries and abs(sum(p for p, _ in entries) - 1.0) > STATE_TOL:
            raise InvalidStateError("ensemble probabilities do not sum to 1")
        object.__setattr__(self, "entries", tuple(entries))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.entries])

    def components(self) -> list[DensityMatrix]:
        return [DensityMatrix.pure(psi) for _, psi in self.entries]

    def reconstruct(self) -> DensityMatrix:
        m = sum(p * np.outer(psi, psi.conj()) for p, psi in self.entries)
        return DensityMatrix.from_array(m)


def thermal_state(params: SystemParams, T: float) -> DensityMatrix:
    """Gibbs state ``exp(-H_S/T)/Z`` of the system Hamiltonian.

    Uses the closed form ``(I - tanh(Omega/T) n.sigma)/2`` where ``n`` is the
    unit field direction.  ``T = inf`` returns exactly ``I/2``.

    Raises:
        InvalidTemperatureError: for ``T <= 0`` or NaN.
        DegenerateHamiltonianError: when ``omega_y = omega_z = 0``.
    """
    if not T > 0:
        raise InvalidTemperatureError(f"temperature must be > 0, got {T!r}")
    omega = params.omega
    if omega == 0.0:
        raise DegenerateHamiltonianError("thermal state undefined for H_S = 0")
    if math.isinf(T):
        return DensityMatrix(0.5 * IDENTITY)
    beta_eff = math.tanh(omega / T)
    oy = params.omega_y / (2.0 * omega)
    oz = params.omega_z / (2.0 * omega)
    m = np.array(
        [[0.5 - beta_eff * oz, 1j * beta_eff * oy], [-1j * beta_eff * oy, 0.5 + beta_eff * oz]],
        dtype=complex,
    )
    return DensityMatrix(m)


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(psi) > 1e-12))
    return psi * np.exp(-1j * np.angle(psi[k]))


def spectral_decompose(rho: DensityMatrix) -> PureStateEnsemble:
    """Split ``rho`` into its eigen-ensemble, largest weight first.

    Weights below 1e-14 are dropped; eigenvalues below -1e-12 are an error.
    Each eigenvector is phase-fixed so its first non-negligible entry is
    real and positive, which makes the output deterministic.
    """
    w, v = np.linalg.eigh(np.asarray(rho.elements))
    if w.min() < -STATE_TOL:
        raise InvalidStateError(f"negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    order = np.argsort(-w, kind="stable")
    entries = tuple(
        (float(w[i]), _fix_phase(v[:, i])) for i in order if w[i] >= CLIP_TOL
    )
    return PureStateEnsemble(entries)


def bloch_vector(rho: DensityMatrix | np.ndarray) -> tuple[float, float, float]:
    m = np.asarray(rho)
    return (
        float(2.0 * m[0, 1].real),
        float(-2.0 * m[0, 1].imag),
        float((m[0, 0] - m[1, 1]).real),
    )


def bloch_array(m: np.ndarray) -> np.ndarray:
    """Vectorized Bloch components of a stack ``(..., 2, 2)`` of matrices."""
    m = np.asarray(m)
    return np.stack(
        [2.0 * m[..., 0, 1].real, -2.0 * m[..., 0, 1].imag, (m[..., 0, 0] - m[..., 1, 1]).real],
        axis=-1,
    )


def from_bloch(x: float, y: float, z: float) -> DensityMatrix:
    """``(I + x sigma^x + y sigma^y + z sigma^z)/2``."""
    norm = math.sqrt(x * x + y * y + z * z)
    if norm > 1.0 + STATE_TOL:
        raise BlochNormExceededError(f"Bloch vector norm {norm} exceeds 1")
    m = 0.5 * (IDENTITY + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)
    return DensityMatrix(m)
