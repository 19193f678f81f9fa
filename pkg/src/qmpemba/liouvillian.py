"""Liouvillian superoperator of the driven, doubly dissipated qubit.

States are vectorized row-major, ``vec(rho) = (rho00, rho01, rho10, rho11)``,
so ``vec(A rho B) = (A kron B^T) vec(rho)``.

Left eigenmodes are stored in the *dagger* convention: the coefficient of
mode ``k`` in a state is ``Tr[l_k^dagger rho]`` and bi-orthonormality reads
``Tr[l_j^dagger r_k] = delta_jk``.  With this choice ``l_k`` is a genuine
eigenoperator of the adjoint map, ``L^dagger[l_k] = conj(lambda_k) l_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EigenmodeSingularityError,
    NearDefectiveMatrixError,
    NoPhysicalRootError,
    NoUniqueSteadyStateError,
    UnequalRatesUnsupportedError,
)
from .qstate import IDENTITY, SIGMA_MINUS, SIGMA_Y, DensityMatrix, SystemParams, from_bloch

DAGGER_CONVENTION = "dagger: c_k = Tr[l_k^dagger rho], Tr[l_j^dagger r_k] = delta_jk"
TRACE_ROW = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex)
DEFAULT_COND_BOUND = 1e6
# |Delta| below this is treated as sitting on the exceptional point
LEP_DISCRIMINANT_TOL = 1e-10
SORT_TOL = 1e-9


def vec(rho) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(4)


def unvec(v) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape(2, 2)


def _dissipator(op: np.ndarray, rate: float) -> np.ndarray:
    opd_op = op.conj().T @ op
    return 0.5 * rate * (
        2.0 * np.kron(op, op.conj()) - np.kron(opd_op, IDENTITY) - np.kron(IDENTITY, opd_op.T)
    )


@dataclass(frozen=True)
class Superoperator:
    """4x4 generator acting on row-major vectorized density matrices."""

    matrix: np.ndarray
    params: SystemParams

    def apply(self, rho) -> np.ndarray:
        return unvec(self.matrix @ vec(rho))

    def apply_adjoint(self, op) -> np.ndarray:
        return unvec(self.matrix.conj().T @ vec(op))


def build_superoperator(params: SystemParams) -> Superoperator:
    h = params.hamiltonian()
    m = -1j * (np.kron(h, IDENTITY) - np.kron(IDENTITY, h.T))
    m = m + _dissipator(SIGMA_MINUS, params.gamma_minus) + _dissipator(SIGMA_Y, params.gamma_y)
    m.flags.writeable = False
    return Superoperator(m, params)


def sort_eigenvalues(values, tol: float = SORT_TOL) -> np.ndarray:
    """Indices ordering ``values`` by descending real part.

    Real parts within ``tol`` of each other count as ties; ties are broken by
    ascending ``|Im|`` and then positive imaginary part first.
    """
    values = np.asarray(values, dtype=complex)
    order = sorted(range(len(values)), key=lambda i: -values[i].real)
    out: list[int] = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and values[order[i]].real - values[order[j]].real <= tol:
            j += 1
        group = order[i:j]

        def key(k):
            im = values[k].imag
            return (round(abs(im) / tol), -np.sign(round(im / tol)))

        out.extend(sorted(group, key=key))
        i = j
    return np.array(out, dtype=int)


def _fix_left_phase(u: np.ndarray) -> np.ndarray:
    """Unit norm, first entry real positive (largest entry if the first vanishes)."""
    u = u / np.linalg.norm(u)
    k = 0 if abs(u[0]) > 1e-8 else int(np.argmax(np.abs(u)))
    return u * np.exp(-1j * np.angle(u[k]))


@dataclass(frozen=True)
class LiouvillianSpectrum:
    """Eigen-decomposition ``L = sum_k lambda_k |r_k>><<l_k|``.

    Attributes:
        eigenvalues: shape (4,), ``eigenvalues[0]`` is the stationary zero mode.
        right_modes: shape (4, 2, 2); ``right_modes[0]`` is the steady state.
        left_modes: shape (4, 2, 2); ``left_modes[0]`` is the identity.
        convention: tag describing the normalization.
        condition: condition number of the right-eigenvector matrix.
    """

    eigenvalues: np.ndarray
    right_modes: np.ndarray
    left_modes: np.ndarray
    convention: str = DAGGER_CONVENTION
    condition: float = float("nan")

    def left_rows(self) -> np.ndarray:
        """Rows ``u_k`` with ``u_k . vec(rho) = Tr[l_k^dagger rho]``."""
        return self.left_modes.reshape(4, 4).conj()

    def right_columns(self) -> np.ndarray:
        return self.right_modes.reshape(4, 4).T

    def coefficients(self, rho) -> np.ndarray:
        return self.left_rows() @ vec(rho)

    def overlaps(self, rho) -> np.ndarray:
        """``c_k = |Tr[l_k^dagger rho]|`` for every mode."""
        return np.abs(self.coefficients(rho))

    def propagate(self, rho, t) -> np.ndarray:
        """Matrices ``sum_k c_k r_k exp(lambda_k t)`` for scalar or array ``t``."""
        c = self.coefficients(rho)
        t = np.asarray(t, dtype=float)
        phases = np.exp(np.multiply.outer(t, self.eigenvalues)) * c
        return np.einsum("...k,kij->...ij", phases, self.right_modes)

    def reconstruct(self) -> np.ndarray:
        return self.right_columns() @ np.diag(self.eigenvalues) @ self.left_rows()

    def biorthogonality_error(self) -> float:
        return float(np.max(np.abs(self.left_rows() @ self.right_columns() - np.eye(4))))


def _assemble(eigenvalues, right_cols, left_rows, condition) -> LiouvillianSpectrum:
    # stationary mode: trace-one steady state, identity left mode
    r0 = right_cols[:, 0]
    r0 = r0 / (r0[0] + r0[3])
    right_cols[:, 0] = r0
    left_rows[0] = TRACE_ROW
    for k in range(1, 4):
        u = _fix_left_phase(left_rows[k])
        left_rows[k] = u
        right_cols[:, k] = right_cols[:, k] / (u @ right_cols[:, k])
    right = np.ascontiguousarray(right_cols.T).reshape(4, 2, 2)
    left = left_rows.conj().reshape(4, 2, 2)
    for a in (eigenvalues, right, left):
        a.flags.writeable = False
    return LiouvillianSpectrum(eigenvalues, right, left, DAGGER_CONVENTION, float(condition))


def numeric_spectrum(superop: Superoperator, cond_bound: float = DEFAULT_COND_BOUND) -> LiouvillianSpectrum:
    """Diagonalize the superoperator with a dense eigensolver.

    Raises:
        NearDefectiveMatrixError: if the eigenvector matrix has condition
            number above ``cond_bound`` (modes are nearly coalescent).
    """
    w, v = np.linalg.eig(np.asarray(superop.matrix))
    order = sort_eigenvalues(w)
    w, v = w[order], v[:, order]
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > cond_bound:
        raise NearDefectiveMatrixError(
            f"eigenvector condition number {cond:.3e} exceeds bound {cond_bound:.1e}"
        )
    return _assemble(w.astype(complex), v.astype(complex), np.linalg.inv(v), cond)


# ---------------------------------------------------------------------------
# closed-form spectrum for equal rates


@dataclass(frozen=True)
class CubicCoefficients:
    """Depressed characteristic cubic ``mu^3 + R mu + Q = 0`` with ``lambda = mu - 2 gamma``."""

    Q: float
    R: float
    discriminant: float

    @property
    def classification(self) -> str:
        if self.discriminant > 0:
            return "one-real-complex-pair"
        if self.discriminant < 0:
            return "three-real"
        return "degenerate"

    @property
    def n_real(self) -> int:
        return {"one-real-complex-pair": 1, "three-real": 3, "degenerate": 3}[self.classification]


def _require_equal(params: SystemParams) -> float:
    if not params.equal_rates:
        raise UnequalRatesUnsupportedError(
            "closed-form results need gamma_minus == gamma_y; use numeric_spectrum"
        )
    return params.gamma


def discriminant(params: SystemParams) -> CubicCoefficients:
    g = _require_equal(params)
    wy2, wz2 = params.omega_y ** 2, params.omega_z ** 2
    q = -6.0 * g * wy2 + 4.0 * g * wz2 - 0.75 * g ** 3
    r = 4.0 * (wy2 + wz2) - 1.75 * g ** 2
    return CubicCoefficients(q, r, (q / 2.0) ** 2 + (r / 3.0) ** 3)


def characteristic_coefficients(params: SystemParams) -> tuple[float, float, float, float]:
    """Monic cubic ``(1, a2, a1, a0)`` whose roots are the nonzero eigenvalues."""
    g = _require_equal(params)
    wy2, wz2 = params.omega_y ** 2, params.omega_z ** 2
    return (
        1.0,
        6.0 * g,
        4.0 * wy2 + 4.0 * wz2 + 41.0 * g ** 2 / 4.0,
        2.0 * g * wy2 + 12.0 * g * wz2 + 15.0 * g ** 3 / 4.0,
    )


def _depressed_roots(p: float, q: float) -> list[complex]:
    """Roots of ``t^3 + p t + q = 0``.

    Uses the trigonometric form when all three roots are real and the
    algebraic Cardano form (real root first) otherwise.
    """
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc < 0:
        # p < 0 is implied by disc < 0
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (2.0 * p) * math.sqrt(-3.0 / p)
        phi = math.acos(min(1.0, max(-1.0, arg))) / 3.0
        return [complex(m * math.cos(phi - 2.0 * math.pi * k / 3.0)) for k in range(3)]
    s = math.sqrt(disc)
    # pick the sign that avoids cancellation, then B = -p/(3A)
    a = -math.copysign(1.0, q) * np.cbrt(abs(q) / 2.0 + s) if q != 0 else np.cbrt(s)
    b = -p / (3.0 * a) if a != 0 else 0.0
    t1 = float(a + b)
    im = math.sqrt(max(0.0, 3.0 * t1 * t1 + 4.0 * p)) / 2.0
    return [complex(t1), complex(-t1 / 2.0, im), complex(-t1 / 2.0, -im)]


def cubic_roots(a: float, b: float, c: float, d: float) -> list[complex]:
    """All roots of the real cubic ``a x^3 + b x^2 + c x + d``."""
    if a == 0:
        raise ValueError("leading coefficient must be nonzero")
    b, c, d = b / a, c / a, d / a
    shift = b / 3.0
    p = c - b * b / 3.0
    q = 2.0 * b ** 3 / 27.0 - b * c / 3.0 + d
    return [t - shift for t in _depressed_roots(p, q)]


def analytic_eigenvalues(params: SystemParams) -> np.ndarray:
    """The three nonzero eigenvalues from the closed-form cubic solution.

    Returned in the same order as ``numeric_spectrum`` uses for indices 1..3.
    """
    g = _require_equal(params)
    cc = discriminant(params)
    lam = np.array([t - 2.0 * g for t in _depressed_roots(cc.R, cc.Q)], dtype=complex)
    return lam[sort_eigenvalues(lam)]


def _discriminant_at(omega_y: float, omega_z: float, gamma: float) -> float:
    return discriminant(SystemParams.symmetric(omega_y, omega_z, gamma)).discriminant


def lep_cubic(omega_y: float, omega_z: float) -> tuple[float, float, float, float]:
    """Coefficients of ``-432 Delta`` as a cubic in ``x = gamma^2``."""
    wy2, wz2 = omega_y ** 2, omega_z ** 2
    return (
        25.0,
        60.0 * (wz2 - 26.0 * wy2),
        48.0 * (164.0 * wy2 * wz2 - 53.0 * wy2 ** 2 - 8.0 * wz2 ** 2),
        -1024.0 * (wy2 + wz2) ** 3,
    )


def find_lep(omega_y: float, omega_z: float) -> float:
    """Decay rate at which the discriminant vanishes.

    Solves the cubic in ``gamma^2`` and keeps the real, non-negative root at
    which the discriminant changes sign.

    Raises:
        NoPhysicalRootError: when no such root exists.
    """
    roots = cubic_roots(*lep_cubic(omega_y, omega_z))
    candidates = []
    for x in roots:
        scale = max(1.0, abs(x))
        if abs(x.imag) > 1e-9 * scale or x.real < 0:
            continue
        gc = math.sqrt(x.real)
        if gc == 0.0:
            continue
        h = max(1e-6, 1e-3 * gc)
        lo = _discriminant_at(omega_y, omega_z, max(gc - h, 0.0))
        hi = _discriminant_at(omega_y, omega_z, gc + h)
        if lo * hi < 0:
            candidates.append(gc)
    if not candidates:
        raise NoPhysicalRootError(
            f"no real non-negative gamma_c for omega_y={omega_y}, omega_z={omega_z}"
        )
    return min(candidates)


def lep_by_bisection(omega_y: float, omega_z: float, bracket: tuple[float, float] | None = None,
                     xtol: float = 1e-14) -> float:
    """Independent route to the exceptional point: Brent's method on Delta(gamma)."""
    from scipy.optimize import brentq

    f = lambda g: _discriminant_at(omega_y, omega_z, g)  # noqa: E731
    if bracket is None:
        omega = math.hypot(omega_y, omega_z)
        if omega == 0:
            raise NoPhysicalRootError("no exceptional point for a vanishing Hamiltonian")
        grid = np.geomspace(1e-3 * omega, 1e3 * omega, 4001)
        vals = np.array([f(g) for g in grid])
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if len(idx) == 0:
            raise NoPhysicalRootError("discriminant has no sign change on the scan range")
        bracket = (grid[idx[0]], grid[idx[0] + 1])
    lo, hi = bracket
    if f(lo) * f(hi) > 0:
        raise NoPhysicalRootError(f"discriminant does not change sign on {bracket}")
    return float(brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))


def analytic_eigenmodes(params: SystemParams, lam: complex) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form left and right eigenoperators for a nonzero eigenvalue.

    The left mode is unit-norm (as a 4-vector) in the dagger convention and
    the right mode is scaled so ``Tr[l^dagger r] = 1``.

    Raises:
        EigenmodeSingularityError: when ``|gamma + 2 lam| < 1e-12`` (pole of
            the left-mode formula) for ``omega_y != 0``.
    """
    g = _require_equal(params)
    wy, wz = params.omega_y, params.omega_z
    lam = complex(lam)
    if wy == 0.0:
        if abs(lam + 3.0 * g) <= 1e-9 * max(1.0, g):
            u = np.array([4.0 * g, 0, 0, -2.0 * g], dtype=complex)
            r = np.array([1.0, 0, 0, -1.0], dtype=complex)
        else:
            u = np.array([0, g, -(2j * wz + 1.5 * g + lam), 0], dtype=complex)
            r = np.array([0, (3 * g + lam) * (2j * wz - lam - g / 2), -(3 * g + lam) * (2j * wz + lam + g / 2), 0])
    else:
        pole = g + 2.0 * lam
        if abs(pole) < 1e-12:
            raise EigenmodeSingularityError(f"gamma + 2*lambda = {pole} is at the formula pole")
        dn = 4.0 * lam * lam + 12.0 * g * lam + 5.0 * g * g + 16.0 * wz * wz
        s = 6.0 * g + 2.0 * lam
        # On a root dn * s = -16 wy^2 * pole.  For small wy one of dn, s is
        # tiny and pure roundoff, so divide it out with that identity.
        population = abs(dn) >= abs(s) * max(g, abs(wz), abs(wy))
        if population:
            x = 4.0 * lam * wy * (pole - 4j * wz) / dn
            y = 4.0 * lam * wy * (pole + 4j * wz) / dn
            u = np.array([g - lam, x, y, g + lam], dtype=complex)
            r = np.array([
                -dn / 8.0,
                wy * (2j * wz - lam - g / 2.0),
                -wy * (2j * wz + lam + g / 2.0),
                dn / 8.0,
            ], dtype=complex)
        else:
            c = -4.0 * wy * pole / s
            u = np.array([c * (g - lam), lam * (pole - 4j * wz), lam * (pole + 4j * wz), c * (g + lam)],
                         dtype=complex)
            a = 2.0 * wy * (lam + g / 2.0)
            r = np.array([
                a,
                (3.0 * g + lam) * (2j * wz - lam - g / 2.0),
                -(3.0 * g + lam) * (2j * wz + lam + g / 2.0),
                -a,
            ], dtype=complex)
    u = _fix_left_phase(u)
    r = r / (u @ r)
    return unvec(u.conj()), unvec(r)


def left_mode_overlap_function(params: SystemParams, lam: complex, beta_eff: float) -> complex:
    """Unnormalized overlap of the closed-form left mode with a thermal state.

    Equals ``u(lam) . vec(rho_th)`` for the un-normalized left row vector
    ``u = (gamma - lam, x, y, gamma + lam)``.  The difference cancels for
    coherence-like modes at small ``omega_y``; ``analytic_eigenmodes`` is
    the stable route to the overlap itself.
    """
    g = _require_equal(params)
    oz = params.omega_z / (2.0 * params.omega)
    lam = complex(lam)
    if abs(g + 2.0 * lam) < 1e-12:
        raise EigenmodeSingularityError(f"gamma + 2*lambda = {g + 2.0 * lam} is at the formula pole")
    return g - 10.0 * g * beta_eff * oz * lam / (g + 2.0 * lam)


def analytic_left_norm(params: SystemParams, lam: complex) -> float:
    """Norm of the un-normalized closed-form left row vector (``omega_y != 0``)."""
    g = _require_equal(params)
    wy, wz = params.omega_y, params.omega_z
    lam = complex(lam)
    pole = g + 2.0 * lam
    if abs(pole) < 1e-12:
        raise EigenmodeSingularityError(f"gamma + 2*lambda = {pole} is at the formula pole")
    dn = 4.0 * lam * lam + 12.0 * g * lam + 5.0 * g * g + 16.0 * wz * wz
    x = 4.0 * lam * wy * (pole - 4j * wz) / dn
    y = 4.0 * lam * wy * (pole + 4j * wz) / dn
    return float(np.linalg.norm([g - lam, x, y, g + lam]))


def analytic_spectrum(params: SystemParams) -> LiouvillianSpectrum:
    """Spectrum assembled entirely from the closed-form eigenvalues and modes."""
    lam = analytic_eigenvalues(params)
    rho_ss = steady_state(params)
    eig = np.concatenate([[0.0], lam]).astype(complex)
    right_cols = np.zeros((4, 4), dtype=complex)
    left_rows = np.zeros((4, 4), dtype=complex)
    right_cols[:, 0] = rho_ss.vec()
    for k, l in enumerate(lam, start=1):
        lk, rk = analytic_eigenmodes(params, l)
        left_rows[k] = vec(lk).conj()
        right_cols[:, k] = vec(rk)
    return _assemble(eig, right_cols, left_rows, np.linalg.cond(right_cols))


def steady_state_bloch(params: SystemParams) -> tuple[float, float, float]:
    g = _require_equal(params)
    if g == 0.0:
        raise NoUniqueSteadyStateError("without dissipation every Hamiltonian-diagonal state is stationary")
    wy, wz = params.omega_y, params.omega_z
    den = 8.0 * wy * wy + 48.0 * wz * wz + 15.0 * g * g
    return (-4.0 * wy * g / den, -16.0 * wy * wz / den, -(16.0 * wz * wz + 5.0 * g * g) / den)


def steady_state(params: SystemParams) -> DensityMatrix:
    """Closed-form stationary state for equal rates."""
    return from_bloch(*steady_state_bloch(params))


def numeric_steady_state(superop: Superoperator) -> DensityMatrix:
    """Null vector of the superoperator, for any rates.

    Raises:
        NoUniqueSteadyStateError: when the kernel is not one-dimensional.
    """
    m = np.asarray(superop.matrix)
    _, s, vh = np.linalg.svd(m)
    scale = max(1.0, s[0])
    if s[-2] <= 1e-10 * scale:
        raise NoUniqueSteadyStateError("superoperator kernel is degenerate")
    v = vh[-1].conj()
    return DensityMatrix.from_array(unvec(v / (v[0] + v[3])))


def stationary_state(params: SystemParams) -> DensityMatrix:
    """Closed form when available, null vector otherwise."""
    if params.equal_rates:
        return steady_state(params)
    return numeric_steady_state(build_superoperator(params))


def near_lep(params: SystemParams, tol: float = LEP_DISCRIMINANT_TOL) -> bool:
    return params.equal_rates and abs(discriminant(params).discriminant) < tol


def spectrum_to_json(params: SystemParams, include_lep: bool = True) -> dict:
    """Serializable spectrum record with a fixed field order."""
    spec = numeric_spectrum(build_superoperator(params))
    out: dict = {
        "params": params.to_dict(),
        "eigenvalues": [{"re": float(l.real), "im": float(l.imag)} for l in spec.eigenvalues],
        "discriminant": discriminant(params).discriminant if params.equal_rates else None,
    }
    if include_lep:
        try:
            out["lep_gamma"] = find_lep(params.omega_y, params.omega_z)
        except NoPhysicalRootError:
            out["lep_gamma"] = None
    return out

