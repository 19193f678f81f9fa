"""Time evolution under the Lindblad generator and relaxation-rate extraction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DefectiveSpectrumError,
    DistanceUnderflowError,
    InvalidParameterError,
    NearDefectiveMatrixError,
    StepTooLargeError,
)
from .liouvillian import (
    DEFAULT_COND_BOUND,
    build_superoperator,
    near_lep,
    numeric_spectrum,
    stationary_state,
    unvec,
    vec,
)
from .qstate import DensityMatrix, SystemParams, bloch_array

log = logging.getLogger(__name__)

PHYSICAL_TOL = 1e-10
HERMITIAN_LOG_TOL = 1e-10
TRACE_DRIFT_TOL = 1e-12
UNDERFLOW = 1e-14


@dataclass(frozen=True)
class Trajectory:
    """Sampled evolution of a qubit state.

    ``times`` are raw times (not multiplied by the decay rate).  ``info``
    carries method-specific diagnostics such as trace renormalizations.
    """

    times: np.ndarray
    states: tuple[DensityMatrix, ...]
    params: SystemParams
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise InvalidParameterError("a trajectory needs at least two samples")
        if len(t) != len(self.states):
            raise InvalidParameterError("times and states differ in length")
        if np.any(np.diff(t) <= 0):
            raise InvalidParameterError("times must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", tuple(self.states))

    def __len__(self):
        return len(self.times)

    def matrices(self) -> np.ndarray:
        return np.stack([s.elements for s in self.states])

    def bloch(self) -> np.ndarray:
        return bloch_array(self.matrices())

    def gamma_times(self) -> np.ndarray:
        return self.times * self.params.rate_scale

    def distances_to(self, ref: DensityMatrix) -> np.ndarray:
        """Trace distances to ``ref``, computed from Bloch vectors."""
        diff = self.bloch() - np.asarray(bloch_array(ref.elements))
        return 0.5 * np.linalg.norm(diff, axis=-1)


def _as_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).reshape(-1)
    if len(t) < 2 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise InvalidParameterError("time grid must be non-negative and strictly increasing")
    return t


def _to_states(mats: np.ndarray, info: dict) -> list[DensityMatrix]:
    herm_dev = 0.5 * np.abs(mats - np.conj(np.swapaxes(mats, -1, -2))).max(axis=(-1, -2))
    worst = float(herm_dev.max()) if len(herm_dev) else 0.0
    info["max_hermiticity_deviation"] = worst
    if worst > HERMITIAN_LOG_TOL:
        log.warning("symmetrized states deviating from Hermitian by up to %.3e", worst)
    return [DensityMatrix.from_array(m, tol=PHYSICAL_TOL) for m in mats]


def evolve_spectral(rho0: DensityMatrix, params: SystemParams, times,
                    cond_bound: float = DEFAULT_COND_BOUND) -> Trajectory:
    """Propagate by expanding ``rho0`` in Liouvillian eigenmodes.

    Raises:
        DefectiveSpectrumError: at (or numerically next to) the exceptional
            point, where the eigenbasis is not usable; use ``evolve_ode``.
    """
    t = _as_times(times)
    if near_lep(params):
        raise DefectiveSpectrumError("discriminant vanishes: spectrum is not diagonalizable")
    try:
        spec = numeric_spectrum(build_superoperator(params), cond_bound=cond_bound)
    except NearDefectiveMatrixError as exc:
        raise DefectiveSpectrumError(str(exc)) from exc
    mats = spec.propagate(rho0.elements, t)
    info = {"method": "spectral", "condition": spec.condition}
    return Trajectory(t, _to_states(mats, info), params, info)


def default_dt(params: SystemParams) -> float:
    return 1e-3 / max(params.rate_scale, params.omega, 1e-300)


def _rk4_propagator(m: np.ndarray, h: float) -> np.ndarray:
    # one classical RK4 step of dv/dt = M v is multiplication by this polynomial
    a = h * m
    a2 = a @ a
    a3 = a2 @ a
    return np.eye(4) + a + a2 / 2.0 + a3 / 6.0 + a3 @ a / 24.0


def evolve_ode(rho0: DensityMatrix, params: SystemParams, times, dt: float | None = None,
               local_tol: float | None = 1e-8) -> Trajectory:
    """Fixed-step classical RK4 integration of the vectorized master equation.

    Each gap between requested times is split into equal substeps no longer
    than ``dt``.  The local error is estimated by step doubling once per
    distinct substep length.

    Args:
        dt: maximum substep; defaults to ``1e-3 / max(gamma, Omega)``.
        local_tol: step-doubling bound; ``None`` disables the check.

    Raises:
        StepTooLargeError: if the step-doubling estimate exceeds ``local_tol``.
    """
    t = _as_times(times)
    dt = default_dt(params) if dt is None else float(dt)
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    m = np.asarray(build_superoperator(params).matrix)
    v = vec(rho0.elements).copy()
    out = np.empty((len(t), 2, 2), dtype=complex)
    cache: dict[float, np.ndarray] = {}
    renorm = 0
    max_drift = 0.0
    current = 0.0
    for i, target in enumerate(t):
        gap = target - current
        if gap > 0:
            n = max(1, math.ceil(gap / dt - 1e-9))
            h = gap / n
            key = round(h, 15)
            prop = cache.get(key)
            if prop is None:
                prop = _rk4_propagator(m, h)
                cache[key] = prop
                if local_tol is not None:
                    half = _rk4_propagator(m, h / 2.0)
                    est = np.linalg.norm(prop @ v - half @ (half @ v)) * 16.0 / 15.0
                    if est > local_tol:
                        raise StepTooLargeError(
                            f"step-doubling error {est:.2e} exceeds {local_tol:.0e} at h={h:.3e}"
                        )
            for _ in range(n):
                v = prop @ v
            current = target
        drift = abs((v[0] + v[3]).real - 1.0)
        if drift > TRACE_DRIFT_TOL:
            max_drift = max(max_drift, drift)
            v = v / (v[0] + v[3]).real
            renorm += 1
        out[i] = unvec(v)
    info = {"method": "rk4", "dt": dt, "renormalizations": renorm, "max_trace_drift": max_drift}
    return Trajectory(t, _to_states(out, info), params, info)


def evolve_expm(rho0: DensityMatrix, params: SystemParams, times) -> Trajectory:
    """Reference propagation by the superoperator matrix exponential."""
    from scipy.linalg import expm

    t = _as_times(times)
    m = np.asarray(build_superoperator(params).matrix)
    v0 = vec(rho0.elements)
    out = np.stack([unvec(expm(m * ti) @ v0) for ti in t])
    info = {"method": "expm"}
    return Trajectory(t, _to_states(out, info), params, info)


def evolve(rho0: DensityMatrix, params: SystemParams, times, method: str = "auto", **kw) -> Trajectory:
    """Dispatch to a propagator; ``auto`` falls back to RK4 on a defective spectrum."""
    if method == "spectral":
        return evolve_spectral(rho0, params, times, **kw)
    if method == "ode":
        return evolve_ode(rho0, params, times, **kw)
    if method == "expm":
        return evolve_expm(rho0, params, times)
    if method != "auto":
        raise InvalidParameterError(f"unknown method {method!r}")
    try:
        return evolve_spectral(rho0, params, times)
    except DefectiveSpectrumError:
        log.info("spectral propagation refused, integrating with RK4")
        return evolve_ode(rho0, params, times)


def log_derivative(times, distances) -> np.ndarray:
    """``d ln D / dt`` by second-order finite differences on a non-uniform grid.

    Raises:
        DistanceUnderflowError: if any ``D < 1e-14``.
    """
    d = np.asarray(distances, dtype=float)
    if np.any(d < UNDERFLOW):
        raise DistanceUnderflowError(f"trace distance {d.min():.2e} below {UNDERFLOW:.0e}")
    return np.gradient(np.log(d), np.asarray(times, dtype=float))


def relaxation_rate(traj: Trajectory, ref: DensityMatrix) -> list[tuple[float, float]]:
    """Instantaneous decay rate of the trace distance to ``ref`` along ``traj``."""
    rates = log_derivative(traj.times, traj.distances_to(ref))
    return list(zip(traj.times.tolist(), rates.tolist()))


@dataclass(frozen=True)
class Plateau:
    t_start: float
    t_end: float
    rate: float
    count: int


def find_plateaus(times, rates, rtol: float = 0.02) -> list[Plateau]:
    """Maximal runs of consecutive samples whose spread is within ``rtol``.

    The spread of a run is ``max - min`` measured against the smallest
    magnitude in it.
    """
    times = np.asarray(times, dtype=float)
    rates = np.asarray(rates, dtype=float)
    out = []
    i, n = 0, len(rates)
    while i < n:
        lo = hi = rates[i]
        j = i + 1
        while j < n:
            nlo, nhi = min(lo, rates[j]), max(hi, rates[j])
            if nhi - nlo > rtol * min(abs(nlo), abs(nhi)):
                break
            lo, hi = nlo, nhi
            j += 1
        out.append(Plateau(float(times[i]), float(times[j - 1]), float(np.median(rates[i:j])), j - i))
        i = j
    return out


def late_time_rate(traj: Trajectory, ref: DensityMatrix, t_min: float,
                   floor: float = 1e-8, rtol: float = 0.02) -> Plateau:
    """Longest rate plateau after ``t_min`` while the distance stays above ``floor``.

    ``floor`` keeps the fit away from the roundoff-dominated tail.
    """
    d = traj.distances_to(ref)
    keep = (traj.times >= t_min) & (d >= floor)
    if keep.sum() < 2:
        raise DistanceUnderflowError("no samples left in the late-time window")
    rates = log_derivative(traj.times[keep], d[keep])
    best = max(find_plateaus(traj.times[keep], rates, rtol), key=lambda p: p.count)
    return best


def default_time_grid(params: SystemParams, n: int = 400, lo: float = 1e-3, hi: float = 12.0,
                      include_zero: bool = False) -> np.ndarray:
    """Log-spaced raw times covering ``gamma t`` in ``[lo, hi]``."""
    g = params.rate_scale
    if g <= 0:
        raise InvalidParameterError("time grid in units of 1/gamma needs gamma > 0")
    t = np.geomspace(lo, hi, n) / g
    if include_zero:
        t = np.concatenate([[0.0], t])
    return t


TRAJECTORY_COLUMNS = ("t", "gamma_t", "sx", "sy", "sz", "trace_distance_to_ss")


def trajectory_rows(traj: Trajectory, ref: DensityMatrix | None = None, with_rate: bool = True):
    """Header and rows for the CSV dump; ``ref`` defaults to the steady state."""
    ref = stationary_state(traj.params) if ref is None else ref
    b = traj.bloch()
    d = traj.distances_to(ref)
    header = list(TRAJECTORY_COLUMNS)
    cols = [traj.times, traj.gamma_times(), b[:, 0], b[:, 1], b[:, 2], d]
    if with_rate:
        header.append("dlnD_dt")
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = np.log(np.where(d >= UNDERFLOW, d, np.nan))
        cols.append(np.gradient(logd, traj.times))
    rows = [[float(c[i]) for c in cols] for i in range(len(traj))]
    return header, rows


def fmt(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".17g")


def write_trajectory_csv(traj: Trajectory, fh, ref: DensityMatrix | None = None,
                         with_rate: bool = True) -> None:
    header, rows = trajectory_rows(traj, ref, with_rate)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
