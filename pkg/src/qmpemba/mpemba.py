"""Diagnostics of anomalous relaxation: distances, mode overlaps and temperatures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlreadyConvergedError,
    BracketFailureError,
    InvalidParameterError,
    NearDefectiveMatrixError,
    DefectiveSpectrumError,
)
from .liouvillian import (
    LiouvillianSpectrum,
    analytic_eigenmodes,
    analytic_eigenvalues,
    build_superoperator,
    discriminant,
    near_lep,
    numeric_spectrum,
    stationary_state,
    vec,
)
from .qstate import DensityMatrix, SystemParams, bloch_array, thermal_state

METRICS = ("trace_distance", "relative_entropy")


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the sum of singular values of ``a - b``."""
    diff = np.asarray(a) - np.asarray(b)
    return float(0.5 * np.linalg.svd(diff, compute_uv=False).sum())


def relative_entropy(a: DensityMatrix, b: DensityMatrix, zero_tol: float = 1e-15) -> float:
    """``Tr[a ln a - a ln b]`` in nats; ``inf`` when ``a`` has weight on ``ker b``."""
    pa = np.linalg.eigvalsh(np.asarray(a))
    qb, wb = np.linalg.eigh(np.asarray(b))
    a_in_b = np.real(np.einsum("ij,jk,ki->i", wb.conj().T, np.asarray(a), wb))
    s = float(sum(p * math.log(p) for p in pa if p > zero_tol))
    for q, w in zip(qb, a_in_b):
        if w <= zero_tol:
            continue
        if q <= zero_tol:
            return math.inf
        s -= w * math.log(q)
    return max(s, 0.0)


def _metric(name: str):
    if name == "trace_distance":
        return trace_distance
    if name == "relative_entropy":
        return relative_entropy
    raise InvalidParameterError(f"unknown metric {name!r}; expected one of {METRICS}")


def beta_eff(params: SystemParams, T: float) -> float:
    return 0.0 if math.isinf(T) else math.tanh(params.omega / T)


def _spectrum(params: SystemParams) -> LiouvillianSpectrum:
    return numeric_spectrum(build_superoperator(params))


def overlap_ck(params: SystemParams, T: float, k: int, method: str = "numeric",
               spectrum: LiouvillianSpectrum | None = None) -> float:
    """Weight ``|Tr[l_k^dagger rho_th(T)]|`` of mode ``k`` (2, 3 or 4) in a thermal state.

    ``method="analytic"`` evaluates the closed-form left mode (equal rates
    only); ``"numeric"`` uses the eigensolver.  Both use unit-norm left modes.
    """
    if k not in (2, 3, 4):
        raise InvalidParameterError(f"mode index must be 2, 3 or 4, got {k}")
    rho = thermal_state(params, T)
    if method == "numeric":
        spec = spectrum if spectrum is not None else _spectrum(params)
        return float(spec.overlaps(rho.elements)[k - 1])
    if method != "analytic":
        raise InvalidParameterError(f"unknown method {method!r}")
    lam = analytic_eigenvalues(params)[k - 2]
    l, _ = analytic_eigenmodes(params, lam)
    return float(abs(vec(l).conj() @ rho.vec()))


def overlap_curves(params: SystemParams, temperatures) -> dict[int, np.ndarray]:
    """``c_2, c_3, c_4`` over a temperature grid from a single diagonalization."""
    spec = _spectrum(params)
    rows = np.array([spec.overlaps(thermal_state(params, T).elements)[1:] for T in temperatures])
    return {k: rows[:, k - 2] for k in (2, 3, 4)}


def suppression_beta(params: SystemParams, lam: float) -> float:
    """Effective inverse temperature ``tanh(Omega/T)`` at which a real mode drops out."""
    oz = params.omega_z / (2.0 * params.omega)
    return (2.0 * lam + params.gamma) / (10.0 * lam * oz)


def critical_temperature(params: SystemParams) -> float | None:
    """Temperature at which the thermal state has no weight on the slowest mode.

    Returns ``None`` when the slowest decaying mode is part of a complex pair,
    when ``omega_y = 0`` (the mode never couples) or when no positive
    temperature realizes the required ``tanh(Omega/T)``.
    """
    g = params.gamma
    if params.omega_y == 0.0 or g == 0.0:
        return None
    if discriminant(params).discriminant >= 0:
        return None
    lam2 = analytic_eigenvalues(params)[0].real
    if params.omega_z == 0.0 or abs(g + 2.0 * lam2) < 1e-12:
        return None
    b = suppression_beta(params, lam2)
    if not 0.0 < b < 1.0:
        return None
    return params.omega / math.atanh(b)


def _signed_c2(spec: LiouvillianSpectrum, params: SystemParams, T: float) -> float:
    return float(spec.coefficients(thermal_state(params, T).elements)[1].real)


def critical_temperature_bisection(params: SystemParams, bracket: tuple[float, float] = (1.0, 100.0),
                                   xtol: float = 1e-10) -> float | None:
    """Root of the signed slowest-mode coefficient in ``T`` by Brent's method.

    Uses the numeric eigenmodes only, so it is independent of the closed form.
    """
    from scipy.optimize import brentq

    spec = _spectrum(params)
    if abs(spec.eigenvalues[1].imag) > 1e-9:
        return None
    f = lambda T: _signed_c2(spec, params, T)  # noqa: E731
    lo, hi = bracket
    if f(lo) * f(hi) > 0:
        return None
    return float(brentq(f, lo, hi, xtol=xtol))


def steady_state_temperature(params: SystemParams, metric: str = "trace_distance",
                             bracket: tuple[float, float] = (1e-2, 1e3), n_coarse: int = 64,
                             tol: float = 1e-4) -> float:
    """Temperature of the thermal state closest to the stationary state.

    A log-spaced coarse scan locates the valley, then golden-section search
    refines it to ``tol`` in ``T``.

    Raises:
        BracketFailureError: the coarse minimum sits on a bracket endpoint.
    """
    from scipy.optimize import minimize_scalar

    dist = _metric(metric)
    rho_ss = stationary_state(params)
    f = lambda T: dist(rho_ss, thermal_state(params, T))  # noqa: E731
    grid = np.geomspace(bracket[0], bracket[1], n_coarse)
    vals = np.array([f(T) for T in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == n_coarse - 1:
        raise BracketFailureError(
            f"{metric} minimum at the bracket endpoint T={grid[i]:g}", boundary=float(grid[i])
        )
    a, c = grid[i - 1], grid[i + 1]
    res = minimize_scalar(f, bracket=(a, grid[i], c), method="golden",
                          options={"xtol": tol / (4.0 * c)})
    return float(res.x)


@dataclass(frozen=True)
class _DistanceCurve:
    """Closed-form ``D(t)`` from a spectral expansion, vectorized in ``t``."""

    eigenvalues: np.ndarray
    bloch_modes: np.ndarray  # (4, 3) complex Bloch vectors of c_k r_k for k >= 2
    rate: float

    @classmethod
    def build(cls, params: SystemParams, rho0: DensityMatrix,
              spectrum: LiouvillianSpectrum | None = None) -> "_DistanceCurve":
        if spectrum is None:
            if near_lep(params):
                raise DefectiveSpectrumError("discriminant vanishes: spectrum is not diagonalizable")
            try:
                spectrum = _spectrum(params)
            except NearDefectiveMatrixError as exc:
                raise DefectiveSpectrumError(str(exc)) from exc
        c = spectrum.coefficients(rho0.elements)
        modes = np.asarray(spectrum.right_modes)[1:] * c[1:, None, None]
        b = np.stack([
            modes[:, 0, 1] + modes[:, 1, 0],
            1j * (modes[:, 0, 1] - modes[:, 1, 0]),
            modes[:, 0, 0] - modes[:, 1, 1],
        ], axis=-1)
        lam = np.asarray(spectrum.eigenvalues)[1:]
        return cls(lam, b, -float(lam.real.max()))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        ph = np.exp(np.multiply.outer(t, self.eigenvalues))
        diff = np.real(ph @ self.bloch_modes)
        return 0.5 * np.linalg.norm(diff, axis=-1)


def distance_curve(params: SystemParams, rho0: DensityMatrix, spectrum=None):
    """Callable ``t -> D(rho(t), rho_ss)`` for a spectral expansion of ``rho0``."""
    return _DistanceCurve.build(params, rho0, spectrum)


def critical_time(params: SystemParams, rho0: DensityMatrix, threshold: float = 1e-8,
                  spectrum: LiouvillianSpectrum | None = None, resolution: float = 1e-6) -> float:
    """First time the trace distance to the stationary state reaches ``threshold``.

    The horizon is doubled until the distance is below threshold, a dense
    scan finds the first crossing and Brent's method refines it to
    ``resolution`` in units of ``gamma t``.

    Raises:
        AlreadyConvergedError: if ``rho0`` is already within ``threshold``.
    """
    from scipy.optimize import brentq

    if not 0 < threshold < 1:
        raise InvalidParameterError("threshold must lie in (0, 1)")
    curve = _DistanceCurve.build(params, rho0, spectrum)
    if curve(0.0) <= threshold:
        raise AlreadyConvergedError(f"initial distance {float(curve(0.0)):.3e} already below threshold")
    scale = params.rate_scale or 1.0
    t_hi = 1.0 / scale
    while curve(t_hi) > threshold:
        t_hi *= 2.0
        if t_hi * scale > 1e8:
            raise AlreadyConvergedError("distance never reaches the threshold")
    grid = np.linspace(0.0, t_hi, 4097)
    d = curve(grid)
    j = int(np.argmax(d <= threshold))
    lt = math.log(threshold)
    f = lambda t: math.log(max(float(curve(t)), 1e-300)) - lt  # noqa: E731
    return float(brentq(f, grid[j - 1], grid[j], xtol=resolution / scale * 1e-2))


def effective_velocity(params: SystemParams, T: float, threshold: float = 1e-8,
                       spectrum: LiouvillianSpectrum | None = None) -> float:
    """Initial trace distance to the stationary state divided by the critical time."""
    rho = thermal_state(params, T)
    tc = critical_time(params, rho, threshold, spectrum)
    return trace_distance(rho, stationary_state(params)) / tc


def mpemba_zone(params: SystemParams, metric: str = "trace_distance") -> tuple[float, float] | None:
    """``(T_ss, T_c)`` when hotter initial states in between relax strictly faster."""
    if not params.equal_rates:
        return None
    t_c = critical_temperature(params)
    if t_c is None:
        return None
    try:
        t_ss = steady_state_temperature(params, metric)
    except BracketFailureError:
        return None
    if t_c <= t_ss:
        return None
    return (t_ss, t_c)


@dataclass
class MpembaReport:
    params: SystemParams
    T_ss: float | None
    T_c: float | None
    zone: tuple[float, float] | None
    temperatures: list[float] = field(default_factory=list)
    c_k_curves: dict[int, list[float]] = field(default_factory=dict)
    t_c_curve: list[float] = field(default_factory=list)
    v_eff_curve: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "T_ss": self.T_ss,
            "T_c": self.T_c,
            "zone": list(self.zone) if self.zone else None,
            "curves": {
                "T": list(self.temperatures),
                "c2": list(self.c_k_curves.get(2, [])),
                "c3": list(self.c_k_curves.get(3, [])),
                "c4": list(self.c_k_curves.get(4, [])),
                "inv_tc": [1.0 / t if t else None for t in self.t_c_curve],
                "v_eff": list(self.v_eff_curve),
            },
        }


def temperature_point(params: SystemParams, T: float, threshold: float,
                      spectrum: LiouvillianSpectrum | None = None) -> dict:
    """All per-temperature curve values; top-level so worker pools can pickle it."""
    spectrum = spectrum if spectrum is not None else _spectrum(params)
    rho = thermal_state(params, T)
    c = spectrum.overlaps(rho.elements)
    try:
        tc = critical_time(params, rho, threshold, spectrum)
        v = trace_distance(rho, stationary_state(params)) / tc
    except AlreadyConvergedError:
        tc, v = None, None
    return {"T": float(T), "c2": float(c[1]), "c3": float(c[2]), "c4": float(c[3]), "t_c": tc, "v_eff": v}


def build_report(params: SystemParams, temperatures, threshold: float = 1e-8,
                 points: list[dict] | None = None) -> MpembaReport:
    """Assemble scalars and curves; ``points`` may be precomputed in parallel."""
    if points is None:
        spec = _spectrum(params)
        points = [temperature_point(params, T, threshold, spec) for T in temperatures]
    try:
        t_ss = steady_state_temperature(params) if params.equal_rates else None
    except BracketFailureError:
        t_ss = None
    t_c = critical_temperature(params) if params.equal_rates else None
    zone = (t_ss, t_c) if (t_ss is not None and t_c is not None and t_c > t_ss) else None
    return MpembaReport(
        params=params,
        T_ss=t_ss,
        T_c=t_c,
        zone=zone,
        temperatures=[p["T"] for p in points],
        c_k_curves={k: [p[f"c{k}"] for p in points] for k in (2, 3, 4)},
        t_c_curve=[p["t_c"] for p in points],
        v_eff_curve=[p["v_eff"] for p in points],
    )


def bloch_distance(a, b) -> float:
    """Trace distance of two qubit states from their Bloch vectors."""
    return float(0.5 * np.linalg.norm(bloch_array(np.asarray(a)) - bloch_array(np.asarray(b))))
