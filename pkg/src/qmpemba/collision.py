"""Repeated-interaction (collision) model of the dissipative qubit.

Each step couples the system qubit S to two fresh ancillas: A1 through an
exchange interaction that produces the ``sigma_minus`` channel and A2
through ``sigma^y_S sigma^x_A2`` that produces the ``sigma^y`` channel.
Both ancillas start in ``|1><1|`` (spin down, the zero-temperature state of
the ancilla) and are traced out after the step.  Qubits are ordered
``(A1, S, A2)`` with big-endian tensor layout.

Gate sequences are listed in circuit order: the first gate acts first.
Rotations follow ``R_P(a) = exp(-i a P / 2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Trajectory, evolve
from .errors import GridMismatchError, InvalidParameterError, RateMismatchError
from .liouvillian import unvec, vec
from .qstate import (
    IDENTITY,
    PAULIS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    SystemParams,
    spectral_decompose,
)

A1, S, A2 = 0, 1, 2
N_QUBITS = 3
SCHEMES = ("I", "II", "III")
ANCILLA_STATE = np.array([[0, 0], [0, 1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)

H_EXCHANGE = 0.5 * (np.kron(SIGMA_X, SIGMA_X) + np.kron(SIGMA_Y, SIGMA_Y))
H_YX = np.kron(SIGMA_Y, SIGMA_X)  # (S, A2)

# operator products per scheme, rightmost acts first: (factor, fraction of tau)
_SCHEME_PRODUCTS = {
    "I": (("I1", 1.0), ("I2", 1.0), ("S", 1.0)),
    "I-alt": (("I2", 1.0), ("I1", 1.0), ("S", 1.0)),
    "II": (("I2", 0.5), ("I1", 1.0), ("I2", 0.5), ("S", 1.0)),
    "III": (
        ("I2", 0.5), ("S", 1 / 3), ("I1", 0.5), ("S", 1 / 3),
        ("I1", 0.5), ("S", 1 / 3), ("I2", 0.5),
    ),
}


@dataclass(frozen=True)
class CollisionConfig:
    """Step duration, Trotter scheme and the system being simulated.

    The couplings are derived from the rates so that ``g^2 tau = gamma``
    holds for each channel.
    """

    params: SystemParams
    tau: float
    scheme: str = "I"
    n_steps: int = 1

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidParameterError(f"tau must be positive, got {self.tau!r}")
        if self.scheme not in _SCHEME_PRODUCTS:
            raise InvalidParameterError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidParameterError("n_steps must be a positive integer")
        for g, rate in ((self.g_minus, self.params.gamma_minus), (self.g_y, self.params.gamma_y)):
            if abs(g * g * self.tau - rate) > 1e-12 * max(1.0, rate):
                raise InvalidParameterError("coupling inconsistent with g^2 tau = gamma")

    @property
    def g_minus(self) -> float:
        return math.sqrt(self.params.gamma_minus / self.tau)

    @property
    def g_y(self) -> float:
        return math.sqrt(self.params.gamma_y / self.tau)

    @property
    def g(self) -> float:
        """Common coupling ``sqrt(gamma / tau)`` for equal rates."""
        return math.sqrt(self.params.gamma / self.tau)

    def with_tau(self, tau: float) -> "CollisionConfig":
        return replace(self, tau=tau)

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "tau": self.tau, "scheme": self.scheme,
                "n_steps": self.n_steps}


@dataclass(frozen=True)
class GateOp:
    """One gate on the ``(A1, S, A2)`` chain.

    ``targets`` is ``(qubit,)`` for single-qubit gates and
    ``(control, target)`` for CNOT.
    """

    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind == "CNOT":
            if len(self.targets) != 2 or self.targets[0] == self.targets[1]:
                raise InvalidParameterError("CNOT needs distinct (control, target)")
        elif self.kind in ("RX", "RY", "RZ", "H"):
            if len(self.targets) != 1:
                raise InvalidParameterError(f"{self.kind} acts on exactly one qubit")
            if self.kind != "H" and self.angle is None:
                raise InvalidParameterError(f"{self.kind} needs an angle")
        else:
            raise InvalidParameterError(f"unknown gate kind {self.kind!r}")
        if any(not 0 <= t < N_QUBITS for t in self.targets):
            raise InvalidParameterError("qubit index out of range")

    def matrix(self) -> np.ndarray:
        """The 2x2 (or 4x4 for CNOT, control first) unitary of this gate."""
        if self.kind == "H":
            return HADAMARD
        if self.kind == "CNOT":
            m = np.eye(4, dtype=complex)
            m[2:, 2:] = SIGMA_X
            return m
        p = {"RX": SIGMA_X, "RY": SIGMA_Y, "RZ": SIGMA_Z}[self.kind]
        a = 0.5 * self.angle
        return math.cos(a) * IDENTITY - 1j * math.sin(a) * p

    def to_dict(self) -> dict:
        return {"kind": self.kind, "angle": self.angle, "targets": list(self.targets)}


def _expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i t h)`` through the eigendecomposition of Hermitian ``h``."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * t * w)) @ v.conj().T


def exact_unitaries(config: CollisionConfig, duration: float | None = None):
    """``(U_S, U_I1, U_I2)`` for one interval of length ``duration`` (default ``tau``).

    ``U_I1`` acts on ``(A1, S)`` and ``U_I2`` on ``(S, A2)``.
    """
    d = config.tau if duration is None else duration
    u_s = _expm_hermitian(config.params.hamiltonian(), d)
    u_1 = _expm_hermitian(H_EXCHANGE, config.g_minus * d)
    u_2 = _expm_hermitian(H_YX, config.g_y * d)
    return u_s, u_1, u_2


def _seq_system(params: SystemParams, d: float) -> list[GateOp]:
    alpha = math.atan2(params.omega_y, params.omega_z)
    return [GateOp("RX", (S,), alpha), GateOp("RZ", (S,), 2.0 * params.omega * d), GateOp("RX", (S,), -alpha)]


def _seq_exchange(theta: float) -> list[GateOp]:
    return [
        GateOp("RZ", (S,), math.pi / 2), GateOp("H", (A1,)), GateOp("CNOT", (A1, S)),
        GateOp("RY", (S,), theta), GateOp("RY", (A1,), theta), GateOp("CNOT", (A1, S)),
        GateOp("RZ", (S,), -math.pi / 2), GateOp("H", (A1,)),
    ]


def _seq_yx(theta: float) -> list[GateOp]:
    return [
        GateOp("RX", (S,), math.pi / 2), GateOp("H", (A2,)), GateOp("CNOT", (S, A2)),
        GateOp("RZ", (A2,), 2.0 * theta), GateOp("CNOT", (S, A2)),
        GateOp("RX", (S,), -math.pi / 2), GateOp("H", (A2,)),
    ]


def gate_decompositions(config: CollisionConfig, duration: float | None = None):
    """Gate sequences reproducing ``exact_unitaries`` up to a global phase."""
    d = config.tau if duration is None else duration
    return (
        _seq_system(config.params, d),
        _seq_exchange(config.g_minus * d),
        _seq_yx(config.g_y * d),
    )


def _embed_single(u: np.ndarray, q: int) -> np.ndarray:
    ops = [IDENTITY] * N_QUBITS
    ops[q] = u
    return np.kron(np.kron(ops[0], ops[1]), ops[2])


def _embed_cnot(control: int, target: int) -> np.ndarray:
    dim = 2 ** N_QUBITS
    m = np.zeros((dim, dim), dtype=complex)
    for i in range(dim):
        bits = [(i >> (N_QUBITS - 1 - q)) & 1 for q in range(N_QUBITS)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (N_QUBITS - 1 - q) for q, b in enumerate(bits))
        m[j, i] = 1.0
    return m


def circuit_unitary(ops) -> np.ndarray:
    """8x8 unitary of a gate list applied in circuit order."""
    u = np.eye(2 ** N_QUBITS, dtype=complex)
    for op in ops:
        g = _embed_cnot(*op.targets) if op.kind == "CNOT" else _embed_single(op.matrix(), op.targets[0])
        u = g @ u
    return u


def embed_exact(config: CollisionConfig, duration: float | None = None) -> dict[str, np.ndarray]:
    """Exact factors lifted to the 8-dimensional chain."""
    u_s, u_1, u_2 = exact_unitaries(config, duration)
    return {
        "S": _embed_single(u_s, S),
        "I1": np.kron(u_1, IDENTITY),
        "I2": np.kron(IDENTITY, u_2),
    }


def phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """``min_phi ||u - exp(i phi) v||_F``."""
    ov = np.vdot(v, u)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    return float(np.linalg.norm(u - phase * v))


def step_unitary(config: CollisionConfig, backend: str = "exact", order: str | None = None) -> np.ndarray:
    """Total 8x8 unitary of one collision step for the configured scheme.

    Args:
        backend: ``"exact"`` multiplies exact exponentials, ``"gates"``
            multiplies the gate decompositions.
        order: scheme override (for example ``"I-alt"``).
    """
    product = _SCHEME_PRODUCTS[order or config.scheme]
    u = np.eye(2 ** N_QUBITS, dtype=complex)
    cache: dict[float, dict] = {}
    for name, frac in reversed(product):
        d = frac * config.tau
        if backend == "exact":
            if d not in cache:
                cache[d] = embed_exact(config, d)
            factor = cache[d][name]
        elif backend == "gates":
            seqs = dict(zip(("S", "I1", "I2"), gate_decompositions(config, d)))
            factor = circuit_unitary(seqs[name])
        else:
            raise InvalidParameterError(f"unknown backend {backend!r}")
        u = factor @ u
    return u


def step_circuit(config: CollisionConfig, order: str | None = None) -> list[GateOp]:
    """Full gate list of one step in circuit order."""
    ops: list[GateOp] = []
    for name, frac in reversed(_SCHEME_PRODUCTS[order or config.scheme]):
        seqs = dict(zip(("S", "I1", "I2"), gate_decompositions(config, frac * config.tau)))
        ops.extend(seqs[name])
    return ops


def circuit_dump(config: CollisionConfig, n_steps: int | None = None) -> list[dict]:
    """Serializable per-step gate records."""
    ops = [op.to_dict() for op in step_circuit(config)]
    n = config.n_steps if n_steps is None else n_steps
    return [{"step": k, "gates": ops} for k in range(n)]


def kraus_operators(config: CollisionConfig, backend: str = "exact", order: str | None = None) -> list[np.ndarray]:
    """System Kraus operators ``<a1 a2| U |1 1>`` of one step."""
    u = step_unitary(config, backend, order).reshape(2, 2, 2, 2, 2, 2)
    # indices: out (a1, s, a2), in (a1', s', a2'); ancillas enter in |1>
    return [u[a, :, b, 1, :, 1] for a in (0, 1) for b in (0, 1)]


def transfer_matrix(config: CollisionConfig, backend: str = "exact", order: str | None = None) -> np.ndarray:
    """4x4 action of one step on row-major vectorized system states."""
    return sum(np.kron(k, k.conj()) for k in kraus_operators(config, backend, order))


def choi_matrix(config: CollisionConfig, backend: str = "exact") -> np.ndarray:
    """``sum_ij |i><j| kron Phi(|i><j|)``."""
    t = transfer_matrix(config, backend)
    c = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            e = np.zeros((2, 2), dtype=complex)
            e[i, j] = 1.0
            c += np.kron(e, unvec(t @ vec(e)))
    return c


def collide_step(rho: DensityMatrix, config: CollisionConfig, backend: str = "exact") -> DensityMatrix:
    """One collision: couple to fresh ancillas, apply the scheme, trace them out."""
    u = step_unitary(config, backend)
    full = np.kron(np.kron(ANCILLA_STATE, np.asarray(rho.elements)), ANCILLA_STATE)
    out = (u @ full @ u.conj().T).reshape(2, 2, 2, 2, 2, 2)
    return DensityMatrix.from_array(np.einsum("aibajb->ij", out), tol=1e-10)


def collision_run(rho0: DensityMatrix, config: CollisionConfig, n_steps: int | None = None,
                  backend: str = "exact", order: str | None = None) -> Trajectory:
    """Stroboscopic states after ``0, 1, ..., n_steps`` collisions."""
    n = config.n_steps if n_steps is None else int(n_steps)
    t = transfer_matrix(config, backend, order)
    v = vec(rho0.elements)
    out = np.empty((n + 1, 2, 2), dtype=complex)
    out[0] = rho0.elements
    for k in range(1, n + 1):
        v = t @ v
        out[k] = unvec(v)
    states = [DensityMatrix.from_array(m, tol=1e-10) for m in out]
    times = config.tau * np.arange(n + 1)
    return Trajectory(times, states, config.params, {"method": "collision", "scheme": order or config.scheme,
                                                     "tau": config.tau})


def error_function(traj: Trajectory, params: SystemParams, reference: Trajectory | None = None):
    """``[(n, sum_a |<sigma^a>_traj - <sigma^a>_ref|)]`` along the collision grid.

    The reference defaults to the master-equation solution started from the
    first state of ``traj``.

    Raises:
        GridMismatchError: when ``reference`` is sampled on other times.
    """
    if reference is None:
        reference = evolve(traj.states[0], params, traj.times)
    elif len(reference.times) != len(traj.times) or not np.allclose(
        reference.times, traj.times, rtol=1e-12, atol=1e-15
    ):
        raise GridMismatchError("trajectories are sampled on different time grids")
    err = np.abs(traj.bloch() - reference.bloch()).sum(axis=1)
    return list(zip(range(len(err)), err.tolist()))


def mean_error(errors, n_min: int = 10) -> float:
    """Average of ``Delta_error(n)`` over ``n >= n_min``."""
    vals = [e for n, e in errors if n >= n_min]
    return float(np.mean(vals))


def hybrid_evolve(rho: DensityMatrix, config: CollisionConfig, n_steps: int | None = None,
                  backend: str = "exact") -> Trajectory:
    """Evolve each eigen-component separately and recombine by linearity."""
    ens = spectral_decompose(rho)
    n = config.n_steps if n_steps is None else int(n_steps)
    acc = None
    comps = []
    for p, psi in ens:
        traj = collision_run(DensityMatrix.pure(psi), config, n, backend)
        comps.append(traj)
        m = p * traj.matrices()
        acc = m if acc is None else acc + m
    states = [DensityMatrix.from_array(m, tol=1e-10) for m in acc]
    info = {"method": "hybrid", "weights": ens.probabilities.tolist(), "components": comps}
    return Trajectory(comps[0].times, states, config.params, info)


@dataclass(frozen=True)
class ShotRecord:
    """Z-basis counts from ``n_shots`` projective measurements."""

    n_shots: int
    counts: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.n_shots < 1:
            raise InvalidParameterError("n_shots must be positive")
        if sum(self.counts.values()) != self.n_shots or any(c < 0 for c in self.counts.values()):
            raise InvalidParameterError("counts must be non-negative and sum to n_shots")

    @property
    def frequency0(self) -> float:
        return self.counts.get("0", 0) / self.n_shots


def _p0(rho) -> float:
    return float(min(1.0, max(0.0, np.asarray(rho)[0, 0].real)))


def sample_shots(rho: DensityMatrix, n_shots: int, seed: int | np.random.SeedSequence | None = None) -> ShotRecord:
    """Binomial Z-basis sampling: outcome ``"0"`` occurs with probability ``rho00``."""
    if n_shots < 1:
        raise InvalidParameterError("n_shots must be positive")
    rng = np.random.default_rng(seed)
    k = int(rng.binomial(n_shots, _p0(rho)))
    s = seed.entropy if isinstance(seed, np.random.SeedSequence) else seed
    return ShotRecord(n_shots, {"0": k, "1": n_shots - k}, s)


@dataclass(frozen=True)
class PopulationEstimate:
    p0: float
    p1: float
    stderr: float
    repetitions: int


def reconstruct_populations(records) -> PopulationEstimate:
    """Mean outcome frequencies over repeated shot records, with standard error."""
    f = np.array([r.frequency0 for r in records], dtype=float)
    if len(f) == 0:
        raise InvalidParameterError("need at least one record")
    se = float(f.std(ddof=1) / math.sqrt(len(f))) if len(f) > 1 else 0.0
    m = float(f.mean())
    return PopulationEstimate(m, 1.0 - m, se, len(f))


def hybrid_shot_study(rho: DensityMatrix, config: CollisionConfig, n_steps: int,
                      repetitions=(10, 20, 40), n_seeds: int = 100, shots_per_rep: int = 1024,
                      seed: int = 0, stride: int = 1) -> dict:
    """Population error of shot-sampled hybrid reconstruction versus repetitions.

    For every seed and every ``N`` in ``repetitions`` each pure component is
    measured ``N`` times with ``shots_per_rep`` shots at every ``stride``-th
    step; frequencies are averaged over repetitions and recombined with the
    ensemble weights.  The error is ``|dp0| + |dp1|`` averaged over time.

    Returns:
        dict with ``repetitions``, ``mean_error``, ``std_error`` (over seeds)
        and ``per_seed`` errors of shape ``(n_seeds, len(repetitions))``.
    """
    exact = hybrid_evolve(rho, config, n_steps)
    comps = exact.info["components"]
    w = np.array(exact.info["weights"])
    idx = np.arange(0, n_steps + 1, stride)
    p_comp = np.array([[_p0(c.states[i].elements) for i in idx] for c in comps])  # (n_comp, n_t)
    p_exact = w @ p_comp
    children = np.random.SeedSequence(seed).spawn(n_seeds)
    per_seed = np.empty((n_seeds, len(repetitions)))
    for s, child in enumerate(children):
        for j, (n_rep, sub) in enumerate(zip(repetitions, child.spawn(len(repetitions)))):
            rng = np.random.default_rng(sub)
            draws = rng.binomial(shots_per_rep, p_comp[None], size=(n_rep,) + p_comp.shape)
            freq = draws.mean(axis=0) / shots_per_rep
            p_meas = w @ freq
            per_seed[s, j] = float(np.mean(2.0 * np.abs(p_meas - p_exact)))
    return {
        "repetitions": list(repetitions),
        "mean_error": per_seed.mean(axis=0).tolist(),
        "std_error": per_seed.std(axis=0, ddof=1).tolist() if n_seeds > 1 else [0.0] * len(repetitions),
        "per_seed": per_seed,
        "times": (config.tau * idx).tolist(),
        "p0_exact": p_exact.tolist(),
        "seed": seed,
        "shots_per_rep": shots_per_rep,
    }


def dual_timestep_run(rho0: DensityMatrix, fine: CollisionConfig, coarse: CollisionConfig,
                      switch_time: float | None, t_end: float, backend: str = "exact") -> Trajectory:
    """Run with step ``fine.tau`` up to ``switch_time`` and ``coarse.tau`` afterwards.

    Couplings are re-derived per segment, so the dissipation rates agree on
    both sides of the seam.  ``switch_time=None`` runs the fine step only.

    Raises:
        RateMismatchError: if the two configurations simulate different rates.
    """
    pf, pc = fine.params, coarse.params
    if (pf.gamma_minus, pf.gamma_y) != (pc.gamma_minus, pc.gamma_y) or pf != pc:
        raise RateMismatchError("fine and coarse segments must simulate the same system and rates")
    if switch_time is None or switch_time >= t_end:
        n = int(round(t_end / fine.tau))
        return collision_run(rho0, fine, n, backend)
    n1 = int(round(switch_time / fine.tau))
    first = collision_run(rho0, fine, n1, backend) if n1 >= 1 else None
    start = first.states[-1] if first else rho0
    t_seam = n1 * fine.tau
    n2 = int(round((t_end - t_seam) / coarse.tau))
    second = collision_run(start, coarse, n2, backend)
    if first is None:
        return second
    times = np.concatenate([first.times, t_seam + second.times[1:]])
    states = list(first.states) + list(second.states[1:])
    info = {"method": "collision-dual", "seam_index": n1, "tau": (fine.tau, coarse.tau)}
    return Trajectory(times, states, fine.params, info)


def expectation_values(traj: Trajectory) -> np.ndarray:
    """``<sigma^a>`` for ``a = x, y, z`` along a trajectory."""
    m = traj.matrices()
    return np.stack([np.real(np.einsum("nij,ji->n", m, p)) for p in PAULIS], axis=1)


def write_shot_records(rows, fh) -> None:
    """CSV with columns step, outcome0, outcome1, seed."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "outcome0", "outcome1", "seed"])
    for step, rec in rows:
        w.writerow([step, rec.counts.get("0", 0), rec.counts.get("1", 0), rec.seed])
