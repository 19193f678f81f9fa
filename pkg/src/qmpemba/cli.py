"""Command-line front end.

Settings are resolved in three layers: built-in defaults, then an INI file
given with ``--config``, then command-line flags.  INI sections use dotted
names, for example::

    [params]
    omega_y = 0.01
    omega_z = 2
    gamma = 5

    [grid.temperature]
    min = 0.5
    max = 30
    count = 120
    spacing = linear

Exit codes: 0 success, 1 usage or configuration error, 2 valid run without
a Mpemba zone, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import collision, dynamics, liouvillian, mpemba
from .errors import (
    AlreadyConvergedError,
    DefectiveSpectrumError,
    InvalidParameterError,
    NearDefectiveMatrixError,
    NoPhysicalRootError,
    QMpembaError,
    StepTooLargeError,
)
from .qstate import SystemParams, thermal_state

EXIT_OK, EXIT_USAGE, EXIT_NO_ZONE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (DefectiveSpectrumError, NearDefectiveMatrixError, StepTooLargeError, NoPhysicalRootError)
VERBS = ("spectrum", "lep", "mpemba", "evolve", "collide", "hybrid")

DEFAULTS = {
    "params": {"omega_y": 0.01, "omega_z": 2.0, "gamma": 5.0, "gamma_minus": None, "gamma_y": None},
    "grid.temperature": {"min": 0.5, "max": 30.0, "count": 120, "spacing": "linear"},
    "grid.time": {"min": 1e-3, "max": 12.0, "count": 400, "spacing": "log"},
    "grid.gamma": {"min": 0.0, "max": 10.0, "count": 201, "spacing": "linear"},
    "evolve": {"temperatures": "7,9,11.13,18"},
    "collision": {"taus": "0.001,0.01", "schemes": "I,II,III,I-alt", "gamma_t_end": 5.0,
                  "initial_temperature": 11.13, "n_min": 10},
    "hybrid": {"temperature": 11.13, "tau": 0.02, "tau_coarse": 0.1, "switch_gamma_t": 1.0,
               "gamma_t_end": 5.0, "scheme": "III", "repetitions": "10,20,40", "seeds": 100,
               "shots": 1024, "stride": 5},
    "run": {"seed": 0, "threshold": 1e-8, "out": None, "format": "json", "jobs": 1, "single": False},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class GridSpec:
    min: float
    max: float
    count: int
    spacing: str = "linear"

    def __post_init__(self):
        if self.count < 1:
            raise UsageError("grid is empty (count < 1)")
        if self.count > 1 and not self.min < self.max:
            raise UsageError(f"grid needs min < max, got {self.min} >= {self.max}")
        if self.spacing not in ("linear", "log"):
            raise UsageError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "log" and self.min <= 0:
            raise UsageError("log spacing needs min > 0")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.min])
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


def _floats(s) -> list[float]:
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


def _coerce(section: str, key: str, value):
    if value is None:
        return None
    default = DEFAULTS[section][key]
    if key in ("gamma_minus", "gamma_y"):
        return float(value)
    if default is None or isinstance(default, str):
        return str(value)
    if isinstance(default, bool):
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    return float(value)


def load_settings(config_path: str | None, overrides: dict) -> dict:
    """Merge defaults, the INI file and flag overrides (highest precedence)."""
    settings = copy.deepcopy(DEFAULTS)
    if config_path:
        cp = configparser.ConfigParser()
        try:
            with open(config_path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc.strerror}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config {config_path}: {exc}") from exc
        for section in cp.sections():
            if section not in settings:
                raise UsageError(f"unknown config section [{section}]")
            for key, value in cp.items(section):
                if key not in settings[section]:
                    raise UsageError(f"unknown key {key!r} in [{section}]")
                settings[section][key] = value
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.rsplit(".", 1)
        settings[section][key] = value
    try:
        for section, kv in settings.items():
            for key, value in kv.items():
                kv[key] = _coerce(section, key, value)
    except ValueError as exc:
        raise UsageError(f"bad configuration value: {exc}") from exc
    if settings["run"]["out"] is None:
        settings["run"]["out"] = os.environ.get("MPEMBA_OUT_DIR", ".")
    return settings


def params_from(settings: dict) -> SystemParams:
    p = settings["params"]
    gm = p["gamma"] if p["gamma_minus"] is None else p["gamma_minus"]
    gy = p["gamma"] if p["gamma_y"] is None else p["gamma_y"]
    try:
        return SystemParams(float(p["omega_y"]), float(p["omega_z"]), float(gm), float(gy))
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc


def grid_from(settings: dict, name: str) -> GridSpec:
    g = settings[f"grid.{name}"]
    return GridSpec(float(g["min"]), float(g["max"]), int(g["count"]), str(g["spacing"]))


# ---------------------------------------------------------------------------
# output


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if not math.isfinite(x) else x
    if isinstance(x, np.integer):
        return int(x)
    return x


def _header(settings: dict, verb: str) -> dict:
    return {
        "command": verb,
        "config": settings,
        "seed": settings["run"]["seed"],
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }


class Writer:
    """Writes every artifact with the resolved configuration embedded."""

    def __init__(self, settings: dict, verb: str):
        self.settings = settings
        self.verb = verb
        self.out = Path(settings["run"]["out"])
        self.written: list[Path] = []

    def _path(self, name: str) -> Path:
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.out}: {exc.strerror}") from exc
        return self.out / name

    def json(self, name: str, payload: dict) -> Path:
        doc = {"meta": _header(self.settings, self.verb), "data": _clean(payload)}
        path = self._path(name)
        try:
            path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        self.written.append(path)
        return path

    def csv(self, name: str, header: list[str], rows) -> Path:
        meta = _header(self.settings, self.verb)
        buf = io.StringIO()
        buf.write(f"# generated_at: {meta['generated_at']}\n")
        buf.write(f"# seed: {meta['seed']}\n")
        buf.write(f"# config: {json.dumps(_clean(meta['config']), sort_keys=False)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path = self._path(name)
        try:
            path.write_text(buf.getvalue())
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        self.written.append(path)
        return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return dynamics.fmt(float(v))
    return str(v)


def _map(fn, items, jobs: int):
    """Ordered map, fanned out over processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def _sorted_eigenvalues(params: SystemParams) -> np.ndarray:
    w = np.linalg.eigvals(np.asarray(liouvillian.build_superoperator(params).matrix))
    return w[liouvillian.sort_eigenvalues(w)]


def _spectrum_row(args):
    base, gamma = args
    p = SystemParams(base.omega_y, base.omega_z, gamma, gamma) if base.equal_rates else base
    lam = _sorted_eigenvalues(p)[1:]
    disc = liouvillian.discriminant(p).discriminant if p.equal_rates else None
    return [gamma, *lam.real.tolist(), *lam.imag.tolist(), disc]


def cmd_spectrum(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    if settings["run"]["single"]:
        payload = liouvillian.spectrum_to_json(p)
        if p.equal_rates:
            payload["analytic"] = [{"re": l.real, "im": l.imag} for l in liouvillian.analytic_eigenvalues(p)]
        for ev in payload["eigenvalues"]:
            print(f"{ev['re']:+.12g} {ev['im']:+.12g}j")
        w.json("spectrum_point.json", payload)
        return EXIT_OK
    if not p.equal_rates:
        raise UsageError("the gamma sweep varies a common rate; set gamma_minus == gamma_y")
    gammas = grid_from(settings, "gamma").values()
    rows = _map(_spectrum_row, [(p, float(g)) for g in gammas], settings["run"]["jobs"])
    header = ["gamma", "re_l2", "re_l3", "re_l4", "im_l2", "im_l3", "im_l4", "discriminant"]
    if settings["run"]["format"] == "csv":
        w.csv("spectrum.csv", header, rows)
    else:
        w.json("spectrum.json", {"columns": header, "rows": rows})
    return EXIT_OK


def cmd_lep(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    g_cubic = liouvillian.find_lep(p.omega_y, p.omega_z)
    g_bis = liouvillian.lep_by_bisection(p.omega_y, p.omega_z)
    payload = {"omega_y": p.omega_y, "omega_z": p.omega_z, "gamma_c": g_cubic,
               "gamma_c_bisection": g_bis, "difference": abs(g_cubic - g_bis)}
    print(f"gamma_c = {g_cubic:.10g} (bisection {g_bis:.10g})")
    w.json("lep.json", payload)
    return EXIT_OK


def _temperature_job(args):
    p, T, threshold = args
    return mpemba.temperature_point(p, T, threshold)


def cmd_mpemba(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    temps = grid_from(settings, "temperature").values()
    if np.any(temps <= 0):
        raise UsageError("temperatures must be positive")
    thr = settings["run"]["threshold"]
    points = _map(_temperature_job, [(p, float(T), thr) for T in temps], settings["run"]["jobs"])
    report = mpemba.build_report(p, temps, thr, points=points)
    doc = report.to_json()
    if settings["run"]["format"] == "csv":
        header = ["T", "c2", "c3", "c4", "inv_tc", "v_eff"]
        c = doc["curves"]
        rows = list(zip(c["T"], c["c2"], c["c3"], c["c4"], c["inv_tc"], c["v_eff"]))
        w.csv("mpemba_curves.csv", header, rows)
        w.json("mpemba_summary.json", {k: doc[k] for k in ("params", "T_ss", "T_c", "zone")})
    else:
        w.json("mpemba.json", doc)
    print(f"T_ss = {doc['T_ss']}, T_c = {doc['T_c']}")
    if report.zone is None:
        print("no Mpemba zone")
        return EXIT_NO_ZONE
    print(f"Mpemba zone: [{report.zone[0]:.6g}, {report.zone[1]:.6g}]")
    return EXIT_OK


def _evolve_job(args):
    p, T, times = args
    traj = dynamics.evolve(thermal_state(p, T), p, times)
    return dynamics.trajectory_rows(traj)


def _temp_tag(T: float) -> str:
    return format(T, "g").replace(".", "p")


def cmd_evolve(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    temps = _floats(settings["evolve"]["temperatures"])
    if not temps:
        raise UsageError("no temperatures given")
    if p.rate_scale <= 0:
        raise UsageError("evolve needs a positive decay rate")
    g = grid_from(settings, "time")
    times = g.values() / p.rate_scale
    results = _map(_evolve_job, [(p, T, times) for T in temps], settings["run"]["jobs"])
    if settings["run"]["format"] == "csv":
        for T, (header, rows) in zip(temps, results):
            w.csv(f"trajectory_T{_temp_tag(T)}.csv", header, rows)
    else:
        payload = {"trajectories": [{"T": T, "columns": h, "rows": r} for T, (h, r) in zip(temps, results)]}
        w.json("trajectories.json", payload)
    return EXIT_OK


def _collide_job(args):
    p, T, tau, scheme, n = args
    cfg = collision.CollisionConfig(p, tau, "I" if scheme == "I-alt" else scheme)
    traj = collision.collision_run(thermal_state(p, T), cfg, n, order=scheme)
    return [e for _, e in collision.error_function(traj, p)]


def cmd_collide(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    c = settings["collision"]
    taus = _floats(c["taus"])
    schemes = [s.strip() for s in str(c["schemes"]).split(",") if s.strip()]
    if not taus or not schemes:
        raise UsageError("need at least one tau and one scheme")
    T, n_min = c["initial_temperature"], int(c["n_min"])
    jobs = [(p, T, tau, s, int(round(c["gamma_t_end"] / (p.rate_scale * tau)))) for tau in taus for s in schemes]
    errs = _map(_collide_job, jobs, settings["run"]["jobs"])
    summary = []
    k = 0
    for tau in taus:
        block = errs[k:k + len(schemes)]
        k += len(schemes)
        means = {s: float(np.mean(e[n_min:])) for s, e in zip(schemes, block)}
        main = {s: v for s, v in means.items() if s in collision.SCHEMES}
        best = min(main, key=main.get) if main else None
        summary.append({"tau": tau, "mean_error": means, "best_scheme": best})
        print(f"tau={tau:g}: " + ", ".join(f"{s}={v:.3e}" for s, v in means.items()) + f"  best={best}")
        n = len(block[0])
        rows = [[i, i * tau * p.rate_scale, *[e[i] for e in block]] for i in range(n)]
        header = ["n", "gamma_t", *[f"err_{s}" for s in schemes]]
        if settings["run"]["format"] == "csv":
            w.csv(f"collide_tau{_temp_tag(tau)}.csv", header, rows)
        else:
            summary[-1]["curves"] = {"columns": header, "rows": rows}
    w.json("collide_summary.json", {"initial_temperature": T, "n_min": n_min, "results": summary})
    return EXIT_OK


def cmd_hybrid(settings: dict, w: Writer) -> int:
    p = params_from(settings)
    h = settings["hybrid"]
    reps = [int(x) for x in _floats(h["repetitions"])]
    scheme = str(h["scheme"])
    rho = thermal_state(p, h["temperature"])
    g = p.rate_scale
    fine = collision.CollisionConfig(p, h["tau"], scheme)
    n = int(round(h["gamma_t_end"] / (g * h["tau"])))
    exact = collision.hybrid_evolve(rho, fine, n)
    direct = collision.collision_run(rho, fine, n)
    recon = float(np.max(np.abs(exact.matrices() - direct.matrices())))
    study = collision.hybrid_shot_study(rho, fine, n, repetitions=reps, n_seeds=int(h["seeds"]),
                                        shots_per_rep=int(h["shots"]), seed=int(settings["run"]["seed"]),
                                        stride=max(1, int(h["stride"])))
    payload = {
        "weights": exact.info["weights"],
        "shot_free_reconstruction_error": recon,
        "repetitions": study["repetitions"],
        "mean_error": study["mean_error"],
        "std_error": study["std_error"],
    }
    if h["tau_coarse"] and h["switch_gamma_t"] is not None:
        coarse = collision.CollisionConfig(p, h["tau_coarse"], scheme)
        dual = collision.dual_timestep_run(rho, fine, coarse, h["switch_gamma_t"] / g, h["gamma_t_end"] / g)
        ref = dynamics.evolve(rho, p, dual.times)
        dp = np.abs(dual.matrices()[:, 0, 0].real - ref.matrices()[:, 0, 0].real)
        payload["dual_timestep"] = {"max_population_error": float(dp.max()),
                                    "gamma_t": (dual.times * g).tolist(),
                                    "p0": dual.matrices()[:, 0, 0].real.tolist(),
                                    "p0_master_equation": ref.matrices()[:, 0, 0].real.tolist()}
    print(f"shot-free reconstruction error: {recon:.3e}")
    for N, m, s in zip(study["repetitions"], study["mean_error"], study["std_error"]):
        print(f"N={N}: mean error {m:.4e} +/- {s:.1e}")
    if settings["run"]["format"] == "csv":
        rows = [[t, t * g, pe] for t, pe in zip(study["times"], study["p0_exact"])]
        w.csv("hybrid_populations.csv", ["t", "gamma_t", "p0_exact"], rows)
    w.json("hybrid.json", payload)
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "lep": cmd_lep,
    "mpemba": cmd_mpemba,
    "evolve": cmd_evolve,
    "collide": cmd_collide,
    "hybrid": cmd_hybrid,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with dotted sections")
    common.add_argument("--out", dest="run.out", metavar="DIR",
                        help="output directory (default: $MPEMBA_OUT_DIR or .)")
    common.add_argument("--format", dest="run.format", choices=("csv", "json"))
    common.add_argument("--jobs", dest="run.jobs", type=int, metavar="N")
    common.add_argument("--seed", dest="run.seed", type=int, metavar="N")
    common.add_argument("--threshold", dest="run.threshold", type=float, metavar="X")
    common.add_argument("--omega-y", dest="params.omega_y", type=float)
    common.add_argument("--omega-z", dest="params.omega_z", type=float)
    common.add_argument("--gamma", dest="params.gamma", type=float)
    common.add_argument("--gamma-minus", dest="params.gamma_minus", type=float)
    common.add_argument("--gamma-y", dest="params.gamma_y", type=float)

    parser = _Parser(prog="qmpemba", description="Anomalous relaxation of a dissipative qubit.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    sp = sub.add_parser("spectrum", parents=[common], help="Liouvillian eigenvalues versus gamma")
    sp.add_argument("--single", dest="run.single", action="store_true", default=None,
                    help="report the spectrum at the configured gamma only")
    for name in ("min", "max", "count"):
        sp.add_argument(f"--gamma-{name}", dest=f"grid.gamma.{name}", type=int if name == "count" else float)

    sub.add_parser("lep", parents=[common], help="locate the exceptional point")

    mp = sub.add_parser("mpemba", parents=[common], help="overlaps, critical times and the Mpemba zone")
    for name in ("min", "max", "count"):
        mp.add_argument(f"--t-{name}", dest=f"grid.temperature.{name}", type=int if name == "count" else float)
    mp.add_argument("--t-spacing", dest="grid.temperature.spacing", choices=("linear", "log"))

    ev = sub.add_parser("evolve", parents=[common], help="trajectories from thermal initial states")
    ev.add_argument("--temperatures", dest="evolve.temperatures", metavar="T1,T2,...")
    ev.add_argument("--time-count", dest="grid.time.count", type=int)
    ev.add_argument("--time-max", dest="grid.time.max", type=float, help="largest gamma*t")

    co = sub.add_parser("collide", parents=[common], help="Trotter-scheme error comparison")
    co.add_argument("--taus", dest="collision.taus", metavar="TAU1,TAU2")
    co.add_argument("--schemes", dest="collision.schemes", metavar="I,II,III")
    co.add_argument("--initial-temperature", dest="collision.initial_temperature", type=float)
    co.add_argument("--gamma-t-end", dest="collision.gamma_t_end", type=float)

    hy = sub.add_parser("hybrid", parents=[common], help="hybrid reconstruction with shot noise")
    hy.add_argument("--temperature", dest="hybrid.temperature", type=float)
    hy.add_argument("--tau", dest="hybrid.tau", type=float)
    hy.add_argument("--scheme", dest="hybrid.scheme", choices=collision.SCHEMES)
    hy.add_argument("--repetitions", dest="hybrid.repetitions", metavar="N1,N2,...")
    hy.add_argument("--seeds", dest="hybrid.seeds", type=int)
    hy.add_argument("--shots", dest="hybrid.shots", type=int)
    hy.add_argument("--gamma-t-end", dest="hybrid.gamma_t_end", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    verb = ns.verb
    overrides = {k: v for k, v in vars(ns).items() if "." in k}
    try:
        settings = load_settings(ns.config, overrides)
        if not 0 < settings["run"]["threshold"] < 1:
            raise UsageError("threshold must lie in (0, 1)")
        if settings["run"]["jobs"] < 1:
            raise UsageError("--jobs must be at least 1")
        return COMMANDS[verb](settings, Writer(settings, verb))
    except UsageError as exc:
        print(f"qmpemba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"qmpemba: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidParameterError, AlreadyConvergedError) as exc:
        print(f"qmpemba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QMpembaError as exc:
        print(f"qmpemba: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"qmpemba: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
