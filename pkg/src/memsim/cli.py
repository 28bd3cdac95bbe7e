"""Command-line front end: config ingestion, pipelines, result emission.

Configuration lives in a TOML file with one section per concern; command
line flags override file values.  Every command echoes the fully
resolved configuration into the output directory and prints floating
point output with 17 significant digits, so identical configurations
reproduce byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 derivative-validation failure, 5 minimizer not converged, 6 converged
but variational inequality violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import equilibrium as eq
from .boundary import (BoundaryFamily, PermittivityField, build_permittivity,
                       check_compatibility, default_check_points,
                       derivative_selfcheck, family_from_config,
                       sigma_profile_from_spec)
from .energy import dirichlet_energy, energy_report
from .errors import (AdmissibilityViolation, BCMismatch,
                     BoundaryConditionViolation, ConfigError, MemsimError,
                     NoConvergence)
from .forces import electrostatic_force_density, fd_shape_derivative, shape_derivative
from .geometry import (DeviceParams, Profile, bump_profile, make_profile,
                       read_profile_csv, touching_profile, uniform_profile,
                       write_profile_csv, zero_profile)
from .transmission import (ModelContext, SolverOptions, extract_traces,
                           solve_for_profile, transmission_residual)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4
EXIT_NOT_CONVERGED = 5
EXIT_VI = 6

_SCHEMA = {
    "device": {"H", "L", "d", "sigma2", "V", "beta", "tau", "a"},
    "sigma1": {"kind", "value", "a0", "a1", "k"},
    "family": {"id", "gradient"},
    "grid": {"nx", "nz1", "nz2"},
    "solver": {"tol", "max_iter", "eps_gap"},
    "profile": {"kind", "amplitude", "offset", "path", "bc"},
    "direction": {"kind", "amplitude", "path"},
    "validate": {"t_values", "rel_err_bound", "scheme"},
    "minimize": {"max_outer_iters", "step0", "backtrack", "grad_tol",
                 "vi_tol", "precondition", "nx"},
    "sweep": {"v_values", "nx", "max_outer_iters", "grad_tol"},
    "output": {"dir"},
}
_TOP_KEYS = set(_SCHEMA) | {"seed"}

_DEFAULTS = {
    "device": {"V": 0.0, "beta": 1.0, "tau": 0.0, "a": 0.0},
    "sigma1": {"kind": "constant", "value": 1.0},
    "family": {"id": "capacitor"},
    "grid": {"nx": 256, "nz1": 64, "nz2": 128},
    "solver": {"tol": 1.0e-10, "max_iter": 50000},
    "profile": {"kind": "zero", "bc": "clamped"},
    "direction": {"kind": "bump", "amplitude": 1.0},
    "validate": {"t_values": [1.0e-2, 1.0e-3, 1.0e-4],
                 "rel_err_bound": 0.02, "scheme": "forward"},
    "minimize": {"max_outer_iters": 200, "step0": 1.0, "backtrack": 0.5,
                 "grad_tol": 1.0e-8, "vi_tol": 1.0e-6, "precondition": True},
    "sweep": {"max_outer_iters": 200, "grad_tol": 1.0e-8},
    "output": {"dir": "out"},
}


def fmt(value: float) -> str:
    return f"{float(value):.17g}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header: str, columns: list) -> None:
    rows = zip(*columns)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else fmt(cell)
                              for cell in row) + "\n")


# ---------------------------------------------------------------------------
# Configuration handling.

class RunSetup:
    """Validated configuration resolved into model objects."""

    def __init__(self, cfg: dict, outdir: Path):
        self.cfg = cfg
        self.outdir = outdir
        dev = cfg["device"]
        try:
            self.params = DeviceParams(
                H=float(dev["H"]), L=float(dev["L"]), d=float(dev["d"]),
                sigma2=float(dev["sigma2"]), V=float(dev["V"]),
                beta=float(dev["beta"]), tau=float(dev["tau"]), a=float(dev["a"]),
            )
        except KeyError as exc:
            raise ConfigError(f"config section [device] missing key {exc.args[0]!r}")
        except ValueError as exc:
            raise ConfigError(str(exc))
        self.sigma_x = sigma_profile_from_spec(cfg["sigma1"], self.params.L)
        self.perm: PermittivityField = build_permittivity(self.sigma_x, self.params)
        fam_opts = {k: v for k, v in cfg["family"].items() if k != "id"}
        self.family: BoundaryFamily = family_from_config(
            cfg["family"]["id"], self.params, self.sigma_x, fam_opts)
        grid = cfg["grid"]
        solver = cfg["solver"]
        self.options = SolverOptions(
            nx=int(grid["nx"]), nz1=int(grid["nz1"]), nz2=int(grid["nz2"]),
            tol=float(solver["tol"]), max_iter=int(solver["max_iter"]),
            eps_gap=(float(solver["eps_gap"]) if "eps_gap" in solver else None),
        )
        self.seed = int(cfg["seed"])
        self.ctx = ModelContext(params=self.params, family=self.family,
                                perm=self.perm, options=self.options)

    def build_profile(self, section: str = "profile") -> Profile:
        spec = self.cfg[section]
        kind = spec["kind"]
        n = self.options.nx
        bc = spec.get("bc", "clamped")
        try:
            if kind == "zero":
                return zero_profile(self.params, n, bc)
            if kind == "bump":
                return bump_profile(self.params, n, float(spec["amplitude"]), bc)
            if kind == "touch":
                return touching_profile(self.params, n)
            if kind == "uniform":
                return uniform_profile(self.params, n, float(spec["offset"]))
            if kind == "file":
                return read_profile_csv(spec["path"], self.params, bc)
        except KeyError as exc:
            raise ConfigError(f"profile spec missing key {exc.args[0]!r}")
        except (ValueError, OSError) as exc:
            raise ConfigError(f"cannot load profile: {exc}")
        raise ConfigError(f"unknown profile kind {kind!r}")

    def build_direction(self, n: int) -> np.ndarray:
        spec = self.cfg["direction"]
        kind = spec["kind"]
        if kind == "bump":
            xi = np.linspace(-1.0, 1.0, n + 1)
            return float(spec["amplitude"]) * (1.0 - xi**2) ** 2
        if kind == "file":
            try:
                prof = read_profile_csv(spec["path"], self.params, "free")
            except (ValueError, OSError) as exc:
                raise ConfigError(f"cannot load direction: {exc}")
            return prof.values.copy()
        raise ConfigError(f"unknown direction kind {kind!r}")

    def echo_config(self) -> None:
        _write_json(self.outdir / "config_resolved.json", self.cfg)


def load_config(path: str | None, overrides: dict) -> dict:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _SCHEMA:
            if not isinstance(raw[key], dict):
                raise ConfigError(f"config key {key!r} must be a section")
            for sub in raw[key]:
                if sub not in _SCHEMA[key]:
                    raise ConfigError(f"unknown config key {key!r}.{sub!r}")

    cfg = {"seed": 0}
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        merged.update(raw.get(section, {}))
        cfg[section] = merged
    if "seed" in raw:
        cfg["seed"] = int(raw["seed"])

    if overrides.get("nx") is not None:
        nx = int(overrides["nx"])
        cfg["grid"].update(nx=nx, nz1=max(4, nx // 4), nz2=max(8, nx // 2))
    if overrides.get("tol") is not None:
        cfg["solver"]["tol"] = float(overrides["tol"])
    if overrides.get("seed") is not None:
        cfg["seed"] = int(overrides["seed"])
    if overrides.get("out") is not None:
        cfg["output"]["dir"] = str(overrides["out"])

    required = {"H", "L", "d", "sigma2"}
    missing = sorted(required - set(cfg["device"]))
    if missing:
        raise ConfigError(f"config section [device] missing key {missing[0]!r}")
    return cfg


# ---------------------------------------------------------------------------
# Commands.

def _solve_pipeline(setup: RunSetup, profile: Profile):
    potential = solve_for_profile(profile, setup.ctx)
    traces = extract_traces(potential, profile, setup.perm)
    return potential, traces


def cmd_solve(setup: RunSetup) -> int:
    profile = setup.build_profile()
    try:
        potential, _ = _solve_pipeline(setup, profile)
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    grids = potential.grids
    jv, jf, ir = transmission_residual(potential, setup.perm, grids)

    z1 = np.tile(grids.eta1 - setup.params.H, (grids.nx + 1, 1))
    gap = setup.params.H + profile.values
    z2 = -setup.params.H + np.outer(gap, grids.eta2)
    _write_csv(setup.outdir / "potential_layer.csv", "x,z,psi",
               [np.repeat(grids.xs, grids.nz1 + 1), z1.ravel(),
                potential.phi1.ravel()])
    _write_csv(setup.outdir / "potential_gap.csv", "x,z,psi",
               [np.repeat(grids.xs, grids.nz2 + 1), z2.ravel(),
                potential.phi2.ravel()])
    _write_json(setup.outdir / "transmission_residual.json", {
        "jump_value_norm": jv,
        "jump_flux_norm": jf,
        "interior_residual_norm": ir,
        "cg_iterations": potential.iterations,
        "cg_relative_residual": potential.residual,
        "dirichlet_energy": dirichlet_energy(potential),
    })
    print(f"solved: {potential.iterations} iterations, "
          f"flux jump {fmt(jf)}, interior residual {fmt(ir)}")
    return EXIT_OK


def cmd_energy(setup: RunSetup) -> int:
    profile = setup.build_profile()
    try:
        potential, _ = _solve_pipeline(setup, profile)
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report = energy_report(profile, potential, setup.params, setup.family, setup.perm)
    _write_json(setup.outdir / "energy.json", report.to_dict())
    print(f"dirichlet {fmt(report.dirichlet)}  mech {fmt(report.mech)}  "
          f"total {fmt(report.total)}")
    return EXIT_OK


def cmd_force(setup: RunSetup) -> int:
    profile = setup.build_profile()
    try:
        potential, traces = _solve_pipeline(setup, profile)
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    force = electrostatic_force_density(traces, profile, setup.family, setup.perm)
    _write_csv(setup.outdir / "force.csv", "x,g,regime",
               [force.x, force.values, force.regimes()])
    print(f"force density written; max {fmt(force.values.max())}")
    return EXIT_OK


def cmd_validate_derivative(setup: RunSetup) -> int:
    profile = setup.build_profile()
    theta = setup.build_direction(profile.grid.n)
    spec = setup.cfg["validate"]
    if spec["scheme"] not in ("forward", "central"):
        raise ConfigError(f"unknown validate scheme {spec['scheme']!r}")
    if not spec["t_values"] or any(float(t) <= 0.0 for t in spec["t_values"]):
        raise ConfigError("validate t_values must be positive")
    try:
        potential, traces = _solve_pipeline(setup, profile)
        analytic = shape_derivative(profile, theta, traces, setup.family,
                                    setup.perm, setup.params)
        base = dirichlet_energy(potential)
        rows = []
        for t in spec["t_values"]:
            oracle = fd_shape_derivative(profile, theta, float(t), setup.ctx,
                                         scheme=spec["scheme"], base_energy=base)
            abs_err = abs(oracle - analytic)
            rel_err = abs_err / max(abs(analytic), 1e-300)
            rows.append({"t": float(t), "oracle": oracle, "analytic": analytic,
                         "abs_err": abs_err, "rel_err": rel_err})
    except (BCMismatch, AdmissibilityViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    min_rel = min(r["rel_err"] for r in rows)
    payload = {"rows": rows, "min_rel_err": min_rel,
               "bound": float(spec["rel_err_bound"])}
    _write_json(setup.outdir / "derivative_validation.json", payload)
    for r in rows:
        print(f"t={fmt(r['t'])}  oracle={fmt(r['oracle'])}  "
              f"analytic={fmt(r['analytic'])}  rel_err={fmt(r['rel_err'])}")
    if min_rel <= float(spec["rel_err_bound"]):
        return EXIT_OK
    print(f"validation failed: min rel err {fmt(min_rel)} exceeds bound",
          file=sys.stderr)
    return EXIT_VALIDATION


def _minimize_options(setup: RunSetup) -> eq.MinimizeOptions:
    m = setup.cfg["minimize"]
    return eq.MinimizeOptions(
        max_outer_iters=int(m["max_outer_iters"]),
        step0=float(m["step0"]),
        backtrack=float(m["backtrack"]),
        grad_tol=float(m["grad_tol"]),
        vi_tol=float(m["vi_tol"]),
        nx=(int(m["nx"]) if "nx" in m else None),
        precondition=bool(m["precondition"]),
    )


def _seeded_directions(profile: Profile, params: DeviceParams, seed: int,
                       count: int = 2) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    xi = profile.grid.nodes / params.L
    env = (1.0 - xi**2) ** 2
    out = []
    for _ in range(count):
        coeffs = rng.standard_normal(3)
        wave = sum(c * np.cos((k + 1) * np.pi * xi) for k, c in enumerate(coeffs))
        w = profile.values + 0.1 * params.H * env * wave
        out.append(eq.project_admissible(w, params.H))
    return out


def cmd_minimize(setup: RunSetup) -> int:
    initial = setup.build_profile()
    opts = _minimize_options(setup)
    try:
        report = eq.minimize_total_energy(initial, opts, setup.ctx)
        extra = eq.default_test_directions(report.profile, setup.params)
        extra += _seeded_directions(report.profile, setup.params, setup.seed)
        ctx = setup.ctx if opts.nx is None else setup.ctx.with_options(
            nx=opts.nx, nz1=max(4, opts.nx // 4), nz2=max(8, opts.nx // 2))
        vi_max = eq.vi_residual(report.profile, extra, ctx)
        report.vi_max_violation = max(report.vi_max_violation, vi_max)
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    _write_json(setup.outdir / "equilibrium.json", report.to_dict())
    iters = np.arange(report.grad_norm_trace.size)
    energies = report.energy_trace[
        np.minimum(iters, report.energy_trace.size - 1)]
    _write_csv(setup.outdir / "iterations.csv", "iter,E,grad_norm,contact_fraction",
               [iters.astype(float), energies, report.grad_norm_trace,
                report.contact_trace])
    write_profile_csv(report.profile, setup.outdir / "profile_final.csv")
    print(f"minimize: converged={report.converged} iters={report.iterations} "
          f"E={fmt(report.final_energy)} vi={fmt(report.vi_max_violation)} "
          f"contact={fmt(report.contact_fraction)}")
    if not report.converged:
        return EXIT_NOT_CONVERGED
    if report.vi_max_violation > opts.vi_tol:
        return EXIT_VI
    return EXIT_OK


def cmd_check_family(setup: RunSetup) -> int:
    params = setup.params
    w_samples = np.linspace(-params.H, 2.0 * params.H, 13)
    x_samples = np.linspace(-params.L, params.L, 17)
    report = check_compatibility(setup.family, setup.perm, params,
                                 w_samples, x_samples)
    lower, upper = default_check_points(params)
    fd_resid = derivative_selfcheck(setup.family, lower, upper)
    payload = {"residuals": report.residuals, "passed": report.passed,
               "tol": report.tol, "fd_partials_residual": fd_resid,
               "mems_checked": report.mems_checked}
    _write_json(setup.outdir / "family_check.json", payload)
    print(f"family {setup.family.family_id!r}: passed={report.passed} "
          f"fd_residual={fmt(fd_resid)}")
    return EXIT_OK if report.passed and fd_resid < 1e-6 else EXIT_VALIDATION


def cmd_sweep(setup: RunSetup) -> int:
    spec = setup.cfg["sweep"]
    if "v_values" not in spec:
        raise ConfigError("config section [sweep] missing key 'v_values'")
    v_values = [float(v) for v in spec["v_values"]]
    opts = _minimize_options(setup)
    from dataclasses import replace as _replace
    opts = _replace(opts, max_outer_iters=int(spec["max_outer_iters"]),
                    grad_tol=float(spec["grad_tol"]),
                    nx=(int(spec["nx"]) if "nx" in spec else opts.nx))
    rows = {"V": [], "energy": [], "contact_fraction": [], "min_u": [],
            "converged": [], "iterations": []}
    warm = setup.build_profile()
    all_ok = True
    for v in v_values:
        params = DeviceParams(H=setup.params.H, L=setup.params.L,
                              d=setup.params.d, sigma2=setup.params.sigma2,
                              V=v, beta=setup.params.beta,
                              tau=setup.params.tau, a=setup.params.a)
        family = family_from_config(setup.cfg["family"]["id"], params,
                                    setup.sigma_x,
                                    {k: val for k, val in setup.cfg["family"].items()
                                     if k != "id"})
        ctx = ModelContext(params=params, family=family, perm=setup.perm,
                           options=setup.options)
        report = eq.minimize_total_energy(warm, opts, ctx)
        warm = make_profile(report.profile.values, params,
                            report.profile.bc_kind)
        rows["V"].append(v)
        rows["energy"].append(report.final_energy)
        rows["contact_fraction"].append(report.contact_fraction)
        rows["min_u"].append(float(report.profile.values.min()))
        rows["converged"].append(1.0 if report.converged else 0.0)
        rows["iterations"].append(float(report.iterations))
        all_ok = all_ok and report.converged
        print(f"V={fmt(v)} E={fmt(report.final_energy)} "
              f"contact={fmt(report.contact_fraction)} "
              f"converged={report.converged}")
    _write_csv(setup.outdir / "sweep.csv",
               "V,energy,contact_fraction,min_u,converged,iterations",
               [rows[k] for k in ("V", "energy", "contact_fraction", "min_u",
                                  "converged", "iterations")])
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


_COMMANDS = {
    "solve": cmd_solve,
    "energy": cmd_energy,
    "force": cmd_force,
    "validate-derivative": cmd_validate_derivative,
    "minimize": cmd_minimize,
    "check-family": cmd_check_family,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memsim",
        description="Gap potential, force density, and plate equilibrium "
                    "pipelines for an idealized two-dielectric MEMS device.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--nx", type=int, metavar="N",
                        help="override horizontal resolution (nz scale along)")
    common.add_argument("--tol", type=float, metavar="T",
                        help="override linear-solver relative tolerance")
    common.add_argument("--seed", type=int, metavar="S",
                        help="seed for randomized test directions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"nx": args.nx, "tol": args.tol, "seed": args.seed,
                 "out": args.out}
    try:
        cfg = load_config(args.config, overrides)
        outdir = Path(cfg["output"]["dir"])
        outdir.mkdir(parents=True, exist_ok=True)
        setup = RunSetup(cfg, outdir)
        setup.echo_config()
        return _COMMANDS[args.command](setup)
    except (ConfigError, BoundaryConditionViolation, AdmissibilityViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MemsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
