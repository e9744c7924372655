"""Command-line entry point: ``dgmhd solve | converge | diagnose``.

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""
import argparse
import json
import math
import sys
from dataclasses import dataclass

from .dg.forms import PhysParams
from .linalg import ConvergenceError, SingularMatrixError
from .mesh import MeshError, build_structured_tet_mesh, load_ascii_mesh
from .verify import diagnostics
from .verify.mms import make_default_mms
from .verify.study import StudyError, convergence_study, run_mms

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "method": "dg", "bc": 1, "k": 1, "mesh_n": 2, "mesh_file": None, "meshes": None,
    "nu": 1.0, "nu_m": 1.0, "kappa": 1.0, "a0": None, "m0": None, "s0": 1.0,
    "tol": 1e-8, "max_iter": 25, "pressure_amplitude": 1.0, "seed": 0, "out": None,
    "dump_matrix": None, "threads": 1,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str
    bc: int
    k: int
    mesh_n: int
    mesh_file: str
    meshes: list
    params: PhysParams
    tol: float
    max_iter: int
    pressure_amplitude: float
    seed: int
    out: str
    dump_matrix: str
    threads: int
    explicit: frozenset

    def mesh(self):
        if self.mesh_file:
            return load_ascii_mesh(self.mesh_file)
        return build_structured_tet_mesh(self.mesh_n)

    def mms(self):
        return make_default_mms(self.bc, self.pressure_amplitude, params=self.params)


# JSON with 17 significant digits -------------------------------------------------

def to_json(obj, indent=0):
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float) or hasattr(obj, "dtype"):
        v = float(obj)
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return f"{v:.17g}"
    return json.dumps(str(obj))


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# argument handling -------------------------------------------------------------

def _mesh_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"meshes: expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON file with option values (flags override it)")
    a("--method", choices=["dg", "hdg"])
    a("--bc", type=int, help="boundary-condition type, 1 or 2")
    a("--k", type=int, help="polynomial degree, 1..4")
    a("--mesh-n", type=int, help="structured cube mesh with n^3 cells")
    a("--mesh-file", help="ASCII tetrahedral mesh file")
    a("--meshes", help="comma-separated list of structured resolutions")
    a("--nu", type=float)
    a("--nu-m", type=float)
    a("--kappa", type=float)
    a("--a0", type=float)
    a("--m0", type=float)
    a("--s0", type=float)
    a("--tol", type=float)
    a("--max-iter", type=int)
    a("--pressure-amplitude", type=float)
    a("--seed", type=int)
    a("--out", help="output path (default stdout)")
    a("--dump-matrix", help="write the first linearized matrix in MatrixMarket format")
    a("--threads", type=int, help="worker threads for assembly (results do not depend on it)")
    parser = argparse.ArgumentParser(prog="dgmhd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="Picard solve on the manufactured solution")
    sub.add_parser("converge", parents=[common], help="mesh-refinement study, CSV output")
    d = sub.add_parser("diagnose", parents=[common], help="structural diagnostics, JSON output")
    d.add_argument("which", choices=list(diagnostics.DIAGNOSTICS) + ["stability"])
    return parser


def resolve_config(args):
    values = dict(DEFAULTS)
    explicit = set()
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        for key, v in data.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"config: unknown field {key!r}")
            values[key] = v
            explicit.add(key)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
            explicit.add(key)
    return _validate(values, explicit)


def _validate(v, explicit):
    if v["method"] not in ("dg", "hdg"):
        raise ConfigError(f"method: must be dg or hdg, got {v['method']!r}")
    k = v["k"]
    if not isinstance(k, int) or k < 1:
        raise ConfigError(f"k: polynomial degree must satisfy k ≥ 1, got {k}")
    if k > 4:
        raise ConfigError(f"k: polynomial degree must satisfy k ≤ 4, got {k}")
    if v["bc"] not in (1, 2):
        raise ConfigError(f"bc: boundary-condition type must be 1 or 2, got {v['bc']}")
    if v["method"] == "hdg" and v["bc"] == 2:
        raise ConfigError("bc: the hdg method supports only bc type 1")
    if not isinstance(v["mesh_n"], int) or v["mesh_n"] < 1:
        raise ConfigError(f"mesh_n: must be ≥ 1, got {v['mesh_n']}")
    if not v["tol"] > 0:
        raise ConfigError(f"tol: must be > 0, got {v['tol']}")
    if not isinstance(v["max_iter"], int) or v["max_iter"] < 1:
        raise ConfigError(f"max_iter: must be ≥ 1, got {v['max_iter']}")
    if not isinstance(v["threads"], int) or v["threads"] < 1:
        raise ConfigError(f"threads: must be ≥ 1, got {v['threads']}")
    meshes = v["meshes"]
    if meshes is not None:
        meshes = meshes if isinstance(meshes, list) else _mesh_list(meshes)
        if any(not isinstance(n, int) or n < 1 for n in meshes):
            raise ConfigError(f"meshes: resolutions must be ≥ 1, got {meshes}")
    try:
        params = PhysParams(v["nu"], v["nu_m"], v["kappa"], v["a0"], v["m0"], v["s0"], v["bc"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(v["method"], v["bc"], k, v["mesh_n"], v["mesh_file"], meshes, params,
                     float(v["tol"]), v["max_iter"], float(v["pressure_amplitude"]), v["seed"],
                     v["out"], v["dump_matrix"], v["threads"], frozenset(explicit))


def _config_summary(cfg):
    p = cfg.params.resolved(cfg.k)
    return {"method": cfg.method, "bc": cfg.bc, "k": cfg.k,
            "mesh": cfg.mesh_file or f"structured n={cfg.mesh_n}",
            "nu": p.nu, "nu_m": p.nu_m, "kappa": p.kappa, "a0": p.a0, "m0": p.m0, "s0": p.s0,
            "tol": cfg.tol, "max_iter": cfg.max_iter,
            "pressure_amplitude": cfg.pressure_amplitude, "seed": cfg.seed}


# commands -------------------------------------------------------------------

def cmd_solve(cfg):
    mesh = cfg.mesh()
    try:
        res = run_mms(cfg.method, mesh, cfg.k, cfg.params, cfg.mms(), cfg.tol, cfg.max_iter,
                      dump=cfg.dump_matrix)
    except ConvergenceError as exc:
        payload = {"status": "picard_failed", "message": str(exc),
                   "increments": list(exc.history or []), "config": _config_summary(cfg)}
        _emit(to_json(payload) + "\n", cfg.out)
        return EXIT_SOLVER
    report = res.report.as_dict()
    extra = report.pop("extra")
    out = {"status": "converged", "config": _config_summary(cfg), "errors": report}
    if cfg.method == "hdg":
        out["div_u_max"] = extra["div_u_max"]
        out["u_l2"] = extra["u_l2"]
        out["normal_trace_residual"] = extra["normal_trace_residual"]
    out["picard"] = {k: extra[k] for k in ("increments", "contraction_ratios",
                                           "contraction_warning", "energy_residuals")}
    out["smallness"] = extra["smallness"]
    _emit(to_json(out) + "\n", cfg.out)
    return EXIT_OK


def cmd_converge(cfg):
    meshes = cfg.meshes if cfg.meshes is not None else [cfg.mesh_n]
    if len(meshes) < 2:
        raise ConfigError("meshes: need ≥ 2 meshes")
    try:
        table = convergence_study(cfg.method, cfg.bc, cfg.k, meshes, cfg.params, cfg.mms(),
                                  cfg.tol, cfg.max_iter)
    except StudyError as exc:
        _emit(exc.table.to_csv(), cfg.out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for w in table.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit(table.to_csv(), cfg.out)
    return EXIT_OK


def cmd_diagnose(cfg, which):
    e = cfg.explicit
    n = [cfg.mesh_n] if "mesh_n" in e else None
    k = cfg.k if "k" in e else None
    if which == "embedding":
        rep = diagnostics.embedding_diagnostic(tuple(cfg.meshes or (1, 2, 3, 4)), cfg.k,
                                               20, cfg.seed, cfg.bc)
    elif which == "coercivity":
        rep = diagnostics.coercivity_diagnostic(tuple(n or (1, 2)), (k,) if k else (1, 2),
                                                50, cfg.seed, cfg.params)
    elif which == "lemma41":
        rep = diagnostics.lemma41_diagnostic(n[0] if n else 2, cfg.k, 20, 20, cfg.seed)
    elif which == "pressure-robust":
        amp = cfg.pressure_amplitude if "pressure_amplitude" in e else 51.0
        rep = diagnostics.pressure_robust_diagnostic(n[0] if n else 3, cfg.k, (1.0, amp),
                                                     cfg.params, tol=cfg.tol,
                                                     max_iter=cfg.max_iter)
    elif which == "cross-check":
        rep = diagnostics.cross_check_dg_hdg(cfg.mms(), n[0] if n else 2, cfg.k, cfg.params,
                                             cfg.tol, cfg.max_iter)
    else:
        rep = diagnostics.stability_diagnostic(tuple(cfg.meshes or (1, 2, 3)), cfg.k,
                                               cfg.params, cfg.tol, cfg.max_iter)
    rep = {"diagnostic": which, **rep}
    _emit(to_json(rep) + "\n", cfg.out)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "converge":
            return cmd_converge(cfg)
        return cmd_diagnose(cfg, args.which)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SingularMatrixError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
