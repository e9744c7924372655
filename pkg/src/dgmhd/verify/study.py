"""Single manufactured-solution runs and mesh-refinement studies."""
import csv
import io
import math
from dataclasses import dataclass, field

from ..dg.solver import DgSystem
from ..hdg.solver import HdgSystem
from ..linalg import ConvergenceError
from ..mesh import build_structured_tet_mesh
from .errors import compute_errors, compute_hdg_errors

CSV_HEADER = ["n", "h", "err_u_V", "rate_u", "err_b_C", "rate_b", "err_p_L2", "rate_p",
              "err_r_S", "rate_r", "picard_iters"]


@dataclass
class RunResult:
    """Outcome of one Picard solve on a manufactured solution."""

    method: str
    report: object
    state: object
    system: object
    solution: object


def make_system(method, mesh, k, params):
    if method == "dg":
        return DgSystem(mesh, k, params)
    if method == "hdg":
        return HdgSystem(mesh, k, params)
    raise ValueError(f"unknown method {method!r}")


def run_mms(method, mesh, k, params, mms, tol=1e-8, max_iter=25, dump=None):
    """Picard solve of the scheme on the forcings of ``mms`` and its error report.

    Raises ConvergenceError (with the increment history) if Picard fails.
    """
    system = make_system(method, mesh, k, params)
    sol, state = system.picard(mms.f, mms.g, tol, max_iter, dump=dump)
    if method == "dg":
        report = compute_errors(sol, mms, system, state.iterations)
    else:
        report = compute_hdg_errors(sol, mms, system, state.iterations)
    report.extra.update({
        "increments": list(state.increments),
        "contraction_ratios": list(state.ratios),
        "contraction_warning": bool(state.contraction_warning),
        "energy_residuals": list(state.energy_residuals),
        "smallness": dict(state.smallness),
    })
    return RunResult(method, report, state, system, sol)


def observed_rate(e1, e2, h1, h2):
    """log(e1/e2)/log(h1/h2); NaN when the meshes coincide or an error vanishes."""
    if h1 == h2 or e1 <= 0 or e2 <= 0:
        return float("nan")
    return math.log(e1 / e2) / math.log(h1 / h2)


def study_errors(method, report):
    """The four tabulated errors: HDG-norm errors for HDG, DG-norm errors for DG."""
    if method == "hdg":
        return report.err_u_hdg, report.err_b_hdg, report.err_p_L2, report.err_r_hdg
    return report.err_u_V, report.err_b_C, report.err_p_L2, report.err_r_S


@dataclass
class ConvergenceTable:
    method: str
    bc_type: int
    k: int
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def rate(self, key, i=-1):
        return self.rows[i][key]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in CSV_HEADER])
        return buf.getvalue()


class StudyError(RuntimeError):
    """Picard failure inside a study; ``table`` holds the rows finished so far."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def convergence_study(method, bc_type, k, meshes, params, mms, tol=1e-8, max_iter=25):
    """Run ``method`` on each mesh and tabulate errors and observed rates.

    ``meshes`` holds structured resolutions n or TetMesh objects.  Rates are
    computed between consecutive entries.
    """
    if len(meshes) < 2:
        raise ValueError("need ≥ 2 meshes")
    table = ConvergenceTable(method, bc_type, k)
    prev = None
    for m in meshes:
        n = m if isinstance(m, int) else 0
        mesh = build_structured_tet_mesh(m) if isinstance(m, int) else m
        try:
            res = run_mms(method, mesh, k, params, mms, tol, max_iter)
        except ConvergenceError as exc:
            raise StudyError(f"Picard failed on mesh n={n}: {exc}", table) from exc
        errs = study_errors(method, res.report)
        row = {"n": n, "h": float(mesh.h), "err_u_V": errs[0], "err_b_C": errs[1],
               "err_p_L2": errs[2], "err_r_S": errs[3],
               "picard_iters": res.state.iterations}
        for key, rk in (("err_u_V", "rate_u"), ("err_b_C", "rate_b"),
                        ("err_p_L2", "rate_p"), ("err_r_S", "rate_r")):
            row[rk] = (float("nan") if prev is None
                       else observed_rate(prev[key], row[key], prev["h"], row["h"]))
        if res.state.contraction_warning:
            table.warnings.append(f"non-contraction on n={n}: increment ratios "
                                  f"{[round(r, 3) for r in res.state.ratios]}")
        row["report"] = res.report
        table.rows.append(row)
        prev = row
    return table
