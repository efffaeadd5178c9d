"""Case pipelines: single runs, convergence studies, artifact writing.

Every run writes its artifacts into a per-case output directory:

    run_info.txt         all effective settings (for reproducibility)
    solution.vtk         final solution u and residual representative eps
    iterations.csv       Newton log of the final (or only) solve
    violation.txt        bound-violation report (when bounds are set)
    cross_section.csv    sampled line values (cases that define one)
    levels.csv           per-level records (adaptive runs)
    study.csv            error table with least-squares slopes (studies)
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .adapt import AdaptOptions, adaptive_solve_loop, write_records_csv
from .cases import case_exact, get_case
from .fespace import DiscreteFunction, build_space
from .forms import FormParams, vh_norm
from .mesh import refine_uniform_red
from .penalty import PenaltyConfig
from .report import (bound_violation_report, cross_section, error_norms,
                     write_cross_section_csv)
from .solver import NewtonOptions, build_operators, newton_solve, \
    solve_linear_resmin, write_iteration_log
from .vtkio import export_vtk


def _penalty_config(case, problem, upper_sign=None):
    if not problem.has_bounds:
        return None
    return PenaltyConfig.from_problem(
        problem,
        upper_sign=upper_sign or case.upper_sign,
        quadrature=case.penalty_quadrature)


def _write_run_info(path, case, problem, extra):
    with open(path, "w") as fh:
        fh.write(f"boundfem {__version__}\n")
        fh.write(f"case = {case.name} ({case.title})\n")
        for key in ("mode", "p", "gamma0", "tol", "levels", "max_dofs",
                    "theta_mark", "penalty_quadrature", "upper_sign",
                    "layer_scaling"):
            fh.write(f"{key} = {getattr(case, key)}\n")
        fh.write(f"bounds = {case.bounds}\n")
        fh.write(f"K = {problem.K_mat.tolist()}\n")
        for k, v in extra.items():
            fh.write(f"{k} = {v}\n")


@dataclass
class RunResult:
    case: object
    u: DiscreteFunction
    eps: DiscreteFunction
    violation: object            # ViolationReport or None
    records: list                # adaptive records (empty for uniform runs)
    newton_log: list
    out_dir: str | None


def run_case(name, out_dir=None, with_penalty=True, seed=None, threads=1, **overrides):
    """Execute a case's designated pipeline and write its artifacts.

    Overrides accept the CaseDefinition field names (gamma0, tol, p, levels,
    theta_mark, upper_sign, layer_scaling, ...). `seed` and `threads` are
    recorded for reproducibility; the solver itself is deterministic and
    single-threaded.
    """
    case = get_case(name).with_overrides(**overrides)
    problem = case.problem()
    pen = _penalty_config(case, problem) if with_penalty else None
    params = FormParams()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_run_info(os.path.join(out_dir, "run_info.txt"), case, problem,
                        {"with_penalty": with_penalty, "seed": seed,
                         "threads": f"{threads} (solver is single-threaded)"})

    newton_log = []
    records = []
    if case.mode == "adaptive":
        opts = AdaptOptions(theta_mark=case.theta_mark, max_levels=case.levels,
                            max_dofs=case.max_dofs, p=case.p,
                            newton=NewtonOptions(tol=case.tol))
        exact, exact_grad = case_exact(case)
        result = adaptive_solve_loop(problem, pen, params, opts,
                                     initial_mesh=case.make_mesh(),
                                     exact=exact, exact_grad=exact_grad)
        records = result.records
        mesh, U_h, V_h = result.mesh, result.U_h, result.V_h
        u, eps = result.u, result.eps
        if out_dir:
            write_records_csv(os.path.join(out_dir, "levels.csv"), records)
    else:
        mesh = case.make_mesh()
        U_h = build_space(mesh, case.p, "continuous")
        V_h = build_space(mesh, case.p, "broken")
        ops = build_operators(problem, U_h, V_h, params)
        if pen is None:
            sol = solve_linear_resmin(problem, U_h, V_h, params, ops=ops)
            u, eps = sol.u, sol.eps
        else:
            res = newton_solve(problem, U_h, V_h, pen, params,
                               opts=NewtonOptions(tol=case.tol), ops=ops)
            u, eps = res.u, res.eps
            newton_log = res.log
            if out_dir:
                write_iteration_log(os.path.join(out_dir, "iterations.csv"), res.log)

    uh = DiscreteFunction(U_h, u)
    eh = DiscreteFunction(V_h, eps)
    report = None
    if problem.has_bounds:
        report = bound_violation_report(uh, (problem.u_min, problem.u_max))
        if out_dir:
            with open(os.path.join(out_dir, "violation.txt"), "w") as fh:
                fh.write(f"u_min = {report.u_min!r}\nu_max = {report.u_max!r}\n")
                fh.write(f"undershoot = {report.undershoot!r}\n")
                fh.write(f"overshoot = {report.overshoot!r}\n")
                if report.undershoot_pct is not None:
                    fh.write(f"undershoot_pct = {report.undershoot_pct!r}\n")
                    fh.write(f"overshoot_pct = {report.overshoot_pct!r}\n")
    if out_dir:
        export_vtk(mesh, {"u": uh, "eps": eh},
                   os.path.join(out_dir, "solution.vtk"), title=case.name)
        if case.cross_section is not None:
            p0, p1 = case.cross_section
            s, pts, vals = cross_section(uh, p0, p1)
            write_cross_section_csv(os.path.join(out_dir, "cross_section.csv"),
                                    s, pts, ("u", vals))
    return RunResult(case, uh, eh, report, records, newton_log, out_dir)


@dataclass
class StudyRow:
    level: int
    h: float
    dofs_u: int
    dofs_v: int
    err_l2: float | None
    err_vh: float | None
    estimator: float
    undershoot: float
    overshoot: float


@dataclass
class StudyResult:
    rows: list
    slope_l2: float | None       # least-squares slope vs sqrt(dofs_u)
    slope_vh: float | None


def convergence_study(name, levels=None, mode=None, with_penalty=False,
                      out_dir=None, **overrides):
    """Uniform or adaptive error study of a case; returns rows and slopes.

    Error columns need the case's exact solution; otherwise only the
    estimator column is filled. Slopes are least-squares fits of log(error)
    against log(sqrt(dofs_u)); with uniform refinement sqrt(dofs) scales
    like 1/h, so -2 corresponds to second order in h.
    """
    case = get_case(name).with_overrides(**overrides)
    if levels is not None:
        case = case.with_overrides(levels=levels)
    mode = mode or case.mode
    problem = case.problem()
    pen = _penalty_config(case, problem) if with_penalty else None
    params = FormParams()
    exact, exact_grad = case_exact(case)

    rows = []
    if mode == "adaptive":
        opts = AdaptOptions(theta_mark=case.theta_mark, max_levels=case.levels,
                            max_dofs=case.max_dofs, p=case.p,
                            newton=NewtonOptions(tol=case.tol))
        result = adaptive_solve_loop(problem, pen, params, opts,
                                     initial_mesh=case.make_mesh(),
                                     exact=exact, exact_grad=exact_grad)
        for r in result.records:
            rows.append(StudyRow(r.level, r.h_max, r.dofs_u, r.dofs_v,
                                 r.err_l2, r.err_vh, r.estimator,
                                 r.undershoot, r.overshoot))
    else:
        mesh = case.make_mesh()
        for level in range(case.levels):
            U_h = build_space(mesh, case.p, "continuous")
            V_h = build_space(mesh, case.p, "broken")
            ops = build_operators(problem, U_h, V_h, params)
            if pen is None:
                sol = solve_linear_resmin(problem, U_h, V_h, params, ops=ops)
                u, eps = sol.u, sol.eps
            else:
                res = newton_solve(problem, U_h, V_h, pen, params,
                                   opts=NewtonOptions(tol=case.tol), ops=ops)
                u, eps = res.u, res.eps
            err_l2 = err_vh = None
            if exact is not None:
                err_l2, err_vh = error_norms(problem, U_h, u, exact, exact_grad, params)
            under = over = 0.0
            if problem.has_bounds:
                rep = bound_violation_report(DiscreteFunction(U_h, u),
                                             (problem.u_min, problem.u_max))
                under, over = rep.undershoot, rep.overshoot
            rows.append(StudyRow(level, mesh.h, U_h.n_dofs, V_h.n_dofs,
                                 err_l2, err_vh, vh_norm(eps, ops.G),
                                 under, over))
            if level < case.levels - 1:
                mesh = refine_uniform_red(mesh)

    slope_l2 = _slope([r.dofs_u for r in rows], [r.err_l2 for r in rows])
    slope_vh = _slope([r.dofs_u for r in rows], [r.err_vh for r in rows])
    result = StudyResult(rows, slope_l2, slope_vh)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_study_csv(os.path.join(out_dir, "study.csv"), result)
    return result


def _slope(dofs, errs):
    pairs = [(d, e) for d, e in zip(dofs, errs) if e is not None and e > 0.0]
    if len(pairs) < 2:
        return None
    x = np.log([np.sqrt(d) for d, _ in pairs])
    y = np.log([e for _, e in pairs])
    return float(np.polyfit(x, y, 1)[0])


def write_study_csv(path, study):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "h", "dofs_u", "dofs_v", "err_l2", "err_vh",
                    "estimator", "undershoot", "overshoot"])
        for r in study.rows:
            w.writerow([r.level, repr(float(r.h)), r.dofs_u, r.dofs_v,
                        "" if r.err_l2 is None else repr(float(r.err_l2)),
                        "" if r.err_vh is None else repr(float(r.err_vh)),
                        repr(float(r.estimator)), repr(float(r.undershoot)),
                        repr(float(r.overshoot))])
        w.writerow([])
        w.writerow(["slope_l2_vs_sqrt_dofs",
                    "" if study.slope_l2 is None else repr(study.slope_l2)])
        w.writerow(["slope_vh_vs_sqrt_dofs",
                    "" if study.slope_vh is None else repr(study.slope_vh)])
