"""Command-line entry point: ``hdmix <command> --config <path> [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration or model-data error, 3 solver error or
failed check.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks
from .config import COMMANDS, ConfigError, RunConfig, format_value, read_config
from .contact import (
    AssembledInstance,
    ContactModel,
    Loads,
    Material,
    assemble,
    check_friction_kkt,
    to_evolution_problem,
)
from .convergence import build_family, run_convergence_study
from .errors import SolverError
from .history import TimeGrid, Trajectory, solve_evolution
from .mesh import generate_rect_mesh, read_mesh
from .optimize import CostSpec, ParameterBox, ParameterPoint, Template, minimize
from .saddle import verify_constants

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
KKT_TOL = 1e-6


def build_model(cfg: RunConfig) -> ContactModel:
    m = cfg["mesh"]
    if cfg.mesh_file is not None:
        mesh = read_mesh(cfg.mesh_file)
    else:
        mesh = generate_rect_mesh(m["nx"], m["ny"], m["width"], m["height"],
                                  sides={k: m[k] for k in ("left", "right", "top", "bottom")})
    mat = cfg["material"]
    ld = cfg["loads"]
    loads = Loads.uniform(mesh, ld["body"], ld["traction"], theta=ld["theta"], zeta=ld["zeta"])
    return ContactModel(mesh, Material(mat["beta"], mat["eta"], mat["omega"]), loads, cfg["friction"]["g"])


def build_grid(cfg: RunConfig) -> TimeGrid:
    return TimeGrid.from_horizon(cfg["time"]["T"], cfg["time"]["N"])


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x) -> str:
    return repr(float(x))


def write_trajectory(asm: AssembledInstance, traj: Trajectory, out: Path):
    rows = []
    for t, u in zip(traj.times, traj.u):
        U = asm.reconstruct(u)
        rows += [(_f(t), i, _f(ux), _f(uy)) for i, (ux, uy) in enumerate(U)]
    (out / "trajectory_u.csv").write_text(_csv(rows, ("t", "node_id", "ux", "uy")))
    rows = [(_f(t), i, _f(v)) for t, lam in zip(traj.times, traj.lam) for i, v in enumerate(lam)]
    (out / "trajectory_lambda.csv").write_text(_csv(rows, ("t", "mult_id", "lambda")))


def write_manifest(cfg: RunConfig, out: Path, asm: AssembledInstance | None, extra: dict | None = None):
    lines = ["# run manifest", cfg.echo()]
    if asm is not None:
        rep = verify_constants(asm.primal_operator(), asm.coupling() if asm.m else None,
                               samples=cfg["verify"]["samples"], rng=cfg["run"]["seed"])
        lines += ["[constants]",
                  f"n = {asm.n}", f"m = {asm.m}",
                  f"m_A = {_f(asm.m_A)}", f"L_A = {_f(asm.L_A)}",
                  f"m_hat_A = {_f(rep.m_hat)}", f"L_hat_A = {_f(rep.L_hat)}",
                  f"alpha_hat_b = {_f(rep.alpha_hat)}", f"M_hat_b = {_f(rep.M_hat)}",
                  f"c0_hat = {_f(asm.trace_constant)}",
                  f"violations = {'; '.join(rep.violations) or 'none'}", ""]
    if extra:
        lines.append("[results]")
        lines += [f"{k} = {format_value(v)}" for k, v in extra.items()]
        lines.append("")
    (out / "manifest.txt").write_text("\n".join(lines))


def _threads() -> int:
    raw = os.environ.get("HDMIX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"HDMIX_THREADS={raw!r} is not an integer"]) from None
    if n < 1:
        raise ConfigError([f"HDMIX_THREADS={n} must be >= 1"])
    return n


def _solve(cfg: RunConfig, asm: AssembledInstance) -> Trajectory:
    s = cfg["solver"]
    return solve_evolution(to_evolution_problem(asm, build_grid(cfg)), tol=s["tol"],
                           scheme=cfg["time"]["scheme"], max_iter=s["max_iter"], inner_tol=s["inner_tol"])


def cmd_solve(cfg: RunConfig, out: Path, threads: int) -> int:
    asm = assemble(build_model(cfg))
    traj = _solve(cfg, asm)
    write_trajectory(asm, traj, out)
    iters = [s["iterations"] for s in traj.stats]
    write_manifest(cfg, out, asm, {"time_nodes": len(traj.times), "max_uzawa_iterations": max(iters)})
    print(f"solved {len(traj.times)} time nodes (n={asm.n}, m={asm.m}); "
          f"max Uzawa iterations {max(iters)}")
    return EXIT_OK


def cmd_demo_contact(cfg: RunConfig, out: Path, threads: int) -> int:
    asm = assemble(build_model(cfg))
    traj = _solve(cfg, asm)
    write_trajectory(asm, traj, out)
    g = cfg["friction"]["g"]
    rows, worst, worst_normal = [], 0.0, 0.0
    for t, u, lam in zip(traj.times, traj.u, traj.lam):
        rep = check_friction_kkt(asm.tangential(u), lam, g, asm.weights)
        normal = float(np.abs(asm.normal_on_contact(u)).max(initial=0.0))
        worst, worst_normal = max(worst, rep.max_residual), max(worst_normal, normal)
        rows.append((_f(t), _f(rep.bound_residual), _f(rep.slip_residual), len(rep.stick),
                     len(rep.slip), _f(normal)))
    (out / "friction_kkt.csv").write_text(_csv(rows, ("t", "bound_residual", "slip_residual",
                                                      "n_stick", "n_slip", "max_normal_displacement")))
    write_manifest(cfg, out, asm, {"max_kkt_residual": worst, "max_normal_displacement": worst_normal})
    for r in rows:
        print(f"t={float(r[0]):.4f}  stick={r[3]:3d}  slip={r[4]:3d}  "
              f"bound={float(r[1]):.2e}  slip-consistency={float(r[2]):.2e}")
    print(f"max friction KKT residual {worst:.3e} (tol {KKT_TOL:g}); "
          f"max |u_nu| on contact {worst_normal:.1e}")
    if worst > KKT_TOL or worst_normal != 0.0:
        print("hdmix: hdmix.contact: friction law not satisfied to tolerance", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_study(cfg: RunConfig, out: Path, threads: int) -> int:
    model = build_model(cfg)
    fam = cfg["family"]
    family = build_family(model, fam["schedule"], {k: "fixed" for k in fam["fixed"]})
    table = run_convergence_study(family, build_grid(cfg), cfg.probe_times(), tol=cfg["solver"]["tol"],
                                  reference_tol=fam["reference_tol"], max_iter=cfg["solver"]["max_iter"],
                                  workers=threads)
    table.write_csv(out / "convergence.csv")
    slopes = table.slopes()
    extra = {f"slope_e_u_t{t:g}": s[0] for t, s in slopes.items()}
    extra.update({f"slope_e_lambda_t{t:g}": s[1] for t, s in slopes.items()})
    extra.update(family.witnesses)
    write_manifest(cfg, out, assemble(model), extra)
    print(table.to_csv(), end="")
    for t, (su, sl) in slopes.items():
        print(f"t={t:g}: slope e_u {su:.3f}, slope e_lambda {sl:.3f}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, out: Path, threads: int) -> int:
    model = build_model(cfg)
    c, b, o, s = cfg["cost"], cfg["box"], cfg["optimize"], cfg["solver"]
    template = Template(model, build_grid(cfg), tol=s["tol"], max_iter=s["max_iter"])
    t = cfg.cost_time()
    target = ParameterPoint(*c["target"])
    asm, u0, lam0 = template.solve_at(target, t)
    spec = CostSpec(c["kind"], t, u0=u0, lam0=lam0, c1=c["c1"], c2=c["c2"], c3=c["c3"],
                    p_weights=np.array(c["p_weights"]))
    box = ParameterBox(ParameterPoint(*b["lo"]), ParameterPoint(*b["hi"]), b["floor"])
    res = minimize(spec, box, template, budget=o["budget"], resolution=o["resolution"], workers=threads)
    res.write_csv(out / "optimization_trace.csv")
    write_manifest(cfg, out, asm, {"best_cost": res.cost, "best_point": tuple(res.point.as_array()),
                                   "evaluations": res.evaluations, "converged": res.converged,
                                   "scan_resolution": res.scan_resolution})
    print(f"best cost {res.cost:.6e} after {res.evaluations} evaluations "
          f"(scan resolution {res.scan_resolution}, converged={res.converged})")
    print("best point: " + ", ".join(f"{k}={v:.6g}" for k, v in zip(
        ("beta", "eta", "omega", "a0", "a2", "g"), res.point.as_array())))
    incidents = [e for e in res.trace if e.incident]
    for e in incidents:
        print(f"evaluation {e.eval_id} failed: {e.incident}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, threads: int) -> int:
    v = cfg["verify"]
    results = checks.run_all(seed=cfg["run"]["seed"], samples=v["samples"], instances=v["instances"])
    asm = assemble(build_model(cfg))
    rep = verify_constants(asm.primal_operator(), asm.coupling() if asm.m else None,
                           samples=v["samples"], rng=cfg["run"]["seed"])
    results.append(checks.CheckResult("declared constants of configured model", rep.ok,
                                      "; ".join(rep.violations) or
                                      f"m_hat_A={rep.m_hat:.6g}, L_hat_A={rep.L_hat:.6g}"))
    for r in results:
        print(r.line())
    (out / "verify.csv").write_text(_csv([(r.name, int(r.passed), r.detail) for r in results],
                                         ("check", "passed", "detail")))
    write_manifest(cfg, out, asm, {"checks_passed": sum(r.passed for r in results),
                                   "checks_total": len(results)})
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


HANDLERS = {
    "solve": cmd_solve,
    "demo-contact": cmd_demo_contact,
    "study-convergence": cmd_study,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
}


def _origin(exc: BaseException) -> str:
    """Name of the package module in which ``exc`` was raised."""
    name = "hdmix"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("hdmix"):
            name = mod
    return name


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hdmix", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path of the key = value run configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="random seed, unsigned 64-bit (overrides the config)")
    args = parser.parse_args(argv)

    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError([f"--seed {args.seed} is not an unsigned 64-bit integer"])
        try:
            cfg = read_config(args.config, command=args.command)
        except OSError as exc:
            raise ConfigError([f"cannot read config: {exc}"]) from None
        if args.seed is not None:
            sections = dict(cfg.sections, run=dict(cfg.sections["run"], seed=args.seed))
            cfg = replace(cfg, sections=sections)
        out = Path(args.out) if args.out else cfg.base_dir / cfg["run"]["out"]
        out.mkdir(parents=True, exist_ok=True)
        threads = _threads()
        return HANDLERS[cfg.command](cfg, out, threads)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"hdmix: config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"hdmix: {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # ValidationError and bad runtime data (e.g. a modulation failing on the grid)
        print(f"hdmix: {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
