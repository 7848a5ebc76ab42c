###############################################################################
#                     BATCH FRONT END AND CONFIG PARSING                      #
###############################################################################
#
# Subcommands:
#   validate   -- admissibility report for the configured coefficient sextet
#   run        -- march the scheme, export trajectory CSV and state files
#   converge   -- tau-refinement study, CSV table
#   depcheck   -- continuous-dependence certificate for a config pair
#   kwc-build  -- build linearized/adjoint coefficients from (eta, theta)
#   constants  -- print every explicit constant for a config
#
# Exit codes: 0 ok, 1 validation failure, 2 guard refusal, 3 solver failure.

import argparse
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:           # Python 3.10
    import tomli as tomllib

from . import analysis, catalog, fem, fields, kwc, stepper


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_GUARD = 2
EXIT_SOLVER = 3


class ConfigError(ValueError):
    pass


def load_config(path):
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    cfg["_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _cfg_path(cfg, name):
    return os.path.join(cfg["_dir"], name)


def build_domain(cfg):
    dom = cfg.get("domain", {})
    kind = dom.get("kind", "interval")
    res = int(dom.get("resolution", 32))
    if kind == "interval":
        domain = ("interval", dom.get("x0", 0.0), dom.get("x1", 1.0))
    elif kind == "rectangle":
        domain = ("rectangle", dom.get("x0", 0.0), dom.get("x1", 1.0),
                  dom.get("y0", 0.0), dom.get("y1", 1.0))
    else:
        raise ConfigError("unknown domain kind %r" % kind)
    return fem.build_mesh(domain, res)


def _sample_expr(name, mesh, T, n_times):
    kind, fn = catalog.expression(name)
    return fields.SpaceTimeField.from_analytic(kind, fn, mesh.nodes, T,
                                               n_times)


def build_sextet(cfg, mesh):
    co = cfg.get("coefficients", {})
    source = co.get("source", "constant")
    T = float(cfg.get("T", 1.0))
    if source == "constant":
        d = mesh.dim
        omega = co.get("omega", [0.0] * d)
        A = co.get("A", np.eye(d).tolist())
        sextet = catalog.constant_sextet(
            mesh, a=co.get("a", 1.0), b=co.get("b", 0.0),
            mu=co.get("mu", 0.0), lam=co.get("lambda", 0.0),
            omega=np.asarray(omega, dtype=float),
            A=np.asarray(A, dtype=float), T=T)
        return sextet, None
    if source == "files":
        def rd(key):
            return fields.read_field(_cfg_path(cfg, co[key]))
        sextet = fields.CoefficientSextet(
            mesh, a=rd("a_file"), b=rd("b_file"), mu=rd("mu_file"),
            lam=rd("lambda_file"), omega=rd("omega_file"), A=rd("A_file"))
        return sextet, None
    if source in ("kwc-linearized", "kwc-adjoint"):
        sextet, initial = build_kwc(cfg, mesh,
                                    adjoint=source.endswith("adjoint"))
        return sextet, initial
    raise ConfigError("unknown coefficient source %r" % source)


def build_kwc(cfg, mesh, adjoint):
    kc = cfg.get("kwc", {})
    T = float(cfg.get("T", 1.0))
    n_times = int(kc.get("n_times", 8))
    if "eta_file" in kc:
        eta = fields.read_field(_cfg_path(cfg, kc["eta_file"]))
        theta = fields.read_field(_cfg_path(cfg, kc["theta_file"]))
    else:
        eta = _sample_expr(kc.get("eta_expr", "bump"), mesh, T, n_times)
        theta = _sample_expr(kc.get("theta_expr", "sin_x"), mesh, T, n_times)
    pair = kwc.PhaseFieldPair(eta, theta)
    pair.check_dirichlet(mesh)
    funcs = kwc.ModelFunctions(eps=float(kc.get("eps", 0.05)))
    if "alpha0_expr" in kc:
        funcs.alpha0 = _sample_expr(kc["alpha0_expr"], mesh, T, n_times)
        if "alpha0_dt_expr" in kc:
            funcs.alpha0_dt = _sample_expr(kc["alpha0_dt_expr"], mesh, T,
                                           n_times)
    builder = kwc.build_adjoint if adjoint else kwc.build_linearized
    return builder(pair, funcs, mesh)


def build_forcing_fields(cfg, mesh, nu):
    fo = cfg.get("forcing", {})
    source = fo.get("source", "zero")
    T = float(cfg.get("T", 1.0))
    n_times = int(fo.get("n_times", 8))
    mk = fields.SpaceTimeField
    if source == "zero":
        return (mk.constant(0.0, mesh.n_nodes, T),
                mk.constant(0.0, mesh.n_nodes, T))
    if source == "constant":
        return (mk.constant(float(fo.get("h", 0.0)), mesh.n_nodes, T),
                mk.constant(float(fo.get("k", 0.0)), mesh.n_nodes, T))
    if source == "expr":
        return (_sample_expr(fo.get("h_expr", "zero"), mesh, T, n_times),
                _sample_expr(fo.get("k_expr", "zero"), mesh, T, n_times))
    if source == "files":
        return (fields.read_field(_cfg_path(cfg, fo["h_file"])),
                fields.read_field(_cfg_path(cfg, fo["k_file"])))
    if source == "mms":
        entry = catalog.MMS_ENTRIES[fo.get("mms_entry", "sin_1d")]
        co = cfg.get("coefficients", {})
        d = mesh.dim
        return catalog.mms_forcing(
            entry, mesh, nu, T, max(n_times, 32),
            a=co.get("a", 1.0), b=co.get("b", 0.0), mu=co.get("mu", 0.0),
            lam=co.get("lambda", 0.0),
            omega=np.asarray(co.get("omega", [0.0] * d), dtype=float),
            A=np.asarray(co.get("A", np.eye(d).tolist()), dtype=float))
    raise ConfigError("unknown forcing source %r" % source)


def build_initial(cfg, mesh):
    ini = cfg.get("initial", {})
    source = ini.get("source", "zero")
    if source == "zero":
        return np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes)
    if source == "expr":
        _, pfn = catalog.expression(ini.get("p0_expr", "zero"))
        _, zfn = catalog.expression(ini.get("z0_expr", "zero"))
        p0 = np.array([pfn(0.0, x) for x in mesh.nodes])
        z0 = np.array([zfn(0.0, x) for x in mesh.nodes])
        return p0, z0
    if source == "mms":
        entry = catalog.MMS_ENTRIES[ini.get("mms_entry",
                                            cfg.get("forcing", {})
                                            .get("mms_entry", "sin_1d"))]
        return catalog.mms_initial(entry, mesh)
    if source == "files":
        p0 = fields.read_field(_cfg_path(cfg, ini["p0_file"])).values[0]
        z0 = fields.read_field(_cfg_path(cfg, ini["z0_file"])).values[0]
        return p0, z0
    raise ConfigError("unknown initial source %r" % source)


def _write_summary(outdir, name, status, started):
    rec = {"name": name, "status": int(status),
           "wall_time_s": time.monotonic() - started}
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(rec, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _prepare(args):
    cfg = load_config(args.config)
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    return cfg, outdir


def _solve_from_config(cfg, args, mesh=None):
    """Common run pipeline: mesh, sextet, slices, trajectory."""
    if mesh is None:
        mesh = build_domain(cfg)
    nu = float(cfg.get("nu", 1.0))
    T = float(cfg.get("T", 1.0))
    tau = float(cfg["tau"])
    tol = float(cfg.get("tol", 1e-10))
    sextet, kwc_initial = build_sextet(cfg, mesh)
    report = fields.validate_sextet(sextet)
    if not report.ok:
        raise ConfigError("coefficient data failed validation:\n"
                          + report.to_text())
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    spaces = (V, V0)
    tau_star = fields.tau_star(sextet, nu)
    coeff_slices = stepper.slice_sextet(sextet, tau)
    h_field, k_field = build_forcing_fields(cfg, mesh, nu)
    forcing = stepper.slice_forcing(h_field, k_field, tau)
    if kwc_initial is not None:
        p0n, z0n = kwc_initial
    else:
        p0n, z0n = build_initial(cfg, mesh)
    initial = stepper.project_initial(spaces, p0n, z0n)
    traj = stepper.run_scheme(spaces, coeff_slices, forcing, initial, tau,
                              nu, T, tol=tol, tau_star=tau_star,
                              override=args.override_tau_guard)
    return mesh, spaces, sextet, traj


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_validate(args):
    cfg, outdir = _prepare(args)
    mesh = build_domain(cfg)
    sextet, _ = build_sextet(cfg, mesh)
    report = fields.validate_sextet(sextet)
    with open(os.path.join(outdir, "validation.txt"), "w") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_run(args):
    cfg, outdir = _prepare(args)
    mesh, spaces, sextet, traj = _solve_from_config(cfg, args)
    stepper.export_trajectory_csv(traj, os.path.join(outdir,
                                                     "trajectory.csv"))
    times = traj.times
    fields.write_field(
        fields.SpaceTimeField("scalar",
                              np.array([spaces[0].prolong(p)
                                        for p in traj.p]), times),
        os.path.join(outdir, "p_states.field"), binary=True)
    fields.write_field(
        fields.SpaceTimeField("scalar",
                              np.array([spaces[1].prolong(z)
                                        for z in traj.z]), times),
        os.path.join(outdir, "z_states.field"), binary=True)
    print("ran %d steps to T = %g; wrote %s" % (traj.n_steps, traj.T, outdir))
    return EXIT_OK


def cmd_converge(args):
    cfg, outdir = _prepare(args)
    taus = [float(t) for t in cfg["taus"]]
    mesh = build_domain(cfg)
    nu = float(cfg.get("nu", 1.0))
    T = float(cfg.get("T", 1.0))
    tol = float(cfg.get("tol", 1e-10))
    sextet, kwc_initial = build_sextet(cfg, mesh)
    V = fem.FeSpace(mesh, "neumann")
    V0 = fem.FeSpace(mesh, "dirichlet0")
    spaces = (V, V0)
    tau_star = fields.tau_star(sextet, nu)
    h_field, k_field = build_forcing_fields(cfg, mesh, nu)
    if kwc_initial is not None:
        p0n, z0n = kwc_initial
    else:
        p0n, z0n = build_initial(cfg, mesh)
    initial = stepper.project_initial(spaces, p0n, z0n)

    def make_run(tau):
        return stepper.run_scheme(
            spaces, stepper.slice_sextet(sextet, tau),
            stepper.slice_forcing(h_field, k_field, tau), initial, tau, nu,
            T, tol=tol, tau_star=tau_star,
            override=args.override_tau_guard)

    exact = None
    fo = cfg.get("forcing", {})
    if fo.get("source") == "mms":
        entry = catalog.MMS_ENTRIES[fo.get("mms_entry", "sin_1d")]
        exact = catalog.mms_exact_dofs(entry, spaces)
    table = analysis.tau_refinement_study(make_run, taus, exact=exact)
    table.to_csv(os.path.join(outdir, "convergence.csv"))
    print(table.to_csv(), end="")
    return EXIT_OK


def cmd_depcheck(args):
    cfg1, outdir = _prepare(args)
    cfg2 = load_config(args.config2) if args.config2 else cfg1
    mesh = build_domain(cfg1)
    nu = float(cfg1.get("nu", 1.0))
    _, spaces, sextet1, traj1 = _solve_from_config(cfg1, args, mesh=mesh)
    _, _, sextet2, traj2 = _solve_from_config(cfg2, args, mesh=mesh)
    consts = fields.compute_scheme_constants(sextet1, nu, traj1.T,
                                             spaces[0], spaces[1],
                                             seed=args.seed)
    run1 = analysis.RunData(traj1, sextet1, nu)
    run2 = analysis.RunData(traj2, sextet2, nu)
    report = analysis.check_continuous_dependence(run1, run2, consts)
    with open(os.path.join(outdir, "depcheck.txt"), "w") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_kwc_build(args):
    cfg, outdir = _prepare(args)
    mesh = build_domain(cfg)
    adjoint = cfg.get("kwc", {}).get("system", "linearized") == "adjoint"
    sextet, _ = build_kwc(cfg, mesh, adjoint=adjoint)
    report = fields.validate_sextet(sextet)
    for name, f in sextet.fields().items():
        fields.write_field(f, os.path.join(outdir, "%s.field" % name))
    with open(os.path.join(outdir, "validation.txt"), "w") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_constants(args):
    cfg, outdir = _prepare(args)
    nu = float(cfg.get("nu", 1.0))
    T = float(cfg.get("T", 1.0))
    pin = cfg.get("constants", {})
    mesh = build_domain(cfg)
    sextet, _ = build_sextet(cfg, mesh)
    norms = dict(sextet.norms())
    for key in ("a_w1inf", "a_inf", "grad_a_inf", "b_inf", "mu_linfh",
                "lam_inf", "omega_inf", "A_inf", "delta_star"):
        if key in pin:
            norms[key] = float(pin[key])
    if "cv4" in pin or "cv04" in pin or "cv0h" in pin:
        cV4 = float(pin.get("cv4", 1.0))
        cV04 = float(pin.get("cv04", 1.0))
        cV0H = float(pin.get("cv0h", 1.0))
        cHVstar = float(pin.get("chvstar", cV0H))
    else:
        V = fem.FeSpace(mesh, "neumann")
        V0 = fem.FeSpace(mesh, "dirichlet0")
        cV4 = fem.embedding_constant(V, "L4", seed=args.seed)
        cV04 = fem.embedding_constant(V0, "L4", seed=args.seed)
        cV0H = fem.embedding_constant(V0, "H", seed=args.seed)
        cHVstar = fem.embedding_constant(V, "H", seed=args.seed)
    d = norms["delta_star"]
    tau_star = fields.tau_star_formula(nu, d, norms["b_inf"],
                                       norms["lam_inf"], norms["omega_inf"])
    c_star = fields.c_star_formula(nu, d, cV4, cV04, norms["a_w1inf"],
                                   norms["b_inf"], norms["lam_inf"],
                                   norms["omega_inf"])
    c_tilde = fields.c_tilde_star_formula(nu, d, cV4, cV04, norms["b_inf"],
                                          norms["lam_inf"],
                                          norms["omega_inf"])
    m0 = fields.m0_formula(nu, cV4, cV0H, norms["a_inf"],
                           norms["grad_a_inf"], norms["b_inf"],
                           norms["mu_linfh"], norms["lam_inf"],
                           norms["omega_inf"], norms["A_inf"])
    m1 = fields.m1_formula(nu, cV4, cV0H, d, norms["a_inf"],
                           norms["grad_a_inf"], norms["b_inf"],
                           norms["mu_linfh"], norms["lam_inf"],
                           norms["omega_inf"], norms["A_inf"])
    c1 = fields.c1_star_formula(c_star, norms["a_inf"], nu, d, T)
    delta0 = 0.5 * min(tau_star, 1.0 / (6.0 * c_star))
    lines = []
    for name, val in (("tau_star", tau_star), ("delta0", delta0),
                      ("c_star", c_star), ("c_tilde_star", c_tilde),
                      ("c1_star", c1), ("m0", m0), ("m1", m1),
                      ("cV4", cV4), ("cV04", cV04), ("cV0H", cV0H),
                      ("cHVstar", cHVstar)):
        lines.append("%s %.17g" % (name, val))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(outdir, "constants.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="parapair",
        description="Solver and estimate-certification harness for a "
                    "coupled linear parabolic system")
    parser.add_argument("command",
                        choices=["validate", "run", "converge", "depcheck",
                                 "kwc-build", "constants"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--config2", default=None,
                        help="second config for depcheck pairs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--override-tau-guard", action="store_true")
    parser.add_argument("--out", default=".")
    args = parser.parse_args(argv)

    handlers = {"validate": cmd_validate, "run": cmd_run,
                "converge": cmd_converge, "depcheck": cmd_depcheck,
                "kwc-build": cmd_kwc_build, "constants": cmd_constants}
    started = time.monotonic()
    try:
        status = handlers[args.command](args)
    except stepper.TauGuardError as exc:
        print("guard refusal: %s" % exc, file=sys.stderr)
        status = EXIT_GUARD
    except (stepper.IndefiniteStepError,
            stepper.SolverConvergenceError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        status = EXIT_SOLVER
    except (ConfigError, fields.FieldShapeError, fields.AdmissibilityError,
            kwc.BuilderError, KeyError, ValueError, OSError,
            tomllib.TOMLDecodeError) as exc:
        print("validation failure: %s" % exc, file=sys.stderr)
        status = EXIT_VALIDATION
    try:
        os.makedirs(args.out, exist_ok=True)
        _write_summary(args.out, args.command, status, started)
    except OSError:
        pass
    return status


if __name__ == "__main__":
    sys.exit(main())
