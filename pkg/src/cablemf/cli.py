"""Command-line entry point: ``cablemf <subcommand> [options]``."""

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy

from . import __version__, diagnostics, hitting, kernel, model, particle, solver
from .config import ConfigError, RunConfig, build_function

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 2, 3, 4
MANIFEST = "manifest.json"

NUMERIC_FAULTS = (particle.NumericalBlowUp, kernel.KernelError, hitting.HittingError,
                  model.ModelError, FloatingPointError)


class ValidationFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# output directory handling


class OutputDir:
    """Directory holding one run's files and exactly one manifest."""

    def __init__(self, path, force):
        self.path = Path(path)
        self.files = []
        if self.path.exists() and any(self.path.iterdir()):
            if not force:
                raise ConfigError(f"output directory {self.path} is not empty "
                                  "(use --force to overwrite)", "output")
            self._clear()
        self.path.mkdir(parents=True, exist_ok=True)

    def _clear(self):
        man = self.path / MANIFEST
        if not man.exists():
            raise ConfigError(f"refusing to clear {self.path}: it has no run manifest", "output")
        listed = json.loads(man.read_text()).get("files", [])
        for name in listed:
            f = self.path / name
            if f.is_file():
                f.unlink()
        man.unlink()

    def file(self, name):
        self.files.append(name)
        return self.path / name

    def write_text(self, name, lines):
        self.file(name).write_text("\n".join(lines) + "\n")

    def manifest(self, cfg, command, extra=None):
        doc = {
            "tool": "cablemf",
            "version": __version__,
            "command": command,
            "seed": cfg.seed,
            "config_hash": cfg.hash(),
            "versions": {"python": sys.version.split()[0], "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "files": sorted(self.files),
            "config": cfg.data,
        }
        if extra:
            doc.update(extra)
        (self.path / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(cfg, out, args):
    cs = cfg.coefficients()
    law = cfg.initial_law()
    lines = ["# coefficient assumptions"]
    rep = model.validate_coefficients(cs, cfg.probe_grid())
    lines += rep.lines()
    lines.append("# initial law")
    lrep = model.check_initial_law(law, seed=cfg.seed)
    lines += lrep.lines()
    ok = rep.passed and lrep.passed
    block = cfg["model"]["kernel"]
    if block["kind"] == "cable":
        lines.append("# synapse density")
        rho = kernel.synapse_density(block["rho"])
        for name, (passed, value) in kernel.check_synapse_density(rho).items():
            lines.append(f"{'PASS' if passed else 'FAIL'} {name} (value {value:.6g})")
            ok = ok and passed
        if getattr(rho, "caveat", ""):
            lines.append(f"NOTE {rho.caveat}")
    if cfg["weights"]["scheme"] != "explicit":
        lines.append("# weight condition")
        N = cfg["weights"]["N"]
        prof = model.j_condition_profile(cfg.weight_family(), [n for n in (10, 100, N) if n >= 2])
        lines += [f"N={n} max_i sum_j J^2/S^2 = {v!r}" for n, v in prof]
    lines.append("OVERALL " + ("PASS" if ok else "FAIL"))
    out.write_text("validation.txt", lines)
    print("\n".join(lines))
    if not ok:
        raise ValidationFailed("model validation failed")
    return {}


def cmd_kernel(cfg, out, args):
    cs = cfg.coefficients()
    kt = cfg.kernel_table(cs)
    kt.to_csv(out.file("kernel.csv"))
    out.write_text("kernel_summary.txt", [f"name: {kt.name}", f"dt: {kt.dt!r}",
                                          f"n_steps: {kt.n_steps}", f"sup_norm: {kt.sup_norm!r}"])
    print(f"kernel {kt.name}: sup |G| = {kt.sup_norm:.6g} on [0, {kt.T:g}]")
    return {}


def cmd_simulate(cfg, out, args):
    cs = cfg.coefficients()
    grid = cfg.grid()
    kt = cfg.kernel_table(cs, grid)
    w = cfg.weights()
    traj, spikes = particle.simulate_network(cs, kt, w, cfg.initial_law(), grid, cfg.seed,
                                             crossing=cfg["simulation"]["crossing"],
                                             workers=args.workers)
    traj.to_csv(out.file("trajectories.csv"))
    spikes.to_csv(out.file("spikes.csv"))
    rate = diagnostics.empirical_rate(spikes, w, 0, grid)
    lines = [f"N: {w.N}", f"total_spikes: {spikes.total()}",
             f"mean_spikes_per_neuron: {spikes.total() / w.N!r}",
             f"empirical_rate_T: {float(rate[-1])!r}"]
    out.write_text("summary.txt", lines)
    print("\n".join(lines))
    return {}


def _solve(cfg, cs, grid, kt, workers):
    s = cfg["solver"]
    law = cfg.initial_law()
    env = solver.stability_envelope(cs, law.R, grid.T, c=s["burkholder_c"], kt=kt)
    h0 = solver.envelope_start(env, grid) if s["warm_start"] == "envelope" else None
    extra = {}
    if s["evaluator"] == "renewal":
        extra = {"n_mix": s["n_mix"], "substeps": s["substeps"]}
    h, diag = solver.picard_solve(cs, law, grid, s["tol"], s["max_iter"], s["evaluator"],
                                  s["n_mc"], cfg.seed, h0=h0, kt=kt,
                                  crossing=cfg["simulation"]["crossing"],
                                  bandwidth=s["bandwidth"], workers=workers, **extra)
    return h, diag, env


def cmd_solve(cfg, out, args):
    cs = cfg.coefficients()
    grid = cfg.grid()
    kt = cfg.kernel_table(cs, grid)
    h, diag, env = _solve(cfg, cs, grid, kt, args.workers)
    h.to_csv(out.file("rate.csv"))
    env.to_csv(out.file("envelope.csv"), grid.t)
    g = env(grid.t)
    below = bool(np.all(h.values <= g))
    lines = diag.lines() + [f"noise_floor: {h.noise_floor!r}",
                            f"envelope_T0: {env.T0!r}", f"envelope_c: {env.c!r}",
                            f"h_below_envelope: {below}"]
    out.write_text("diagnostics.txt", lines)
    print("\n".join(lines))
    if not diag.converged and args.strict:
        return {"status": diag.status, "exit": EXIT_NOT_CONVERGED}
    return {"status": diag.status}


def cmd_density(cfg, out, args):
    cs = cfg.coefficients()
    d = cfg["density"]
    alpha = build_function(d["alpha"], "density.alpha")
    T = max(max(d["t"]), max(d["check_t"]))
    ts = np.asarray(d["t"], dtype=float)
    rows = [["x", "t", "estimate", "std_error", "ess"]]
    report = ["# bridge-integral vs Euler crossing CDF", "x t bridge se_bridge euler se_euler z pass"]
    for k, x in enumerate(d["x"]):
        fd = hitting.ForcedDiffusion(cs.b, cs.sigma, alpha, float(x), T)
        ests = hitting.hitting_density_bridge(fd, ts, d["n_mc"], d["n_times"],
                                              seed=cfg.seed + k)
        for t, e in zip(ts, ests):
            rows.append([repr(float(x)), repr(float(t)), repr(e.value), repr(e.std_error), repr(e.ess)])
        mc = hitting.hitting_cdf_mc(fd, d["check_t"], d["n_mc"], seed=cfg.seed + 1000 + k, dt=d["dt"])
        for j, t in enumerate(d["check_t"]):
            b = hitting.bridge_cdf(fd, t, d["n_mc"], d["n_times"], seed=cfg.seed + 2000 + k,
                                   n_nodes=d["n_nodes"])
            # a crossing probability below 1 / n_mc is unresolved by the Euler run
            e, se_e = float(mc.cdf[j]), max(float(mc.std_error[j]), 1.0 / d["n_mc"])
            se = float(np.hypot(b.std_error, se_e))
            z = (b.value - e) / se
            report.append(f"{x:g} {t:g} {b.value!r} {b.std_error!r} {e!r} {se_e!r} "
                          f"{z:.3f} {abs(z) <= 3}")
    with open(out.file("density.csv"), "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    out.write_text("crossval.txt", report)
    print("\n".join(report))
    return {}


def cmd_study(cfg, out, args):
    cs = cfg.coefficients()
    grid = cfg.grid()
    kt = cfg.kernel_table(cs, grid)
    h, diag, env = _solve(cfg, cs, grid, kt, args.workers)
    dg = cfg["diagnostics"]
    table = diagnostics.convergence_study(
        cs, kt, cfg.initial_law(), cfg.weight_family(), dg["N_list"], grid, dg["n_reps"],
        cfg.seed, h, t_fracs=dg["t_fracs"], crossing=cfg["simulation"]["crossing"],
        n_limit=dg["n_limit"], chaos_functional=dg["functional"], workers=args.workers)
    h.to_csv(out.file("rate.csv"))
    table.to_csv(out.file("convergence.csv"))
    table.to_long_csv(out.file("convergence_long.csv"))
    lines = [f"solver: {diag.status} after {diag.iterations} iterations"]
    for r in table.rows:
        w1 = " ".join(f"W1(t={t:g})={r.w1[t]:.5f}+-{r.w1_se[t]:.5f}" for t in table.t_nodes)
        lines.append(f"N={r.N} J={r.j_condition:.6g} sup_dev={r.sup_dev:.5f}+-{r.sup_dev_se:.5f} {w1}")
        for i, (v, se) in r.other.items():
            lines.append(f"N={r.N} neuron {i}: sup_dev={v:.5f}+-{se:.5f}")
    for N, ests in table.chaos.items():
        lines.append(f"N={N} cov: " + " ".join(f"t={e.t:g}:{e.cov:.3e}+-{e.std_error:.1e}" for e in ests))
    out.write_text("study.txt", lines)
    print("\n".join(lines))
    return {"solver_status": diag.status}


COMMANDS = {
    "validate": cmd_validate,
    "kernel": cmd_kernel,
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "density": cmd_density,
    "study": cmd_study,
}


def build_parser():
    p = argparse.ArgumentParser(prog="cablemf",
                                description="Mean-field integrate-and-fire networks with "
                                            "cable-equation spike transmission.")
    p.add_argument("--version", action="version", version=f"cablemf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default="benchmark",
                       help="YAML config, a previous run manifest, or 'benchmark' (default)")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--force", action="store_true", help="overwrite a previous run")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field (repeatable)")
        s.add_argument("--strict", action="store_true",
                       help="exit with status 4 when the solver does not converge")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides, args.seed)
        target = args.out or cfg["output"] or os.path.join("runs", args.command)
        out = OutputDir(target, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            extra = COMMANDS[args.command](cfg, out, args) or {}
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailed as exc:
        out.manifest(cfg, args.command, {"status": "validation failed"})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_FAULTS as exc:
        out.manifest(cfg, args.command, {"status": f"fault: {exc}"})
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    code = extra.pop("exit", EXIT_OK)
    out.manifest(cfg, args.command, extra)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
