"""Command-line entry point: ``python -m fhn_meanfield.cli <command> --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as C, diagnostics, pde, regimes, spectral, stationary, svg
from . import particle as P
from .model import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _versions() -> str:
    import numba
    import scipy

    return (f"fhn_meanfield {__version__}; python {platform.python_version()}; numpy {np.__version__}; "
            f"scipy {scipy.__version__}; numba {numba.__version__}")


def write_manifest(out: Path, cmd: str, cfg: C.RunConfig, seed: int, wall: float, files) -> None:
    with (out / "manifest.txt").open("w") as fh:
        fh.write(f"command = {cmd}\nconfig_sha256 = {cfg.digest}\npreset = {cfg.preset}\nseed = {seed}\n")
        fh.write(f"versions = {_versions()}\nwall_seconds = {wall:.3f}\n")
        fh.write("files = " + " ".join(sorted(str(f) for f in files)) + "\n")


def _init_law(cfg: C.RunConfig) -> P.InitialLaw:
    s = cfg.init
    if s.kind == "point":
        return P.InitialLaw.point(s.mean_x, s.mean_v)
    if s.kind == "uniform":
        return P.InitialLaw("uniform", low=(s.mean_x - s.var_x, s.mean_v - s.var_v),
                            high=(s.mean_x + s.var_x, s.mean_v + s.var_v))
    return P.InitialLaw("gaussian", mean=(s.mean_x, s.mean_v), cov=((s.var_x, s.cov_xv), (s.cov_xv, s.var_v)))


# -- commands ----------------------------------------------------------------

def cmd_simulate_particles(cfg: C.RunConfig, out: Path, args) -> list:
    J = cfg.model.eps if cfg.particles.J is None else cfg.particles.J
    c = P.CouplingSpec.mean_field(J, attractive=cfg.particles.attractive)
    ens = P.init_ensemble(cfg.particles.n, _init_law(cfg), cfg.run.seed)
    rec = P.Recorder(stride=cfg.run.stride, snapshots=cfg.particles.snapshots)
    ts = P.simulate(ens, cfg.run.T, cfg.run.dt, cfg.model, c, rec)
    ts.write(out / "particles.csv")
    files = ["particles.csv"]
    for k, (t, x, v) in enumerate(rec.frames):
        d = P.empirical_density(P.ParticleEnsemble(x, v, t), cfg.grid)
        name = f"snapshot_{k:05d}.dat"
        d.save(out / name)
        files.append(name)
    svg.line_plot(out / "mean_v.svg", [(ts["t"], ts["mean_v"])], title=f"J = {J}", xlabel="t", ylabel="mean v")
    return files + ["mean_v.svg"]


def cmd_solve_pde(cfg: C.RunConfig, out: Path, args) -> list:
    f0 = _init_law(cfg).density(cfg.grid)
    tr = pde.transport_for(cfg.grid, cfg.model)
    pde.check_cfl(tr, cfg.run.dt)
    res = pde.solve(f0, cfg.run.T, cfg.run.dt, cfg.model, stride=cfg.run.stride, weight=cfg.weight, transport=tr,
                    boundary_tol=cfg.run.boundary_tol)
    res.series.write(out / "pde_series.csv")
    res.density.save(out / "density_final.dat")
    rep = diagnostics.monitor(res.records)
    (out / "monitor.txt").write_text(rep.summary() + "\n")
    svg.heatmap(out / "density_final.svg", res.density, title=f"t = {res.density.t:.4g}")
    svg.line_plot(out / "mean_v.svg", [(res.series["t"], res.series["mean_v"])], xlabel="t", ylabel="J(f)")
    return ["pde_series.csv", "density_final.dat", "monitor.txt", "density_final.svg", "mean_v.svg"]


def cmd_find_stationary(cfg: C.RunConfig, out: Path, args) -> list:
    sols = stationary.find_stationary(cfg.stationary.j_seeds, cfg.model, cfg.grid, tol=cfg.stationary.tol)
    if not sols:
        raise stationary.StationaryError("no seed converged")
    files = []
    with (out / "stationary.csv").open("w") as fh:
        fh.write("index, j, residual_l1, fixed_point_gap, iterations, seed_j\n")
        for k, r in enumerate(sols):
            name = f"stationary_{k}.dat"
            r.save(out / name)
            files += [name, name + ".meta"]
            fh.write(f"{k}, {r.j!r}, {r.residual_l1!r}, {r.fixed_point_gap!r}, {r.iterations}, {r.seed_j!r}\n")
            svg.heatmap(out / f"stationary_{k}.svg", r.G, title=f"j = {r.j:.6g}")
            files.append(f"stationary_{k}.svg")
    print(f"{len(sols)} distinct stationary solution(s): " + ", ".join(f"j={r.j:.8g}" for r in sols))
    return files + ["stationary.csv"]


def cmd_spectrum(cfg: C.RunConfig, out: Path, args) -> list:
    seeds = cfg.stationary.j_seeds
    sols = stationary.find_stationary(seeds, cfg.model, cfg.grid, tol=cfg.stationary.tol)
    if not sols:
        raise stationary.StationaryError("no stationary solution to linearize around")
    s = cfg.spectrum
    L = spectral.assemble(sols[0], cfg.model)
    rep = spectral.rightmost_eigenvalues(L, k=s.k, tol=s.tol, shift=s.shift, weight=cfg.weight)
    rep.write(out / "spectrum.csv")
    files = ["spectrum.csv", "spectrum.csv.meta"]
    print(f"mass-mode defect {rep.mass_mode_defect:.3e}, gap {rep.gap:.6g}")
    if s.decay:
        fit = spectral.predicted_vs_measured_decay(sols[0], cfg.model, s.amplitude, s.decay_T, w=cfg.weight, report=rep)
        with (out / "decay.csv").open("w") as fh:
            fh.write("t, l2m_distance\n")
            for t, d in zip(fit.t, fit.distance):
                fh.write(f"{t!r}, {d!r}\n")
        (out / "decay.txt").write_text(f"gap = {fit.gap!r}\nrate = {fit.rate!r}\nwindow = {fit.window}\n{fit.message}\n")
        svg.line_plot(out / "decay.svg", [(fit.t, fit.distance)], logy=True, xlabel="t", ylabel="||f - G||")
        files += ["decay.csv", "decay.txt", "decay.svg"]
    return files


def cmd_chaos_rate(cfg: C.RunConfig, out: Path, args) -> list:
    c = cfg.chaos
    law = _init_law(cfg)
    ref = pde.solve(law.density(cfg.grid), c.T, min(c.dt, pde.max_stable_dt(pde.transport_for(cfg.grid, cfg.model))),
                    cfg.model, stride=1, weight=cfg.weight, boundary_tol=cfg.run.boundary_tol)
    jt = P.TabulatedJ.from_series(ref.series)
    table = P.chaos_experiment(c.n_list, c.T, c.dt, c.trials, cfg.model, jt, seed=cfg.run.seed, law=law,
                               workers=args.threads)
    table.write(out / "chaos.csv")
    (out / "chaos_slope.txt").write_text(f"slope = {table.slope!r}\n")
    svg.line_plot(out / "chaos.svg", [(table.column("N"), table.column("mse"))], logx=True, logy=True, dots=True,
                  xlabel="N", ylabel="alpha(T)", title=f"slope {table.slope:.3f}")
    print(f"log-log slope {table.slope:.4f}")
    return ["chaos.csv", "chaos_slope.txt", "chaos.svg"]


def cmd_regime_scan(cfg: C.RunConfig, out: Path, args) -> list:
    g = cfg.regime
    run = regimes.RegimeRun(n=g.n, T=g.T, dt=g.dt, attractive=g.attractive)
    th = regimes.RegimeThresholds(g.ratio, g.separation, g.burn_in)
    seeds = g.seeds if args.seed is None else (args.seed,)
    scan = regimes.regime_scan(cfg.model, g.J_list, seeds, run, th, workers=args.threads)
    scan.write(out / "regimes.csv")
    traces = []
    for J in g.J_list:
        ta, a, b = scan.traces[(J, seeds[0])]
        traces.append((f"J = {J}: {scan.labels(J)[0]}", [(ta, a), (ta, b)]))
        print(f"J = {J}: " + ", ".join(scan.labels(J)))
    svg.panel(out / "regimes.svg", traces)
    return ["regimes.csv", "regimes.svg"]


COMMANDS = {
    "simulate-particles": cmd_simulate_particles,
    "solve-pde": cmd_solve_pde,
    "find-stationary": cmd_find_stationary,
    "spectrum": cmd_spectrum,
    "chaos-rate": cmd_chaos_rate,
    "regime-scan": cmd_regime_scan,
}

NUMERIC_ERRORS = (P.ParticleAbort, pde.SchemeError, pde.BoundaryMassError, stationary.StationaryError,
                  FloatingPointError, np.linalg.LinAlgError, RuntimeError)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fhn-meanfield", description="Stochastic FitzHugh-Nagumo network experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", help="key = value config file (sections [model], [grid], [run], ...)")
        sp_.add_argument("--seed", type=int, default=None)
        sp_.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp_.add_argument("--out", default="out")
        sp_.add_argument("--preset", default=None, help=f"one of {sorted(C.PRESETS)}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.time()
    try:
        if args.config:
            cfg = C.load_config(args.config, args.preset, args.seed)
        else:
            cfg = C.parse_config("", args.preset, args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out, args)
    except (ConfigError, pde.CFLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_manifest(out, args.command, cfg, cfg.run.seed if args.seed is None else args.seed,
                   time.time() - t0, files)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
