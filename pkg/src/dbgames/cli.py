"""Command-line entry point; subcommands mirror the library modules."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import coalescent as co
from . import dynamics, graphs
from . import io as dbio
from . import oracle as oracle_mod
from . import verify as verify_mod
from .analysis import decorrelation_probe, fluctuation_suite, replicator_deviation
from .game import GameSpec


def _load_kernel(path: str) -> graphs.Kernel:
    p = Path(path)
    if not p.exists():
        raise click.ClickException(f"graph file not found: {p}")
    return graphs.kernel_from_json(p.read_text())


def _load_game(path: str) -> GameSpec:
    p = Path(path)
    if not p.exists():
        raise click.ClickException(f"game file not found: {p}")
    return dbio.game_from_json(p.read_text())


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, indent=2, default=float))


@click.group()
def main():
    """Death-birth evolutionary games on finite weighted graphs."""


# ------------------------------------------------------------------ graph
@main.group()
def graph():
    """Generate and analyze spatial kernels."""


@graph.command("gen")
@click.option("--family", required=True,
              type=click.Choice(["complete", "cycle", "torus2d", "random_regular"]))
@click.option("--n", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--rows", type=int, default=None)
@click.option("--cols", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--output", required=True, type=click.Path())
def graph_gen(family, n, k, rows, cols, seed, output):
    kernel = graphs.generate(family, n=n, k=k, seed=seed, rows=rows, cols=cols)
    Path(output).write_text(kernel.to_json())
    click.echo(f"wrote {output} (n={kernel.n})")


@graph.command("analyze")
@click.argument("graph_file", type=click.Path())
@click.option("--tmix/--no-tmix", default=True, help="include the mixing time")
def graph_analyze(graph_file, tmix):
    kernel = _load_kernel(graph_file)
    stats = graphs.two_step_return_stats(kernel)
    doc = {
        "n": kernel.n,
        "nu1": kernel.nu1,
        "spectral_gap": graphs.spectral_gap(kernel),
        "tmix": graphs.mixing_time(kernel) if tmix else None,
        "n_pi_min": kernel.n * float(kernel.pi.min()),
        "n_pi_max": kernel.n * float(kernel.pi.max()),
        "two_step_return": {
            "dominant_value": stats["dominant_value"],
            "dominant_share": stats["dominant_share"],
            "exceptional_mass": stats["exceptional_mass"],
        },
    }
    _echo_json(doc)


# ------------------------------------------------------------------ game
@main.group()
def game():
    """Payoff specifications and their exact identities."""


@game.command("check")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--game", "game_file", required=True, type=click.Path())
@click.option("--trials", type=int, default=50)
@click.option("--seed", type=int, default=0)
def game_check(graph_file, game_file, trials, seed):
    """Run the drift-functional identity suite and print residuals."""
    kernel = _load_kernel(graph_file)
    spec = _load_game(game_file)
    raw = json.loads(Path(game_file).read_text())
    declared = raw.get("prisoner")
    declared_bc = (float(declared["b"]), float(declared["c"])) if declared else None
    res = verify_mod.drift_identity_suite(kernel, spec, trials, seed,
                                          declared_prisoner=declared_bc)
    res["passed"] = all(v <= 1e-6 for v in res.values())
    _echo_json(res)
    if not res["passed"]:
        sys.exit(1)


# ------------------------------------------------------------------ sim
@main.group()
def sim():
    """Event-driven simulation of the game."""


@sim.command("run")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--game", "game_file", required=True, type=click.Path())
@click.option("--init", default="bernoulli:0.5",
              help="uniform | bernoulli:p | file:<json array>")
@click.option("--t", "--T", "horizon", type=float, required=True)
@click.option("--replicas", type=int, default=1)
@click.option("--seed", type=int, required=True)
@click.option("--record-dt", type=float, default=None)
@click.option("--components/--no-components", default=False)
@click.option("--events/--no-events", default=False,
              help="write per-replica binary event logs")
@click.option("--threads", type=int, default=1)
@click.option("-o", "--outdir", required=True, type=click.Path())
def sim_run(graph_file, game_file, init, horizon, replicas, seed, record_dt,
            components, events, threads, outdir):
    kernel = _load_kernel(graph_file)
    spec = _load_game(game_file)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if init == "uniform":
        init_spec = ("uniform",)
    elif init.startswith("bernoulli:"):
        init_spec = ("bernoulli", float(init.split(":", 1)[1]))
    elif init.startswith("file:"):
        xi = np.asarray(json.loads(Path(init[5:]).read_text()), dtype=np.int8)
        init_spec = ("fixed", xi)
    else:
        raise click.ClickException(f"unknown init {init!r}")

    neutral = spec.w == 0.0 and spec.mutation_total == 0.0
    grid = dynamics.default_grid(horizon, record_dt)
    trajs = []
    for r in range(replicas):
        rng = dynamics.replica_rng(seed, r, 1)
        if init_spec[0] == "fixed":
            xi0 = dynamics.initial_configuration("fixed", kernel, spec.s, rng, xi=init_spec[1])
        elif init_spec[0] == "bernoulli":
            xi0 = dynamics.initial_configuration("bernoulli", kernel, spec.s, rng,
                                                 param=init_spec[1])
        else:
            xi0 = dynamics.initial_configuration("uniform", kernel, spec.s, rng)
        need_events = events or (components and not neutral)
        traj, log = dynamics.simulate(kernel, spec, xi0, horizon, grid=grid,
                                      seed=dynamics.stream_seed(seed, r, 0),
                                      record_events=need_events,
                                      stop_on_fixation=spec.mutation_total == 0.0)
        if components and not neutral:
            traj = dynamics.decompose(kernel, spec, log, xi0, grid)
        if events:
            log.save(outdir / f"events_{r:04d}.bin")
        trajs.append(traj)
    dbio.write_trajectories_csv(outdir / "trajectory.csv", trajs)
    written = ["trajectory.csv"]
    if components:
        dbio.write_components_csv(outdir / "components.csv", trajs)
        written.append("components.csv")
    click.echo(f"wrote {', '.join(written)} in {outdir} ({replicas} replicas)")


# ------------------------------------------------------------------ coalesce
@main.group()
def coalesce():
    """Meeting-time laws and tail constants."""


def _parse_pair(pair: str) -> co.PairLaw:
    if pair == "UU":
        return co.PairLaw("UU")
    if pair == "VV":
        return co.PairLaw("VV")
    if pair.startswith("U0Ul:"):
        return co.PairLaw("U0Ul", ell=int(pair.split(":", 1)[1]))
    if pair.startswith("fixed:"):
        x, y = pair.split(":", 1)[1].split(",")
        return co.PairLaw("fixed", pair=(int(x), int(y)))
    raise click.ClickException(f"unknown pair law {pair!r}")


@coalesce.command("exact")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--pair", default="UU", help="UU | VV | U0Ul:l | fixed:x,y")
@click.option("--tgrid", default="0.5,1,2", help="comma-separated times")
@click.option("-o", "--output", required=True, type=click.Path())
def coalesce_exact(graph_file, pair, tgrid, output):
    kernel = _load_kernel(graph_file)
    law = _parse_pair(pair)
    times = np.array([float(v) for v in tgrid.split(",")])
    ml = co.exact_meeting_law(kernel, law, times, with_gamma=True)
    dbio.write_survival_csv(output, {law.label(): ml})
    click.echo(f"wrote {output}; gamma under this law = {ml.gamma}")


@coalesce.command("mc")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--pair", default="UU")
@click.option("--tgrid", default="0.5,1,2")
@click.option("--samples", type=int, default=20000)
@click.option("--seed", type=int, default=0)
@click.option("-o", "--output", required=True, type=click.Path())
def coalesce_mc(graph_file, pair, tgrid, samples, seed, output):
    kernel = _load_kernel(graph_file)
    law = _parse_pair(pair)
    times = np.array([float(v) for v in tgrid.split(",")])
    ml = co.mc_meeting_law(kernel, law, times, samples, seed=seed)
    dbio.write_meeting_csv(output, {law.label(): ml.samples})
    click.echo(f"wrote {output} ({samples} samples)")


@coalesce.command("kappa")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--s", "scale", default="auto", help="scale; 'auto' = sqrt(gamma)")
@click.option("--samples", type=int, default=20000)
@click.option("--mode", type=click.Choice(["auto", "exact", "mc"]), default="auto")
@click.option("--seed", type=int, default=0)
@click.option("-o", "--output", required=True, type=click.Path())
def coalesce_kappa(graph_file, scale, samples, mode, seed, output):
    kernel = _load_kernel(graph_file)
    s = None if scale == "auto" else float(scale)
    est = co.estimate_kappas(kernel, s=s, mode=mode, samples=samples, seed=seed)
    Path(output).write_text(dbio.kappa_to_json(est))
    click.echo(f"wrote {output} (gamma={est.gamma:.6g}, s={est.s_used:.6g})")


@coalesce.command("verify")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--tgrid", default="0.1,0.5,1,2")
def coalesce_verify(graph_file, tgrid):
    kernel = _load_kernel(graph_file)
    times = np.array([float(v) for v in tgrid.split(",")])
    chain = co.PairChain(kernel)
    doc = {"stationarity_identity": co.ergodic_identity_residual(kernel, times, chain)}
    for ell in (1, 2, 3):
        doc[f"shift_recursion_l{ell}"] = co.shift_recursion_residual(kernel, ell, times, chain)
    for ell in (1, 2, 3):
        for s0 in (2.5, 3.0):
            ok, margin = co.comparison_inequality_check(kernel, ell, s0, times, chain)
            doc[f"comparison_l{ell}_s{s0}"] = {"passed": ok, "worst_margin": margin}
    _echo_json(doc)
    bad = doc["stationarity_identity"] > 1e-8 or any(
        doc[f"shift_recursion_l{l}"] > 1e-7 for l in (1, 2, 3)) or any(
        not doc[f"comparison_l{l}_s{s}"]["passed"] for l in (1, 2, 3) for s in (2.5, 3.0))
    if bad:
        sys.exit(1)


# ------------------------------------------------------------------ ode
@main.group()
def ode():
    """Limiting replicator ODEs."""


@ode.command("run")
@click.option("--params", "params_file", required=True, type=click.Path())
@click.option("--x0", required=True, help="comma-separated simplex point")
@click.option("--t", "--T", "horizon", type=float, required=True)
@click.option("--dt", type=float, default=1e-3)
@click.option("-o", "--output", required=True, type=click.Path())
def ode_run(params_file, x0, horizon, dt, output):
    from .replicator import integrate, spatial_rhs_ff, mean_field_rhs

    params = dbio.replicator_params_from_json(Path(params_file).read_text())
    x0v = np.array([float(v) for v in x0.split(",")])
    if params.has_kappas:
        rhs = lambda x: spatial_rhs_ff(params, x)  # noqa: E731
    else:
        rhs = lambda x: (params.w_inf * mean_field_rhs(params.payoff, x)  # noqa: E731
                         + params.mu_inf * (1 - x)
                         - (params.mu_inf.sum() - params.mu_inf) * x)
    grid, path = integrate(rhs, x0v, horizon, dt)
    dbio.write_ode_csv(output, grid, path)
    click.echo(f"wrote {output}")


# ------------------------------------------------------------------ oracle
@main.group()
def oracle():
    """Brute-force ground truth on tiny systems."""


@oracle.command("verify")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--game", "game_file", required=True, type=click.Path())
@click.option("--suite", type=click.Choice(["duality", "martingale", "crosscheck"]),
              required=True)
@click.option("--seed", type=int, default=0)
def oracle_verify(graph_file, game_file, suite, seed):
    kernel = _load_kernel(graph_file)
    spec = _load_game(game_file)
    rng = np.random.default_rng(seed)
    doc = {}
    ok = True
    if suite == "duality":
        worst = 0.0
        for _ in range(20):
            xi0 = rng.integers(0, spec.s, kernel.n).astype(np.int8)
            x, y = rng.choice(kernel.n, size=2, replace=False)
            a, b = int(rng.integers(spec.s)), int(rng.integers(spec.s))
            t = float(rng.uniform(0.2, 2.0))
            r = oracle_mod.duality_check(kernel, np.zeros(spec.s), xi0,
                                         (int(x), int(y)), (a, b), t, s=spec.s)
            worst = max(worst, r["diff"])
        doc["max_residual"] = worst
        ok = worst <= 1e-8
    elif suite == "martingale":
        g0 = GameSpec(payoff=np.zeros((spec.s, spec.s)), mutation=np.zeros(spec.s), w=0.0)
        gen = oracle_mod.build_generator(kernel, g0)
        xi0 = rng.integers(0, spec.s, kernel.n).astype(np.int8)
        vals = [oracle_mod.expectation(gen, kernel, g0, xi0, t,
                                       lambda xi: float((xi == 1) @ kernel.pi))
                for t in (0.0, 0.5, 1.5)]
        doc["max_drift"] = float(np.max(np.abs(np.diff(vals))))
        ok = doc["max_drift"] <= 1e-9
    else:
        gen = oracle_mod.build_generator(kernel, spec)
        xi0 = rng.integers(0, spec.s, kernel.n).astype(np.int8)
        t = 1.0
        exact = oracle_mod.expectation(gen, kernel, spec, xi0, t,
                                       lambda xi: float((xi == 1) @ kernel.pi))
        trajs = dynamics.ensemble(kernel, spec, ("fixed", xi0), t, 10000, seed,
                                  record_dt=t, stop_on_fixation=False)
        vals = np.array([tr.densities[-1, 1] for tr in trajs])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        doc.update({"exact": exact, "mc_mean": float(vals.mean()),
                    "mc_se": float(se), "z": float(abs(exact - vals.mean()) / se)})
        ok = doc["z"] <= 3.0
    doc["passed"] = ok
    _echo_json(doc)
    if not ok:
        sys.exit(1)


# ------------------------------------------------------------------ analyze
@main.group()
def analyze():
    """Ensemble statistics from recorded trajectories."""


@analyze.command("replicator")
@click.option("--traj", "traj_file", required=True, type=click.Path())
@click.option("--ode", "ode_file", required=True, type=click.Path())
@click.option("--theta", type=float, required=True)
@click.option("--window", default=None, help="a,b in theta-time")
@click.option("-o", "--output", required=True, type=click.Path())
def analyze_replicator(traj_file, ode_file, theta, window, output):
    trajs = dbio.read_trajectories_csv(traj_file)
    grid, path = dbio.read_ode_csv(ode_file)
    win = tuple(float(v) for v in window.split(",")) if window else None
    dev = replicator_deviation(trajs, theta, grid, path, window=win)
    Path(output).write_text(json.dumps(dev, indent=2, default=float))
    click.echo(f"wrote {output} (pooled sup deviation {dev['pooled']:.4g})")


@analyze.command("fluct")
@click.option("--traj", "traj_file", required=True, type=click.Path())
@click.option("--components", "comp_file", required=True, type=click.Path())
@click.option("--gamma", type=float, required=True)
@click.option("--theta", type=float, required=True)
@click.option("--nu1", type=float, required=True)
@click.option("--times", default="0.5,1")
@click.option("-o", "--output", required=True, type=click.Path())
def analyze_fluct(traj_file, comp_file, gamma, theta, nu1, times, output):
    trajs = dbio.read_trajectories_csv(traj_file)
    dbio.attach_components_csv(comp_file, trajs)
    tvals = np.array([float(v) for v in times.split(",")])
    summary = fluctuation_suite(trajs, gamma, theta, tvals, nu1)
    dbio.write_fluct_csv(output, summary)
    click.echo(f"wrote {output}")


@analyze.command("decorrelate")
@click.option("--graph", "graph_file", required=True, type=click.Path())
@click.option("--kappa", "kappa_file", required=True, type=click.Path())
@click.option("--scales", default="0,1,2")
@click.option("--replicas", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("-o", "--output", required=True, type=click.Path())
def analyze_decorrelate(graph_file, kappa_file, scales, replicas, seed, output):
    kernel = _load_kernel(graph_file)
    est = dbio.kappa_from_json(Path(kappa_file).read_text())
    rng = np.random.default_rng(seed)
    xi = (rng.random(kernel.n) < 0.5).astype(np.int8)
    svals = [float(v) for v in scales.split(",")]
    rows = decorrelation_probe(kernel, 2, [xi], svals, (0, 1, 1), est,
                               replicas=replicas, seed=seed)
    Path(output).write_text(json.dumps(rows, indent=2, default=float))
    click.echo(f"wrote {output}")


# ------------------------------------------------------------------ verify / experiment
@main.command("verify")
@click.option("--fast", "level", flag_value="fast", default=True)
@click.option("--full", "level", flag_value="full")
@click.option("--seed", type=int, default=0)
@click.option("-o", "--outdir", type=click.Path(), default=None)
def verify_cmd(level, seed, outdir):
    """Run the bundled exact-identity suites; nonzero exit on any failure."""
    if level == "fast":
        results = verify_mod.fast_suite(seed)
    else:
        results = verify_mod.full_suite(seed, outdir=outdir)
    for name, entry in results.items():
        if isinstance(entry, dict):
            status = "PASS" if entry["passed"] else "FAIL"
            click.echo(f"[{status}] {name}: value={entry['value']:.3g} tol={entry['tolerance']}")
    click.echo("ALL PASS" if results["passed"] else "FAILURES PRESENT")
    if not results["passed"]:
        sys.exit(1)


@main.group()
def experiment():
    """Config-driven pipelines with manifests."""


@experiment.command("run")
@click.option("--config", "config_file", required=True, type=click.Path())
@click.option("-o", "--outdir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--replicas", type=int, default=None)
@click.option("--threads", type=int, default=None)
def experiment_run(config_file, outdir, seed, replicas, threads):
    from .experiment import run_experiment

    p = Path(config_file)
    if not p.exists():
        raise click.ClickException(f"config file not found: {p}")
    config = json.loads(p.read_text())
    if seed is not None:
        config["seed"] = seed
    if replicas is not None:
        config["replicas"] = replicas
    if threads is not None:
        config["threads"] = threads
    outdir = outdir or config.get("outdir")
    if outdir is None:
        raise click.ClickException("no output directory (give -o or set outdir)")
    res = run_experiment(config, outdir)
    _echo_json(res["summary"])


if __name__ == "__main__":
    main()
