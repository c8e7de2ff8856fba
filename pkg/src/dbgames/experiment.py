"""End-to-end experiment orchestration: graph -> coalescent -> ensemble -> analysis.

A single JSON config drives the pipeline; every derived parameter (gamma,
nu1, spectral gap, mixing time, the resolved selection intensity) and every
output file hash lands in manifest.json so a run is reproducible from the
manifest alone.

Config schema (theta-time units for horizons and analysis windows):

    graph     {"family": ..., "n": ..., "k": ..., "seed": ...} or {"file": path}
    game      payoff: matrix or {"prisoner": {"b": b, "c": c}}
              mutation: vector or {"mu_inf": vector}  (scaled by 1/theta)
              w: number or {"w_inf": w}               (w = w_inf 2 gamma nu1 / theta)
    scaling   {"theta": theta, "tmix": bool}
    replicas, horizon_theta, record_dt_theta, init ("uniform" | "bernoulli:p"),
    seed, threads
    analysis  {"replicator": {"route": "q2"|"kappa"|"mean_field", "x0": ...,
                              "dt": ..., "window": [a, b]},
               "fluct": {"times": [...]},
               "kappas": {"samples": ..., "mode": ...}}
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import coalescent as co
from . import dynamics, graphs
from . import io as dbio
from .analysis import fluctuation_suite, replicator_deviation
from .game import GameSpec, prisoner_payoff
from .replicator import ReplicatorParams, integrate, integrate_two_type, spatial_rhs_ff


def _resolve_graph(cfg: dict) -> graphs.Kernel:
    if "file" in cfg:
        return graphs.kernel_from_json(Path(cfg["file"]).read_text())
    params = {k: cfg[k] for k in ("n", "k", "seed", "rows", "cols") if k in cfg}
    return graphs.generate(cfg["family"], **params)


def _resolve_payoff(cfg: dict) -> tuple[np.ndarray, tuple | None]:
    pay = cfg["payoff"]
    if isinstance(pay, dict) and "prisoner" in pay:
        b, c = float(pay["prisoner"]["b"]), float(pay["prisoner"]["c"])
        return prisoner_payoff(b, c), (b, c)
    return np.asarray(pay, dtype=np.float64), None


def run_experiment(config: dict, outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])
    theta = float(config["scaling"]["theta"])
    replicas = int(config["replicas"])
    threads = int(config.get("threads", 1))

    kernel = _resolve_graph(config["graph"])
    (outdir / "graph.json").write_text(kernel.to_json())

    chain = co.PairChain(kernel)
    p_uu, _ = chain.initial_vector(co.pair_law_matrix(kernel, co.PairLaw("UU")))
    gamma = chain.mean_absorption(p_uu)

    payoff, prisoner_bc = _resolve_payoff(config["game"])
    mut_cfg = config["game"].get("mutation", [0.0] * payoff.shape[0])
    if isinstance(mut_cfg, dict):
        mutation = np.asarray(mut_cfg["mu_inf"], dtype=np.float64) / theta
    else:
        mutation = np.asarray(mut_cfg, dtype=np.float64)
    w_cfg = config["game"].get("w", 0.0)
    if isinstance(w_cfg, dict):
        w_inf = float(w_cfg["w_inf"])
        w = w_inf * 2.0 * gamma * kernel.nu1 / theta
    else:
        w = float(w_cfg)
        w_inf = w * theta / (2.0 * gamma * kernel.nu1)
    spec = GameSpec(payoff=payoff, mutation=mutation, w=w)
    spec.validate_against(kernel)
    (outdir / "game.json").write_text(dbio.game_to_json(spec))

    analysis_cfg = config.get("analysis", {}) or {}
    estimates = None
    outputs = [outdir / "graph.json", outdir / "game.json"]
    if analysis_cfg.get("kappas"):
        kcfg = analysis_cfg["kappas"]
        estimates = co.estimate_kappas(kernel, mode=kcfg.get("mode", "auto"),
                                       samples=int(kcfg.get("samples", 20_000)),
                                       seed=seed + 1, chain=chain)
        (outdir / "kappa.json").write_text(dbio.kappa_to_json(estimates))
        outputs.append(outdir / "kappa.json")

    init_cfg = config.get("init", "bernoulli:0.5")
    if isinstance(init_cfg, str) and init_cfg.startswith("bernoulli:"):
        init = ("bernoulli", float(init_cfg.split(":", 1)[1]))
    elif init_cfg == "uniform":
        init = ("uniform",)
    else:
        xi = np.asarray(json.loads(Path(init_cfg["file"]).read_text()), dtype=np.int8)
        init = ("fixed", xi)

    horizon = float(config["horizon_theta"]) * theta
    record_dt = config.get("record_dt_theta")
    record_dt = horizon / 512.0 if record_dt is None else float(record_dt) * theta
    trajs = dynamics.ensemble(kernel, spec, init, horizon, replicas, seed,
                              record_dt=record_dt, threads=threads,
                              stop_on_fixation=spec.mutation_total == 0.0)
    dbio.write_trajectories_csv(outdir / "trajectory.csv", trajs)
    outputs.append(outdir / "trajectory.csv")

    neutral = spec.w == 0.0 and spec.mutation_total == 0.0
    if neutral:
        dbio.write_components_csv(outdir / "components.csv", trajs)
        outputs.append(outdir / "components.csv")

    summary: dict = {"theta": theta, "gamma": gamma, "nu1": kernel.nu1,
                     "w": w, "w_inf_proxy": w_inf, "replicas": replicas,
                     "mutation": mutation.tolist(), "neutral": neutral}

    rep_cfg = analysis_cfg.get("replicator")
    if rep_cfg:
        route = rep_cfg.get("route", "q2")
        dt = float(rep_cfg.get("dt", 1e-3))
        x0 = rep_cfg.get("x0")
        if x0 is None:
            x0 = np.mean([tr.densities[0] for tr in trajs], axis=0)
        x0 = np.asarray(x0, dtype=np.float64)
        horizon_theta = float(config["horizon_theta"])
        mu_inf = mutation * theta
        if route == "q2" and prisoner_bc is not None:
            q2 = graphs.two_step_return_stats(kernel)["dominant_value"]
            grid, u = integrate_two_type(prisoner_bc[0], prisoner_bc[1], float(x0[1]),
                                         horizon_theta, dt, w_inf=w_inf,
                                         mu_inf=(float(mu_inf[0]), float(mu_inf[1])),
                                         q2_inf=q2)
            ode_path = np.stack([1.0 - u, u], axis=1)
        elif route == "kappa":
            if estimates is None:
                estimates = co.estimate_kappas(kernel, mode="auto", seed=seed + 1,
                                               chain=chain)
                (outdir / "kappa.json").write_text(dbio.kappa_to_json(estimates))
                outputs.append(outdir / "kappa.json")
            params = ReplicatorParams.from_estimates(payoff, estimates, w_inf=w_inf,
                                                     mu_inf=mu_inf)
            grid, ode_path = integrate(lambda x: spatial_rhs_ff(params, x), x0,
                                       horizon_theta, dt)
        else:
            from .replicator import mean_field_rhs

            grid, ode_path = integrate(lambda x: w_inf * mean_field_rhs(payoff, x)
                                       + mu_inf * (1 - x) - (mu_inf.sum() - mu_inf) * x,
                                       x0, horizon_theta, dt)
        dbio.write_ode_csv(outdir / "ode.csv", grid, ode_path)
        outputs.append(outdir / "ode.csv")
        window = rep_cfg.get("window")
        dev = replicator_deviation(trajs, theta, grid, ode_path,
                                   window=tuple(window) if window else None,
                                   seed=seed + 2)
        summary["replicator_deviation"] = {
            "pooled": dev["pooled"],
            "per_type": [float(v) for v in dev["per_type"]],
            "bootstrap_ci": dev["bootstrap_ci"],
            "window": list(dev["window"]),
        }

    fl_cfg = analysis_cfg.get("fluct")
    if fl_cfg:
        times = np.asarray(fl_cfg["times"], dtype=np.float64)
        fsum = fluctuation_suite(trajs, gamma, theta, times, kernel.nu1)
        dbio.write_fluct_csv(outdir / "fluct.csv", fsum)
        outputs.append(outdir / "fluct.csv")
        fl = fsum.fluct
        summary["fluct"] = {
            "times": times.tolist(),
            "emp_var_type1": [float(fl["emp_cov"][i, 1, 1]) for i in range(len(times))]
            if fsum.mean.shape[1] > 1 else None,
            "ref_var_type1": [float(fl["ref_cov"][i, 1, 1]) for i in range(len(times))]
            if fsum.mean.shape[1] > 1 else None,
            "hypothesis_ratio": fl["hypothesis_ratio"],
            "qq_correlation_min": float(np.min(fl["qq_correlation"])),
        }

    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    outputs.append(outdir / "summary.json")

    resolved = {"gamma": gamma, "nu1": kernel.nu1, "w": w, "w_inf_proxy": w_inf,
                "theta": theta, "n": kernel.n,
                "gap": graphs.spectral_gap(kernel) if kernel.n <= graphs.DENSE_EIG_CAP else None,
                "tmix": graphs.mixing_time(kernel)
                if config["scaling"].get("tmix", kernel.n <= 1200) else None}
    dbio.write_manifest(outdir / "manifest.json", config, resolved, outputs)
    return {"summary": summary, "resolved": resolved, "outdir": str(outdir)}
