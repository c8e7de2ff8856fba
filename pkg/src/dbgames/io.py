"""File schemas shared by the CLI, the analysis stage and the plot tools.

trajectory.csv   replica:int, t:float, type:int, density:float
components.csv   replica:int, t:float, type:int, I:float, R:float, M:float, qv:float
meeting.csv      sample:int, pair:str, value:float          (Monte Carlo times)
survival.csv     t:float, pair:str, survival:float          (exact tails)
ode.csv          t:float, type:int, x:float
fluct.csv        t:float, sigma:int, sigma2:int, emp_cov:float, ref_cov:float, n_reps:int
kappa.json       s_used, tgrid, gamma, nu1, mode, values, stderr, scalar, plateau_spread
manifest.json    config, resolved parameters, file hashes, package versions
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .dynamics import Components, Trajectory


def write_trajectories_csv(path, trajectories) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replica", "t", "type", "density"])
        for r, tr in enumerate(trajectories):
            for i, t in enumerate(tr.grid):
                for sig in range(tr.densities.shape[1]):
                    writer.writerow([r, repr(float(t)), sig, repr(float(tr.densities[i, sig]))])


def read_trajectories_csv(path) -> list[Trajectory]:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = int(row["replica"])
            rows.setdefault(key, []).append(
                (float(row["t"]), int(row["type"]), float(row["density"])))
    out = []
    for r in sorted(rows):
        data = rows[r]
        ts = sorted({t for t, _, _ in data})
        s = max(sig for _, sig, _ in data) + 1
        grid = np.array(ts)
        dens = np.zeros((len(ts), s))
        index = {t: i for i, t in enumerate(ts)}
        for t, sig, d in data:
            dens[index[t], sig] = d
        out.append(Trajectory(grid=grid, densities=dens))
    return out


def write_components_csv(path, trajectories) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replica", "t", "type", "I", "R", "M", "qv"])
        for r, tr in enumerate(trajectories):
            c = tr.components
            if c is None:
                raise ValueError(f"replica {r} has no components")
            for i, t in enumerate(tr.grid):
                for sig in range(tr.densities.shape[1]):
                    writer.writerow([
                        r, repr(float(t)), sig,
                        repr(float(c.drift[i, sig])), repr(float(c.remainder[i, sig])),
                        repr(float(c.martingale[i, sig])), repr(float(c.qv[i, sig])),
                    ])


def attach_components_csv(path, trajectories) -> list[Trajectory]:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = int(row["replica"])
            rows.setdefault(key, []).append(
                (float(row["t"]), int(row["type"]), float(row["I"]),
                 float(row["R"]), float(row["M"]), float(row["qv"])))
    for r, tr in enumerate(trajectories):
        data = rows.get(r)
        if data is None:
            raise ValueError(f"components.csv lacks replica {r}")
        m, s = tr.densities.shape
        drift = np.zeros((m, s))
        rem = np.zeros((m, s))
        mart = np.zeros((m, s))
        qv = np.zeros((m, s))
        index = {float(t): i for i, t in enumerate(tr.grid)}
        for t, sig, iv, rv, mv, qvv in data:
            i = index[t]
            drift[i, sig] = iv
            rem[i, sig] = rv
            mart[i, sig] = mv
            qv[i, sig] = qvv
        tr.components = Components(drift=drift, remainder=rem, martingale=mart, qv=qv)
    return trajectories


def write_meeting_csv(path, samples_by_pair: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "pair", "value"])
        for pair, samples in samples_by_pair.items():
            for i, v in enumerate(np.asarray(samples)):
                writer.writerow([i, pair, repr(float(v))])


def write_survival_csv(path, laws_by_pair: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pair", "survival"])
        for pair, law in laws_by_pair.items():
            for t, sv in zip(law.tgrid, law.survival):
                writer.writerow([repr(float(t)), pair, repr(float(sv))])


def write_ode_csv(path, grid, path_values) -> None:
    path_values = np.atleast_2d(np.asarray(path_values))
    if path_values.shape[0] != len(grid):
        path_values = path_values.T
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "type", "x"])
        for i, t in enumerate(grid):
            for sig in range(path_values.shape[1]):
                writer.writerow([repr(float(t)), sig, repr(float(path_values[i, sig]))])


def read_ode_csv(path) -> tuple[np.ndarray, np.ndarray]:
    ts, rows = [], {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t, sig, x = float(row["t"]), int(row["type"]), float(row["x"])
            rows.setdefault(t, {})[sig] = x
    ts = sorted(rows)
    s = max(max(d) for d in rows.values()) + 1
    path_values = np.zeros((len(ts), s))
    for i, t in enumerate(ts):
        for sig, x in rows[t].items():
            path_values[i, sig] = x
    return np.array(ts), path_values


def write_fluct_csv(path, summary) -> None:
    fl = summary.fluct
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "sigma", "sigma2", "emp_cov", "ref_cov", "n_reps"])
        for i, t in enumerate(summary.theta_times):
            s = fl["emp_cov"].shape[1]
            for a in range(s):
                for b in range(s):
                    writer.writerow([repr(float(t)), a, b,
                                     repr(float(fl["emp_cov"][i, a, b])),
                                     repr(float(fl["ref_cov"][i, a, b])),
                                     summary.n_replicas])


def kappa_to_json(estimates) -> str:
    doc = {
        "s_used": estimates.s_used,
        "tgrid": list(map(float, estimates.tgrid)),
        "gamma": estimates.gamma,
        "nu1": estimates.nu1,
        "mode": estimates.mode,
        "values": {k: list(map(float, v)) for k, v in estimates.values.items()},
        "stderr": {k: float(v) for k, v in estimates.stderr.items()},
        "scalar": {k: estimates.value(k) for k in estimates.values},
        "plateau_spread": {k: estimates.plateau_spread(k) for k in estimates.values},
    }
    return json.dumps(doc, indent=2)


def kappa_from_json(text: str):
    from .coalescent import KappaEstimates

    doc = json.loads(text)
    est = KappaEstimates(s_used=doc["s_used"], tgrid=np.asarray(doc["tgrid"]),
                         mode=doc["mode"], gamma=doc["gamma"], nu1=doc["nu1"])
    est.values = {k: np.asarray(v) for k, v in doc["values"].items()}
    est.stderr = dict(doc["stderr"])
    return est


def game_to_json(game) -> str:
    return json.dumps({
        "types": game.s,
        "payoff": [[float(v) for v in row] for row in game.payoff],
        "mutation": [float(v) for v in game.mutation],
        "w": game.w,
    }, indent=2)


def game_from_json(text: str):
    from .game import GameSpec

    doc = json.loads(text)
    payoff = np.asarray(doc["payoff"], dtype=np.float64)
    if doc.get("types") is not None and int(doc["types"]) != payoff.shape[0]:
        raise ValueError("declared type count does not match the payoff matrix")
    return GameSpec(payoff=payoff, mutation=np.asarray(doc["mutation"], dtype=np.float64),
                    w=float(doc["w"]))


def replicator_params_to_json(params) -> str:
    body = {
        "payoff": [[float(v) for v in row] for row in params.payoff],
        "w_inf": params.w_inf,
        "mu_inf": [float(v) for v in params.mu_inf],
        "kappas": {k: getattr(params, k) for k in
                   ("k23_0", "k03_2", "k0_2_3", "k1", "k2", "k3")},
        "q2_inf": params.q2_inf,
    }
    return json.dumps(body, indent=2)


def replicator_params_from_json(text: str):
    from .replicator import ReplicatorParams

    doc = json.loads(text)
    kap = doc.get("kappas", {}) or {}
    return ReplicatorParams(payoff=np.asarray(doc["payoff"], dtype=np.float64),
                            w_inf=float(doc.get("w_inf", 0.0)),
                            mu_inf=np.asarray(doc.get("mu_inf")) if doc.get("mu_inf") is not None else None,
                            k23_0=kap.get("k23_0"), k03_2=kap.get("k03_2"),
                            k0_2_3=kap.get("k0_2_3"), k1=kap.get("k1"),
                            k2=kap.get("k2"), k3=kap.get("k3"),
                            q2_inf=doc.get("q2_inf"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config: dict, resolved: dict, outputs: list) -> None:
    import importlib.metadata

    versions = {"dbgames": "0.1.0"}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            versions[pkg] = importlib.metadata.version(pkg)
        except importlib.metadata.PackageNotFoundError:
            pass
    doc = {
        "config": config,
        "resolved": resolved,
        "outputs": {str(Path(p).name): sha256_file(p) for p in outputs},
        "versions": versions,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
