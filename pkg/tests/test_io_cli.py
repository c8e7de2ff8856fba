import json

import numpy as np
import pytest
from click.testing import CliRunner

from dbgames import coalescent as co
from dbgames import dynamics, game, graphs
from dbgames import io as dbio
from dbgames.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def write_k5(tmp_path):
    kernel = graphs.generate("complete", n=5)
    path = tmp_path / "k5.json"
    path.write_text(kernel.to_json())
    return kernel, path


def write_prisoner(tmp_path, b=3.0, c=1.0, w=0.1, mutation=(0.0, 0.0), declare=True):
    spec = game.GameSpec(payoff=game.prisoner_payoff(b, c),
                         mutation=np.asarray(mutation), w=w)
    doc = json.loads(dbio.game_to_json(spec))
    if declare:
        doc["prisoner"] = {"b": b, "c": c}
    path = tmp_path / "game.json"
    path.write_text(json.dumps(doc))
    return spec, path


def test_trajectory_csv_roundtrip(tmp_path, k4, neutral2):
    trajs = dynamics.ensemble(k4, neutral2, ("bernoulli", 0.5), 1.0, 3, 1,
                              record_dt=0.25)
    path = tmp_path / "trajectory.csv"
    dbio.write_trajectories_csv(path, trajs)
    back = dbio.read_trajectories_csv(path)
    assert len(back) == 3
    for a, b in zip(trajs, back):
        assert np.allclose(a.grid, b.grid)
        assert np.allclose(a.densities, b.densities)


def test_components_csv_roundtrip(tmp_path, k4, neutral2):
    trajs = dynamics.ensemble(k4, neutral2, ("bernoulli", 0.5), 1.0, 2, 2,
                              record_dt=0.5, stop_on_fixation=False)
    tpath = tmp_path / "trajectory.csv"
    cpath = tmp_path / "components.csv"
    dbio.write_trajectories_csv(tpath, trajs)
    dbio.write_components_csv(cpath, trajs)
    back = dbio.read_trajectories_csv(tpath)
    dbio.attach_components_csv(cpath, back)
    for a, b in zip(trajs, back):
        assert np.allclose(a.components.martingale, b.components.martingale)
        assert np.allclose(a.components.qv, b.components.qv)


def test_kappa_json_roundtrip(rr20):
    est = co.estimate_kappas(rr20, mode="exact")
    text = dbio.kappa_to_json(est)
    back = dbio.kappa_from_json(text)
    assert back.s_used == est.s_used
    assert back.gamma == est.gamma
    for k, v in est.values.items():
        assert np.allclose(back.values[k], v)
    doc = json.loads(text)
    assert "plateau_spread" in doc and "scalar" in doc


def test_game_json_roundtrip():
    spec = game.GameSpec(payoff=game.prisoner_payoff(6.0, 1.0),
                         mutation=np.array([0.1, 0.2]), w=0.05)
    back = dbio.game_from_json(dbio.game_to_json(spec))
    assert np.allclose(back.payoff, spec.payoff)
    assert np.allclose(back.mutation, spec.mutation)
    assert back.w == spec.w


def test_game_json_type_mismatch():
    text = json.dumps({"types": 3, "payoff": [[0.0, 1.0], [1.0, 0.0]],
                       "mutation": [0, 0], "w": 0.0})
    with pytest.raises(ValueError):
        dbio.game_from_json(text)


def test_replicator_params_roundtrip():
    from dbgames.replicator import ReplicatorParams

    params = ReplicatorParams(payoff=game.prisoner_payoff(6.0, 1.0), w_inf=1.0,
                              mu_inf=np.array([0.0, 0.0]), k23_0=1.0, k03_2=0.9,
                              k0_2_3=0.5, q2_inf=1.0 / 3.0)
    back = dbio.replicator_params_from_json(dbio.replicator_params_to_json(params))
    assert back.k23_0 == params.k23_0
    assert back.q2_inf == params.q2_inf


def test_cli_graph_gen_analyze(runner, tmp_path):
    out = tmp_path / "g.json"
    res = runner.invoke(main, ["graph", "gen", "--family", "cycle", "--n", "6",
                               "-o", str(out)])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["graph", "analyze", str(out), "--no-tmix"])
    assert res.exit_code == 0
    doc = json.loads(res.output)
    assert doc["n"] == 6
    assert doc["spectral_gap"] == pytest.approx(0.5)
    assert doc["n_pi_min"] == pytest.approx(1.0)


def test_cli_missing_graph_named(runner, tmp_path):
    res = runner.invoke(main, ["graph", "analyze", str(tmp_path / "nope.json")])
    assert res.exit_code != 0
    assert "nope.json" in res.output


def test_cli_game_check_pass(runner, tmp_path):
    _, gpath = write_k5(tmp_path)
    _, spath = write_prisoner(tmp_path)
    res = runner.invoke(main, ["game", "check", "--graph", str(gpath),
                               "--game", str(spath)])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["route_i_vs_ii"] <= 1e-12
    assert doc["route_ii_vs_iii"] <= 1e-12


def test_cli_game_check_detects_corruption(runner, tmp_path):
    # fault injection: corrupt one payoff entry of a declared donation game
    _, gpath = write_k5(tmp_path)
    _, spath = write_prisoner(tmp_path)
    doc = json.loads(spath.read_text())
    doc["payoff"][1][1] += 0.5
    spath.write_text(json.dumps(doc))
    res = runner.invoke(main, ["game", "check", "--graph", str(gpath),
                               "--game", str(spath)])
    assert res.exit_code == 1
    out = json.loads(res.output)
    assert out["route_ii_vs_iii"] > 1e-6


def test_cli_sim_and_analyze_replicator(runner, tmp_path):
    _, gpath = write_k5(tmp_path)
    _, spath = write_prisoner(tmp_path, w=0.0, declare=False)
    outdir = tmp_path / "out"
    res = runner.invoke(main, ["sim", "run", "--graph", str(gpath), "--game",
                               str(spath), "--init", "bernoulli:0.5", "--t", "2.0",
                               "--replicas", "4", "--seed", "3", "--record-dt",
                               "0.5", "--components", "-o", str(outdir)])
    assert res.exit_code == 0, res.output
    assert (outdir / "trajectory.csv").exists()
    assert (outdir / "components.csv").exists()
    ode = tmp_path / "ode.csv"
    grid = np.linspace(0, 2, 5)
    dbio.write_ode_csv(ode, grid, np.tile([0.5, 0.5], (5, 1)))
    res = runner.invoke(main, ["analyze", "replicator", "--traj",
                               str(outdir / "trajectory.csv"), "--ode", str(ode),
                               "--theta", "1.0", "-o", str(tmp_path / "dev.json")])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "dev.json").read_text())
    assert 0.0 <= doc["pooled"] <= 1.0


def test_cli_sim_components_with_selection(runner, tmp_path):
    _, gpath = write_k5(tmp_path)
    _, spath = write_prisoner(tmp_path, w=0.1, declare=False)
    outdir = tmp_path / "outsel"
    res = runner.invoke(main, ["sim", "run", "--graph", str(gpath), "--game",
                               str(spath), "--init", "bernoulli:0.5", "--t", "1.0",
                               "--replicas", "2", "--seed", "5", "--record-dt", "0.5",
                               "--components", "--events", "-o", str(outdir)])
    assert res.exit_code == 0, res.output
    assert (outdir / "components.csv").exists()
    assert (outdir / "events_0000.bin").exists()
    log = dynamics.EventLog.load(outdir / "events_0000.bin")
    assert log.t_end == 1.0


def test_cli_coalesce_exact_mc_kappa(runner, tmp_path):
    _, gpath = write_k5(tmp_path)
    surv = tmp_path / "survival.csv"
    res = runner.invoke(main, ["coalesce", "exact", "--graph", str(gpath),
                               "--pair", "UU", "--tgrid", "0.5,1", "-o", str(surv)])
    assert res.exit_code == 0, res.output
    meet = tmp_path / "meeting.csv"
    res = runner.invoke(main, ["coalesce", "mc", "--graph", str(gpath),
                               "--pair", "VV", "--samples", "2000", "--seed", "1",
                               "-o", str(meet)])
    assert res.exit_code == 0, res.output
    kap = tmp_path / "kappa.json"
    res = runner.invoke(main, ["coalesce", "kappa", "--graph", str(gpath),
                               "--s", "1.5", "--mode", "exact", "-o", str(kap)])
    assert res.exit_code == 0, res.output
    doc = json.loads(kap.read_text())
    assert "k0" in doc["values"]
    res = runner.invoke(main, ["coalesce", "verify", "--graph", str(gpath)])
    assert res.exit_code == 0, res.output


def test_cli_ode_run(runner, tmp_path):
    params = {"payoff": [[0.0, 1.0], [0.0, 1.0]], "w_inf": 1.0,
              "mu_inf": [0.0, 0.0],
              "kappas": {"k23_0": 1.0, "k03_2": 1.0, "k0_2_3": 1.0,
                         "k1": None, "k2": None, "k3": None},
              "q2_inf": None}
    ppath = tmp_path / "params.json"
    ppath.write_text(json.dumps(params))
    out = tmp_path / "ode.csv"
    res = runner.invoke(main, ["ode", "run", "--params", str(ppath), "--x0",
                               "0.3,0.7", "--t", "2.0", "--dt", "0.01",
                               "-o", str(out)])
    assert res.exit_code == 0, res.output
    grid, path = dbio.read_ode_csv(out)
    assert np.max(np.abs(path.sum(axis=1) - 1.0)) <= 1e-8


def test_cli_oracle_verify(runner, tmp_path):
    kernel = graphs.generate("complete", n=3)
    gpath = tmp_path / "k3.json"
    gpath.write_text(kernel.to_json())
    _, spath = write_prisoner(tmp_path, w=0.1, declare=False)
    for suite in ("duality", "martingale"):
        res = runner.invoke(main, ["oracle", "verify", "--graph", str(gpath),
                                   "--game", str(spath), "--suite", suite])
        assert res.exit_code == 0, (suite, res.output)


def test_experiment_reproducible(tmp_path):
    from dbgames.experiment import run_experiment

    config = {
        "graph": {"family": "complete", "n": 5},
        "game": {"payoff": {"prisoner": {"b": 3.0, "c": 1.0}},
                 "mutation": [0.0, 0.0], "w": {"w_inf": 0.5}},
        "scaling": {"theta": 4.0, "tmix": False},
        "replicas": 4,
        "horizon_theta": 0.5,
        "record_dt_theta": 0.125,
        "init": "bernoulli:0.5",
        "seed": 11,
        "analysis": {"replicator": {"route": "q2", "dt": 1e-2}},
    }
    out1 = run_experiment(config, tmp_path / "a")
    out2 = run_experiment(config, tmp_path / "b")
    text1 = (tmp_path / "a" / "trajectory.csv").read_bytes()
    text2 = (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert text1 == text2
    m1 = json.loads((tmp_path / "a" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert m1["outputs"] == m2["outputs"]
    # w rule: w = w_inf 2 gamma nu1 / theta with K5's exact gamma = (N-1)^2/(2N)
    gamma = (5 - 1) ** 2 / (2 * 5)
    assert out1["resolved"]["w"] == pytest.approx(0.5 * 2 * gamma * 0.2 / 4.0, rel=1e-9)
    assert (tmp_path / "a" / "ode.csv").exists()
    assert "replicator_deviation" in out1["summary"]


def test_experiment_missing_graph_file(tmp_path):
    from dbgames.experiment import run_experiment

    config = {"graph": {"file": str(tmp_path / "absent.json")},
              "game": {"payoff": [[0.0, 0.0], [0.0, 0.0]], "mutation": [0, 0],
                       "w": 0.0},
              "scaling": {"theta": 1.0}, "replicas": 1, "horizon_theta": 0.1,
              "seed": 0}
    with pytest.raises(FileNotFoundError):
        run_experiment(config, tmp_path / "x")


def test_cli_verify_fast(runner):
    res = runner.invoke(main, ["verify", "--fast", "--seed", "1"])
    assert res.exit_code == 0, res.output
    assert "ALL PASS" in res.output
