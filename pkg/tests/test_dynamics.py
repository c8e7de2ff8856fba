import numpy as np
import pytest

from dbgames import dynamics, game
from dbgames.errors import LogMismatch


def test_step_total_rate_and_kinds(k4, prisoner31):
    spec = game.GameSpec(payoff=prisoner31.payoff, mutation=np.array([0.3, 0.2]), w=0.1)
    rng = np.random.default_rng(0)
    xi = np.array([0, 1, 0, 1], dtype=np.int8)
    seen = set()
    for _ in range(200):
        hold, xi2, rec = dynamics.step(k4, spec, xi, rng)
        assert rec["total_rate"] == pytest.approx(4 * 1.5)
        assert hold > 0
        seen.add(rec["kind"])
        assert int(np.sum(xi2 != xi)) <= 1
    assert seen == {"death-birth", "mutation"}


def test_step_monomorphic_absorbing(k4, neutral2):
    rng = np.random.default_rng(1)
    xi = np.ones(4, dtype=np.int8)
    for _ in range(50):
        hold, xi2, rec = dynamics.step(k4, neutral2, xi, rng)
        assert hold > 0
        assert np.array_equal(xi2, xi)
        assert rec["old"] == rec["new"]


def test_simulate_bit_reproducible(rr50, prisoner31):
    xi0 = np.tile([0, 1], 25).astype(np.int8)
    a, loga = dynamics.simulate(rr50, prisoner31, xi0, 4.0, seed=99, record_events=True)
    b, logb = dynamics.simulate(rr50, prisoner31, xi0, 4.0, seed=99, record_events=True)
    assert np.array_equal(a.densities, b.densities)
    assert np.array_equal(loga.times, logb.times)
    assert np.array_equal(loga.sites, logb.sites)
    assert len(loga) >= 100
    assert np.all(np.diff(loga.times) > 0)
    assert loga.total_rate == pytest.approx(50.0)


def test_density_sums_to_one(path3, prisoner31):
    traj, _ = dynamics.simulate(path3, prisoner31, np.array([0, 1, 0], dtype=np.int8),
                                8.0, seed=3)
    assert np.max(np.abs(traj.densities.sum(axis=1) - 1.0)) <= 1e-12


def test_fixation_absorbing(k4, neutral2):
    traj, log = dynamics.simulate(k4, neutral2, np.array([0, 1, 0, 1], dtype=np.int8),
                                  200.0, seed=5, record_events=True)
    assert traj.fixation_time is not None
    after = traj.grid >= traj.fixation_time
    fixed_vals = traj.densities[after]
    assert np.all((fixed_vals == 0.0) | (fixed_vals == 1.0))
    assert log.fixation_time == traj.fixation_time


def test_voter_density_martingale(k4, neutral2):
    # ensemble mean of a bounded martingale stays at its start
    trajs = dynamics.ensemble(k4, neutral2, ("fixed", np.array([0, 1, 0, 1], dtype=np.int8)),
                              1.0, 10_000, 17)
    vals = np.array([tr.densities[-1, 1] for tr in trajs])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 0.5) <= 3 * se


def test_decompose_neutral_trivial(k4, neutral2):
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    traj, log = dynamics.simulate(k4, neutral2, xi0, 10.0, seed=21, record_events=True)
    dec = dynamics.decompose(k4, neutral2, log, xi0, traj.grid)
    assert np.max(np.abs(dec.components.drift)) == 0.0
    assert np.max(np.abs(dec.components.remainder)) == 0.0
    assert np.allclose(dec.components.martingale, dec.densities - dec.densities[0])
    # replay reproduces the recorded densities exactly
    assert np.array_equal(dec.densities, traj.densities)
    # the built-in neutral fast path agrees with the replay
    assert np.allclose(traj.components.martingale, dec.components.martingale, atol=0)
    assert np.allclose(traj.components.qv, dec.components.qv, atol=0)


def test_decompose_selection_mutation(path3):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                         mutation=np.array([0.2, 0.1]), w=0.15)
    xi0 = np.array([0, 1, 0], dtype=np.int8)
    traj, log = dynamics.simulate(path3, spec, xi0, 6.0, seed=8, record_events=True)
    dec = dynamics.decompose(path3, spec, log, xi0, traj.grid, with_predictable_qv=True)
    assert np.array_equal(dec.densities, traj.densities)
    # martingale parts cancel across types because densities sum to one
    assert np.max(np.abs(dec.components.martingale.sum(axis=1))) <= 1e-10
    # decomposition is exact by construction
    rebuilt = (dec.densities[0][None, :] + dec.components.drift
               + dec.components.remainder + dec.components.martingale)
    assert np.allclose(rebuilt, dec.densities, atol=1e-14)
    # a second independent replay reproduces I and R exactly
    dec2 = dynamics.decompose(path3, spec, log, xi0, traj.grid)
    assert np.max(np.abs(dec.components.drift - dec2.components.drift)) <= 1e-12
    assert np.max(np.abs(dec.components.remainder - dec2.components.remainder)) <= 1e-12


def test_decompose_log_mismatch(k4, neutral2):
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    traj, log = dynamics.simulate(k4, neutral2, xi0, 5.0, seed=9, record_events=True)
    assert len(log) > 0
    wrong = xi0.copy()
    first_site = int(log.sites[0])
    wrong[first_site] = 1 - int(log.olds[0])   # contradict the first event
    with pytest.raises(LogMismatch):
        dynamics.decompose(k4, neutral2, log, wrong, traj.grid)


def test_null_events_change_nothing(k4, neutral2):
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    traj, log = dynamics.simulate(k4, neutral2, xi0, 3.0, seed=10, record_events=True)
    null = log.olds == log.news
    assert null.any()  # neutral runs produce plenty of same-type copies
    dec = dynamics.decompose(k4, neutral2, log, xi0, traj.grid, with_predictable_qv=True)
    # drop all null events; nothing observable may move
    keep = ~null
    from dbgames.dynamics import EventLog
    slim = EventLog(times=log.times[keep], kinds=log.kinds[keep], sites=log.sites[keep],
                    olds=log.olds[keep], news=log.news[keep], t_end=log.t_end,
                    seed=log.seed, total_rate=log.total_rate,
                    fixation_time=log.fixation_time)
    dec2 = dynamics.decompose(k4, neutral2, slim, xi0, traj.grid, with_predictable_qv=True)
    assert np.array_equal(dec.densities, dec2.densities)
    assert np.array_equal(dec.components.qv, dec2.components.qv)
    assert np.allclose(dec.components.predictable_qv, dec2.components.predictable_qv)


def test_jump_sizes_bounded_by_pi_max(path3):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                         mutation=np.array([0.3, 0.3]), w=0.1)
    xi0 = np.array([0, 1, 0], dtype=np.int8)
    traj, log = dynamics.simulate(path3, spec, xi0, 10.0, seed=12, record_events=True)
    changing = log.olds != log.news
    jump_sizes = path3.pi[log.sites[changing]]
    assert np.all(jump_sizes <= path3.pi.max() + 1e-15)
    dens = traj.densities
    # consecutive grid differences never exceed pi_max x (events in between)
    assert np.max(np.abs(np.diff(dens[:, 1]))) <= path3.pi.max() * max(
        1, int(np.ceil(len(log) / max(len(traj.grid) - 1, 1)))) + 1e-12


def test_martingale_centered_under_selection(k4):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                         mutation=np.zeros(2), w=0.2)
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    reps = 3000
    finals = np.empty(reps)
    for r in range(reps):
        traj, log = dynamics.simulate(k4, spec, xi0, 1.0, record_dt=1.0,
                                      seed=dynamics.stream_seed(31, r),
                                      record_events=True)
        dec = dynamics.decompose(k4, spec, log, xi0, traj.grid)
        finals[r] = dec.components.martingale[-1, 1]
    se = finals.std(ddof=1) / np.sqrt(reps)
    assert abs(finals.mean()) <= 3 * se


def test_qv_compensated_by_predictable_qv(k4, neutral2):
    # ensemble mean of [M] - <M> at a fixed time is centered
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    reps = 2000
    diffs = np.empty(reps)
    for r in range(reps):
        traj, log = dynamics.simulate(k4, neutral2, xi0, 1.0, record_dt=1.0,
                                      seed=dynamics.stream_seed(32, r),
                                      record_events=True, stop_on_fixation=False)
        dec = dynamics.decompose(k4, neutral2, log, xi0, traj.grid,
                                 with_predictable_qv=True)
        diffs[r] = dec.components.qv[-1, 1] - dec.components.predictable_qv[-1, 1, 1]
    se = diffs.std(ddof=1) / np.sqrt(reps)
    assert abs(diffs.mean()) <= 3 * se


def test_cross_covariation_compensated(k4):
    # E[M_0 M_1 - <M_0, M_1>] = 0 under selection and mutation
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                         mutation=np.array([0.2, 0.15]), w=0.12)
    xi0 = np.array([0, 1, 1, 0], dtype=np.int8)
    reps = 3000
    diffs = np.empty(reps)
    for r in range(reps):
        traj, log = dynamics.simulate(k4, spec, xi0, 1.0, record_dt=1.0,
                                      seed=dynamics.stream_seed(71, r),
                                      record_events=True, stop_on_fixation=False)
        dec = dynamics.decompose(k4, spec, log, xi0, traj.grid,
                                 with_predictable_qv=True)
        mart = dec.components.martingale[-1]
        diffs[r] = mart[0] * mart[1] - dec.components.predictable_qv[-1, 0, 1]
    se = diffs.std(ddof=1) / np.sqrt(reps)
    assert abs(diffs.mean()) <= 3 * se


def test_ensemble_threads_deterministic(rr50, neutral2):
    init = ("bernoulli", 0.5)
    a = dynamics.ensemble(rr50, neutral2, init, 2.0, 6, 55, threads=1)
    b = dynamics.ensemble(rr50, neutral2, init, 2.0, 6, 55, threads=2)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.densities, tb.densities)


def test_event_log_roundtrip(tmp_path, k4, neutral2):
    xi0 = np.array([0, 1, 0, 1], dtype=np.int8)
    _, log = dynamics.simulate(k4, neutral2, xi0, 4.0, seed=66, record_events=True)
    path = tmp_path / "events.bin"
    log.save(path)
    back = dynamics.EventLog.load(path)
    assert np.array_equal(back.times, log.times)
    assert np.array_equal(back.sites, log.sites)
    assert np.array_equal(back.olds, log.olds)
    assert back.t_end == log.t_end
    assert back.fixation_time == log.fixation_time
