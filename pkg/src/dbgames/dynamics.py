"""Exact-event simulation of the game and its semimartingale decomposition.

The configuration process jumps at the state-independent total rate
N (1 + mu_total): each site dies at rate 1 and is refilled from the
fitness-weighted neighbor law, and each site mutates to sigma at rate
mu(sigma).  The density p_sigma(xi_t) then decomposes pathwise as

    p_sigma(t) = p_sigma(0) + I_sigma(t) + R_sigma(t) + M_sigma(t)

with I the first-order drift (w times the integrated Dbar_sigma plus the
mutation flow), R the second-order selection remainder, and M the martingale
residual.  Between events every integrand is constant, so I and R are exact
sums of rate x holding-time terms reconstructed by replaying the event log.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _simloop
from .errors import LogMismatch
from .game import GameSpec, expansion_coefficients
from .graphs import Kernel

EVENTS_MAGIC = b"DBEV"
EVENTS_VERSION = 1


def stream_seed(master_seed: int, *key: int) -> int:
    """Per-replica stream seed derived from a master seed and an index key."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def replica_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


@dataclass
class EventLog:
    """Ordered jump history of one replica.

    Null events (a death-birth that redraws the resident type, or a mutation
    to the current type) are logged with old == new.
    """

    times: np.ndarray
    kinds: np.ndarray
    sites: np.ndarray
    olds: np.ndarray
    news: np.ndarray
    t_end: float
    seed: int
    total_rate: float
    fixation_time: float | None = None

    def __len__(self) -> int:
        return len(self.times)

    def save(self, path) -> None:
        n = len(self.times)
        fix = np.nan if self.fixation_time is None else float(self.fixation_time)
        header = struct.pack(
            "<4sIQddQd", EVENTS_MAGIC, EVENTS_VERSION, n, self.t_end,
            self.total_rate, np.uint64(self.seed), fix,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(self.kinds.astype("u1").tobytes())
            fh.write(self.sites.astype("<u4").tobytes())
            fh.write(self.olds.astype("u1").tobytes())
            fh.write(self.news.astype("u1").tobytes())

    @classmethod
    def load(cls, path) -> "EventLog":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIQddQd"))
            magic, version, n, t_end, total_rate, seed, fix = struct.unpack("<4sIQddQd", head)
            if magic != EVENTS_MAGIC:
                raise ValueError("not an event log file")
            if version != EVENTS_VERSION:
                raise ValueError(f"unsupported event log version {version}")
            times = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            kinds = np.frombuffer(fh.read(n), dtype="u1").copy()
            sites = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
            olds = np.frombuffer(fh.read(n), dtype="u1").astype(np.int8)
            news = np.frombuffer(fh.read(n), dtype="u1").astype(np.int8)
        return cls(times=times, kinds=kinds.astype(np.int8), sites=sites, olds=olds,
                   news=news, t_end=t_end, seed=int(seed), total_rate=total_rate,
                   fixation_time=None if np.isnan(fix) else fix)


@dataclass
class Components:
    """Pathwise decomposition evaluated on the recording grid."""

    drift: np.ndarray            # I_sigma
    remainder: np.ndarray        # R_sigma
    martingale: np.ndarray       # M_sigma
    qv: np.ndarray               # [M_sigma], sum of squared density jumps
    predictable_qv: np.ndarray | None = None   # <M_sigma, M_sigma'> (m, s, s)


@dataclass
class Trajectory:
    grid: np.ndarray
    densities: np.ndarray        # (m, s)
    components: Components | None = None
    fixation_time: float | None = None
    final_types: np.ndarray | None = None

    @property
    def s(self) -> int:
        return self.densities.shape[1]


def _csr_arrays(kernel: Kernel):
    cached = getattr(kernel, "_csr_cache", None)
    if cached is None:
        w = kernel.weights
        cached = (w.indptr.astype(np.int64), w.indices.astype(np.int64),
                  w.data.astype(np.float64))
        kernel._csr_cache = cached
    return cached


def default_grid(horizon: float, record_dt: float | None) -> np.ndarray:
    if record_dt is None:
        record_dt = horizon / 512.0
    m = int(np.floor(horizon / record_dt + 1e-9))
    grid = np.arange(m + 1) * record_dt
    if grid[-1] < horizon - 1e-12 * max(1.0, horizon):
        grid = np.append(grid, horizon)
    grid[-1] = horizon
    return grid


def step(kernel: Kernel, game: GameSpec, xi: np.ndarray, rng: np.random.Generator):
    """One CTMC transition; returns (holding_time, new_xi, event record).

    The total rate N (1 + mu_total) never depends on the state.
    """
    n = kernel.n
    mut_total = game.mutation_total
    lam = n * (1.0 + mut_total)
    hold = rng.exponential(1.0 / lam)
    xi_new = np.array(xi, copy=True)
    x = int(rng.integers(n))
    if rng.random() < 1.0 / (1.0 + mut_total):
        from .game import perturbed_row

        row = perturbed_row(kernel, game, xi, x)
        y = int(rng.choice(n, p=row))
        old, new, kind = int(xi[x]), int(xi[y]), "death-birth"
    else:
        probs = game.mutation / mut_total
        new = int(rng.choice(game.s, p=probs))
        old, kind = int(xi[x]), "mutation"
    xi_new[x] = new
    record = {"time": hold, "kind": kind, "site": x, "old": old, "new": new,
              "total_rate": lam}
    return hold, xi_new, record


def simulate(kernel: Kernel, game: GameSpec, xi0: np.ndarray, horizon: float,
             record_dt: float | None = None, seed: int = 0,
             record_events: bool = False, stop_on_fixation: bool = True,
             grid: np.ndarray | None = None) -> tuple[Trajectory, EventLog | None]:
    """Run one replica to time `horizon`, recording densities on a grid.

    `seed` is the raw stream seed for this replica (derive it with
    stream_seed(master, replica) for ensembles).  With record_events=True the
    full jump history is returned for replay-based decomposition.
    """
    indptr, indices, qdata = _csr_arrays(kernel)
    types = np.asarray(xi0, dtype=np.int8).copy()
    if len(types) != kernel.n:
        raise ValueError("configuration length does not match kernel size")
    if types.min() < 0 or types.max() >= game.s:
        raise ValueError("configuration labels outside 0..s-1")
    if grid is None:
        grid = default_grid(horizon, record_dt)
    lam = kernel.n * (1.0 + game.mutation_total)
    cap = int(lam * horizon * 1.5 + 1024) if record_events else 0
    while True:
        ev_time = np.empty(cap)
        ev_kind = np.empty(cap, dtype=np.int8)
        ev_site = np.empty(cap, dtype=np.int64)
        ev_old = np.empty(cap, dtype=np.int8)
        ev_new = np.empty(cap, dtype=np.int8)
        dens = np.zeros((len(grid), game.s))
        qv = np.zeros((len(grid), game.s))
        sim_types = types.copy()
        n_events, status, fix_time = _simloop.run_sim(
            indptr, indices, qdata, kernel.pi, game.payoff, float(game.w),
            game.mutation, sim_types, float(horizon), grid, np.uint64(seed),
            record_events, ev_time, ev_kind, ev_site, ev_old, ev_new,
            stop_on_fixation, dens, qv,
        )
        if status != _simloop.STATUS_OVERFLOW:
            break
        cap *= 2
    fixation = fix_time if status == _simloop.STATUS_FIXATED else None
    neutral = game.w == 0.0 and game.mutation_total == 0.0 and grid[0] == 0.0
    comps = None
    if neutral:
        # under the pure voter dynamics I = R = 0, so M is just p - p(0)
        comps = Components(drift=np.zeros_like(dens), remainder=np.zeros_like(dens),
                           martingale=dens - dens[0], qv=qv)
    traj = Trajectory(grid=grid, densities=dens, components=comps,
                      fixation_time=fixation, final_types=sim_types)
    log = None
    if record_events:
        log = EventLog(times=ev_time[:n_events].copy(), kinds=ev_kind[:n_events].copy(),
                       sites=ev_site[:n_events].copy(), olds=ev_old[:n_events].copy(),
                       news=ev_new[:n_events].copy(), t_end=float(horizon),
                       seed=int(seed), total_rate=lam, fixation_time=fixation)
    return traj, log


def initial_configuration(kind: str, kernel: Kernel, s: int,
                          rng: np.random.Generator, param: float | None = None,
                          xi: np.ndarray | None = None) -> np.ndarray:
    """Initial conditions: 'fixed', 'uniform', or 'bernoulli' (two types)."""
    if kind == "fixed":
        return np.asarray(xi, dtype=np.int8).copy()
    if kind == "uniform":
        return rng.integers(0, s, size=kernel.n).astype(np.int8)
    if kind == "bernoulli":
        if s != 2:
            raise ValueError("bernoulli initial condition needs two types")
        return (rng.random(kernel.n) < float(param)).astype(np.int8)
    raise ValueError(f"unknown initial condition {kind!r}")


def ensemble(kernel: Kernel, game: GameSpec, init: tuple, horizon: float,
             replicas: int, master_seed: int, record_dt: float | None = None,
             stop_on_fixation: bool = True, threads: int = 1,
             grid: np.ndarray | None = None) -> list[Trajectory]:
    """Independent replicas with per-replica streams; order-independent.

    `init` is ('fixed', xi0), ('uniform',) or ('bernoulli', p).  Replica r
    draws its initial condition from stream (master, r, 1) and its event
    stream from (master, r, 0), so results do not depend on scheduling.
    """
    if grid is None:
        grid = default_grid(horizon, record_dt)

    def one(r: int) -> Trajectory:
        rng = replica_rng(master_seed, r, 1)
        kind, *rest = init
        if kind == "fixed":
            xi0 = initial_configuration("fixed", kernel, game.s, rng, xi=rest[0])
        elif kind == "bernoulli":
            xi0 = initial_configuration("bernoulli", kernel, game.s, rng, param=rest[0])
        else:
            xi0 = initial_configuration("uniform", kernel, game.s, rng)
        traj, _ = simulate(kernel, game, xi0, horizon, seed=stream_seed(master_seed, r, 0),
                           stop_on_fixation=stop_on_fixation, grid=grid)
        return traj

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(replicas)))
    return [one(r) for r in range(replicas)]


def drift_vector(kernel: Kernel, game: GameSpec, xi: np.ndarray) -> np.ndarray:
    """Dbar_sigma(xi) for every sigma, via the edge double sum."""
    s = game.s
    q = kernel.weights
    pi = kernel.pi
    a, b = expansion_coefficients(kernel, game, xi)
    qb = q @ b
    out = np.empty(s)
    ind = (np.arange(s)[:, None] == np.asarray(xi)[None, :]).astype(np.float64)
    for sig in range(s):
        e = ind[sig]
        term_in = pi @ (a * (q @ e) - q @ (e * b))
        term_out = pi @ (e * (a - qb))
        out[sig] = term_in - term_out
    return out


def remainder_vector(kernel: Kernel, game: GameSpec, xi: np.ndarray) -> np.ndarray:
    """Second-order integrand: sum over edges of pi q [jump] R^w, per type."""
    s = game.s
    q = kernel.weights
    pi = kernel.pi
    a, b = expansion_coefficients(kernel, game, xi)
    g = a / (1.0 - game.w * a)
    qb = q @ b
    out = np.empty(s)
    ind = (np.arange(s)[:, None] == np.asarray(xi)[None, :]).astype(np.float64)
    for sig in range(s):
        e = ind[sig]
        out[sig] = (pi * g) @ (a * (q @ e) - q @ (e * b) - e * a + e * qb)
    return out


def covariation_rates(kernel: Kernel, game: GameSpec, xi: np.ndarray) -> np.ndarray:
    """d/dt <M_sigma, M_sigma'> at configuration xi: sum of rate * jump * jump.

    A death-birth at x <- y carries rate q^w(x, y, xi) and moves density mass
    pi(x) from xi(x) to xi(y); a mutation of x to sigma carries rate mu(sigma)
    and moves pi(x) from xi(x) to sigma.
    """
    s = game.s
    pi2 = kernel.pi ** 2
    q = kernel.weights
    ind = (np.arange(s)[:, None] == np.asarray(xi)[None, :]).astype(np.float64)
    if game.w > 0.0:
        a, b = expansion_coefficients(kernel, game, xi)
        h = 1.0 - game.w * b
        front = pi2 / (1.0 - game.w * a)
    else:
        h = np.ones(kernel.n)
        front = pi2
    out = np.zeros((s, s))
    qh_sig = [q @ (h * ind[sig]) for sig in range(s)]
    qh_tot = q @ h
    for sig in range(s):
        for sg2 in range(sig, s):
            e, f = ind[sig], ind[sg2]
            inner = q @ (h * e * f) - e * qh_sig[sg2] - f * qh_sig[sig] + e * f * qh_tot
            val = float(front @ inner)
            out[sig, sg2] = val
            out[sg2, sig] = val
    if game.mutation_total > 0.0:
        dens2 = ind @ pi2
        total2 = pi2.sum()
        for sig in range(s):
            out[sig, sig] += game.mutation[sig] * (total2 - dens2[sig])
            out[sig, sig] += (game.mutation_total - game.mutation[sig]) * dens2[sig]
            for sg2 in range(s):
                if sg2 != sig:
                    cross = -game.mutation[sig] * dens2[sg2] - game.mutation[sg2] * dens2[sig]
                    out[sig, sg2] += cross
    return out


def decompose(kernel: Kernel, game: GameSpec, log: EventLog, xi0: np.ndarray,
              grid: np.ndarray, with_predictable_qv: bool = False) -> Trajectory:
    """Replay an event log and reconstruct the exact pathwise decomposition.

    Between events all integrands are constant, so the drift and remainder
    integrals are exact rate x holding-time sums; the martingale part is the
    residual M = p - p(0) - I - R.  Raises LogMismatch when the log does not
    replay from xi0.
    """
    s = game.s
    pi = kernel.pi
    types = np.asarray(xi0, dtype=np.int64).copy()
    grid = np.asarray(grid, dtype=np.float64)
    m = len(grid)

    def density() -> np.ndarray:
        return np.bincount(types, weights=pi, minlength=s)[:s]

    def integrands() -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        p = density()
        if game.w > 0.0:
            di = game.w * drift_vector(kernel, game, types)
            ri = game.w ** 2 * remainder_vector(kernel, game, types)
        else:
            di = np.zeros(s)
            ri = np.zeros(s)
        di = di + game.mutation * (1.0 - p) - (game.mutation_total - game.mutation) * p
        ci = covariation_rates(kernel, game, types) if with_predictable_qv else None
        return di, ri, ci

    p0 = np.bincount(types, weights=pi, minlength=s)[:s].copy()
    dens = np.zeros((m, s))
    drift = np.zeros((m, s))
    rem = np.zeros((m, s))
    qv = np.zeros((m, s))
    pqv = np.zeros((m, s, s)) if with_predictable_qv else None

    acc_i = np.zeros(s)
    acc_r = np.zeros(s)
    acc_qv = np.zeros(s)
    acc_c = np.zeros((s, s))
    cur = 0.0
    gi = 0
    di, ri, ci = integrands()

    def advance_to(t: float):
        nonlocal cur, gi
        while gi < m and grid[gi] <= t + 1e-15:
            dt = grid[gi] - cur
            acc_i_g = acc_i + di * dt
            acc_r_g = acc_r + ri * dt
            dens[gi] = density()
            drift[gi] = acc_i_g
            rem[gi] = acc_r_g
            qv[gi] = acc_qv
            if with_predictable_qv:
                pqv[gi] = acc_c + ci * (grid[gi] - cur)
            gi += 1

    for i in range(len(log)):
        t = log.times[i]
        advance_to(t)
        dt = t - cur
        acc_i += di * dt
        acc_r += ri * dt
        if with_predictable_qv:
            acc_c += ci * dt
        cur = t
        x = int(log.sites[i])
        old = int(log.olds[i])
        new = int(log.news[i])
        if types[x] != old:
            raise LogMismatch(f"event {i}: log says site {x} held {old}, replay has {types[x]}")
        if new != old:
            types[x] = new
            acc_qv[old] += pi[x] ** 2
            acc_qv[new] += pi[x] ** 2
            di, ri, ci = integrands()

    # tail after the last event (constant state up to t_end)
    advance_to(log.t_end)

    mart = dens - p0[None, :] - drift - rem
    comps = Components(drift=drift, remainder=rem, martingale=mart, qv=qv,
                       predictable_qv=pqv)
    return Trajectory(grid=grid, densities=dens, components=comps,
                      fixation_time=log.fixation_time)
