"""Brute-force ground truth on tiny systems.

The full jump-rate matrix of the configuration process is assembled over all
(#types)^N states, so expectations E[f(xi_t)] can be computed to a documented
truncation error by uniformization: with Lambda = N (1 + mu_total) the matrix
P = I + L / Lambda is substochastic-free (a proper stochastic matrix), and

    E_{xi0}[f(xi_t)] = sum_k  pois(Lambda t; k) (delta_{xi0}' P^k) f.

The same machinery yields both sides of the coalescing duality: the moment
E[prod_i 1_{sigma_i}(xi_t(x_i))] of the neutral model equals the expectation
of prod_i 1_{sigma_i}(xi_0(B^{x_i}_t)) over coalescing walkers, and with
mutation the time-reversed ancestral representation (first mutation mark
wins, otherwise inherit from the initial configuration) is sampled directly.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from ._simloop import mutation_dual_samples
from .dynamics import stream_seed
from .errors import SelectionNotZero, SizeLimit
from .game import GameSpec, fitness_brackets
from .graphs import Kernel

STATE_CAP = 10 ** 6
TRUNCATION_EPS = 1e-12


def state_count(kernel: Kernel, s: int) -> int:
    return s ** kernel.n


def encode(xi: np.ndarray, s: int) -> int:
    """Base-s integer with site 0 as the least significant digit."""
    code = 0
    for x in reversed(range(len(xi))):
        code = code * s + int(xi[x])
    return code


def decode(code: int, s: int, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.int8)
    for x in range(n):
        out[x] = code % s
        code //= s
    return out


def build_generator(kernel: Kernel, game: GameSpec) -> sp.csr_matrix:
    """Exact sparse jump-rate matrix of the process over all configurations.

    Row sums are zero; death-birth rates follow the fitness-weighted
    replacement law and every site mutates to sigma at rate mu(sigma).
    """
    n, s = kernel.n, game.s
    dim = state_count(kernel, s)
    if dim > STATE_CAP:
        raise SizeLimit(f"generator needs {dim} states, cap {STATE_CAP}")
    rows, cols, vals = [], [], []
    powers = np.array([s ** x for x in range(n)], dtype=np.int64)
    for code in range(dim):
        xi = decode(code, s, n)
        brackets = fitness_brackets(kernel, game, xi)
        for x in range(n):
            idx, qrow = kernel.row(x)
            weights = qrow * brackets[idx]
            weights = weights / weights.sum()
            rates = np.zeros(s)
            for y, wgt in zip(idx, weights):
                rates[xi[y]] += wgt
            rates += game.mutation
            for sigma in range(s):
                if sigma != xi[x] and rates[sigma] > 0:
                    target = code + (sigma - int(xi[x])) * powers[x]
                    rows.append(code)
                    cols.append(int(target))
                    vals.append(rates[sigma])
    gen = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    gen = gen - sp.diags(np.asarray(gen.sum(axis=1)).ravel())
    return gen.tocsr()


def expectation(generator: sp.csr_matrix, kernel: Kernel, game: GameSpec,
                xi0: np.ndarray, t: float, observable) -> float:
    """E_{xi0}[observable(xi_t)] by uniformization, truncation error <= 1e-12.

    `observable` maps a configuration array to a real; it is tabulated over
    the state space once per call.
    """
    dim = generator.shape[0]
    s = game.s
    n = kernel.n
    f = np.empty(dim)
    for code in range(dim):
        f[code] = observable(decode(code, s, n))
    lam = n * (1.0 + game.mutation_total)
    p = (sp.identity(dim, format="csr") + generator / lam).tocsr()
    rate = lam * t
    kmax = 1 if rate == 0 else int(poisson.isf(TRUNCATION_EPS, rate)) + 10
    weights = poisson.pmf(np.arange(kmax + 1), rate)
    vec = np.zeros(dim)
    vec[encode(np.asarray(xi0), s)] = 1.0
    pt = p.T.tocsr()
    total = 0.0
    for k in range(kmax + 1):
        total += weights[k] * float(vec @ f)
        if k < kmax:
            vec = pt @ vec
    return total


def transition_semigroup_action(generator: sp.csr_matrix, lam: float,
                                vec: np.ndarray, t: float) -> np.ndarray:
    """vec' exp(t L) for a generator uniformized at rate lam."""
    dim = generator.shape[0]
    p = (sp.identity(dim, format="csr") + generator / lam).tocsr().T.tocsr()
    rate = lam * t
    kmax = 1 if rate == 0 else int(poisson.isf(TRUNCATION_EPS, rate)) + 10
    weights = poisson.pmf(np.arange(kmax + 1), rate)
    out = np.zeros(dim)
    cur = vec.copy()
    for k in range(kmax + 1):
        out += weights[k] * cur
        if k < kmax:
            cur = p @ cur
    return out


def _coalescing_pair_semigroup(kernel: Kernel, x1: int, x2: int, t: float) -> np.ndarray:
    """Law at time t of a coalescing pair started at (x1, x2), on N^2 states.

    Off the diagonal the walkers move independently at rate 1 each; on the
    diagonal they move together as a single rate-1 chain.
    """
    n = kernel.n
    q = kernel.weights
    eye = sp.identity(n, format="csr")
    full = (sp.kron(q, eye) + sp.kron(eye, q)).tolil()
    flat_diag = np.arange(n) * n + np.arange(n)
    for d, code in enumerate(flat_diag):
        full.rows[code] = []
        full.data[code] = []
    full = full.tocsr()
    # diagonal states: joint moves (x, x) -> (y, y) at rate q(x, y)
    qc = kernel.weights.tocoo()
    joint = sp.coo_matrix((qc.data, (qc.row * n + qc.row, qc.col * n + qc.col)),
                          shape=(n * n, n * n))
    moves = (full + joint.tocsr()).tocsr()
    out_rates = np.asarray(moves.sum(axis=1)).ravel()
    gen = moves - sp.diags(out_rates)
    vec = np.zeros(n * n)
    vec[x1 * n + x2] = 1.0
    return transition_semigroup_action(gen.tocsr(), 2.0, vec, t)


def duality_check(kernel: Kernel, mutation: np.ndarray, xi0: np.ndarray,
                  sites: tuple[int, ...], types: tuple[int, ...], t: float,
                  s: int = 2, mc_runs: int = 100_000, seed: int = 0,
                  w: float = 0.0) -> dict:
    """Both sides of the ancestral duality for the neutral (w = 0) model.

    lhs = E_{xi0}[prod_i 1_{types_i}(xi_t(sites_i))] by uniformization of the
    full generator.  rhs traces the coalescing dual: exact for one or two
    sites without mutation, Monte Carlo (with the mutation-mark
    representation) otherwise.  Returns lhs, rhs, |difference| and the Monte
    Carlo standard error when sampling was used.
    """
    if w != 0.0:
        raise SelectionNotZero("the ancestral duality is a neutral-model identity")
    sites = tuple(int(x) for x in sites)
    types = tuple(int(a) for a in types)
    if len(sites) != len(set(sites)):
        raise ValueError("dual sites must be distinct")
    if len(sites) > 3:
        raise ValueError("duality check supports at most three sites")
    mutation = np.asarray(mutation, dtype=np.float64)
    game = GameSpec(payoff=np.zeros((s, s)), mutation=mutation, w=0.0)
    gen = build_generator(kernel, game)
    xi0 = np.asarray(xi0, dtype=np.int8)

    def observable(xi: np.ndarray) -> float:
        val = 1.0
        for x, a in zip(sites, types):
            val *= 1.0 if xi[x] == a else 0.0
        return val

    lhs = expectation(gen, kernel, game, xi0, t, observable)

    mut_total = float(mutation.sum())
    stderr = None
    if mut_total == 0.0 and len(sites) == 1:
        heat = kernel.heat_kernel(t)
        rhs = float(heat[sites[0]] @ (xi0 == types[0]).astype(np.float64))
    elif mut_total == 0.0 and len(sites) == 2:
        law = _coalescing_pair_semigroup(kernel, sites[0], sites[1], t)
        ind1 = (xi0 == types[0]).astype(np.float64)
        ind2 = (xi0 == types[1]).astype(np.float64)
        rhs = float(law @ np.outer(ind1, ind2).ravel())
    else:
        starts = np.full((mc_runs, 3), -1, dtype=np.int64)
        for j, x in enumerate(sites):
            starts[:, j] = x
        out_types = np.full((mc_runs, 3), -1, dtype=np.int8)
        w = kernel.weights
        mutation_dual_samples(w.indptr.astype(np.int64), w.indices.astype(np.int64),
                              w.data, xi0, starts, mutation, float(t),
                              np.uint64(stream_seed(seed, 31)), out_types)
        match = np.ones(mc_runs, dtype=bool)
        for j, a in enumerate(types):
            match &= out_types[:, j] == a
        rhs = float(match.mean())
        stderr = float(match.std(ddof=1) / np.sqrt(mc_runs))
    return {"lhs": lhs, "rhs": rhs, "diff": abs(lhs - rhs), "stderr": stderr}
