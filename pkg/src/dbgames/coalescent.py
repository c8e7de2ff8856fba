"""Coalescing rate-1 chains: exact meeting-time laws and tail constants.

Two (or three) walkers move as independent rate-1 q-chains until they occupy
the same site, after which they move together.  The first meeting time of a
pair is the absorption time of the product chain killed on the diagonal.  All
exact quantities here reduce to uniformization scalars of that killed chain:
with jump matrix P (pick a walker uniformly, move it) and initial law p0,

    v_k = p0' P^k 1,
    P(M > t)                        = sum_k  pois(2t; k) v_k,
    int_0^t P(M > s) ds             = (1/2) sum_k  P(Pois(2t) > k) v_k,
    int_0^t 2 e^{-2(t-s)} P(M>s) ds = sum_k  pois(2t; k+1) v_k,

where pois(m; k) is the Poisson(m) mass at k.  Every sum is a positive
mixture, so there is no cancellation; truncation error is bounded by the
Poisson tail.  Mean absorption times come from one linear solve Q m = -1.

The tail constants are finite-size estimates of the rescaled joint meeting
tails

    kappa_0(t)       = 2 gamma nu1 P(M_{V,V'} > s t)
    kappa_l(t)       = 2 gamma nu1 P(M_{U_0,U_l} > s t)
    kappa_{(a,b)|c}  = 2 gamma nu1 P(M_{U_c,U_a} > s t, M_{U_c,U_b} > s t)
    kappa_{a|b|c}    = 2 gamma nu1 P(all three pairwise meetings > s t)

evaluated on a t-grid at a scale s (default sqrt(gamma)); a flat profile in t
is the finite-size stand-in for the constants' scale-free limits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from ._simloop import pair_meeting_times, triple_meeting_times
from .dynamics import stream_seed
from .errors import InsufficientSamples, SizeLimit
from .graphs import Kernel

PAIR_STATE_CAP = 4_200_000        # ordered off-diagonal pairs (N ~ 2000)
TRIPLE_STATE_CAP = 1_050_000      # ordered distinct triples (N = 100)
DENSE_SOLVE_CAP = 3_000           # states handled by a dense LU
TAIL_EPS = 1e-14


def _poisson_terms(rate: float, kmax: int) -> np.ndarray:
    return poisson.pmf(np.arange(kmax + 1), rate)


def _kmax_for(rate: float) -> int:
    if rate <= 0:
        return 1
    return int(poisson.isf(TAIL_EPS, rate)) + 10


@dataclass
class PairLaw:
    """Initial distribution of a walker pair.

    kind 'UU': independent stationary sites (atom nu1 on the diagonal);
    kind 'VV': size-biased adjacent pair pi(x)^2 q(x, y) / nu1;
    kind 'U0Ul': ell steps apart along the stationary discrete chain;
    kind 'fixed': a named ordered pair.
    """

    kind: str
    ell: int | None = None
    pair: tuple[int, int] | None = None

    def label(self) -> str:
        if self.kind == "U0Ul":
            return f"U0U{self.ell}"
        if self.kind == "fixed":
            return f"fixed{self.pair}"
        return self.kind


@dataclass
class MeetingLaw:
    """Survival function of a meeting time, exact or empirical."""

    tgrid: np.ndarray
    survival: np.ndarray
    atom: float                    # P(M = 0), pairs started coincident
    mode: str                      # 'exact' | 'mc'
    gamma: float | None = None     # E[M] under the initial law
    samples: np.ndarray | None = None


@dataclass
class KappaEstimates:
    """Finite-size tail constants on a t-grid, at one scale s."""

    s_used: float
    tgrid: np.ndarray
    values: dict = field(default_factory=dict)    # name -> array over tgrid
    stderr: dict = field(default_factory=dict)    # name -> float (mc entries)
    mode: str = "exact"
    gamma: float = float("nan")
    nu1: float = float("nan")

    def value(self, name: str) -> float:
        """Scalar estimate: the t = 1 entry (middle of the default grid)."""
        vals = self.values[name]
        idx = int(np.argmin(np.abs(self.tgrid - 1.0)))
        return float(vals[idx])

    def plateau_spread(self, name: str) -> float:
        """Max relative variation across the t-grid: how far the profile
        strays from the reported t = 1 value, as a fraction of that value."""
        vals = self.values[name]
        center = self.value(name)
        if center <= 0:
            return float("inf")
        return float(np.max(np.abs(vals - center)) / center)

    @property
    def worst_plateau_spread(self) -> float:
        return max(self.plateau_spread(k) for k in self.values)


class PairChain:
    """Product chain of two coalescing walkers, killed on the diagonal."""

    def __init__(self, kernel: Kernel):
        n = kernel.n
        if n * (n - 1) > PAIR_STATE_CAP:
            raise SizeLimit(f"pair chain needs {n * (n - 1)} states, cap {PAIR_STATE_CAP}")
        self.kernel = kernel
        self.n = n
        q = kernel.weights
        eye = sp.identity(n, format="csr")
        full = sp.kron(q, eye, format="csr") + sp.kron(eye, q, format="csr")
        flat = np.arange(n * n)
        self.keep = flat[flat // n != flat % n]
        sub = full[self.keep][:, self.keep].tocsr()
        self.generator = (sub - 2.0 * sp.identity(len(self.keep), format="csr")).tocsr()
        self.jump = (sub * 0.5).tocsr()
        self._jump_t = self.jump.T.tocsr()
        self._lookup = np.full(n * n, -1, dtype=np.int64)
        self._lookup[self.keep] = np.arange(len(self.keep))
        self._symmetric = kernel.is_symmetric()
        self._mean_vector: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return len(self.keep)

    def initial_vector(self, law_matrix: sp.spmatrix) -> tuple[np.ndarray, float]:
        """Split an ordered-pair law into (off-diagonal weights, diagonal atom)."""
        coo = sp.coo_matrix(law_matrix)
        p0 = np.zeros(self.n_states)
        on_diag = coo.row == coo.col
        atom = float(coo.data[on_diag].sum())
        rows, cols, data = coo.row[~on_diag], coo.col[~on_diag], coo.data[~on_diag]
        np.add.at(p0, self._lookup[rows.astype(np.int64) * self.n + cols], data)
        return p0, atom

    def survival_scalars(self, p0: np.ndarray, kmax: int) -> np.ndarray:
        """v_k = p0' P^k 1 for k = 0..kmax; nonincreasing, in [0, 1]."""
        ones = np.ones(self.n_states)
        v = np.empty(kmax + 1)
        vec = p0.copy()
        for k in range(kmax + 1):
            v[k] = float(vec @ ones)
            if k < kmax:
                vec = self._jump_t @ vec
        return v

    def survival_at(self, v: np.ndarray, times: np.ndarray) -> np.ndarray:
        out = np.empty(len(times))
        for i, t in enumerate(times):
            rate = 2.0 * t
            kk = min(len(v) - 1, _kmax_for(rate))
            out[i] = float(_poisson_terms(rate, kk) @ v[: kk + 1])
        return out

    def integral_survival_at(self, v: np.ndarray, times: np.ndarray) -> np.ndarray:
        """int_0^t P(M > s) ds from the same scalars."""
        out = np.empty(len(times))
        ks = np.arange(len(v))
        for i, t in enumerate(times):
            sf = poisson.sf(ks, 2.0 * t)
            out[i] = 0.5 * float(sf @ v)
        return out

    def exp_convolution_at(self, v: np.ndarray, times: np.ndarray) -> np.ndarray:
        """int_0^t 2 e^{-2(t-s)} P(M > s) ds from the same scalars."""
        out = np.empty(len(times))
        for i, t in enumerate(times):
            rate = 2.0 * t
            kk = min(len(v) - 1, _kmax_for(rate))
            pmf_shifted = poisson.pmf(np.arange(1, kk + 2), rate)
            out[i] = float(pmf_shifted @ v[: kk + 1])
        return out

    def kmax_for_times(self, times: np.ndarray) -> int:
        return _kmax_for(2.0 * float(np.max(times)))

    def mean_absorption(self, p0: np.ndarray) -> float:
        """E[M] under p0 (diagonal atom contributes zero): one linear solve."""
        if self._mean_vector is None:
            self._mean_vector = _solve_killed(self.generator, np.ones(self.n_states),
                                              self._symmetric)
        return float(p0 @ self._mean_vector)


def _solve_killed(generator: sp.csr_matrix, rhs: np.ndarray, symmetric: bool) -> np.ndarray:
    """Solve (-Q) m = rhs for a killed-chain generator Q (an M-matrix)."""
    a = (-generator).tocsr()
    n = a.shape[0]
    if n <= DENSE_SOLVE_CAP:
        import scipy.linalg as sla

        return sla.solve(a.toarray(), rhs)
    if symmetric:
        try:
            import pyamg

            ml = pyamg.smoothed_aggregation_solver(a.tocsr(), max_coarse=500)
            x = ml.solve(rhs, tol=1e-12, accel="cg", maxiter=400)
            if np.linalg.norm(a @ x - rhs) <= 1e-9 * np.linalg.norm(rhs):
                return x
        except Exception:
            pass
        x, info = spla.cg(a, rhs, rtol=1e-12, maxiter=20000, M=sp.diags(1.0 / a.diagonal()))
        if info != 0:
            raise RuntimeError(f"CG failed to converge (info={info})")
        return x
    x = spla.spsolve(a.tocsc(), rhs)
    return x


def _q_power(kernel: Kernel, ell: int) -> sp.csr_matrix:
    out = sp.identity(kernel.n, format="csr")
    for _ in range(ell):
        out = (out @ kernel.weights).tocsr()
    return out


def pair_law_matrix(kernel: Kernel, law: PairLaw) -> sp.spmatrix:
    """Ordered-pair initial distribution as a sparse N x N matrix."""
    pi = kernel.pi
    if law.kind == "UU":
        return sp.coo_matrix(np.outer(pi, pi))
    if law.kind == "VV":
        if kernel.nu1 <= 0:
            raise ValueError("VV law needs nu1 > 0")
        return (sp.diags(pi * pi) @ kernel.weights / kernel.nu1).tocoo()
    if law.kind == "U0Ul":
        if law.ell is None or law.ell < 0:
            raise ValueError("U0Ul law needs a nonnegative lag")
        return (sp.diags(pi) @ _q_power(kernel, law.ell)).tocoo()
    if law.kind == "fixed":
        x, y = law.pair
        return sp.coo_matrix(([1.0], ([x], [y])), shape=(kernel.n, kernel.n))
    raise ValueError(f"unknown pair law {law.kind!r}")


def gamma_mean_meeting_time(kernel: Kernel, chain: PairChain | None = None) -> float:
    """gamma = E[M_{U,U'}] for independent stationary starts."""
    chain = chain or PairChain(kernel)
    p0, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("UU")))
    return chain.mean_absorption(p0)


def exact_meeting_law(kernel: Kernel, pair: PairLaw, tgrid,
                      chain: PairChain | None = None,
                      with_gamma: bool = False) -> MeetingLaw:
    """Exact survival P(M > t) on a time grid via the killed product chain."""
    tgrid = np.asarray(tgrid, dtype=np.float64)
    chain = chain or PairChain(kernel)
    p0, atom = chain.initial_vector(pair_law_matrix(kernel, pair))
    v = chain.survival_scalars(p0, chain.kmax_for_times(tgrid))
    surv = chain.survival_at(v, tgrid)
    gam = chain.mean_absorption(p0) if with_gamma else None
    return MeetingLaw(tgrid=tgrid, survival=surv, atom=atom, mode="exact", gamma=gam)


def sample_pair_starts(kernel: Kernel, pair: PairLaw, samples: int,
                       rng: np.random.Generator) -> np.ndarray:
    law = sp.coo_matrix(pair_law_matrix(kernel, pair))
    probs = law.data / law.data.sum()
    picks = rng.choice(len(law.data), size=samples, p=probs)
    return np.stack([law.row[picks], law.col[picks]], axis=1).astype(np.int64)


def mc_meeting_law(kernel: Kernel, pair: PairLaw, tgrid, samples: int,
                   seed: int = 0, tmax: float | None = None) -> MeetingLaw:
    """Monte Carlo meeting times; censored at tmax (default: past the grid)."""
    if samples < 1000:
        raise InsufficientSamples(f"need at least 1000 samples, got {samples}")
    tgrid = np.asarray(tgrid, dtype=np.float64)
    if tmax is None:
        tmax = 4.0 * float(np.max(tgrid)) + 1.0
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    starts = sample_pair_starts(kernel, pair, samples, rng)
    w = kernel.weights
    times = pair_meeting_times(w.indptr.astype(np.int64), w.indices.astype(np.int64),
                               w.data, starts, float(tmax),
                               np.uint64(stream_seed(seed, 102)))
    surv = np.array([(times > t).mean() for t in tgrid])
    atom = float((times == 0.0).mean())
    return MeetingLaw(tgrid=tgrid, survival=surv, atom=atom, mode="mc", samples=times)


def ergodic_identity_residual(kernel: Kernel, tgrid, chain: PairChain | None = None) -> float:
    """Max residual of the stationarity identity linking the UU' and VV' laws:

    P(M_{U,U'} > t) = 1 - nu1 - 2 nu1 int_0^t P(M_{V,V'} > s) ds.
    """
    tgrid = np.asarray(tgrid, dtype=np.float64)
    chain = chain or PairChain(kernel)
    kmax = chain.kmax_for_times(tgrid)
    p_uu, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("UU")))
    p_vv, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("VV")))
    v_uu = chain.survival_scalars(p_uu, kmax)
    v_vv = chain.survival_scalars(p_vv, kmax)
    lhs = chain.survival_at(v_uu, tgrid)
    integral = chain.integral_survival_at(v_vv, tgrid)
    rhs = 1.0 - kernel.nu1 - 2.0 * kernel.nu1 * integral
    return float(np.max(np.abs(lhs - rhs)))


def shift_recursion_residual(kernel: Kernel, ell: int, tgrid,
                             chain: PairChain | None = None) -> float:
    """Max residual of the one-step shift recursion between lag laws:

    P(M_{U0,Ul} > t) = e^{-2t} P(U0 != Ul)
                       + int_0^t 2 e^{-2(t-s)} P(M_{U0,U(l+1)} > s) ds
                       - B_l int_0^t 2 e^{-2(t-s)} P(M_{K_l} > s) ds,

    where B_l = sum_x pi(x) q^l(x, x) and K_l starts from the B_l-normalized
    law pi(x) q^l(x, x) q(x, y).  B_1 = 0 because the kernel has zero trace.
    """
    if ell < 1:
        raise ValueError("lag must be >= 1")
    tgrid = np.asarray(tgrid, dtype=np.float64)
    chain = chain or PairChain(kernel)
    kmax = chain.kmax_for_times(tgrid)
    pi = kernel.pi

    p_l, atom_l = chain.initial_vector(pair_law_matrix(kernel, PairLaw("U0Ul", ell=ell)))
    p_l1, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("U0Ul", ell=ell + 1)))
    v_l = chain.survival_scalars(p_l, kmax)
    v_l1 = chain.survival_scalars(p_l1, kmax)
    lhs = chain.survival_at(v_l, tgrid)
    a_l = 1.0 - atom_l
    rhs = np.exp(-2.0 * tgrid) * a_l + chain.exp_convolution_at(v_l1, tgrid)

    qpow = _q_power(kernel, ell)
    diag = np.asarray(qpow.diagonal())
    b_l = float(pi @ diag)
    if b_l > 0.0:
        k_law = (sp.diags(pi * diag) @ kernel.weights / b_l).tocoo()
        p_k, _ = chain.initial_vector(k_law)
        v_k = chain.survival_scalars(p_k, kmax)
        rhs = rhs - b_l * chain.exp_convolution_at(v_k, tgrid)
    return float(np.max(np.abs(lhs - rhs)))


def comparison_inequality_check(kernel: Kernel, ell: int, s0: float, tgrid,
                                chain: PairChain | None = None) -> tuple[bool, float]:
    """Integrated-tail comparison between lag ell and lag 1, for s0 > 2:

    int_0^t P(M_{U0,Ul} > s0 s) ds
      <= sum_{j=1..l} prod_{k=1..j-1} (1 - e^{-2^{k+1} t})^{-1}
                      int_0^{2^j t} P(M_{U0,U1} > s0 s) ds.

    Returns (pass, worst margin RHS - LHS over the grid).
    """
    if s0 <= 2.0:
        raise ValueError("the comparison needs s0 > 2")
    tgrid = np.asarray(tgrid, dtype=np.float64)
    chain = chain or PairChain(kernel)
    horizon = s0 * float(np.max(tgrid)) * (2.0 ** ell)
    kmax = _kmax_for(2.0 * horizon)
    p_l, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("U0Ul", ell=ell)))
    p_1, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("U0Ul", ell=1)))
    v_l = chain.survival_scalars(p_l, kmax)
    v_1 = chain.survival_scalars(p_1, kmax)

    worst = np.inf
    for t in tgrid:
        lhs = chain.integral_survival_at(v_l, np.array([s0 * t]))[0] / s0
        rhs = 0.0
        prod = 1.0
        for j in range(1, ell + 1):
            if j > 1:
                prod /= 1.0 - np.exp(-(2.0 ** j) * t)
            upper = (2.0 ** j) * t
            rhs += prod * chain.integral_survival_at(v_1, np.array([s0 * upper]))[0] / s0
        worst = min(worst, rhs - lhs)
    return bool(worst >= -1e-12), float(worst)


def triple_law_coo(kernel: Kernel, lags: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Joint law of (U_{l0}, U_{l1}, U_{l2}) as COO triples (x, y, z, weight).

    The positions refer to the walkers in the order the lags are given.
    """
    order = np.argsort(lags)
    sorted_lags = [lags[i] for i in order]
    g1 = sorted_lags[1] - sorted_lags[0]
    g2 = sorted_lags[2] - sorted_lags[1]
    m1 = sp.coo_matrix(sp.diags(kernel.pi) @ _q_power(kernel, g1))
    q2 = _q_power(kernel, g2).tocsr()
    xs, ys, zs, ws = [], [], [], []
    for x, y, w in zip(m1.row, m1.col, m1.data):
        lo, hi = q2.indptr[y], q2.indptr[y + 1]
        cols = q2.indices[lo:hi]
        vals = q2.data[lo:hi]
        xs.append(np.full(len(cols), x))
        ys.append(np.full(len(cols), y))
        zs.append(cols)
        ws.append(w * vals)
    pos_sorted = [np.concatenate(xs), np.concatenate(ys), np.concatenate(zs)]
    weights = np.concatenate(ws)
    pos = [None, None, None]
    for slot, orig in enumerate(order):
        pos[orig] = pos_sorted[slot]
    return pos[0].astype(np.int64), pos[1].astype(np.int64), pos[2].astype(np.int64), weights


class TripleKilledChain:
    """Three coalescing walkers killed at the first pairwise meeting."""

    lam = 3.0

    def __init__(self, kernel: Kernel):
        n = kernel.n
        if n ** 3 > TRIPLE_STATE_CAP:
            raise SizeLimit(f"triple chain needs {n ** 3} states, cap {TRIPLE_STATE_CAP}")
        self.n = n
        q = kernel.weights
        eye = sp.identity(n, format="csr")
        full = (sp.kron(sp.kron(q, eye), eye) + sp.kron(sp.kron(eye, q), eye)
                + sp.kron(sp.kron(eye, eye), q)).tocsr()
        flat = np.arange(n ** 3)
        h, rem = flat // (n * n), flat % (n * n)
        a, b = rem // n, rem % n
        distinct = (h != a) & (h != b) & (a != b)
        self.keep = flat[distinct]
        sub = full[self.keep][:, self.keep].tocsr()
        self.jump_t = (sub.T / 3.0).tocsr()
        self._lookup = np.full(n ** 3, -1, dtype=np.int64)
        self._lookup[self.keep] = np.arange(len(self.keep))

    def initial_vector(self, xs, ys, zs, ws) -> np.ndarray:
        p0 = np.zeros(len(self.keep))
        flat = (xs * self.n + ys) * self.n + zs
        pos = self._lookup[flat]
        ok = pos >= 0
        np.add.at(p0, pos[ok], ws[ok])
        return p0

    def survival_scalars(self, p0: np.ndarray, kmax: int) -> np.ndarray:
        ones = np.ones(self.jump_t.shape[0])
        v = np.empty(kmax + 1)
        vec = p0.copy()
        for k in range(kmax + 1):
            v[k] = float(vec @ ones)
            if k < kmax:
                vec = self.jump_t @ vec
        return v

    def survival_at(self, v: np.ndarray, times: np.ndarray) -> np.ndarray:
        out = np.empty(len(times))
        for i, t in enumerate(times):
            rate = self.lam * t
            kk = min(len(v) - 1, _kmax_for(rate))
            out[i] = float(_poisson_terms(rate, kk) @ v[: kk + 1])
        return out

    def kmax_for_times(self, times: np.ndarray) -> int:
        return _kmax_for(self.lam * float(np.max(times)))


class HubKilledChain:
    """Hub walker killed on meeting either partner; the partners may coalesce.

    States are ordered distinct triples (hub, a, b) plus merged pairs
    (hub, m) after the partners meet; the merged pair moves as a killed
    two-walker chain.  State order: triples first, then pairs.
    """

    lam = 3.0

    def __init__(self, kernel: Kernel):
        n = kernel.n
        if n ** 3 > TRIPLE_STATE_CAP:
            raise SizeLimit(f"hub chain needs {n ** 3} states, cap {TRIPLE_STATE_CAP}")
        self.n = n
        q = kernel.weights.tocsr()
        eye = sp.identity(n, format="csr")
        full = (sp.kron(sp.kron(q, eye), eye) + sp.kron(sp.kron(eye, q), eye)
                + sp.kron(sp.kron(eye, eye), q)).tocsr()
        flat = np.arange(n ** 3)
        h, rem = flat // (n * n), flat % (n * n)
        a, b = rem // n, rem % n
        distinct = (h != a) & (h != b) & (a != b)
        self.keep_t = flat[distinct]
        n_t = len(self.keep_t)
        t_block = full[self.keep_t][:, self.keep_t].tocsr()

        pair_flat = np.arange(n * n)
        self.keep_m = pair_flat[pair_flat // n != pair_flat % n]
        n_m = len(self.keep_m)
        pair_full = (sp.kron(q, eye) + sp.kron(eye, q)).tocsr()
        m_block = pair_full[self.keep_m][:, self.keep_m].tocsr()

        self._lookup_t = np.full(n ** 3, -1, dtype=np.int64)
        self._lookup_t[self.keep_t] = np.arange(n_t)
        self._lookup_m = np.full(n * n, -1, dtype=np.int64)
        self._lookup_m[self.keep_m] = np.arange(n_m)

        # coupling: from (h, a, b), a jumping onto b (or b onto a) merges
        qc = q.tocoo()
        rows, cols, data = [], [], []
        hs = np.arange(n)
        for u, vtx, wgt in zip(qc.row, qc.col, qc.data):
            # a at u jumps onto b at vtx -> merged (h, vtx)
            mask = (hs != u) & (hs != vtx)
            hh = hs[mask]
            tri = (hh * n + u) * n + vtx
            rows.append(self._lookup_t[tri])
            cols.append(self._lookup_m[hh * n + vtx])
            data.append(np.full(mask.sum(), wgt))
            # b at u jumps onto a at vtx -> merged (h, vtx)
            tri2 = (hh * n + vtx) * n + u
            rows.append(self._lookup_t[tri2])
            cols.append(self._lookup_m[hh * n + vtx])
            data.append(np.full(mask.sum(), wgt))
        coupling = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_t, n_m),
        ).tocsr()

        top = sp.hstack([t_block, coupling], format="csr")
        bottom = sp.hstack([sp.csr_matrix((n_m, n_t)), m_block], format="csr")
        moves = sp.vstack([top, bottom], format="csr")
        # uniformize at rate 3: merged states keep a self-loop of weight 1
        self_loop = np.concatenate([np.zeros(n_t), np.ones(n_m)])
        jump = (moves + sp.diags(self_loop)) / 3.0
        self.jump_t = jump.T.tocsr()
        self.n_t = n_t
        self.n_m = n_m

    def initial_vector(self, xs, ys, zs, ws) -> np.ndarray:
        """Law given as (hub, a, b) positions; hub coincidences are dead mass."""
        p0 = np.zeros(self.n_t + self.n_m)
        tri_mask = (xs != ys) & (xs != zs) & (ys != zs)
        flat = (xs * self.n + ys) * self.n + zs
        np.add.at(p0, self._lookup_t[flat[tri_mask]], ws[tri_mask])
        merged = (ys == zs) & (xs != ys)
        np.add.at(p0, self.n_t + self._lookup_m[xs[merged] * self.n + ys[merged]], ws[merged])
        return p0

    survival_scalars = TripleKilledChain.survival_scalars
    survival_at = TripleKilledChain.survival_at
    kmax_for_times = TripleKilledChain.kmax_for_times


def sample_chain_triples(kernel: Kernel, lags: tuple[int, int, int], samples: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Positions of (U_{l0}, U_{l1}, U_{l2}) sampled from the stationary chain."""
    max_lag = max(lags)
    q = kernel.weights
    pos = rng.choice(kernel.n, size=samples, p=kernel.pi)
    path = np.empty((max_lag + 1, samples), dtype=np.int64)
    path[0] = pos
    indptr, indices, data = q.indptr, q.indices, q.data
    for step in range(1, max_lag + 1):
        r = rng.random(samples)
        new = np.empty(samples, dtype=np.int64)
        for i in range(samples):
            lo, hi = indptr[pos[i]], indptr[pos[i] + 1]
            c = np.cumsum(data[lo:hi])
            j = int(np.searchsorted(c, r[i] * c[-1]))
            new[i] = indices[lo + min(j, hi - lo - 1)]
        pos = new
        path[step] = pos
    return np.stack([path[lags[0]], path[lags[1]], path[lags[2]]], axis=1)


_HUB_ENTRIES = {
    (0, 2, 3): [("k23_0", (0, 2, 3)), ("k03_2", (2, 0, 3)), ("k02_3", (3, 0, 2))],
    (0, 1, 2): [("k12_0", (0, 1, 2)), ("k01_2", (2, 0, 1))],
}
_TRIPLE_ENTRIES = {(0, 2, 3): "k0_2_3", (0, 1, 2): "k0_1_2"}


def _mc_trio_estimates(kernel: Kernel, trio: tuple[int, int, int], times: np.ndarray,
                       scale: float, samples: int, seed: int,
                       est: KappaEstimates, t1: int) -> None:
    """Monte Carlo joint tails for one lag trio; one walker batch serves all."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7, trio[1], trio[2])))
    starts = sample_chain_triples(kernel, trio, samples, rng)
    w = kernel.weights
    tmax = float(np.max(times))
    mt = triple_meeting_times(w.indptr.astype(np.int64), w.indices.astype(np.int64),
                              w.data, starts, tmax,
                              np.uint64(stream_seed(seed, 8, trio[1], trio[2])))
    # walker j holds U_{trio[j]}; column order of mt is pairs (0,1), (0,2), (1,2)
    pair_cols = {(0, 1): 0, (0, 2): 1, (1, 2): 2}

    def cols_for_hub(hub: int) -> tuple[int, int]:
        others = [j for j in range(3) if j != hub]
        c1 = pair_cols[tuple(sorted((hub, others[0])))]
        c2 = pair_cols[tuple(sorted((hub, others[1])))]
        return c1, c2

    hub_ind = {}
    for name, lag_roles in _HUB_ENTRIES[trio]:
        hub_walker = trio.index(lag_roles[0])
        c1, c2 = cols_for_hub(hub_walker)
        ind = (mt[:, c1][:, None] > times[None, :]) & (mt[:, c2][:, None] > times[None, :])
        est.values[name] = scale * ind.mean(axis=0)
        est.stderr[name] = float(scale * ind[:, t1].std(ddof=1) / np.sqrt(samples))
        hub_ind[name] = ind
    tname = _TRIPLE_ENTRIES[trio]
    ind3 = ((mt[:, 0][:, None] > times[None, :]) & (mt[:, 1][:, None] > times[None, :])
            & (mt[:, 2][:, None] > times[None, :]))
    est.values[tname] = scale * ind3.mean(axis=0)
    est.stderr[tname] = float(scale * ind3[:, t1].std(ddof=1) / np.sqrt(samples))
    # identity-specific standard error: residual of hubA + hubC - triple - pair,
    # where the two hubs are the outer lags of the trio
    id_names = [n for n, roles in _HUB_ENTRIES[trio] if roles[0] in (trio[0], trio[2])]
    g = hub_ind[id_names[0]].astype(np.float64) + hub_ind[id_names[1]] - ind3
    est.stderr[f"identity{trio}"] = float(
        scale * g[:, t1].std(ddof=1) / np.sqrt(samples))


def estimate_kappas(kernel: Kernel, s: float | None = None, tgrid=(0.5, 1.0, 2.0),
                    mode: str = "auto", samples: int = 20_000, seed: int = 0,
                    chain: PairChain | None = None) -> KappaEstimates:
    """All tail constants at scale s (default sqrt(gamma)) over a t-grid.

    Pairwise tails and gamma are always exact (killed product chain).  The
    three-walker joint tails are exact when the triple state space fits
    (N^3 <= 1e6, or mode='exact'), and Monte Carlo otherwise; mode='mc'
    forces Monte Carlo.  Values are reported per grid time; `value()` reads
    the t = 1 entry, and plateau_spread exposes the flatness of the profile.
    """
    tgrid = np.asarray(tgrid, dtype=np.float64)
    chain = chain or PairChain(kernel)
    p_uu, _ = chain.initial_vector(pair_law_matrix(kernel, PairLaw("UU")))
    gamma = chain.mean_absorption(p_uu)
    if s is None:
        s = float(np.sqrt(gamma))
    if s < 1.0:
        raise ValueError(f"scale s must be >= 1, got {s}")
    scale = 2.0 * gamma * kernel.nu1
    times = s * tgrid
    est = KappaEstimates(s_used=float(s), tgrid=tgrid, mode=mode, gamma=gamma,
                         nu1=kernel.nu1)

    kmax = chain.kmax_for_times(times)
    for name, law in [("k0", PairLaw("VV")), ("k1", PairLaw("U0Ul", ell=1)),
                      ("k2", PairLaw("U0Ul", ell=2)), ("k3", PairLaw("U0Ul", ell=3))]:
        p0, _ = chain.initial_vector(pair_law_matrix(kernel, law))
        v = chain.survival_scalars(p0, kmax)
        est.values[name] = scale * chain.survival_at(v, times)
        est.stderr[name] = 0.0

    exact_triples = mode == "exact" or (mode == "auto" and kernel.n ** 3 <= 10 ** 6)
    if mode == "mc":
        exact_triples = False
    if not exact_triples and samples < 1000:
        raise InsufficientSamples(f"mc triple tails need >= 1000 samples, got {samples}")

    if exact_triples:
        hub_chain = HubKilledChain(kernel)
        tri_chain = TripleKilledChain(kernel)
        kmax3 = tri_chain.kmax_for_times(times)
        for trio in ((0, 2, 3), (0, 1, 2)):
            for name, lag_roles in _HUB_ENTRIES[trio]:
                xs, ys, zs, ws = triple_law_coo(kernel, lag_roles)
                p0 = hub_chain.initial_vector(xs, ys, zs, ws)
                v = hub_chain.survival_scalars(p0, kmax3)
                est.values[name] = scale * hub_chain.survival_at(v, times)
                est.stderr[name] = 0.0
            xs, ys, zs, ws = triple_law_coo(kernel, trio)
            p0 = tri_chain.initial_vector(xs, ys, zs, ws)
            v = tri_chain.survival_scalars(p0, kmax3)
            est.values[_TRIPLE_ENTRIES[trio]] = scale * tri_chain.survival_at(v, times)
            est.stderr[_TRIPLE_ENTRIES[trio]] = 0.0
            est.stderr[f"identity{trio}"] = 0.0
        est.mode = "exact"
    else:
        t1 = int(np.argmin(np.abs(tgrid - 1.0)))
        for trio in ((0, 2, 3), (0, 1, 2)):
            _mc_trio_estimates(kernel, trio, times, scale, samples, seed, est, t1)
        est.mode = "mc"
    return est


def kappa_identity_residual(estimates: KappaEstimates,
                            trio: tuple[int, int, int] = (0, 1, 2)) -> dict:
    """Residual of the inclusion identity

        kappa_{(l1,l2)|l0} + kappa_{(l0,l1)|l2} - kappa_{l0|l1|l2} = kappa_{|l2-l0|}

    at the t = 1 grid entry, together with its Monte Carlo standard error
    (zero in exact mode).  The three lags must be distinct.
    """
    l0, l1, l2 = trio
    if len({l0, l1, l2}) != 3:
        raise ValueError(f"lags must be all distinct, got {trio}")
    if trio == (0, 1, 2):
        lhs = (estimates.value("k12_0") + estimates.value("k01_2")
               - estimates.value("k0_1_2"))
        rhs = estimates.value("k2")
    elif trio == (0, 2, 3):
        lhs = (estimates.value("k23_0") + estimates.value("k02_3")
               - estimates.value("k0_2_3"))
        rhs = estimates.value("k3")
    else:
        raise ValueError(f"no estimates stored for trio {trio}")
    se = estimates.stderr.get(f"identity{trio}", 0.0)
    return {"trio": trio, "residual": abs(lhs - rhs), "lhs": lhs, "rhs": rhs,
            "stderr": se}


def scaling_diagnostics(stats: dict, plan: dict) -> dict:
    """Finite-size admissibility report for one kernel and scaling plan.

    stats: gamma, nu1, gap, tmix for the kernel; plan: theta, w, mu (vector).
    Reports the quantities whose vanishing (or boundedness) defines an
    admissible sequence; values only, no verdicts at a single size.
    """
    gamma, nu1 = float(stats["gamma"]), float(stats["nu1"])
    gap, tmix = float(stats["gap"]), float(stats["tmix"])
    theta = float(plan["theta"])
    w = float(plan.get("w", 0.0))
    mu = np.asarray(plan.get("mu", []), dtype=np.float64)
    gn = gamma * nu1
    report = {
        "gamma": gamma,
        "nu1": nu1,
        "gamma_nu1": gn,
        "decorrelation_half": gn * float(np.exp(-0.5 * theta)),
        "decorrelation_one": gn * float(np.exp(-1.0 * theta)),
        "mixing_gap_term": gn * float(np.exp(-gap * theta)),
        "mixing_tmix_term": (tmix / theta) * (1.0 + max(0.0, float(np.log(max(gamma / tmix, 1.0))))),
        "theta_over_gamma": theta / gamma,
        "slow_time_change": theta / gamma < 1.0,
        "w_inf_proxy": w * theta / (2.0 * gn),
        "w_theta": w * theta,
        "mu_inf_proxy": [float(m * theta) for m in mu],
        "gamma_nu1_over_theta": gn / theta,
    }
    return report


def ladder_trends(reports: list[dict]) -> dict:
    """Monotone-trend flags across a ladder of sizes (vanishing quantities)."""
    keys = ["decorrelation_one", "mixing_gap_term", "mixing_tmix_term",
            "theta_over_gamma", "gamma_nu1_over_theta"]
    out = {}
    for k in keys:
        vals = [r[k] for r in reports]
        out[k] = all(b <= a * (1.0 + 1e-9) for a, b in zip(vals, vals[1:]))
    return out
