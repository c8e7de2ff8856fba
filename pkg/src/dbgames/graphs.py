"""Finite irreducible reversible probability kernels and their spectral analysis.

A spatial structure is a pair (E, q): a finite vertex set and a row-stochastic
weight matrix with zero diagonal, irreducible and reversible with respect to
its stationary law pi.  The kernel caches the derived quantities that the rest
of the package consumes: pi, nu1 = sum_x pi(x)^2, the spectral gap, the total
variation mixing time, and the two-step return probabilities q^2(x, x).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InfeasibleDegree, NotIrreducible, NotReversible, NotStochastic, RetryLimit, SizeLimit

ROW_SUM_PRE_TOL = 1e-9
INVARIANT_TOL = 1e-12
DENSE_EIG_CAP = 4000
MIXING_REL_TOL = 1e-6
MIXING_THRESHOLD = 1.0 / (2.0 * np.e)
PAIRING_RETRY_LIMIT = 10_000


@dataclass
class Kernel:
    """Irreducible reversible probability kernel on a finite vertex set.

    Immutable after construction; safe to share across workers.  Spectral
    quantities are computed lazily and cached.
    """

    n: int
    weights: sp.csr_matrix
    pi: np.ndarray
    nu1: float
    meta: dict = field(default_factory=dict)
    _eig: tuple | None = field(default=None, repr=False)
    _gap: float | None = field(default=None, repr=False)
    _tmix: float | None = field(default=None, repr=False)
    _two_step: np.ndarray | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        if self._gap is None:
            self._gap = spectral_gap(self)
        return self._gap

    @property
    def tmix(self) -> float:
        if self._tmix is None:
            self._tmix = mixing_time(self)
        return self._tmix

    @property
    def two_step_return(self) -> np.ndarray:
        if self._two_step is None:
            q2 = (self.weights @ self.weights).tocsr()
            self._two_step = np.asarray(q2.diagonal())
        return self._two_step

    def is_symmetric(self, tol: float = INVARIANT_TOL) -> bool:
        d = self.weights - self.weights.T
        return len(d.data) == 0 or np.max(np.abs(d.data)) <= tol

    def neighbors(self, x: int) -> np.ndarray:
        return self.weights.indices[self.weights.indptr[x]:self.weights.indptr[x + 1]]

    def row(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.weights.indptr[x], self.weights.indptr[x + 1]
        return self.weights.indices[lo:hi], self.weights.data[lo:hi]

    def symmetrized_eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigendecomposition of diag(pi)^(1/2) q diag(pi)^(-1/2).

        The conjugated matrix is symmetric by detailed balance, so the
        spectrum is real.  Cached; refuses n beyond the dense cap.
        """
        if self._eig is None:
            if self.n > DENSE_EIG_CAP:
                raise SizeLimit(f"dense eigensolve capped at n={DENSE_EIG_CAP}, got {self.n}")
            sq = np.sqrt(self.pi)
            s = self.weights.toarray() * (sq[:, None] / sq[None, :])
            s = 0.5 * (s + s.T)
            vals, vecs = np.linalg.eigh(s)
            self._eig = (vals, vecs)
        return self._eig

    def heat_kernel(self, t: float) -> np.ndarray:
        """Transition matrix exp(t(q - 1)) of the rate-1 chain, computed spectrally."""
        vals, vecs = self.symmetrized_eig()
        sq = np.sqrt(self.pi)
        core = (vecs * np.exp(t * (vals - 1.0))) @ vecs.T
        p = core * (sq[None, :] / sq[:, None])
        return p

    def tv_distance(self, t: float) -> float:
        """Worst-case total variation distance to pi at time t."""
        p = self.heat_kernel(t)
        return float(0.5 * np.max(np.abs(p - self.pi[None, :]).sum(axis=1)))

    def to_json(self, **meta) -> str:
        coo = self.weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        edges = [[int(coo.row[i]), int(coo.col[i]), float(coo.data[i])] for i in order]
        doc = {"n": self.n, "edges": edges, "meta": {**self.meta, **meta}}
        return json.dumps(doc)


def _as_weight_matrix(weights) -> sp.csr_matrix:
    if sp.issparse(weights):
        return weights.tocsr().astype(np.float64)
    weights = np.asarray(weights)
    if weights.ndim == 2 and weights.shape[1] == 3 and weights.shape[0] != weights.shape[1]:
        # edge list [[x, y, w], ...]
        x = weights[:, 0].astype(np.int64)
        y = weights[:, 1].astype(np.int64)
        w = weights[:, 2].astype(np.float64)
        n = int(max(x.max(), y.max())) + 1
        return sp.csr_matrix((w, (x, y)), shape=(n, n))
    return sp.csr_matrix(np.asarray(weights, dtype=np.float64))


def _stationary_distribution(q: sp.csr_matrix) -> np.ndarray:
    n = q.shape[0]
    dense = q.toarray()
    if np.max(np.abs(dense - dense.T)) <= INVARIANT_TOL:
        return np.full(n, 1.0 / n)
    if n > DENSE_EIG_CAP:
        raise SizeLimit(f"stationary solve for non-symmetric kernels capped at n={DENSE_EIG_CAP}")
    a = np.vstack([dense.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi


def build_kernel(weights, meta: dict | None = None) -> Kernel:
    """Validate a weight matrix and assemble a Kernel.

    Accepts a dense square array, a sparse matrix, or an (m, 3) edge list.
    Rows must sum to 1 within 1e-9 (they are renormalized to machine
    precision), the diagonal must be exactly zero, the support digraph must
    be strongly connected, and the kernel must satisfy detailed balance with
    respect to its stationary law.
    """
    q = _as_weight_matrix(weights)
    if q.shape[0] != q.shape[1]:
        raise NotStochastic(f"matrix is not square: {q.shape}")
    n = q.shape[0]
    if len(q.data) and q.data.min() < 0:
        coo = q.tocoo()
        i = int(np.argmin(coo.data))
        raise NotStochastic(f"negative weight at ({coo.row[i]}, {coo.col[i]})")
    diag = q.diagonal()
    if np.any(diag != 0):
        x = int(np.nonzero(diag)[0][0])
        raise NotStochastic(f"zero-trace violation: q({x}, {x}) = {diag[x]} != 0")
    rowsum = np.asarray(q.sum(axis=1)).ravel()
    bad = np.abs(rowsum - 1.0) > ROW_SUM_PRE_TOL
    if np.any(bad):
        x = int(np.nonzero(bad)[0][0])
        raise NotStochastic(f"row {x} sums to {rowsum[x]}, not 1")
    q = sp.csr_matrix(q.multiply(1.0 / rowsum[:, None]))
    q.sort_indices()

    ncomp, _ = connected_components(q, directed=True, connection="strong")
    if ncomp != 1:
        raise NotIrreducible(f"support digraph has {ncomp} strongly connected components")

    pi = _stationary_distribution(q)
    if np.any(pi <= 0):
        raise NotIrreducible("stationary solve produced a nonpositive mass")
    pi = pi / pi.sum()

    res = np.max(np.abs(q.T @ pi - pi))
    if res > INVARIANT_TOL:
        raise NotReversible(f"pi q = pi residual {res:.3e} exceeds tolerance")

    flux = sp.diags(pi) @ q
    d = (flux - flux.T).tocoo()
    if len(d.data) and np.max(np.abs(d.data)) > INVARIANT_TOL:
        i = int(np.argmax(np.abs(d.data)))
        raise NotReversible(
            f"detailed balance fails at pair ({d.row[i]}, {d.col[i]}): "
            f"|pi(x)q(x,y) - pi(y)q(y,x)| = {abs(d.data[i]):.3e}"
        )

    nu1 = float(np.sum(pi * pi))
    return Kernel(n=n, weights=q, pi=pi, nu1=nu1, meta=dict(meta or {}))


def spectral_gap(kernel: Kernel) -> float:
    """1 - lambda_2, the distance between the two largest eigenvalues of q."""
    vals, _ = kernel.symmetrized_eig()
    return float(1.0 - vals[-2])


def mixing_time(kernel: Kernel) -> float:
    """Smallest t with max_x ||exp(t(q-1))(x, .) - pi||_TV <= 1/(2e).

    Found by bisection on the spectrally computed heat kernel; relative
    tolerance 1e-6.  The worst-case TV distance is nonincreasing in t.
    """
    if kernel.n > DENSE_EIG_CAP:
        raise SizeLimit(f"mixing_time capped at n={DENSE_EIG_CAP}, got {kernel.n}")
    if kernel.tv_distance(0.0) <= MIXING_THRESHOLD:
        return 0.0
    hi = 1.0
    while kernel.tv_distance(hi) > MIXING_THRESHOLD:
        hi *= 2.0
        if hi > 1e12:
            raise NotIrreducible("mixing time bisection failed to bracket")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > MIXING_REL_TOL * hi:
        mid = 0.5 * (lo + hi)
        if kernel.tv_distance(mid) <= MIXING_THRESHOLD:
            hi = mid
        else:
            lo = mid
    return float(hi)


def two_step_return_stats(kernel: Kernel) -> dict:
    """Per-vertex q^2(x, x) together with its pi-weighted histogram.

    Reports the dominant (pi-mode) value, the pi-mass of vertices whose
    two-step return differs from it, and the histogram of distinct values.
    Supports checking whether q^2(x, x) is asymptotically constant.
    """
    r = kernel.two_step_return
    keys = np.round(r, 12)
    values, inverse = np.unique(keys, return_inverse=True)
    masses = np.bincount(inverse, weights=kernel.pi, minlength=len(values))
    mode_idx = int(np.argmax(masses))
    dominant = float(values[mode_idx])
    share = float(masses[mode_idx])
    return {
        "per_vertex": r,
        "histogram": [(float(v), float(m)) for v, m in zip(values, masses)],
        "dominant_value": dominant,
        "dominant_share": share,
        "exceptional_mass": float(1.0 - share),
    }


def _config_model_pairing(n: int, k: int, rng: np.random.Generator) -> np.ndarray | None:
    """One configuration-model attempt; None when the pairing is not simple."""
    stubs = np.repeat(np.arange(n), k)
    rng.shuffle(stubs)
    a, b = stubs[0::2], stubs[1::2]
    if np.any(a == b):
        return None
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    keys = lo.astype(np.int64) * n + hi
    if len(np.unique(keys)) != len(keys):
        return None
    return np.stack([lo, hi], axis=1)


def generate(family: str, n: int | None = None, k: int | None = None,
             seed: int | None = None, rows: int | None = None,
             cols: int | None = None) -> Kernel:
    """Generate a named kernel family.

    complete(n): q(x, y) = 1/(n-1) off the diagonal.
    cycle(n):    q(x, x +- 1 mod n) = 1/2, n >= 3.
    torus2d:     4-neighbor periodic grid (rows x cols, each >= 3), weights 1/4.
    random_regular(n, k, seed): uniform simple k-regular graph via the
        configuration model with full rejection resampling (the entire pairing
        is redrawn on any loop or multi-edge), q = 1/k on edges.
    """
    meta = {"family": family, "n": n, "k": k, "seed": seed, "rows": rows, "cols": cols}
    meta = {kk: vv for kk, vv in meta.items() if vv is not None}
    if family == "complete":
        if n is None or n < 2:
            raise InfeasibleDegree("complete family needs n >= 2")
        q = (np.ones((n, n)) - np.eye(n)) / (n - 1)
        return build_kernel(q, meta)
    if family == "cycle":
        if n is None or n < 3:
            raise InfeasibleDegree("cycle family needs n >= 3")
        i = np.arange(n)
        rows_ = np.concatenate([i, i])
        cols_ = np.concatenate([(i + 1) % n, (i - 1) % n])
        q = sp.csr_matrix((np.full(2 * n, 0.5), (rows_, cols_)), shape=(n, n))
        return build_kernel(q, meta)
    if family == "torus2d":
        if rows is None or cols is None:
            if n is None:
                raise InfeasibleDegree("torus2d needs rows/cols or a square n")
            side = int(round(np.sqrt(n)))
            if side * side != n:
                raise InfeasibleDegree(f"torus2d with n={n}: not a perfect square")
            rows = cols = side
        if rows < 3 or cols < 3:
            raise InfeasibleDegree("torus2d needs rows, cols >= 3 to stay simple")
        m = rows * cols
        idx = np.arange(m)
        r, c = idx // cols, idx % cols
        nbrs = [((r + 1) % rows) * cols + c, ((r - 1) % rows) * cols + c,
                r * cols + (c + 1) % cols, r * cols + (c - 1) % cols]
        rows_ = np.concatenate([idx] * 4)
        cols_ = np.concatenate(nbrs)
        q = sp.csr_matrix((np.full(4 * m, 0.25), (rows_, cols_)), shape=(m, m))
        return build_kernel(q, meta)
    if family == "random_regular":
        if n is None or k is None:
            raise InfeasibleDegree("random_regular needs n and k")
        if k < 3:
            raise InfeasibleDegree(f"random_regular needs k >= 3, got k={k}")
        if n <= k:
            raise InfeasibleDegree(f"random_regular needs n > k, got n={n}, k={k}")
        if (n * k) % 2 != 0:
            raise InfeasibleDegree(f"n*k = {n * k} is odd; no {k}-regular graph on {n} vertices")
        rng = np.random.default_rng(seed)
        for _ in range(PAIRING_RETRY_LIMIT):
            edges = _config_model_pairing(n, k, rng)
            if edges is not None:
                x = np.concatenate([edges[:, 0], edges[:, 1]])
                y = np.concatenate([edges[:, 1], edges[:, 0]])
                q = sp.csr_matrix((np.full(len(x), 1.0 / k), (x, y)), shape=(n, n))
                try:
                    return build_kernel(q, meta)
                except NotIrreducible:
                    continue
            # rejected pairing: resample everything
        raise RetryLimit(f"no simple pairing after {PAIRING_RETRY_LIMIT} attempts")
    raise ValueError(f"unknown family {family!r}")


def kernel_from_json(text: str) -> Kernel:
    doc = json.loads(text)
    n = int(doc["n"])
    edges = np.asarray(doc["edges"], dtype=np.float64)
    q = sp.csr_matrix(
        (edges[:, 2], (edges[:, 0].astype(np.int64), edges[:, 1].astype(np.int64))),
        shape=(n, n),
    )
    return build_kernel(q, doc.get("meta", {}))
