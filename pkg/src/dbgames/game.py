"""Payoff structure, mutation, the fitness-perturbed kernel and its expansion.

The death-birth update replaces the type at a dying site x by the type of a
neighbor y drawn with probability proportional to q(x, y) times the fitness
of y.  Fitness of y under configuration xi is

    1 - w + w * sum_z q(y, z) Pi(xi(y), xi(z)) = 1 - w * B(y, xi),

so the replacement law is q^w(x, y, xi) = q(x, y)(1 - w B(y, xi)) / (1 - w A(x, xi))
with A(x, xi) = sum_y q(x, y) B(y, xi).  Expanding in w,

    q^w = q + w q (A - B) + w^2 q R^w,      R^w = (A - B) A / (1 - w A),

an exact algebraic identity for every w in [0, wbar].  The drift functional
Dbar_sigma aggregates the first-order term over the stationary edge measure
pi(x) q(x, y); it admits an equivalent Markov-chain-moment form used as an
exact cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeFitness, NotNeighbor, SelectionTooStrong
from .graphs import Kernel

WBAR_MARGIN = 1e-6


def max_selection_intensity(payoff) -> float:
    """Uniform positive-fitness bound wbar = (1 - 1e-6) / (1 + max|Pi|).

    Sufficient on every kernel: the payoff average a neighbor sees is at most
    max|Pi| in absolute value, so w(1 + max|Pi|) < 1 keeps every fitness
    bracket strictly positive.
    """
    payoff = np.asarray(payoff, dtype=np.float64)
    if not np.all(np.isfinite(payoff)):
        raise ValueError("payoff entries must be finite")
    return (1.0 - WBAR_MARGIN) / (1.0 + float(np.abs(payoff).max(initial=0.0)))


def prisoner_payoff(b: float, c: float) -> np.ndarray:
    """Two-type donation matrix: type 1 pays c to hand b to its opponent."""
    return np.array([[0.0, b], [-c, b - c]])


@dataclass
class GameSpec:
    """Payoff matrix, mutation rates, and selection intensity.

    types are labeled 0..s-1; payoff[i, j] is the payoff to i against j;
    mutation[sigma] >= 0 is the per-site rate of mutating to sigma.
    """

    payoff: np.ndarray
    mutation: np.ndarray
    w: float
    wbar: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=np.float64)
        if self.payoff.ndim != 2 or self.payoff.shape[0] != self.payoff.shape[1]:
            raise ValueError("payoff must be square")
        if self.payoff.shape[0] < 2:
            raise ValueError("need at least two types")
        self.mutation = np.asarray(self.mutation, dtype=np.float64)
        if self.mutation.shape != (self.payoff.shape[0],):
            raise ValueError("mutation vector length must equal the type count")
        if np.any(self.mutation < 0):
            raise ValueError("mutation rates must be nonnegative")
        if self.wbar is None:
            self.wbar = max_selection_intensity(self.payoff)
        if not 0.0 <= self.w <= self.wbar:
            raise SelectionTooStrong(f"w = {self.w} outside [0, wbar = {self.wbar}]")

    @property
    def s(self) -> int:
        return self.payoff.shape[0]

    @property
    def mutation_total(self) -> float:
        return float(self.mutation.sum())

    def validate_against(self, kernel: Kernel) -> None:
        """Check the strict positive-fitness inequality for every kernel row.

        The neighborhood payoff average is a q(y, .)-mixture, so the worst
        case over configurations is max_sigma' |Pi(sigma, sigma')| for each
        resident type sigma; the kernel enters only through row-stochasticity.
        """
        for sigma in range(self.s):
            worst = float(np.abs(self.payoff[sigma]).max())
            if self.w + self.w * worst >= 1.0:
                raise SelectionTooStrong(
                    f"w(1 + max|Pi({sigma}, .)|) = {self.w * (1 + worst)} >= 1"
                )

    def prisoner_bc(self) -> tuple[float, float] | None:
        """Recover (b, c) when the payoff has the two-type donation structure."""
        if self.s != 2:
            return None
        b = float(self.payoff[0, 1])
        c = float(-self.payoff[1, 0])
        if self.payoff[0, 0] == 0.0 and abs(self.payoff[1, 1] - (b - c)) < 1e-12:
            return b, c
        return None


def type_indicators(xi: np.ndarray, s: int) -> np.ndarray:
    """(s, N) one-hot matrix of the configuration."""
    xi = np.asarray(xi)
    return (np.arange(s)[:, None] == xi[None, :]).astype(np.float64)


def local_payoff_field(kernel: Kernel, payoff: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """phi(y) = sum_z q(y, z) Pi(xi(y), xi(z)), the payoff a site collects."""
    s = payoff.shape[0]
    ind = type_indicators(xi, s)
    freq = np.asarray([kernel.weights @ ind[sig] for sig in range(s)])
    return np.einsum("sx,sx->x", payoff[np.asarray(xi)].T, freq)


def fitness_brackets(kernel: Kernel, game: GameSpec, xi: np.ndarray) -> np.ndarray:
    """1 - w B(y, xi) for every y; strictly positive whenever w <= wbar."""
    phi = local_payoff_field(kernel, game.payoff, xi)
    brackets = (1.0 - game.w) + game.w * phi
    if np.any(brackets <= 0):
        y = int(np.argmin(brackets))
        raise NegativeFitness(f"fitness bracket at site {y} is {brackets[y]:.3e}")
    return brackets


def perturbed_row(kernel: Kernel, game: GameSpec, xi: np.ndarray, x: int) -> np.ndarray:
    """Replacement law q^w(x, ., xi) as a length-N probability vector.

    Support equals the support of q(x, .); the row sums to 1 exactly.
    """
    brackets = fitness_brackets(kernel, game, xi)
    idx, qrow = kernel.row(x)
    weights = qrow * brackets[idx]
    out = np.zeros(kernel.n)
    out[idx] = weights / weights.sum()
    return out


def expansion_coefficients(kernel: Kernel, game: GameSpec, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A(x, xi) and B(y, xi) for all sites at once."""
    phi = local_payoff_field(kernel, game.payoff, xi)
    b = 1.0 - phi
    a = 1.0 - kernel.weights @ phi
    return a, b


def expansion_terms(kernel: Kernel, game: GameSpec, xi: np.ndarray, x: int, y: int) -> tuple[float, float, float]:
    """(A(x, xi), B(y, xi), R^w(x, y, xi)) for a single edge.

    R^w solves q^w = q + w q (A - B) + w^2 q R^w exactly:
    R^w = (A - B) A / (1 - w A), finite for all w <= wbar.
    """
    if kernel.weights[x, y] == 0:
        raise NotNeighbor(f"q({x}, {y}) = 0")
    a, b = expansion_coefficients(kernel, game, xi)
    ax, by = float(a[x]), float(b[y])
    r = (ax - by) * ax / (1.0 - game.w * ax)
    return ax, by, r


@dataclass
class Observables:
    """Local frequencies and their stationary averages for one configuration.

    freq[s1, x]          f_{s1}(x): one-step frequency of type s1 seen from x.
    pair_freq[s1, s2, x] f_{s1 s2}(x): prob. the first step shows s1 and the
                         second shows s2 along the stationary two-step chain.
    bullet_freq[s1, x]   f_{. s1}(x): two-step frequency ignoring the middle.
    bar_triple[s0,s2,s3] pi-average of f_{s0} * f_{s2 s3}.
    bar_pair[s0, s1]     pi-average of f_{s0 s1}.
    bar_freq2[s0, s1]    pi-average of f_{s0} * f_{s1}.
    bar_freq_bullet[a,b] pi-average of f_a * f_{. b}.
    p_pair[s0, s1]       nu-weighted adjacent-pair density p_{s0 s1}(xi).
    density[s0]          p_{s0}(xi).
    """

    freq: np.ndarray
    pair_freq: np.ndarray
    bullet_freq: np.ndarray
    bar_triple: np.ndarray
    bar_pair: np.ndarray
    bar_freq2: np.ndarray
    bar_freq_bullet: np.ndarray
    p_pair: np.ndarray
    density: np.ndarray


def observables(kernel: Kernel, xi: np.ndarray, s: int) -> Observables:
    """All frequency observables, by sparse matrix-vector products."""
    q = kernel.weights
    pi = kernel.pi
    ind = type_indicators(xi, s)
    freq = np.asarray([q @ ind[a] for a in range(s)])
    pair_freq = np.asarray([[q @ (ind[a] * freq[b]) for b in range(s)] for a in range(s)])
    bullet_freq = np.asarray([q @ freq[a] for a in range(s)])
    bar_triple = np.einsum("x,ax,bcx->abc", pi, freq, pair_freq)
    bar_pair = np.einsum("x,abx->ab", pi, pair_freq)
    bar_freq2 = np.einsum("x,ax,bx->ab", pi, freq, freq)
    bar_freq_bullet = np.einsum("x,ax,bx->ab", pi, freq, bullet_freq)
    pi2 = pi * pi
    p_pair = np.einsum("x,ax,bx->ab", pi2, ind, freq) / kernel.nu1
    density = ind @ pi
    return Observables(
        freq=freq,
        pair_freq=pair_freq,
        bullet_freq=bullet_freq,
        bar_triple=bar_triple,
        bar_pair=bar_pair,
        bar_freq2=bar_freq2,
        bar_freq_bullet=bar_freq_bullet,
        p_pair=p_pair,
        density=density,
    )


@dataclass
class DriftForms:
    """Dbar_sigma computed along independent routes, for cross-checking."""

    double_sum: float
    chain_moment: float
    two_type: float | None = None


def dbar(kernel: Kernel, game: GameSpec, xi: np.ndarray, sigma: int,
         obs: Observables | None = None) -> DriftForms:
    """First-order drift Dbar_sigma(xi) of the density of type sigma.

    Route (i): the defining double sum over directed edges,
        sum_{x,y} pi(x) [1_sigma(xi(y)) - 1_sigma(xi(x))] q(x, y) [A(x) - B(y)].
    Route (ii): the chain-moment form
        sum_{s0 != sigma, s3} Pi(sigma, s3) bar(f_{s0} f_{sigma s3})
      - sum_{s2 != sigma, s3} Pi(s2, s3) bar(f_{sigma} f_{s2 s3}).
    Route (iii), two types with the donation matrix (b, c):
        b bar(f_1 f_{.0}) - b bar(f_{10}) - c bar(f_1 f_0), negated for sigma=0.
    """
    q = kernel.weights
    pi = kernel.pi
    xi = np.asarray(xi)
    a, b = expansion_coefficients(kernel, game, xi)
    e = (xi == sigma).astype(np.float64)
    term_in = pi @ (a * (q @ e) - q @ (e * b))
    term_out = pi @ (e * (a - q @ b))
    double_sum = float(term_in - term_out)

    if obs is None:
        obs = observables(kernel, xi, game.s)
    pay = game.payoff
    gain = 0.0
    loss = 0.0
    for s3 in range(game.s):
        for s0 in range(game.s):
            if s0 != sigma:
                gain += pay[sigma, s3] * obs.bar_triple[s0, sigma, s3]
        for s2 in range(game.s):
            if s2 != sigma:
                loss += pay[s2, s3] * obs.bar_triple[sigma, s2, s3]
    chain_moment = float(gain - loss)

    two_type = None
    bc = game.prisoner_bc()
    if bc is not None:
        bb, cc = bc
        d1 = bb * obs.bar_freq_bullet[1, 0] - bb * obs.bar_pair[1, 0] - cc * obs.bar_freq2[1, 0]
        two_type = float(d1 if sigma == 1 else -d1)
    return DriftForms(double_sum=double_sum, chain_moment=chain_moment, two_type=two_type)
