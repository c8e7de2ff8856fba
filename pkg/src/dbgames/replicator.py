"""Limiting ODEs on the type simplex and their integration.

The mean-field replicator equation drives each density at its payoff
advantage over the population average.  The spatial limit keeps that shape
but reweights the payoff terms by three meeting-tail constants: with

    A = kappa_{(2,3)|0} - kappa_{0|2|3},
    B = kappa_{(0,3)|2} - kappa_{0|2|3},
    C = kappa_{0|2|3},

the per-type growth functional splits into F (the C-weighted payoff) and a
spatial correction Ftilde built from A and B.  An equivalent route assembles
the same right-hand side from the cubic polynomials

    Q_{s0, s2 s3}(X) = 1{s2=s3} A X_{s0} X_{s2} + 1{s0=s3} B X_{s0} X_{s2}
                       + C X_{s0} X_{s2} X_{s3},

aggregated against the payoff matrix; the two routes agree on the simplex.
For two types with the donation payoff (b, c) the equation collapses to a
logistic drift with selection coefficient (kappa_3 - kappa_1) b - kappa_2 c,
which equals b q2 - c after the symmetric-kernel normalizations
kappa_1 = kappa_2 = 1, kappa_3 = 1 + q2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KappaMissing, StepTooLarge

SIMPLEX_TOL = 1e-9


@dataclass
class ReplicatorParams:
    """Inputs of the limiting ODE; kappa entries come from tail estimation."""

    payoff: np.ndarray
    w_inf: float = 0.0
    mu_inf: np.ndarray | None = None
    k23_0: float | None = None
    k03_2: float | None = None
    k0_2_3: float | None = None
    k1: float | None = None
    k2: float | None = None
    k3: float | None = None
    q2_inf: float | None = None

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=np.float64)
        if self.mu_inf is None:
            self.mu_inf = np.zeros(self.payoff.shape[0])
        self.mu_inf = np.asarray(self.mu_inf, dtype=np.float64)
        if self.w_inf > 0 and self.has_kappas:
            combo = (self.k23_0 - self.k0_2_3) + self.k0_2_3 + (self.k03_2 - self.k0_2_3)
            if combo <= 0:
                raise ValueError("tail-constant combination must be positive under selection")

    @property
    def s(self) -> int:
        return self.payoff.shape[0]

    @property
    def has_kappas(self) -> bool:
        return None not in (self.k23_0, self.k03_2, self.k0_2_3)

    @classmethod
    def from_estimates(cls, payoff, estimates, w_inf: float = 0.0, mu_inf=None) -> "ReplicatorParams":
        """Take the scalar entries of a KappaEstimates verbatim."""
        return cls(payoff=payoff, w_inf=w_inf, mu_inf=mu_inf,
                   k23_0=estimates.value("k23_0"), k03_2=estimates.value("k03_2"),
                   k0_2_3=estimates.value("k0_2_3"), k1=estimates.value("k1"),
                   k2=estimates.value("k2"), k3=estimates.value("k3"))


def _check_simplex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if abs(x.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"state sums to {x.sum()}, not 1")
    return x


def mean_field_payoff(payoff: np.ndarray, x: np.ndarray) -> np.ndarray:
    return payoff @ x


def mean_field_rhs(payoff, x) -> np.ndarray:
    """Classic replicator: x_s (F_s(x) - sum_s' F_s'(x) x_s')."""
    payoff = np.asarray(payoff, dtype=np.float64)
    x = _check_simplex(x)
    f = mean_field_payoff(payoff, x)
    return x * (f - f @ x)


def _mutation_rhs(mu_inf: np.ndarray, x: np.ndarray) -> np.ndarray:
    total = mu_inf.sum()
    return mu_inf * (1.0 - x) - (total - mu_inf) * x


def spatial_rhs_ff(params: ReplicatorParams, x) -> np.ndarray:
    """F / Ftilde form of the spatial replicator right-hand side."""
    if not params.has_kappas:
        raise KappaMissing("spatial form needs k23_0, k03_2 and k0_2_3")
    x = _check_simplex(x)
    pay = params.payoff
    a = params.k23_0 - params.k0_2_3
    b = params.k03_2 - params.k0_2_3
    c = params.k0_2_3
    f = c * (pay @ x)
    diag = np.diag(pay)
    ftilde = a * diag + b * ((pay - pay.T) @ x) - a * float(diag @ x)
    avg = float(f @ x)
    sel = params.w_inf * x * (f + ftilde - avg)
    return sel + _mutation_rhs(params.mu_inf, x)


def _q_poly(a: float, b: float, c: float, x: np.ndarray, s0: int, s2: int, s3: int) -> float:
    val = c * x[s0] * x[s2] * x[s3]
    if s2 == s3:
        val += a * x[s0] * x[s2]
    if s0 == s3:
        val += b * x[s0] * x[s2]
    return val


def spatial_rhs_q(params: ReplicatorParams, x) -> np.ndarray:
    """Cubic-polynomial form aggregated against the payoff matrix.

    The building block extends to coincident first indices by the same
    formula, which lets the type constraints in the aggregation cancel.
    """
    if not params.has_kappas:
        raise KappaMissing("polynomial form needs k23_0, k03_2 and k0_2_3")
    x = _check_simplex(x)
    pay = params.payoff
    s = params.s
    a = params.k23_0 - params.k0_2_3
    b = params.k03_2 - params.k0_2_3
    c = params.k0_2_3
    out = np.zeros(s)
    for sig in range(s):
        gain = 0.0
        loss = 0.0
        for s3 in range(s):
            for s0 in range(s):
                if s0 != sig:
                    gain += pay[sig, s3] * _q_poly(a, b, c, x, s0, sig, s3)
            for s2 in range(s):
                if s2 != sig:
                    loss += pay[s2, s3] * _q_poly(a, b, c, x, sig, s2, s3)
        out[sig] = params.w_inf * (gain - loss)
    return out + _mutation_rhs(params.mu_inf, x)


def spatial_rhs(params: ReplicatorParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Both forms of the spatial right-hand side; they agree on the simplex."""
    return spatial_rhs_ff(params, x), spatial_rhs_q(params, x)


def two_type_rhs(b: float, c: float, u: float, w_inf: float = 1.0,
                 mu_inf=(0.0, 0.0), kappas: tuple[float, float, float] | None = None,
                 q2_inf: float | None = None) -> float:
    """du/dt for the density u of type 1 under the donation payoff (b, c).

    Route 1 (kappas = (k1, k2, k3)): selection coefficient (k3 - k1) b - k2 c.
    Route 2 (q2_inf): coefficient b q2_inf - c, the symmetric-kernel
    normalization k1 = k2 = 1, k3 = 1 + q2_inf of route 1.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u = {u} outside [0, 1]")
    if kappas is not None:
        k1, k2, k3 = kappas
        coeff = (k3 - k1) * b - k2 * c
    elif q2_inf is not None:
        coeff = b * q2_inf - c
    else:
        raise KappaMissing("need either kappas=(k1, k2, k3) or q2_inf")
    m1, m0 = float(mu_inf[1]), float(mu_inf[0])
    return w_inf * coeff * u * (1.0 - u) + m1 * (1.0 - u) - m0 * u


def pair_approx_drift(b: float, c: float, k: int, w: float) -> float:
    """Per-unit-time drift coefficient of the pair-approximation heuristic
    on a k-regular graph: w (k-2)(b - c k) / [k (k-1)].

    Multiplying by a time change theta with w = w_inf 2 gamma nu1 / theta and
    gamma nu1 -> (k-1)/[2(k-2)] reproduces the limiting selection coefficient
    w_inf (b/k - c).
    """
    if k < 3:
        raise ValueError("pair approximation needs degree k >= 3")
    return w * (k - 2) * (b - c * k) / (k * (k - 1))


def integrate(rhs, x0, horizon: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step fourth-order Runge-Kutta on the simplex.

    Renormalizes the coordinate sum after every step (the drift is
    simplex-tangent, so the correction is at the rounding level) and raises
    StepTooLarge when a coordinate leaves [-1e-6, 1 + 1e-6].
    """
    x = _check_simplex(x0).copy()
    if dt > horizon:
        raise ValueError("dt must not exceed the horizon")
    steps = int(round(horizon / dt))
    grid = np.linspace(0.0, steps * dt, steps + 1)
    path = np.empty((steps + 1, len(x)))
    path[0] = x
    for i in range(1, steps + 1):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(x < -1e-6) or np.any(x > 1.0 + 1e-6):
            raise StepTooLarge(f"state left the simplex at step {i}: {x}")
        x = x / x.sum()
        path[i] = x
    return grid, path


def integrate_two_type(b: float, c: float, u0: float, horizon: float, dt: float,
                       w_inf: float = 1.0, mu_inf=(0.0, 0.0),
                       kappas=None, q2_inf=None) -> tuple[np.ndarray, np.ndarray]:
    """Scalar convenience wrapper around `integrate` for the two-type case."""

    def rhs(x):
        du = two_type_rhs(b, c, float(np.clip(x[1], 0.0, 1.0)), w_inf=w_inf,
                          mu_inf=mu_inf, kappas=kappas, q2_inf=q2_inf)
        return np.array([-du, du])

    grid, path = integrate(rhs, np.array([1.0 - u0, u0]), horizon, dt)
    return grid, path[:, 1]
