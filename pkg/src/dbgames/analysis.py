"""Ensemble statistics: time-changed densities vs the ODE, and fluctuations.

Trajectories are recorded in model time; the limit statements live in
theta-time, so every comparison here rescales t -> theta t.  The density
comparison measures the sup distance between the ensemble mean of
p(xi_{theta t}) and a reference ODE path.  The fluctuation suite scales the
martingale parts by (gamma / theta)^(1/2) and compares their empirical
covariance across replicas with the Wright-Fisher matrix integrated along
the reference path, int_0^t X_sigma (delta_{sigma sigma'} - X_sigma') ds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import norm

from .dynamics import Trajectory
from .errors import ComponentsMissing, GridMismatch

QQ_PLOT_OFFSET = 0.375


@dataclass
class EnsembleSummary:
    """Aggregates over replicas on a common theta-time grid."""

    theta_times: np.ndarray
    mean: np.ndarray                    # (m, s) ensemble mean densities
    var: np.ndarray                     # (m, s)
    n_replicas: int
    replicator_deviation: dict | None = None
    fluct: dict | None = None
    extras: dict = field(default_factory=dict)


def _stack_densities(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    grid = trajectories[0].grid
    for tr in trajectories[1:]:
        if len(tr.grid) != len(grid) or np.max(np.abs(tr.grid - grid)) > 1e-12:
            raise GridMismatch("replicas recorded on different grids")
    return grid, np.stack([tr.densities for tr in trajectories])


def _interp_rows(tgrid: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Linear interpolation of an (m, s) path onto new times."""
    if np.min(at) < tgrid[0] - 1e-12 or np.max(at) > tgrid[-1] + 1e-9:
        raise GridMismatch(
            f"requested times [{np.min(at)}, {np.max(at)}] outside grid "
            f"[{tgrid[0]}, {tgrid[-1]}]")
    out = np.empty((len(at), values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.interp(at, tgrid, values[:, j])
    return out


def replicator_deviation(trajectories: list[Trajectory], theta: float,
                         ode_grid: np.ndarray, ode_path: np.ndarray,
                         window: tuple[float, float] | None = None,
                         bootstrap: int = 200, seed: int = 0) -> dict:
    """Sup distance of the ensemble-mean time-changed density to an ODE path.

    The window is in theta-time.  Reports per-type sup deviations, the pooled
    sup, and a bootstrap confidence interval over replicas.
    """
    grid, dens = _stack_densities(trajectories)
    theta_times = grid / theta
    ode_path = np.atleast_2d(np.asarray(ode_path))
    if ode_path.shape[0] == len(ode_grid):
        pass
    else:
        ode_path = ode_path.T
    if window is None:
        window = (float(theta_times[0]), float(theta_times[-1]))
    mask = (theta_times >= window[0] - 1e-12) & (theta_times <= window[1] + 1e-12)
    if not np.any(mask):
        raise GridMismatch("window contains no recorded times")
    times = theta_times[mask]
    ref = _interp_rows(np.asarray(ode_grid), ode_path, times)
    windowed = np.ascontiguousarray(dens[:, mask, :])
    mean = windowed.mean(axis=0)
    dev = np.abs(mean - ref)
    per_type = dev.max(axis=0)
    rng = np.random.default_rng(seed)
    reps = dens.shape[0]
    flat = windowed.reshape(reps, -1)
    ref_flat = ref.reshape(-1)
    boots = np.empty(bootstrap)
    for b in range(bootstrap):
        counts = np.bincount(rng.integers(0, reps, size=reps), minlength=reps)
        boots[b] = np.abs(counts @ flat / reps - ref_flat).max()
    return {
        "per_type": [float(v) for v in per_type],
        "pooled": float(dev.max()),
        "bootstrap_ci": (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975))),
        "window": (float(window[0]), float(window[1])),
        "n_replicas": reps,
    }


def _qq_correlation(sample: np.ndarray) -> float:
    n = len(sample)
    quantiles = norm.ppf((np.arange(1, n + 1) - QQ_PLOT_OFFSET) / (n + 1 - 2 * QQ_PLOT_OFFSET))
    return float(np.corrcoef(np.sort(sample), quantiles)[0, 1])


def fluctuation_suite(trajectories: list[Trajectory], gamma: float, theta: float,
                      times: np.ndarray, nu1: float,
                      ode_grid: np.ndarray | None = None,
                      ode_path: np.ndarray | None = None) -> EnsembleSummary:
    """Normalized fluctuations (gamma / theta)^(1/2) M(theta t) across replicas.

    At each requested theta-time: the empirical covariance matrix of the
    scaled martingales, the Wright-Fisher reference covariance integrated
    along the ODE path (constant initial mean when no path is given),
    covariance row sums with their standard errors, and per-type normality
    diagnostics (skewness, excess kurtosis, normal-quantile correlation).
    Also records the hypothesis ratio gamma nu1 / theta.
    """
    if any(tr.components is None for tr in trajectories):
        raise ComponentsMissing("fluctuation suite needs martingale components")
    if len(trajectories) == 0:
        raise ValueError("no replicas given")
    grid, _ = _stack_densities(trajectories)
    mart = np.stack([tr.components.martingale for tr in trajectories])
    times = np.asarray(times, dtype=np.float64)
    model_times = theta * times
    scale = np.sqrt(gamma / theta)
    reps, _, s = mart.shape

    scaled = np.empty((reps, len(times), s))
    for r in range(reps):
        scaled[r] = scale * _interp_rows(grid, mart[r], model_times)

    if ode_path is None:
        dens0 = np.stack([tr.densities[0] for tr in trajectories]).mean(axis=0)
        ode_grid = np.array([0.0, float(np.max(times)) + 1.0])
        ode_path = np.stack([dens0, dens0])
    ode_path = np.asarray(ode_path)
    fine = np.linspace(0.0, float(np.max(times)), 513)
    xref = _interp_rows(np.asarray(ode_grid), ode_path, fine)
    integrand = np.empty((len(fine), s, s))
    for i in range(len(fine)):
        x = xref[i]
        integrand[i] = np.diag(x) - np.outer(x, x)
    cum = cumulative_trapezoid(integrand, fine, axis=0, initial=0.0)

    emp_cov = np.empty((len(times), s, s))
    ref_cov = np.empty((len(times), s, s))
    row_sums = np.empty((len(times), s))
    row_sum_se = np.empty((len(times), s))
    skew = np.empty((len(times), s))
    kurt = np.empty((len(times), s))
    qq = np.empty((len(times), s))
    for i, t in enumerate(times):
        block = scaled[:, i, :]
        emp_cov[i] = np.cov(block.T, ddof=1) if s > 1 else np.array([[block.var(ddof=1)]])
        idx = int(np.argmin(np.abs(fine - t)))
        ref_cov[i] = cum[idx]
        centered = block - block.mean(axis=0)
        total = centered.sum(axis=1)
        for sig in range(s):
            prod = centered[:, sig] * total
            row_sums[i, sig] = prod.mean() * reps / (reps - 1)
            row_sum_se[i, sig] = prod.std(ddof=1) / np.sqrt(reps)
            z = block[:, sig]
            sd = z.std(ddof=1)
            if sd > 0:
                zc = (z - z.mean()) / sd
                skew[i, sig] = float(np.mean(zc ** 3))
                kurt[i, sig] = float(np.mean(zc ** 4) - 3.0)
                qq[i, sig] = _qq_correlation(z)
            else:
                skew[i, sig] = kurt[i, sig] = 0.0
                qq[i, sig] = 1.0

    dens = np.stack([tr.densities for tr in trajectories])
    summary = EnsembleSummary(
        theta_times=times,
        mean=dens.mean(axis=0),
        var=dens.var(axis=0, ddof=1),
        n_replicas=reps,
        fluct={
            "emp_cov": emp_cov,
            "ref_cov": ref_cov,
            "row_sums": row_sums,
            "row_sum_se": row_sum_se,
            "skewness": skew,
            "excess_kurtosis": kurt,
            "qq_correlation": qq,
            "hypothesis_ratio": gamma * nu1 / theta,
            "scale": scale,
        },
    )
    return summary


def decorrelation_probe(kernel, s_types: int, xi_samples: list[np.ndarray],
                        probe_scales, triple: tuple[int, int, int],
                        kappas, replicas: int = 200, seed: int = 0) -> list[dict]:
    """Voter-model decorrelation shadow: E[bar(f_{s0} f_{s2 s3})(xi_{2s})]
    against the tail-polynomial prediction Q_{s0, s2 s3}(p(xi)) / (2 gamma nu1).

    Exact at s = 0 (no evolution); Monte Carlo ensembles otherwise.
    """
    from .dynamics import simulate, stream_seed
    from .game import GameSpec, observables

    s0, s2, s3 = triple
    a = kappas.value("k23_0") - kappas.value("k0_2_3")
    b = kappas.value("k03_2") - kappas.value("k0_2_3")
    c = kappas.value("k0_2_3")
    denom = 2.0 * kappas.gamma * kappas.nu1
    game = GameSpec(payoff=np.zeros((s_types, s_types)),
                    mutation=np.zeros(s_types), w=0.0)
    rows = []
    for idx, xi in enumerate(xi_samples):
        xi = np.asarray(xi, dtype=np.int8)
        p = np.bincount(xi, weights=kernel.pi, minlength=s_types)[:s_types]
        pred = c * p[s0] * p[s2] * p[s3]
        if s2 == s3:
            pred += a * p[s0] * p[s2]
        if s0 == s3:
            pred += b * p[s0] * p[s2]
        pred /= denom
        for scl in probe_scales:
            if scl == 0:
                obs = observables(kernel, xi, s_types)
                lhs, se = float(obs.bar_triple[s0, s2, s3]), 0.0
            else:
                horizon = 2.0 * float(scl)
                vals = np.empty(replicas)
                for r in range(replicas):
                    traj, _ = simulate(kernel, game, xi, horizon,
                                       record_dt=horizon,
                                       seed=stream_seed(seed, idx, int(round(scl * 16)), r),
                                       stop_on_fixation=False)
                    obs = observables(kernel, traj.final_types, s_types)
                    vals[r] = obs.bar_triple[s0, s2, s3]
                lhs = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
            rows.append({"xi_index": idx, "scale": float(scl), "lhs": lhs,
                         "stderr": se, "prediction": pred,
                         "gap": abs(lhs - pred)})
    return rows
