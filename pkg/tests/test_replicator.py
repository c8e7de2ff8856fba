import numpy as np
import pytest

from dbgames import replicator as rep
from dbgames.errors import KappaMissing, StepTooLarge
from dbgames.game import prisoner_payoff


def random_simplex(rng, s):
    x = rng.dirichlet(np.ones(s))
    return x


def test_mean_field_vertex_fixed_point():
    pay = np.array([[1.0, 2.0], [0.5, -1.0]])
    for sig in (0, 1):
        x = np.zeros(2)
        x[sig] = 1.0
        assert np.allclose(rep.mean_field_rhs(pay, x), 0.0, atol=1e-15)


def test_mean_field_prisoner_reduction():
    # for the donation matrix the classic equation collapses to -c u(1-u)
    b, c = 3.0, 1.0
    pay = prisoner_payoff(b, c)
    for u in (0.1, 0.35, 0.8):
        rhs = rep.mean_field_rhs(pay, np.array([1 - u, u]))
        assert rhs[1] == pytest.approx(-c * u * (1 - u), abs=1e-14)


def test_mean_field_tangent_to_simplex():
    rng = np.random.default_rng(0)
    pay = rng.normal(size=(4, 4))
    for _ in range(50):
        x = random_simplex(rng, 4)
        assert abs(rep.mean_field_rhs(pay, x).sum()) <= 1e-12


def test_spatial_equal_kappas_reduces_to_mean_field():
    rng = np.random.default_rng(1)
    pay = rng.normal(size=(3, 3))
    kbar = 0.7
    params = rep.ReplicatorParams(payoff=pay, w_inf=1.3, k23_0=kbar, k03_2=kbar,
                                  k0_2_3=kbar)
    for _ in range(20):
        x = random_simplex(rng, 3)
        ff = rep.spatial_rhs_ff(params, x)
        expected = 1.3 * kbar * rep.mean_field_rhs(pay, x)
        assert np.allclose(ff, expected, atol=1e-12)


def test_spatial_forms_agree_on_simplex():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        s = int(rng.integers(2, 5))
        pay = rng.normal(size=(s, s))
        # the triple tail never exceeds either hub tail
        hub_a, hub_b = rng.uniform(0.2, 2.0, size=2)
        triple = float(rng.uniform(0.0, min(hub_a, hub_b)))
        params = rep.ReplicatorParams(payoff=pay, w_inf=float(rng.uniform(0, 2)),
                                      mu_inf=rng.uniform(0, 1, size=s),
                                      k23_0=hub_a, k03_2=hub_b, k0_2_3=triple)
        x = random_simplex(rng, s)
        ff, qq = rep.spatial_rhs(params, x)
        worst = max(worst, float(np.max(np.abs(ff - qq))))
    assert worst <= 1e-10


def test_spatial_rhs_zero_when_trivial():
    params = rep.ReplicatorParams(payoff=np.ones((2, 2)), w_inf=0.0,
                                  k23_0=1.0, k03_2=1.0, k0_2_3=1.0)
    ff, qq = rep.spatial_rhs(params, np.array([0.4, 0.6]))
    assert np.allclose(ff, 0.0, atol=1e-15)
    assert np.allclose(qq, 0.0, atol=1e-15)


def test_spatial_rhs_sums_to_zero_with_mutation():
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = 3
        params = rep.ReplicatorParams(payoff=rng.normal(size=(s, s)),
                                      w_inf=1.0, mu_inf=rng.uniform(0, 1, size=s),
                                      k23_0=1.1, k03_2=0.9, k0_2_3=0.5)
        x = random_simplex(rng, s)
        ff, qq = rep.spatial_rhs(params, x)
        assert abs(ff.sum()) <= 1e-12
        assert abs(qq.sum()) <= 1e-12


def test_kappa_missing():
    params = rep.ReplicatorParams(payoff=np.zeros((2, 2)), w_inf=1.0)
    with pytest.raises(KappaMissing):
        rep.spatial_rhs_ff(params, np.array([0.5, 0.5]))


def test_two_type_zero_selection_coefficient():
    # b = c k cancels the selection term on a k-regular structure
    k = 4
    val = rep.two_type_rhs(b=4.0, c=1.0, u=0.3, w_inf=1.0, q2_inf=1.0 / k)
    assert val == pytest.approx(0.0, abs=1e-15)


def test_two_type_vertices_absorbing():
    for u in (0.0, 1.0):
        assert rep.two_type_rhs(2.0, 1.0, u, w_inf=1.0, q2_inf=0.25) == pytest.approx(0.0)


def test_two_type_routes_agree():
    q2 = 1.0 / 3.0
    for u in np.linspace(0.05, 0.95, 7):
        via_q2 = rep.two_type_rhs(6.0, 1.0, float(u), w_inf=1.2, q2_inf=q2)
        via_kap = rep.two_type_rhs(6.0, 1.0, float(u), w_inf=1.2,
                                   kappas=(1.0, 1.0, 1.0 + q2))
        assert via_q2 == pytest.approx(via_kap, abs=1e-12)


def test_two_type_matches_spatial_specialization():
    # pick a raw hub/triple combination, derive the pair constants it implies
    rng = np.random.default_rng(4)
    for _ in range(25):
        k23_0, k03_2 = rng.uniform(0.2, 1.5, size=2)
        k0_2_3 = float(rng.uniform(0.0, min(k23_0, k03_2)))
        a = k23_0 - k0_2_3
        bb = k03_2 - k0_2_3
        k1 = float(rng.uniform(0.5, 1.5))
        k3 = k1 + (a - bb)            # from the inclusion identities
        k2 = a + bb + k0_2_3
        b, c = 5.0, 1.5
        params = rep.ReplicatorParams(payoff=prisoner_payoff(b, c), w_inf=0.8,
                                      mu_inf=np.array([0.3, 0.1]),
                                      k23_0=k23_0, k03_2=k03_2, k0_2_3=k0_2_3)
        u = float(rng.uniform(0.05, 0.95))
        full = rep.spatial_rhs_ff(params, np.array([1 - u, u]))
        scalar = rep.two_type_rhs(b, c, u, w_inf=0.8, mu_inf=(0.3, 0.1),
                                  kappas=(k1, k2, k3))
        assert full[1] == pytest.approx(scalar, abs=1e-12)
        # mutation flows cancel across the two types, so the rhs sums to zero
        assert full[0] == pytest.approx(-scalar, abs=1e-12)
        assert abs(full.sum()) <= 1e-13


def test_integrate_logistic_closed_form():
    grid, u = rep.integrate_two_type(b=1.0, c=0.0, u0=0.5, horizon=4.0, dt=1e-3,
                                     w_inf=1.0, q2_inf=1.0)
    # coefficient b q2 - c = 1: logistic solution 1 / (1 + e^{-t})
    for t in (1.0, 2.0, 4.0):
        idx = int(round(t / 1e-3))
        assert u[idx] == pytest.approx(1.0 / (1.0 + np.exp(-t)), abs=1e-8)


def test_integrate_mutation_closed_form():
    m1, m0 = 0.7, 0.4
    u0 = 0.9
    grid, u = rep.integrate_two_type(b=0.0, c=0.0, u0=u0, horizon=5.0, dt=1e-3,
                                     w_inf=0.0, mu_inf=(m0, m1), q2_inf=0.0)
    ustar = m1 / (m0 + m1)
    for t in (0.5, 2.0, 5.0):
        idx = int(round(t / 1e-3))
        expected = ustar + (u0 - ustar) * np.exp(-(m0 + m1) * t)
        assert u[idx] == pytest.approx(expected, abs=1e-8)


def test_integrate_vertex_constant():
    pay = np.array([[1.0, -2.0], [3.0, 0.5]])
    params = rep.ReplicatorParams(payoff=pay, w_inf=1.0, k23_0=1.0, k03_2=1.0,
                                  k0_2_3=1.0)
    grid, path = rep.integrate(lambda x: rep.spatial_rhs_ff(params, x),
                               np.array([1.0, 0.0]), 3.0, 1e-2)
    assert np.allclose(path, path[0], atol=1e-12)


def test_integrate_simplex_preserved_long_run():
    rng = np.random.default_rng(5)
    pay = rng.normal(size=(3, 3))
    params = rep.ReplicatorParams(payoff=pay, w_inf=1.0,
                                  mu_inf=np.array([0.2, 0.1, 0.3]),
                                  k23_0=1.2, k03_2=0.8, k0_2_3=0.6)
    grid, path = rep.integrate(lambda x: rep.spatial_rhs_ff(params, x),
                               np.array([0.2, 0.5, 0.3]), 10.0, 1e-3)
    assert np.max(np.abs(path.sum(axis=1) - 1.0)) <= 1e-8
    assert path.min() >= -1e-8


def test_integrate_step_too_large():
    with pytest.raises(StepTooLarge):
        rep.integrate(lambda x: np.array([10.0, -10.0]), np.array([0.0, 1.0]),
                      2.0, 0.5)


def test_pair_approx_drift_values():
    assert rep.pair_approx_drift(b=4.0, c=1.0, k=4, w=0.7) == pytest.approx(0.0)
    assert rep.pair_approx_drift(b=6.0, c=1.0, k=3, w=1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rep.pair_approx_drift(1.0, 1.0, 2, 0.1)


def test_pair_approx_recovers_limit_coefficient():
    # w = w_inf 2 gamma nu1 / theta with gamma nu1 -> (k-1)/(2(k-2)):
    # theta x drift coefficient -> w_inf (b/k - c)
    for k in (3, 4, 5):
        for b, c, w_inf in ((6.0, 1.0, 1.0), (2.0, 0.5, 1.7)):
            gamma_nu1 = (k - 1) / (2.0 * (k - 2))
            theta = 123.0
            w = w_inf * 2.0 * gamma_nu1 / theta
            recovered = theta * rep.pair_approx_drift(b, c, k, w)
            assert recovered == pytest.approx(w_inf * (b / k - c), abs=1e-12)
