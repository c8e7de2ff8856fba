import numpy as np
import pytest

from dbgames import game
from dbgames.errors import NegativeFitness, NotNeighbor, SelectionTooStrong


def brute_force_p_pair(kernel, xi, s):
    """O(N^2) oracle for the adjacent-pair density."""
    dense = kernel.weights.toarray()
    pi = kernel.pi
    nu = np.zeros((s, s))
    for x in range(kernel.n):
        for y in range(kernel.n):
            nu[xi[x], xi[y]] += pi[x] ** 2 * dense[x, y]
    return nu / kernel.nu1


def test_wbar_zero_payoff():
    assert game.max_selection_intensity(np.zeros((2, 2))) == pytest.approx(1.0 - 1e-6)


def test_wbar_prisoner():
    wbar = game.max_selection_intensity(game.prisoner_payoff(3.0, 1.0))
    assert wbar == pytest.approx(0.25 * (1.0 - 1e-6), rel=1e-12)


def test_w_above_wbar_rejected():
    with pytest.raises(SelectionTooStrong):
        game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                      mutation=np.zeros(2), w=0.3)


def test_negative_mutation_rejected():
    with pytest.raises(ValueError):
        game.GameSpec(payoff=np.zeros((2, 2)), mutation=np.array([-0.1, 0.0]), w=0.0)


def test_perturbed_row_w_zero(rr50):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0), mutation=np.zeros(2), w=0.0)
    rng = np.random.default_rng(0)
    xi = rng.integers(0, 2, rr50.n).astype(np.int8)
    for x in (0, 7, 23):
        row = game.perturbed_row(rr50, spec, xi, x)
        assert np.allclose(row, rr50.weights[x].toarray().ravel(), atol=1e-15)


def test_perturbed_row_zero_payoff(rr50):
    spec = game.GameSpec(payoff=np.zeros((2, 2)), mutation=np.zeros(2), w=0.4)
    rng = np.random.default_rng(1)
    xi = rng.integers(0, 2, rr50.n).astype(np.int8)
    row = game.perturbed_row(rr50, spec, xi, 5)
    assert np.allclose(row, rr50.weights[5].toarray().ravel(), atol=1e-15)


def test_perturbed_row_monomorphic(k4, prisoner31):
    xi = np.ones(4, dtype=np.int8)
    for x in range(4):
        row = game.perturbed_row(k4, prisoner31, xi, x)
        assert np.allclose(row, k4.weights[x].toarray().ravel(), atol=1e-15)


def test_perturbed_row_properties(rr50, path3):
    rng = np.random.default_rng(3)
    for kernel in (rr50, path3):
        for _ in range(40):
            wbar = game.max_selection_intensity(game.prisoner_payoff(3.0, 1.0))
            w = float(rng.uniform(0.0, wbar))
            spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0),
                                 mutation=np.zeros(2), w=w)
            xi = rng.integers(0, 2, kernel.n).astype(np.int8)
            x = int(rng.integers(kernel.n))
            row = game.perturbed_row(kernel, spec, xi, x)
            assert row.sum() == pytest.approx(1.0, abs=1e-12)
            support = set(np.nonzero(row)[0])
            assert support == set(kernel.neighbors(x))


def test_expansion_reassembly(rr50, prisoner31):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        xi = rng.integers(0, 2, rr50.n).astype(np.int8)
        x = int(rng.integers(rr50.n))
        nbrs = rr50.neighbors(x)
        y = int(nbrs[rng.integers(len(nbrs))])
        a, b, r = game.expansion_terms(rr50, prisoner31, xi, x, y)
        w = prisoner31.w
        rebuilt = rr50.weights[x, y] * (1.0 + w * (a - b) + w * w * r)
        row = game.perturbed_row(rr50, prisoner31, xi, x)
        worst = max(worst, abs(rebuilt - row[y]))
    assert worst <= 1e-12


def test_expansion_zero_payoff(k4):
    spec = game.GameSpec(payoff=np.zeros((2, 2)), mutation=np.zeros(2), w=0.3)
    xi = np.array([0, 1, 0, 1], dtype=np.int8)
    a, b, r = game.expansion_terms(k4, spec, xi, 0, 1)
    assert a == pytest.approx(1.0) and b == pytest.approx(1.0)
    assert r == pytest.approx(0.0, abs=1e-15)


def test_expansion_checkerboard_bounded(k4, prisoner31):
    xi = np.array([0, 1, 0, 1], dtype=np.int8)
    avals, bvals, rvals = [], [], []
    for x in range(4):
        for y in k4.neighbors(x):
            a, b, r = game.expansion_terms(k4, prisoner31, xi, x, int(y))
            avals.append(a)
            bvals.append(b)
            rvals.append(r)
    assert np.all(np.isfinite(avals)) and np.all(np.isfinite(bvals))
    # |R^w| <= max|A - B| max|A| / (1 - wbar max|A|), evaluated on this state
    amax = np.max(np.abs(avals))
    dmax = np.max(np.abs(np.array(avals) - np.array(bvals)))
    bound = dmax * amax / (1.0 - prisoner31.wbar * amax)
    assert np.max(np.abs(rvals)) <= bound + 1e-12


def test_expansion_not_neighbor(path3, prisoner31):
    with pytest.raises(NotNeighbor):
        game.expansion_terms(path3, prisoner31, np.array([0, 1, 0], dtype=np.int8), 0, 2)


def test_negative_fitness_flagged(k4):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0), mutation=np.zeros(2), w=0.2)
    spec.w = 0.9  # simulate a caller bug after construction
    # a lone donor surrounded by defectors collects payoff -1, so its
    # bracket is 0.1 - 0.9 < 0
    with pytest.raises(NegativeFitness):
        game.fitness_brackets(k4, spec, np.array([1, 0, 0, 0], dtype=np.int8))


def test_dbar_monomorphic(k4, prisoner31):
    xi = np.zeros(4, dtype=np.int8)
    for sigma in (0, 1):
        forms = game.dbar(k4, prisoner31, xi, sigma)
        assert forms.double_sum == pytest.approx(0.0, abs=1e-15)
        assert forms.chain_moment == pytest.approx(0.0, abs=1e-15)


def test_dbar_forms_agree(rr50, prisoner31):
    rng = np.random.default_rng(5)
    worst12 = worst23 = 0.0
    for _ in range(100):
        xi = rng.integers(0, 2, rr50.n).astype(np.int8)
        sigma = int(rng.integers(2))
        forms = game.dbar(rr50, prisoner31, xi, sigma)
        worst12 = max(worst12, abs(forms.double_sum - forms.chain_moment))
        worst23 = max(worst23, abs(forms.chain_moment - forms.two_type))
    assert worst12 <= 1e-12
    assert worst23 <= 1e-12


def test_dbar_multitype_forms_agree(rr50):
    rng = np.random.default_rng(6)
    payoff = rng.normal(size=(3, 3))
    spec = game.GameSpec(payoff=payoff, mutation=np.zeros(3), w=0.0)
    for _ in range(25):
        xi = rng.integers(0, 3, rr50.n).astype(np.int8)
        sigma = int(rng.integers(3))
        forms = game.dbar(rr50, spec, xi, sigma)
        assert abs(forms.double_sum - forms.chain_moment) <= 1e-12
        assert forms.two_type is None


def test_dbar_relabeling_invariance(rr50):
    rng = np.random.default_rng(7)
    payoff = rng.normal(size=(3, 3))
    perm = np.array([2, 0, 1])
    payoff_p = payoff[np.ix_(perm, perm)]
    spec = game.GameSpec(payoff=payoff, mutation=np.zeros(3), w=0.0)
    spec_p = game.GameSpec(payoff=payoff_p, mutation=np.zeros(3), w=0.0)
    inv = np.argsort(perm)
    for _ in range(10):
        xi = rng.integers(0, 3, rr50.n).astype(np.int8)
        xi_p = inv[xi].astype(np.int8)   # relabel so that type perm[a] becomes a
        for sigma in range(3):
            d = game.dbar(rr50, spec, xi, int(perm[sigma])).chain_moment
            dp = game.dbar(rr50, spec_p, xi_p, sigma).chain_moment
            assert d == pytest.approx(dp, abs=1e-13)


def test_observables_monomorphic(k4):
    xi = np.full(4, 1, dtype=np.int8)
    obs = game.observables(k4, xi, 2)
    assert obs.density[1] == pytest.approx(1.0)
    assert obs.p_pair[1, 1] == pytest.approx(1.0)
    assert obs.p_pair[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert obs.bar_triple[0].sum() == pytest.approx(0.0, abs=1e-15)


def test_observables_normalizations(rr50):
    rng = np.random.default_rng(8)
    xi = rng.integers(0, 3, rr50.n).astype(np.int8)
    obs = game.observables(rr50, xi, 3)
    assert np.allclose(obs.freq.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(obs.pair_freq.sum(axis=(0, 1)), 1.0, atol=1e-12)
    assert obs.p_pair.sum() == pytest.approx(1.0, abs=1e-12)
    # triple marginal collapses to the one-step average, which is the density
    for s0 in range(3):
        marg = obs.bar_triple[s0].sum()
        assert marg == pytest.approx(float(obs.freq[s0] @ rr50.pi), abs=1e-12)
        assert marg == pytest.approx(obs.density[s0], abs=1e-12)


def test_p_pair_brute_force(k4):
    rng = np.random.default_rng(9)
    xi = rng.integers(0, 2, 4).astype(np.int8)
    obs = game.observables(k4, xi, 2)
    expected = brute_force_p_pair(k4, xi, 2)
    assert np.allclose(obs.p_pair, expected, atol=1e-13)


def test_validate_against(k4):
    spec = game.GameSpec(payoff=game.prisoner_payoff(3.0, 1.0), mutation=np.zeros(2), w=0.2)
    spec.validate_against(k4)
    spec.w = 0.26
    with pytest.raises(SelectionTooStrong):
        spec.validate_against(k4)


def test_prisoner_bc_detection():
    spec = game.GameSpec(payoff=game.prisoner_payoff(6.0, 1.0), mutation=np.zeros(2), w=0.0)
    assert spec.prisoner_bc() == (6.0, 1.0)
    other = game.GameSpec(payoff=np.array([[0.1, 6.0], [-1.0, 5.0]]),
                          mutation=np.zeros(2), w=0.0)
    assert other.prisoner_bc() is None
