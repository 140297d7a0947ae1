"""Core series algebra: products, brackets, partitions, norms, serialisation."""

import math

import numpy as np
import pytest

import oracles
from kamforge.series import (
    Dims,
    GradingCaps,
    Sites,
    TFSeries,
    WeightedNorm,
    dump_lines,
    ellap_norm,
    load_lines,
    majorant_vf_norm,
    monomial,
    poisson_bracket,
    poisson_bracket_split,
    series_product,
    series_product_split,
    _bracket_impl,
    _product_impl,
)

D111 = Dims(1, 1, 1)
D213 = Dims(2, 1, 3)


def from_dict(dims, terms):
    return TFSeries(dims, dict(terms))


def test_square_of_action_plus_degenerate_coordinate():
    # (y + z0)^2 = y^2 + 2 y z0 + z0^2, exponents worked out by hand
    A = monomial(D111, 1.0, i=(1,)) + monomial(D111, 1.0, j=(1, 0))
    sq = series_product(A, A)
    assert sq.coeff(((0,), (2,), (0, 0), (0,), (0,))) == pytest.approx(1.0)
    assert sq.coeff(((0,), (1,), (1, 0), (0,), (0,))) == pytest.approx(2.0)
    assert sq.coeff(((0,), (0,), (2, 0), (0,), (0,))) == pytest.approx(1.0)
    assert len(sq) == 3


def test_bracket_of_linear_actions_with_harmonic():
    # {<omega,y>, e^{I<k,x>}} = -I <k,omega> e^{I<k,x>}
    dims = Dims(2, 0, 0)
    omega = (1.5, 2.5)
    k = (2, -1)
    N = monomial(dims, omega[0], i=(1, 0)) + monomial(dims, omega[1], i=(0, 1))
    E = monomial(dims, 1.0, k=k)
    br = poisson_bracket(N, E)
    expect = -1j * (k[0] * omega[0] + k[1] * omega[1])
    assert br.coeff((k, (0, 0), (), (), ())) == pytest.approx(expect)
    assert len(br) == 1


def test_canonical_pair_brackets():
    # {z_0, z_b} = 1, {w_j, wbar_j} = I, {e^{Ix}, y} = I e^{Ix}
    z0 = monomial(D111, 1.0, j=(1, 0))
    z1 = monomial(D111, 1.0, j=(0, 1))
    assert poisson_bracket(z0, z1).coeff(D111.zero_key()) == pytest.approx(1.0)
    assert poisson_bracket(z1, z0).coeff(D111.zero_key()) == pytest.approx(-1.0)
    w = monomial(D111, 1.0, l1=(1,))
    wb = monomial(D111, 1.0, l2=(1,))
    assert poisson_bracket(w, wb).coeff(D111.zero_key()) == pytest.approx(1j)
    u = monomial(D111, 1.0, k=(1,))
    y = monomial(D111, 1.0, i=(1,))
    br = poisson_bracket(u, y)
    assert br.coeff(((1,), (0,), (0, 0), (0,), (0,))) == pytest.approx(1j)


def test_partial_derivatives():
    s = monomial(D111, 3.0, k=(2,), i=(2,))
    dy = s.partial("y", 0)
    assert dy.coeff(((2,), (1,), (0, 0), (0,), (0,))) == pytest.approx(6.0)
    dx = s.partial("x", 0)
    assert dx.coeff(((2,), (2,), (0, 0), (0,), (0,))) == pytest.approx(6j)
    dz = monomial(D111, 1.0, j=(0, 3)).partial("z", 1)
    assert dz.coeff(((0,), (0,), (0, 2), (0,), (0,))) == pytest.approx(3.0)
    assert not monomial(D111, 1.0, i=(1,)).partial("z", 0)


def test_bracket_antisymmetry_and_jacobi():
    rng = np.random.default_rng(7)
    A = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=8))
    B = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=8))
    C = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=6))
    ab = poisson_bracket(A, B)
    ba = poisson_bracket(B, A)
    assert oracles.max_diff(ab.terms, ba.scaled(-1).terms) < 1e-12
    jac = (
        poisson_bracket(A, poisson_bracket(B, C))
        + poisson_bracket(B, poisson_bracket(C, A))
        + poisson_bracket(C, poisson_bracket(A, B))
    )
    scale = max(1.0, oracles.max_abs(ab.terms))
    assert oracles.max_abs(jac.terms) / scale < 1e-10


def test_bracket_leibniz_rule():
    rng = np.random.default_rng(11)
    A = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=6))
    B = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=6))
    C = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=6))
    lhs = poisson_bracket(A, series_product(B, C))
    rhs = series_product(poisson_bracket(A, B), C) + series_product(B, poisson_bracket(A, C))
    assert oracles.max_diff(lhs.terms, rhs.terms) < 1e-10


def test_product_matches_oracle_both_kernels():
    rng = np.random.default_rng(3)
    for _ in range(10):
        At = oracles.random_series((2, 1, 3), rng, nterms=15)
        Bt = oracles.random_series((2, 1, 3), rng, nterms=15)
        want = oracles.oracle_product(At, Bt)
        A, B = from_dict(D213, At), from_dict(D213, Bt)
        got_dict = _product_impl(A, B, None, "dict")[0]
        got_arr = _product_impl(A, B, None, "array")[0]
        assert oracles.max_diff(got_dict.terms, want) < 1e-12
        assert oracles.max_diff(got_arr.terms, want) < 1e-12


def test_bracket_matches_oracle_both_kernels():
    rng = np.random.default_rng(5)
    for _ in range(10):
        At = oracles.random_series((2, 1, 3), rng, nterms=12)
        Bt = oracles.random_series((2, 1, 3), rng, nterms=12)
        want = oracles.oracle_bracket(At, Bt, (2, 1, 3))
        A, B = from_dict(D213, At), from_dict(D213, Bt)
        got_dict = _bracket_impl(A, B, None, "dict")[0]
        got_arr = _bracket_impl(A, B, None, "array")[0]
        assert oracles.max_diff(got_dict.terms, want) < 1e-11
        assert oracles.max_diff(got_arr.terms, want) < 1e-11


def test_truncation_is_an_exact_partition():
    rng = np.random.default_rng(13)
    terms = oracles.random_series((2, 1, 3), rng, nterms=60, kmax=6, degmax=8, lmax=4)
    P = from_dict(D213, terms)
    low, tail = P.truncate_split(K=3, m=4, l_cap=2)
    back = low + tail
    assert oracles.max_diff(back.terms, P.terms) == 0.0
    for key in low.terms:
        assert sum(abs(v) for v in key[0]) <= 3
        assert 2 * sum(key[1]) + sum(key[2]) <= 4
        assert sum(key[3]) + sum(key[4]) <= 2
    for key in tail.terms:
        assert (sum(abs(v) for v in key[0]) > 3
                or 2 * sum(key[1]) + sum(key[2]) > 4
                or sum(key[3]) + sum(key[4]) > 2)
    want_low, want_tail = oracles.oracle_truncate(terms, 3, 4, 2)
    assert oracles.max_diff(low.terms, want_low) == 0.0
    assert oracles.max_diff(tail.terms, want_tail) == 0.0


def test_average_keeps_only_zero_harmonics():
    rng = np.random.default_rng(17)
    terms = oracles.random_series((2, 1, 3), rng, nterms=40)
    P = from_dict(D213, terms)
    avg = P.average()
    assert oracles.max_diff(avg.terms, oracles.oracle_average(terms)) == 0.0
    assert all(key[0] == (0, 0) for key in avg.terms)


def test_capped_product_splits_without_loss():
    rng = np.random.default_rng(19)
    A = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=20, kmax=3, degmax=5))
    B = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=20, kmax=3, degmax=5))
    caps = GradingCaps(k_max=4, m_max=6, l_max=2)
    main, over = series_product_split(A, B, caps)
    full = series_product(A, B)
    assert oracles.max_diff((main + over).terms, full.terms) < 1e-12
    assert all(caps.admits(key) for key in main.terms)
    assert all(not caps.admits(key) for key in over.terms)
    bmain, bover = poisson_bracket_split(A, B, caps)
    bfull = poisson_bracket(A, B)
    assert oracles.max_diff((bmain + bover).terms, bfull.terms) < 1e-11
    assert all(caps.admits(key) for key in bmain.terms)


def test_shift_matches_oracle_and_evaluation():
    rng = np.random.default_rng(23)
    terms = oracles.random_series((2, 1, 3), rng, nterms=25, degmax=5)
    P = from_dict(D213, terms)
    delta = (0.3 - 0.1j, -0.2 + 0.05j)
    shifted = P.shift_z(delta)
    want = oracles.oracle_shift_z(terms, delta)
    assert oracles.max_diff(shifted.terms, want) < 1e-12
    x = (0.4, -1.1)
    y = (0.07, -0.02)
    z = (0.11 + 0.02j, -0.08 - 0.01j)
    w = (0.03, -0.05, 0.02)
    wb = (0.01, 0.04, -0.06)
    lhs = shifted.evaluate(x, y, z, w, wb)
    rhs = P.evaluate(x, y, tuple(zz + dd for zz, dd in zip(z, delta)), w, wb)
    assert abs(lhs - rhs) < 1e-12
    assert oracles.max_diff(P.shift_z((0.0, 0.0)).terms, P.terms) == 0.0


def test_reality_defect_detects_symmetry():
    rng = np.random.default_rng(29)
    real_terms = oracles.random_series((2, 1, 3), rng, nterms=20, real=True)
    P = from_dict(D213, real_terms)
    assert P.reality_defect() < 1e-14
    # cos(x_0) written as half-sum of exponentials is real
    cosx = monomial(D213, 0.5, k=(1, 0)) + monomial(D213, 0.5, k=(-1, 0))
    assert cosx.reality_defect() == 0.0
    # real polynomials in the degenerate pair are real as they stand
    assert monomial(D213, 1.5, j=(2, 0)).reality_defect() == 0.0
    broken = cosx + monomial(D213, 0.25j, k=(1, 0))
    assert broken.reality_defect() > 0.2


def test_bracket_preserves_reality():
    rng = np.random.default_rng(61)
    A = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=14, real=True))
    B = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=14, real=True))
    br = poisson_bracket(A, B)
    scale = max(1.0, oracles.max_abs(br.terms))
    assert br.reality_defect() <= 1e-12 * scale
    prod = series_product(A, B)
    assert prod.reality_defect() <= 1e-12 * max(1.0, oracles.max_abs(prod.terms))


def test_dump_load_roundtrip_and_ordering():
    rng = np.random.default_rng(31)
    P = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=30))
    lines = dump_lines(P)
    Q = load_lines(lines)
    assert Q.dims == P.dims
    assert oracles.max_diff(Q.terms, P.terms) == 0.0
    assert lines == dump_lines(Q)
    assert lines[0] == "# tfseries n=2 b=1 J=3"
    assert lines[1:] == sorted(lines[1:], key=lambda ln: [int(v) for f in ln.split("|")[:5] for v in f.split(",")])


def test_evaluate_simple_polynomial():
    A = monomial(D111, 1.0, i=(1,)) + monomial(D111, 1.0, j=(1, 0))
    sq = series_product(A, A)
    val = sq.evaluate((0.0,), (0.2,), (0.3, 0.9), (0.0,), (0.0,))
    assert val == pytest.approx(0.25)


def test_vector_field_majorant_hand_values():
    wn = WeightedNorm(s=0.5, r=0.3, a=2, a_exp=1.0, a_wt=0.02, p=1.0, pbar=1.5)
    sites = Sites(z=(3,), w=(4,))
    # H = 2 y e^{I k x}: action-rate block 2 e^{0.5}, angle-rate block 2 e^{0.5}
    H = monomial(D111, 2.0, k=(1,), i=(1,))
    assert majorant_vf_norm(H, wn, sites) == pytest.approx(4 * math.exp(0.5))
    # H = z_0: drives the rate of the conjugate component, weight 3^1.5 e^{0.06}
    H = monomial(D111, 1.0, j=(1, 0))
    want = 3 ** 1.5 * math.exp(0.06) / 0.3
    assert majorant_vf_norm(H, wn, sites) == pytest.approx(want)
    # H = wbar_0: normal-rate block with weight 4 e^{0.08}
    H = monomial(D111, 1.0, l2=(1,))
    assert majorant_vf_norm(H, wn, sites) == pytest.approx(4 * math.exp(0.08))


def test_majorant_dominates_sampled_field_components():
    rng = np.random.default_rng(37)
    wn = WeightedNorm(s=0.2, r=0.4, a=2, a_exp=1.0, a_wt=0.02, p=1.0, pbar=1.5)
    sites = Sites(z=(3,), w=(4, 5, 6))
    P = from_dict(D213, oracles.random_series((2, 1, 3), rng, nterms=15, real=True))
    bound = majorant_vf_norm(P, wn, sites)
    for _ in range(20):
        x = rng.uniform(-math.pi, math.pi, 2)
        y = rng.uniform(-1, 1, 2) * wn.r ** 2
        z = rng.uniform(-1, 1, 2) * wn.r / math.sqrt(2)
        w = (rng.uniform(-1, 1, 3) + 1j * rng.uniform(-1, 1, 3)) * wn.r / math.sqrt(2)
        wb = w.conjugate()
        dy0 = P.partial("y", 0).evaluate(x, y, z, w, wb)
        assert abs(dy0) / wn.r ** (wn.a - 2) <= bound + 1e-12


def test_ellap_norm_weighted_sum():
    assert ellap_norm((3.0, 4.0), (1, 2), p=0.0, a_wt=0.0) == pytest.approx(5.0)
    v = (1.0 + 1j,)
    want = math.sqrt(2.0 * 3 ** 4 * math.exp(2 * 0.1 * 3))
    assert ellap_norm(v, (3,), p=2.0, a_wt=0.1) == pytest.approx(want)


def test_incompatible_dimensions_rejected():
    A = monomial(D111, 1.0, i=(1,))
    B = monomial(D213, 1.0, i=(1, 0))
    with pytest.raises(ValueError):
        series_product(A, B)
    with pytest.raises(ValueError):
        A + B
    with pytest.raises(ValueError):
        monomial(D111, 1.0, i=(1, 2))
    with pytest.raises(ValueError):
        A.partial("q", 0)
