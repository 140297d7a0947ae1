"""Tests for the degree-vs-convexity model field and its forced equilibrium.

Frozen oracles: the default grid crosses every zero of sin(1/eps) on
(1e-3, 1e-1), and the number of such zeros is floor(1000/pi) -
floor(10/pi) = 315; tail oscillation of -sin(1/eps) on dyadic tails of
that grid stays above 1.99; the field's degree on the box is 1 at every
resolution (first component crosses zero once upward, second is the
identity).
"""

import math

import numpy as np
import pytest

from kamforge.counterexample import (
    BOX,
    EQUILIBRIUM_CSV_HEADER,
    PLATEAU_WITNESS,
    CounterexampleConfig,
    OscillationReport,
    build,
    count_sign_changes,
    default_eps_grid,
    equilibrium_oscillation,
    forcing_amplitude,
    gradient_field,
    plateau_gradient,
    verify_split,
)
from kamforge.degree import find_equilibrium


def test_config_validation():
    with pytest.raises(ValueError):
        CounterexampleConfig(sigma_exp=0)
    with pytest.raises(ValueError):
        CounterexampleConfig(ell_exp=0)
    with pytest.raises(ValueError):
        CounterexampleConfig(sigma_exp=1.5)  # type: ignore[arg-type]
    with pytest.raises(ValueError):
        CounterexampleConfig(eps_grid=(0.6, 0.1))
    with pytest.raises(ValueError):
        CounterexampleConfig(eps_grid=(0.01, 0.1))
    with pytest.raises(ValueError):
        CounterexampleConfig(eps_grid=())
    cfg = CounterexampleConfig(eps_grid=(0.4, 0.2, 0.1))
    assert cfg.eps_grid == (0.4, 0.2, 0.1)


def test_default_grid_shape():
    grid = default_eps_grid()
    assert len(grid) == 4001
    assert grid[0] == pytest.approx(1e-1) and grid[-1] == pytest.approx(1e-3)
    assert all(b < a for a, b in zip(grid, grid[1:]))
    assert all(0.0 < e < 0.5 for e in grid)
    with pytest.raises(ValueError):
        default_eps_grid(lo=0.2, hi=0.1)


def test_plateau_values_exact():
    # 0 on the plateau, +-(|w|-1)^s outside, both to the bit
    for sig in (1, 2, 3):
        assert plateau_gradient(0.0, sig) == 0.0
        assert plateau_gradient(1.5, sig) == 0.5**sig
        assert plateau_gradient(-1.5, sig) == -(0.5**sig)
    w = np.linspace(-1.0, 1.0, 1001)
    assert np.all(plateau_gradient(w, 2) == 0.0)
    # continuous exit from the plateau
    assert plateau_gradient(1.0 + 1e-8, 1) == pytest.approx(1e-8, rel=1e-9)


def test_field_oddness_exact():
    grad = gradient_field(CounterexampleConfig())
    rng = np.random.default_rng(7)
    for _ in range(100):
        z = rng.uniform(-2.0, 2.0, size=2)
        assert np.array_equal(grad(-z), -grad(z))


def test_forcing_amplitude():
    cfg = CounterexampleConfig(ell_exp=2)
    amp = forcing_amplitude(cfg)
    assert amp(0.0) == 0.0
    # at eps = 2/((2k+1) pi) the sine evaluates to exactly +-1 in floats,
    # so the amplitude is exactly +-eps**ell, alternating in k
    for k in range(10):
        e = 2.0 / ((2 * k + 1) * math.pi)
        assert amp(e) == (-1.0) ** k * e**2
    # at eps = 1/(k pi) the sine is zero up to rounding of 1/(k pi)
    for k in range(1, 300, 7):
        e = 1.0 / (k * math.pi)
        assert abs(amp(e)) <= 1e-12 * e**2


def test_build_returns_pair():
    grad, amp = build(CounterexampleConfig())
    assert np.array_equal(grad(np.array([0.0, 0.3])), np.array([0.0, 0.3]))
    assert amp(0.25) == 0.25 * math.sin(4.0)


def test_split_degree_stable():
    report = verify_split(CounterexampleConfig())
    assert report.degree == 1
    assert all(d == 1 for _, d in report.degree_by_resolution)
    assert len(report.degree_by_resolution) >= 2
    assert report.boundary_margin > 0.9
    assert report.odd_symmetry_gap == 0.0
    assert report.ok


def test_split_degree_stable_flatter_exit():
    # a flatter plateau exit does not change the count
    report = verify_split(CounterexampleConfig(sigma_exp=2), resolutions=(2, 4))
    assert report.degree == 1 and report.ok


def test_split_convexity_fails_machine_exact():
    report = verify_split(CounterexampleConfig())
    assert not report.convexity.ok
    assert report.convexity.min_ratio == 0.0
    # sampled witness lives in the flat square and differs in one coord
    za, zb = report.convexity.witness
    assert all(abs(v) <= 1.0 for v in za) and all(abs(v) <= 1.0 for v in zb)
    # pinned witness: same second coordinate, both in the plateau
    assert report.witness == PLATEAU_WITNESS
    assert report.witness_gradient_gap == 0.0
    assert report.witness_separation > 0.29


def test_split_linear_component_passes():
    report = verify_split(CounterexampleConfig())
    assert report.linear_ok
    assert report.linear_min_ratio == 1.0


def test_oscillation_default_grid():
    report = equilibrium_oscillation(CounterexampleConfig())
    # frozen: zeros of sin(1/eps) with 1/eps in (10, 1000) number
    # floor(1000/pi) - floor(10/pi) = 315, and the grid resolves each
    assert report.sign_changes == 315
    assert report.sign_changes >= 10
    assert report.tail_oscillation >= 1.99
    assert not report.cauchy


def test_oscillation_algebraic_identity():
    cfg = CounterexampleConfig(ell_exp=3)
    report = equilibrium_oscillation(cfg)
    eps = np.asarray(cfg.eps_grid)
    assert np.array_equal(report.ratio, -np.sin(1.0 / eps))
    assert np.array_equal(report.equilibrium, eps**3 * report.ratio)


def test_oscillation_needs_two_decades():
    cfg = CounterexampleConfig(eps_grid=tuple(np.geomspace(0.1, 0.02, 50)))
    with pytest.raises(ValueError):
        equilibrium_oscillation(cfg)


def test_oscillation_extremum_subsequence_exact():
    # eps_k = 2/((2k+1) pi): equilibrium is exactly -(-1)^k eps^ell
    grid = tuple(2.0 / ((2 * k + 1) * math.pi) for k in range(2, 321))
    cfg = CounterexampleConfig(eps_grid=grid)
    report = equilibrium_oscillation(cfg)
    eps = np.asarray(grid)
    signs = np.array([-((-1.0) ** k) for k in range(2, 321)])
    assert np.array_equal(report.equilibrium, signs * eps)
    assert report.tail_oscillation == 2.0


def test_oscillation_zero_subsequence():
    # along eps_k = 1/(k pi) the scaled equilibrium stays under rounding
    # noise while the neighboring extremum subsequence sits at 1: the
    # scaled value has no limit as eps -> 0+
    grid = tuple(1.0 / (k * math.pi) for k in range(1, 321))
    report = equilibrium_oscillation(CounterexampleConfig(eps_grid=grid))
    assert float(np.max(np.abs(report.ratio))) <= 1e-12
    extrema = equilibrium_oscillation(
        CounterexampleConfig(
            eps_grid=tuple(2.0 / ((2 * k + 1) * math.pi) for k in range(2, 321))
        )
    )
    assert float(np.min(np.abs(extrema.ratio))) == 1.0


def test_count_sign_changes_ignores_zeros():
    vals = np.array([1.0, 0.0, -2.0, 0.0, 0.0, 3.0, 4.0, -1.0])
    assert count_sign_changes(vals) == 3
    assert count_sign_changes(np.array([0.0, 0.0])) == 0


def test_csv_output():
    cfg = CounterexampleConfig(eps_grid=tuple(np.geomspace(0.3, 0.001, 200)))
    report = equilibrium_oscillation(cfg)
    lines = report.csv_lines()
    assert lines[0] == EQUILIBRIUM_CSV_HEADER
    assert len(lines) == 201
    e, v, s = lines[1].split(",")
    assert float(e) == pytest.approx(0.3)
    assert float(v) == report.equilibrium[0]
    assert int(s) in (-1, 0, 1)
    signs = {int(line.split(",")[2]) for line in lines[1:]}
    assert signs <= {-1, 0, 1} and {-1, 1} <= signs


def test_forced_equilibrium_matches_generic_solver():
    # the generic zero finder on grad + (0, forcing) lands on the
    # algebraic value of the forced coordinate, with the free coordinate
    # somewhere on the plateau
    cfg = CounterexampleConfig()
    grad, amp = build(cfg)
    eps = 2.0 / (21 * math.pi)
    p0 = amp(eps)
    z, residual = find_equilibrium(
        grad, lambda z: np.array([0.0, p0]), dim=2, radius=1.0, seed=0
    )
    assert residual <= 1e-10
    assert abs(z[1] + p0) <= 1e-12
    assert -1.0 <= z[0] <= 1.0
