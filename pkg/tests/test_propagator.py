import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from coldchem import units
from coldchem.errors import CalibrationError, GridError, MatchingError
from coldchem.potential import Channel, CollisionSystem, single_channel_curve
from coldchem.propagator import (
    RadialGrid,
    apply_log_derivative,
    calibrate_phase,
    chain_product,
    gauss_nodes,
    match_free_solution,
    propagate,
    propagate_block,
    short_range_boundary,
    step_matrices,
)
from coldchem.potential import adiabatic_curves, build_basis
from coldchem.qdt import (
    ShortRangeParams,
    characteristic_energies,
    mean_scattering_length,
)

MU = units.mass_from_amu(63.4968)
C6 = 16130.0


def krb(**kw):
    return CollisionSystem(reduced_mass=MU, c6=C6, **kw)


E0, E1 = characteristic_energies(MU, C6)
ABAR = mean_scattering_length(MU, C6)


def reference_log_derivative(curve, energy, y0, a, b, rtol=1e-11):
    """Independent integration of psi'' = 2 mu (V - E) psi with scipy."""
    mu = curve.system.reduced_mass

    def rhs(r, u):
        w = 2.0 * mu * (float(curve(r)) - energy)
        return [u[1], w * u[0]]

    sol = solve_ivp(
        rhs, (a, b), [1.0 + 0.0j, complex(y0)], method="DOP853", rtol=rtol, atol=1e-14
    )
    assert sol.success
    return sol.y[1, -1] / sol.y[0, -1]


# --- core numerics against an independent integrator ---------------------------


def test_propagation_matches_solve_ivp():
    system = krb()
    params = ShortRangeParams(s=0.0, y=0.6)
    curve = single_channel_curve(system, Channel(0, 0))
    energy = E0 / 100.0
    delta = 1.234
    grid = RadialGrid()
    bc = short_range_boundary(params, curve, energy, delta)
    r1 = grid.outer_radius(system, energy, params.r_match)
    starts, steps = grid.build_steps(system, 0, energy, params.r_match, r1)
    g1, g2 = gauss_nodes(starts, steps)
    w1 = 2.0 * MU * (np.asarray(curve(g1)) - energy)
    w2 = 2.0 * MU * (np.asarray(curve(g2)) - energy)
    y_prop = apply_log_derivative(
        chain_product(step_matrices(steps, w1, w2)), bc.log_derivative
    )
    y_ref = reference_log_derivative(
        curve, energy, bc.log_derivative, params.r_match, r1
    )
    assert abs(y_prop - y_ref) / abs(y_ref) < 5e-5


def test_propagation_matches_solve_ivp_high_resolution():
    system = krb()
    params = ShortRangeParams(s=0.0, y=0.6)
    curve = single_channel_curve(system, Channel(0, 0))
    energy = E0 / 100.0
    grid = RadialGrid(points_per_wavelength=120.0)
    bc = short_range_boundary(params, curve, energy, 1.234)
    r1 = grid.outer_radius(system, energy, params.r_match)
    starts, steps = grid.build_steps(system, 0, energy, params.r_match, r1)
    g1, g2 = gauss_nodes(starts, steps)
    w1 = 2.0 * MU * (np.asarray(curve(g1)) - energy)
    w2 = 2.0 * MU * (np.asarray(curve(g2)) - energy)
    y_prop = apply_log_derivative(
        chain_product(step_matrices(steps, w1, w2)), bc.log_derivative
    )
    y_ref = reference_log_derivative(
        curve, energy, bc.log_derivative, params.r_match, r1
    )
    assert abs(y_prop - y_ref) / abs(y_ref) < 2e-6


def test_fourth_order_convergence():
    system = krb()
    curve = single_channel_curve(system, Channel(0, 0))
    energy = E0
    y0 = complex(-3.0, -7.0)
    a, b = 20.0, 100.0

    def run(n):
        starts = np.linspace(a, b, n, endpoint=False)
        steps = np.full(n, (b - a) / n)
        g1, g2 = gauss_nodes(starts, steps)
        w1 = 2.0 * MU * (np.asarray(curve(g1)) - energy)
        w2 = 2.0 * MU * (np.asarray(curve(g2)) - energy)
        return apply_log_derivative(
            chain_product(step_matrices(steps, w1, w2)), y0
        )

    ref = reference_log_derivative(curve, energy, y0, a, b, rtol=1e-13)
    errors = [abs(run(n) - ref) for n in (400, 800, 1600)]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    for order in orders:
        assert 3.7 < order < 4.6


def test_step_matrices_small_step_series():
    # a single tiny step must be I + O(h); the series branch handles om -> 0
    steps = np.array([1e-9])
    w = np.array([2.5])
    m = step_matrices(steps, w, w)
    assert m[0] == pytest.approx(np.eye(2), abs=1e-8)
    assert m[0, 0, 1] == pytest.approx(1e-9, rel=1e-6)


def test_chain_product_orders_factors():
    rng = np.random.default_rng(7)
    ms = rng.normal(size=(5, 2, 2))
    direct = np.eye(2)
    for m in ms:
        direct = m @ direct
    chained = chain_product(ms)
    # chain_product normalizes by a positive scalar; compare directions
    ratio = direct / chained
    assert np.allclose(ratio, ratio.flat[0], rtol=1e-12)
    assert ratio.flat[0] > 0


def test_apply_log_derivative_infinite_boundary():
    m = np.array([[2.0, 3.0], [1.0, 4.0]])
    assert apply_log_derivative(m, complex(math.inf)) == pytest.approx(4.0 / 3.0)


# --- boundary condition --------------------------------------------------------


def test_boundary_reflection_magnitude():
    system = krb()
    curve = single_channel_curve(system, Channel(0, 0))
    for y in (0.0, 0.3, 0.83, 1.0):
        params = ShortRangeParams(s=0.0, y=y)
        bc = short_range_boundary(params, curve, E0 / 50.0, 0.7)
        assert abs(bc.reflection) == pytest.approx((1.0 - y) / (1.0 + y), rel=1e-12)


def test_full_absorber_boundary_ignores_phase():
    system = krb()
    curve = single_channel_curve(system, Channel(0, 0))
    params = ShortRangeParams(s=0.0, y=1.0)
    bc1 = short_range_boundary(params, curve, E0 / 50.0, 0.0)
    bc2 = short_range_boundary(params, curve, E0 / 50.0, 2.5)
    assert bc1.log_derivative == bc2.log_derivative
    # purely incoming wave: negative imaginary part carries flux inward
    assert bc1.log_derivative.imag < 0


def test_lossless_boundary_is_real():
    system = krb()
    curve = single_channel_curve(system, Channel(0, 0))
    params = ShortRangeParams(s=0.0, y=0.0)
    for delta in (0.0, 0.4, 1.1, 2.9):
        bc = short_range_boundary(params, curve, E0 / 50.0, delta)
        assert abs(bc.log_derivative.imag) < 1e-12 * abs(bc.log_derivative.real)


def test_boundary_rejects_forbidden_region():
    # tiny model system where the centrifugal wall exceeds the energy at R_m
    system = CollisionSystem(reduced_mass=1.0, c6=1.0)
    curve = single_channel_curve(
        system, Channel(7, 0), np.geomspace(0.1, 50.0, 200)
    )
    params = ShortRangeParams(s=0.0, y=1.0, r_match=0.5)
    with pytest.raises(MatchingError):
        short_range_boundary(params, curve, 1e-6, 0.0)


def test_boundary_warns_when_wkb_marginal():
    system = CollisionSystem(reduced_mass=1.0, c6=1.0)
    curve = single_channel_curve(system, Channel(0, 0), np.geomspace(0.1, 50.0, 200))
    params = ShortRangeParams(s=0.0, y=1.0, r_match=0.5)
    with pytest.warns(UserWarning, match="WKB"):
        short_range_boundary(params, curve, 1e-6, 0.0)


# --- end-to-end observables ----------------------------------------------------


def test_universal_swave_loss_length():
    system = krb()
    params = ShortRangeParams(s=0.0, y=1.0)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    curve = single_channel_curve(system, Channel(0, 0))
    res = propagate(system, curve, params, E0 / 100.0, delta, grid)
    assert res.scattering_length.beta == pytest.approx(ABAR, rel=0.02)
    assert res.match_spread < 1e-2 * abs(res.scattering_length.value) * res.wavenumber


def test_universal_beta_insensitive_to_s():
    system = krb()
    grid = RadialGrid()
    curve = single_channel_curve(system, Channel(0, 0))
    betas = []
    for s in (0.0, 0.5):
        params = ShortRangeParams(s=s, y=1.0)
        delta = calibrate_phase(system, params, grid)
        res = propagate(system, curve, params, E0 / 100.0, delta, grid)
        betas.append(res.scattering_length.beta)
    assert abs(betas[1] - betas[0]) / betas[0] < 5e-3


def test_lossless_wall_is_unitary():
    system = krb()
    params = ShortRangeParams(s=0.5, y=0.0)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    curve = single_channel_curve(system, Channel(0, 0))
    for energy in (E0 / 100.0, E0, 10.0 * E0):
        res = propagate(system, curve, params, energy, delta, grid)
        assert abs(res.loss_probability) < 1e-9
        assert abs(abs(res.s_matrix) - 1.0) < 1e-9


def test_calibration_defining_property():
    system = krb()
    grid = RadialGrid()
    tolerance = 1e-3
    for s in (-0.5, 0.0, 0.5, 2.0):
        params = ShortRangeParams(s=s, y=0.0)
        delta = calibrate_phase(system, params, grid, tolerance=tolerance)
        e_cal = 1e-4 * E0
        k = math.sqrt(2.0 * MU * e_cal)
        curve = single_channel_curve(system, Channel(0, 0))
        res = propagate(system, curve, params, e_cal, delta, grid)
        a = -math.tan(math.atan2(res.s_matrix.imag, res.s_matrix.real) / 2.0) / k
        assert abs(a - s * ABAR) <= 2.0 * tolerance * ABAR * max(1.0, abs(s))


def test_calibration_energy_independence():
    # the residual drift is the physical effective-range shift of a(E),
    # linear in the calibration energy; 3e-3 rad on a pi period is ~1e-3
    system = krb()
    params = ShortRangeParams(s=0.5, y=0.0)
    grid = RadialGrid()
    d1 = calibrate_phase(system, params, grid, energy_fraction=1e-4)
    d2 = calibrate_phase(system, params, grid, energy_fraction=1e-3)
    assert abs(d1 - d2) < 3e-3


def test_result_insensitive_to_matching_radius():
    system = krb()
    grid = RadialGrid()
    betas = []
    for r_m in (15.0, 20.0, 26.0):
        params = ShortRangeParams(s=0.0, y=1.0, r_match=r_m)
        delta = calibrate_phase(system, params, grid)
        curve = single_channel_curve(system, Channel(0, 0))
        res = propagate(system, curve, params, E0 / 100.0, delta, grid)
        betas.append(res.scattering_length.beta)
    assert np.ptp(betas) / betas[1] < 0.01


def test_pwave_barrier_top_transmission():
    system = krb()
    params = ShortRangeParams(s=0.0, y=1.0)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    curve = single_channel_curve(system, Channel(1, 0))
    res = propagate(system, curve, params, E1, delta, grid)
    assert res.loss_probability == pytest.approx(0.37, abs=0.02)


def test_high_energy_pwave_transmits():
    system = krb()
    params = ShortRangeParams(s=0.0, y=1.0)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    curve = single_channel_curve(system, Channel(1, 0))
    res = propagate(system, curve, params, 100.0 * E1, delta, grid)
    assert res.loss_probability > 0.95


def test_grid_refinement_converged():
    system = krb()
    params = ShortRangeParams(s=0.3, y=0.7)
    coarse = RadialGrid()
    fine = RadialGrid(points_per_wavelength=80.0, scale_fraction=40.0)
    delta = calibrate_phase(system, params, coarse)
    curve = single_channel_curve(system, Channel(0, 0))
    p_coarse = propagate(system, curve, params, E0, delta, coarse).loss_probability
    p_fine = propagate(system, curve, params, E0, delta, fine).loss_probability
    assert abs(p_fine - p_coarse) / p_fine < 1e-3


def test_unitarity_bound_over_parameter_sweep():
    system = krb()
    grid = RadialGrid()
    for s, y in ((-0.5, 0.1), (0.0, 1.0), (0.5, 0.5), (2.0, 0.9)):
        params = ShortRangeParams(s=s, y=y)
        delta = calibrate_phase(system, params, grid)
        for channel in (Channel(0, 0), Channel(1, 0)):
            curve = single_channel_curve(system, channel)
            for energy in (E0 / 100.0, E0, 20.0 * E0):
                res = propagate(system, curve, params, energy, delta, grid)
                assert abs(res.s_matrix) ** 2 <= 1.0 + 1e-9
                assert res.loss_probability >= -1e-12


def test_block_propagation_matches_single_channel_at_zero_dipole():
    system = krb()
    params = ShortRangeParams(s=0.2, y=0.4)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    basis = build_basis(0, 1, 5)
    r_grid = np.geomspace(params.r_match, 1e5, 80)
    curves = adiabatic_curves(system, basis, r_grid)
    energy = E0 / 10.0
    block = propagate_block(system, curves, params, energy, delta, grid)
    by_channel = {r.L: r for r in block}
    for curve in curves:
        single = propagate(system, curve, params, energy, delta, grid)
        got = by_channel[curve.channel.L]
        assert got.s_matrix == pytest.approx(single.s_matrix, rel=1e-6)
        assert got.loss_probability == pytest.approx(
            single.loss_probability, rel=1e-5
        )


def test_block_phase_overrides():
    system = krb()
    params = ShortRangeParams(s=0.2, y=0.4)
    grid = RadialGrid()
    delta = calibrate_phase(system, params, grid)
    basis = build_basis(0, 1, 3)
    r_grid = np.geomspace(params.r_match, 1e5, 60)
    curves = adiabatic_curves(system, basis, r_grid)
    energy = E0 / 10.0
    base = propagate_block(system, curves, params, energy, delta, grid)
    tweaked = propagate_block(
        system,
        curves,
        params,
        energy,
        delta,
        grid,
        phase_overrides={Channel(3, 0): delta + 0.3},
    )
    assert tweaked[0].s_matrix == base[0].s_matrix
    assert tweaked[1].s_matrix != base[1].s_matrix


def test_validation_errors():
    system = krb()
    params = ShortRangeParams(s=0.0, y=1.0)
    curve = single_channel_curve(system, Channel(0, 0))
    with pytest.raises(ValueError):
        propagate(system, curve, params, -1e-10, 0.0)
    with pytest.raises(ValueError):
        propagate(
            system, curve, ShortRangeParams(s=0.0, y=1.0, r_match=200.0), E0, 0.0
        )
    with pytest.raises(ValueError):
        calibrate_phase(system, params, energy_fraction=0.5)


def test_grid_policies():
    grid = RadialGrid()
    system = krb()
    r_out = grid.outer_radius(system, E0, 20.0)
    assert (C6 / r_out**6) <= grid.tail_tolerance * E0 * (1.0 + 1e-12)
    dip = krb(dipole=units.dipole_from_debye(0.4))
    r_dip = grid.outer_radius(dip, E0 / 1000.0, 20.0)
    assert (dip.c3 / r_dip**3) <= grid.tail_tolerance * (E0 / 1000.0) * (1.0 + 1e-12)
    assert r_dip > r_out
    with pytest.raises(ValueError):
        RadialGrid(points_per_wavelength=10.0)
    with pytest.raises(ValueError):
        RadialGrid(tail_tolerance=1e-3)
    with pytest.raises(ValueError):
        RadialGrid(match_factor=0.9)


def test_build_steps_cover_interval():
    grid = RadialGrid()
    system = krb()
    starts, steps = grid.build_steps(system, 0, E0, 20.0, 2000.0)
    assert starts[0] == 20.0
    assert starts[-1] + steps[-1] == pytest.approx(2000.0, rel=1e-12)
    assert np.all(steps > 0)
    # step ceiling: never more than r/scale_fraction
    assert np.all(steps <= starts / grid.scale_fraction + 1e-12)


def test_calibration_rejects_when_no_root():
    # an r_match beyond abar is caught before any propagation
    system = krb()
    with pytest.raises(ValueError):
        calibrate_phase(system, ShortRangeParams(s=0.0, y=0.0, r_match=150.0))
