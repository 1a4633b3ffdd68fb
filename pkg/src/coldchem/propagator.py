"""Radial propagation with an absorbing short-range boundary.

The wave function on one adiabatic curve is carried from the short-range
matching radius R_m to the asymptotic region by a fourth-order Magnus
log-derivative scheme: each step maps the pair (psi, psi') through the
exponential of a 2x2 traceless matrix built from the potential at the two
Gauss-Legendre nodes of the step.  The boundary condition at R_m is the
log-derivative of a WKB wave with unit incoming flux and reflected
amplitude (1 - y)/(1 + y) * exp(2 i delta_sr); y = 1 is a perfect
absorber, y = 0 a lossless wall.  The phase delta_sr is not a free input:
it is calibrated so that the y = 0 zero-energy s-wave scattering length
equals s * abar, after which the same (s, y, delta_sr) triple is reused
at every field, energy and partial wave.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .errors import CalibrationError, GridError, MatchingError
from .potential import (
    AdiabaticCurve,
    Channel,
    ChannelBasis,
    CollisionSystem,
    potential_matrix,
    single_channel_curve,
)
from .qdt import (
    ScatteringResult,
    ShortRangeParams,
    characteristic_energies,
    mean_scattering_length,
    rates_from_s_matrix,
)

_SQRT3 = math.sqrt(3.0)
_MAX_STEPS = 10_000_000


@dataclass(frozen=True)
class RadialGrid:
    """Adaptive radial-step policy between R_m and the matching radius.

    The local step obeys two ceilings: a fixed number of points per local
    de Broglie wavelength (computed from an envelope wavenumber that
    over-counts every attractive term, so it is pessimistic in both the
    allowed and forbidden regions) and a fixed fraction of the radius
    itself (the scale on which the power-law potentials vary).  The outer
    radius is chosen so every residual potential term is below
    ``tail_tolerance`` times the collision energy.
    """

    points_per_wavelength: float = 40.0
    scale_fraction: float = 20.0
    tail_tolerance: float = 1e-4
    match_factor: float = 1.2

    def __post_init__(self):
        if self.points_per_wavelength < 20:
            raise ValueError("points_per_wavelength must be at least 20")
        if self.scale_fraction < 4:
            raise ValueError("scale_fraction must be at least 4")
        if not 0 < self.tail_tolerance <= 1e-4:
            raise ValueError("tail_tolerance must lie in (0, 1e-4]")
        if self.match_factor <= 1.0:
            raise ValueError("match_factor must exceed 1")

    def outer_radius(
        self, system: CollisionSystem, energy: float, r_match: float
    ) -> float:
        """Smallest radius beyond which all potential tails are negligible."""
        if energy <= 0:
            raise ValueError("energy must be positive")
        cut = self.tail_tolerance * energy
        r6 = (system.c6 / cut) ** (1.0 / 6.0)
        r3 = (system.c3 / cut) ** (1.0 / 3.0) if system.c3 > 0 else 0.0
        return max(r6, r3, 3.0 * r_match)

    def build_steps(
        self,
        system: CollisionSystem,
        L: int,
        energy: float,
        r_start: float,
        r_stop: float,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Step starts and sizes covering [r_start, r_stop]."""
        if r_stop <= r_start:
            raise GridError(
                f"outer radius {r_stop:.3g} does not exceed inner radius {r_start:.3g}"
            )
        two_mu = 2.0 * system.reduced_mass
        c6, c3 = system.c6, system.c3
        ll = float(L * (L + 1))
        two_pi = 2.0 * math.pi
        ppw, frac = self.points_per_wavelength, self.scale_fraction
        starts: list[float] = []
        steps: list[float] = []
        r = r_start
        while r < r_stop:
            if len(starts) >= _MAX_STEPS:
                raise GridError("radial grid exceeds the step budget")
            q2 = two_mu * (energy + c6 / r**6 + c3 / r**3) + ll / (r * r)
            h = min(two_pi / (ppw * math.sqrt(q2)), r / frac, r_stop - r)
            if r + h <= r:
                break  # step underflow at the very last point
            starts.append(r)
            steps.append(h)
            r += h
        return np.asarray(starts), np.asarray(steps)


def gauss_nodes(starts: np.ndarray, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-point Gauss-Legendre nodes of every step."""
    return (
        starts + steps * (0.5 - _SQRT3 / 6.0),
        starts + steps * (0.5 + _SQRT3 / 6.0),
    )


def step_matrices(steps: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Exponentials of the fourth-order Magnus generator for every step.

    For psi'' = W(R) psi the generator over one step h is the traceless
    matrix [[a, h], [h (W1+W2)/2, -a]] with a = sqrt(3) h^2 (W1 - W2) / 12,
    where W1, W2 are samples at the Gauss nodes.  The exponential is closed
    form because the square of a traceless 2x2 matrix is scalar.
    """
    h = steps
    a = _SQRT3 / 12.0 * h * h * (w1 - w2)
    b = h
    c = 0.5 * h * (w1 + w2)
    om2 = a * a + b * c
    om = np.sqrt(np.abs(om2))
    oscillatory = om2 < 0
    ch = np.where(oscillatory, np.cos(om), np.cosh(om))
    with np.errstate(invalid="ignore", divide="ignore"):
        sc = np.where(oscillatory, np.sin(om), np.sinh(om)) / om
    # sinhc(om) -> 1 + om^2/6 for small argument, same series both branches
    sc = np.where(om < 1e-8, 1.0 + om2 / 6.0, sc)
    m = np.empty(h.shape + (2, 2))
    m[..., 0, 0] = ch + sc * a
    m[..., 0, 1] = sc * b
    m[..., 1, 0] = sc * c
    m[..., 1, 1] = ch - sc * a
    return m


def chain_product(matrices: np.ndarray) -> np.ndarray:
    """Ordered product M[n-1] @ ... @ M[0] by pairwise reduction.

    Each round multiplies adjacent pairs and renormalizes by the largest
    entry magnitude; the positive scale factor cancels in the Moebius map
    of the log-derivative, so only overflow protection is at stake.
    """
    m = matrices
    if m.shape[0] == 0:
        return np.eye(2)
    while m.shape[0] > 1:
        n = m.shape[0]
        even = n - (n % 2)
        prod = m[1:even:2] @ m[0:even:2]
        if n % 2:
            prod = np.concatenate([prod, m[-1:]], axis=0)
        scale = np.max(np.abs(prod), axis=(-2, -1), keepdims=True)
        m = prod / scale
    return m[0]


def apply_log_derivative(m: np.ndarray, y: complex) -> complex:
    """Moebius action of a (psi, psi') transfer matrix on y = psi'/psi."""
    if not np.isfinite(abs(y)):
        # boundary at a node of psi: the image is m[1,1]/m[0,1]
        num, den = m[1, 1], m[0, 1]
    else:
        num = m[1, 0] + m[1, 1] * y
        den = m[0, 0] + m[0, 1] * y
    if den == 0:
        raise MatchingError("log-derivative pole exactly at the matching radius")
    return num / den


@dataclass(frozen=True)
class BoundaryCondition:
    """Complex log-derivative of the absorbing WKB wave at R_m."""

    s: float
    y: float
    delta_sr: float
    log_derivative: complex
    reflection: complex
    kappa: float
    r_match: float


def _boundary_from_values(
    params: ShortRangeParams,
    delta_sr: float,
    energy: float,
    v: float,
    v_slope: float,
    reduced_mass: float,
) -> BoundaryCondition:
    r_match = params.r_match
    if energy <= v:
        raise MatchingError(
            f"short-range boundary at R = {r_match:.3g} is classically forbidden "
            f"(E = {energy:.3e}, V = {v:.3e})"
        )
    kappa = math.sqrt(2.0 * reduced_mass * (energy - v))
    if kappa * r_match < 10.0:
        warnings.warn(
            f"kappa * R_m = {kappa * r_match:.2f} is small; the WKB boundary "
            "condition is marginal",
            stacklevel=3,
        )
    dkappa = -reduced_mass * v_slope / kappa
    refl = (1.0 - params.y) / (1.0 + params.y) * complex(
        math.cos(2.0 * delta_sr), math.sin(2.0 * delta_sr)
    )
    # psi = exp(-i int kappa)/sqrt(kappa) + refl * exp(+i int kappa)/sqrt(kappa)
    y0 = -1j * kappa * (1.0 - refl) / (1.0 + refl) - dkappa / (2.0 * kappa)
    return BoundaryCondition(
        s=params.s,
        y=params.y,
        delta_sr=delta_sr,
        log_derivative=y0,
        reflection=refl,
        kappa=kappa,
        r_match=r_match,
    )


def short_range_boundary(
    params: ShortRangeParams,
    curve: AdiabaticCurve,
    energy: float,
    delta_sr: float,
) -> BoundaryCondition:
    """Boundary condition on ``curve`` at R_m for the (s, y) model."""
    r_match = params.r_match
    dr = 1e-4 * r_match
    v = float(curve(r_match))
    v_slope = float(curve(r_match + dr) - curve(r_match - dr)) / (2.0 * dr)
    return _boundary_from_values(
        params, delta_sr, energy, v, v_slope, curve.system.reduced_mass
    )


def match_free_solution(y_out: complex, k: float, L: int, r: float) -> complex:
    """Tangent of the (complex) phase shift from the log-derivative at r.

    Matches psi to s_L(kr) + t c_L(kr) with Riccati-Bessel functions
    s_L = x j_L(x), c_L = -x y_L(x).
    """
    x = k * r
    j = spherical_jn(L, x)
    jp = spherical_jn(L, x, derivative=True)
    yn = spherical_yn(L, x)
    ynp = spherical_yn(L, x, derivative=True)
    sf, sf_p = x * j, j + x * jp
    cf, cf_p = -x * yn, -(yn + x * ynp)
    num = k * sf_p - y_out * sf
    den = y_out * cf - k * cf_p
    if abs(den) < 1e-300:
        raise MatchingError("degenerate asymptotic match (irregular solution absent)")
    return num / den


def _result_from_t(
    t: complex,
    k: float,
    energy: float,
    channel: Channel,
    system: CollisionSystem,
    n_points: int,
    match_spread: float,
) -> ScatteringResult:
    s_el = (1.0 + 1j * t) / (1.0 - 1j * t)
    # algebraically identical to 1 - |S|^2 but immune to cancellation
    p_loss = 4.0 * t.imag / abs(1.0 - 1j * t) ** 2
    rates = rates_from_s_matrix(s_el, k, system)
    return ScatteringResult(
        L=channel.L,
        M=channel.M,
        energy=energy,
        wavenumber=k,
        s_matrix=s_el,
        loss_probability=p_loss,
        elastic_rate=rates.elastic,
        quenching_rate=rates.quenching,
        n_points=n_points,
        match_spread=match_spread,
    )


def _check_r_match(params: ShortRangeParams, system: CollisionSystem) -> None:
    abar = mean_scattering_length(system.reduced_mass, system.c6)
    if not params.r_match < abar:
        raise ValueError(
            f"r_match = {params.r_match:.3g} must lie below the mean scattering "
            f"length abar = {abar:.3g}"
        )


def _propagate_from_w(
    system: CollisionSystem,
    channel: Channel,
    boundary: BoundaryCondition,
    energy: float,
    segments: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    radii: list[float],
) -> ScatteringResult:
    """Common tail of the propagation: chain the segments, match at each end."""
    k = math.sqrt(2.0 * system.reduced_mass * energy)
    y = boundary.log_derivative
    t_values = []
    n_points = 0
    for (steps, w1, w2), r_m in zip(segments, radii):
        m = chain_product(step_matrices(steps, w1, w2))
        y = apply_log_derivative(m, y)
        t_values.append(match_free_solution(y, k, channel.L, r_m))
        n_points += len(steps)
    t = t_values[0]
    spread = abs(t_values[-1] - t_values[0]) if len(t_values) > 1 else 0.0
    return _result_from_t(t, k, energy, channel, system, n_points, spread)


def propagate(
    system: CollisionSystem,
    curve: AdiabaticCurve,
    params: ShortRangeParams,
    energy: float,
    delta_sr: float,
    grid: RadialGrid | None = None,
) -> ScatteringResult:
    """Scattering observables for one adiabatic curve at one energy.

    Propagates the log-derivative from R_m to the tail-criterion radius,
    matches to Riccati-Bessel functions there and once more ``match_factor``
    further out; the spread between the two extractions is reported in
    ``match_spread`` as an error estimate.
    """
    if energy <= 0:
        raise ValueError("collision energy must be positive")
    _check_r_match(params, system)
    grid = grid or RadialGrid()
    channel = curve.channel
    two_mu = 2.0 * system.reduced_mass
    r1 = grid.outer_radius(system, energy, params.r_match)
    r2 = grid.match_factor * r1
    segments = []
    for a, b in ((params.r_match, r1), (r1, r2)):
        starts, steps = grid.build_steps(system, channel.L, energy, a, b)
        g1, g2 = gauss_nodes(starts, steps)
        w1 = two_mu * (np.asarray(curve(g1)) - energy)
        w2 = two_mu * (np.asarray(curve(g2)) - energy)
        segments.append((steps, w1, w2))
    boundary = short_range_boundary(params, curve, energy, delta_sr)
    return _propagate_from_w(system, channel, boundary, energy, segments, [r1, r2])


def propagate_block(
    system: CollisionSystem,
    curves: list[AdiabaticCurve],
    params: ShortRangeParams,
    energy: float,
    delta_sr: float,
    grid: RadialGrid | None = None,
    phase_overrides: dict[Channel, float] | None = None,
) -> list[ScatteringResult]:
    """Propagate every curve of one (M, parity) block on a shared grid.

    The curves of a block come from the same matrix, so the potential at
    the Gauss nodes is obtained from a single batched diagonalization; the
    grid is built for the largest L in the block, which over-resolves the
    lower curves slightly.
    """
    if not curves:
        return []
    if energy <= 0:
        raise ValueError("collision energy must be positive")
    _check_r_match(params, system)
    grid = grid or RadialGrid()
    basis = curves[0].basis
    two_mu = 2.0 * system.reduced_mass
    l_env = max(c.channel.L for c in curves)
    r1 = grid.outer_radius(system, energy, params.r_match)
    r2 = grid.match_factor * r1
    node_values = []
    seg_steps = []
    for a, b in ((params.r_match, r1), (r1, r2)):
        starts, steps = grid.build_steps(system, l_env, energy, a, b)
        g1, g2 = gauss_nodes(starts, steps)
        node_values.append(
            (_block_eigenvalues(system, basis, g1), _block_eigenvalues(system, basis, g2))
        )
        seg_steps.append(steps)
    dr = 1e-4 * params.r_match
    v_edge = _block_eigenvalues(
        system,
        basis,
        np.array([params.r_match - dr, params.r_match, params.r_match + dr]),
    )
    results = []
    for curve in curves:
        idx = curve.index
        segments = [
            (steps, two_mu * (v1[:, idx] - energy), two_mu * (v2[:, idx] - energy))
            for steps, (v1, v2) in zip(seg_steps, node_values)
        ]
        delta = delta_sr
        if phase_overrides and curve.channel in phase_overrides:
            delta = phase_overrides[curve.channel]
        boundary = _boundary_from_values(
            params,
            delta,
            energy,
            float(v_edge[1, idx]),
            float(v_edge[2, idx] - v_edge[0, idx]) / (2.0 * dr),
            system.reduced_mass,
        )
        results.append(
            _propagate_from_w(system, curve.channel, boundary, energy, segments, [r1, r2])
        )
    return results


def _block_eigenvalues(
    system: CollisionSystem, basis: ChannelBasis, r: np.ndarray
) -> np.ndarray:
    """Sorted eigenvalues of the block at every radius, shape (len(r), n)."""
    w = potential_matrix(system, basis, r)
    if len(basis) == 1:
        return w[:, :, 0]
    return np.linalg.eigvalsh(w)


# --- short-range phase calibration -----------------------------------------

_CAL_SCAN_POINTS = 64
_CAL_BISECTIONS = 52


def _calibration_grid(grid: RadialGrid) -> RadialGrid:
    return dataclasses.replace(
        grid,
        points_per_wavelength=max(grid.points_per_wavelength, 160.0),
        tail_tolerance=min(grid.tail_tolerance, 1e-6),
    )


def calibrate_phase(
    system: CollisionSystem,
    params: ShortRangeParams,
    grid: RadialGrid | None = None,
    energy_fraction: float = 1e-4,
    tolerance: float = 1e-3,
) -> float:
    """Short-range phase delta_sr reproducing a = s * abar at zero field.

    Propagates the bare van der Waals s wave with y = 0 at a near-threshold
    energy and root-finds the real scattering length over one pi period of
    delta_sr by bisection.  Sign changes caused by poles of a(delta_sr) are
    rejected by checking the converged residual, so exactly the physical
    branch is returned.  Only ``params.s`` and ``params.r_match`` matter
    here; y plays no role at the calibration stage.
    """
    if not 0 < energy_fraction <= 1e-2:
        raise ValueError("energy_fraction must lie in (0, 1e-2]")
    _check_r_match(params, system)
    grid = _calibration_grid(grid or RadialGrid())
    bare = dataclasses.replace(system, dipole=0.0)
    abar = mean_scattering_length(bare.reduced_mass, bare.c6)
    e_cal = energy_fraction * characteristic_energies(bare.reduced_mass, bare.c6).e_swave
    k = math.sqrt(2.0 * bare.reduced_mass * e_cal)
    probe_params = ShortRangeParams(s=params.s, y=0.0, r_match=params.r_match)
    curve = single_channel_curve(bare, Channel(0, 0))

    r1 = grid.outer_radius(bare, e_cal, params.r_match)
    starts, steps = grid.build_steps(bare, 0, e_cal, params.r_match, r1)
    g1, g2 = gauss_nodes(starts, steps)
    two_mu = 2.0 * bare.reduced_mass
    w1 = two_mu * (np.asarray(curve(g1)) - e_cal)
    w2 = two_mu * (np.asarray(curve(g2)) - e_cal)
    # the transfer matrix is independent of delta_sr: build it once and
    # sweep only the boundary condition
    m_total = chain_product(step_matrices(steps, w1, w2))
    v0 = float(curve(params.r_match))
    dr = 1e-4 * params.r_match
    v_slope = float(curve(params.r_match + dr) - curve(params.r_match - dr)) / (2 * dr)

    def scattering_length(delta: float) -> float:
        bc = _boundary_from_values(
            probe_params, delta, e_cal, v0, v_slope, bare.reduced_mass
        )
        y_out = apply_log_derivative(m_total, bc.log_derivative)
        t = match_free_solution(y_out, k, 0, r1)
        return float((-t / k).real)

    target = params.s * abar
    accept = tolerance * abar * max(1.0, abs(params.s))
    deltas = [math.pi * i / _CAL_SCAN_POINTS for i in range(_CAL_SCAN_POINTS + 1)]
    values = [scattering_length(d) - target for d in deltas]
    for i in range(_CAL_SCAN_POINTS):
        f_lo, f_hi = values[i], values[i + 1]
        if f_lo == 0.0:
            return deltas[i]
        if f_lo * f_hi > 0:
            continue
        lo, hi = deltas[i], deltas[i + 1]
        for _ in range(_CAL_BISECTIONS):
            mid = 0.5 * (lo + hi)
            f_mid = scattering_length(mid) - target
            if f_lo * f_mid <= 0:
                hi = mid
            else:
                lo, f_lo = mid, f_mid
        root = 0.5 * (lo + hi)
        # a(delta) has poles with sign changes; keep only true roots
        if abs(scattering_length(root) - target) <= accept:
            return root
    raise CalibrationError(
        f"no delta_sr in [0, pi) reproduces a = {params.s:.4g} * abar within "
        f"{tolerance:.1e} relative; check R_m and the radial grid"
    )
