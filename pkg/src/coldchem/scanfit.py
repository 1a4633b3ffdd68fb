"""Grid sweeps over dipole and energy, resonance detection, and fitting.

A dipole scan rebuilds the adiabatic curves of every symmetry-allowed
(M, parity) block at each grid point, propagates all of them, and sums the
quenching rates into a total loss rate versus induced dipole moment.  On
top of the scans sit three analysis stages: peak detection against a
running-median baseline, the confluent-series fit for resonance positions,
and the (s, y) short-range fit to measured rate-versus-dipole data.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from . import units
from .errors import ColdchemError, FitError, ScanError
from .potential import (
    Channel,
    ChannelBasis,
    CollisionSystem,
    adiabatic_curves,
    build_basis,
)
from .propagator import RadialGrid, calibrate_phase, propagate_block
from .qdt import ScatteringResult, ShortRangeParams

DEFAULT_L_MAX = 7
_LABEL_SAMPLES = 240


def symmetry_blocks(system: CollisionSystem, l_max: int) -> list[ChannelBasis]:
    """All non-empty (M >= 0, parity) blocks allowed by the exchange symmetry."""
    if l_max < 0:
        raise ValueError("l_max must be non-negative")
    out = []
    for parity in system.allowed_parities():
        for m in range(0, l_max + 1):
            try:
                out.append(build_basis(m, parity, l_max))
            except ValueError:
                continue  # no L of this parity supports this M
    return out


def _channel_weight(channel: Channel) -> int:
    # blocks are built for M >= 0 only; M > 0 stands for the +/-M pair
    return 2 if channel.M > 0 else 1


def rate_point(
    system: CollisionSystem,
    params: ShortRangeParams,
    delta_sr: float,
    energy: float,
    grid: RadialGrid | None = None,
    l_max: int = DEFAULT_L_MAX,
    phase_overrides: dict[Channel, float] | None = None,
) -> dict[Channel, ScatteringResult]:
    """Scattering results for every channel (M >= 0) at one (E, d) point.

    Rates in the returned results are per channel; the +/-M degeneracy
    weight is applied by the scan aggregation, not here.
    """
    grid = grid or RadialGrid()
    r_label = grid.outer_radius(system, energy, params.r_match)
    r_grid = np.geomspace(params.r_match, r_label, _LABEL_SAMPLES)
    out: dict[Channel, ScatteringResult] = {}
    for basis in symmetry_blocks(system, l_max):
        curves = adiabatic_curves(system, basis, r_grid)
        for res in propagate_block(
            system, curves, params, energy, delta_sr, grid, phase_overrides
        ):
            out[Channel(res.L, res.M)] = res
    return out


@dataclass
class RateCurve:
    """Total and per-channel quenching rates along a scan axis.

    ``x`` is the dipole moment in atomic units for axis "dipole" and the
    collision energy in hartree for axis "energy".  Channels are keyed with
    M >= 0 and their rates include the factor 2 for the +/-M degeneracy, so
    the total is the plain sum of the per-channel arrays.  ``loss`` stores
    the unweighted single-channel loss probabilities.
    """

    axis: str
    x: np.ndarray
    total: np.ndarray
    per_channel: dict[Channel, np.ndarray]
    loss: dict[Channel, np.ndarray] = field(default_factory=dict)
    energy: float | None = None
    dipole: float | None = None

    def validate(self) -> None:
        s = sum(self.per_channel.values())
        if not np.allclose(s, self.total, rtol=1e-12, atol=0):
            raise AssertionError("per-channel rates do not sum to the total")
        if np.any(self.total < 0):
            raise AssertionError("negative total rate")

    def channels(self) -> list[Channel]:
        return sorted(self.per_channel)


def _curve_from_points(
    axis: str,
    x: np.ndarray,
    points: list[dict[tuple[int, int], tuple[float, float]]],
    energy: float | None = None,
    dipole: float | None = None,
) -> RateCurve:
    keys = sorted({key for pt in points for key in pt})
    per_channel = {}
    loss = {}
    for lm in keys:
        ch = Channel(*lm)
        w = _channel_weight(ch)
        per_channel[ch] = np.array(
            [w * pt[lm][0] if lm in pt else 0.0 for pt in points]
        )
        loss[ch] = np.array([pt[lm][1] if lm in pt else 0.0 for pt in points])
    total = sum(per_channel.values()) if per_channel else np.zeros(len(points))
    return RateCurve(
        axis=axis,
        x=np.asarray(x[: len(points)], dtype=float),
        total=total,
        per_channel=per_channel,
        loss=loss,
        energy=energy,
        dipole=dipole,
    )


def _scan_worker(args) -> dict[tuple[int, int], tuple[float, float]]:
    (axis, x_value, system, params, delta_sr, energy, grid, l_max, overrides,
     channels) = args
    if axis == "dipole":
        system = dataclasses.replace(system, dipole=float(x_value))
        e_point = energy
        context = f"d = {x_value:.6g} a.u."
    else:
        e_point = float(x_value)
        context = f"E = {x_value:.6g} hartree"
    try:
        results = rate_point(system, params, delta_sr, e_point, grid, l_max, overrides)
    except ColdchemError as exc:
        raise type(exc)(f"{exc} (at {context})") from exc
    if channels is not None:
        results = {c: r for c, r in results.items() if c in channels}
    return {
        (c.L, c.M): (r.quenching_rate, r.loss_probability)
        for c, r in results.items()
    }


def _map_ordered(worker, tasks, threads: int):
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield worker(t)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(worker, tasks)


def _run_scan(axis, x_values, tasks, threads, energy=None, dipole=None) -> RateCurve:
    points = []
    try:
        for pt in _map_ordered(_scan_worker, tasks, threads):
            points.append(pt)
    except ColdchemError as exc:
        partial = _curve_from_points(axis, x_values, points, energy, dipole)
        raise ScanError(
            f"{axis} scan aborted after {len(points)} of {len(x_values)} points: {exc}",
            partial=partial,
        ) from exc
    curve = _curve_from_points(axis, x_values, points, energy, dipole)
    curve.validate()
    return curve


def scan_dipole(
    system: CollisionSystem,
    params: ShortRangeParams,
    energy: float,
    d_values,
    grid: RadialGrid | None = None,
    l_max: int = DEFAULT_L_MAX,
    threads: int = 1,
    delta_sr: float | None = None,
    phase_overrides: dict[Channel, float] | None = None,
) -> RateCurve:
    """Total loss rate versus induced dipole moment at fixed energy.

    ``d_values`` are in atomic units, non-negative and increasing; the
    system's own dipole field is ignored and replaced point by point.
    """
    d_values = np.asarray(d_values, dtype=float)
    if d_values.ndim != 1 or len(d_values) == 0:
        raise ValueError("d_values must be a non-empty 1-D array")
    if np.any(d_values < 0) or np.any(np.diff(d_values) <= 0):
        raise ValueError("d_values must be non-negative and strictly increasing")
    if energy <= 0:
        raise ValueError("collision energy must be positive")
    grid = grid or RadialGrid()
    if delta_sr is None:
        delta_sr = calibrate_phase(system, params, grid)
    tasks = [
        ("dipole", d, system, params, delta_sr, energy, grid, l_max,
         phase_overrides, None)
        for d in d_values
    ]
    return _run_scan("dipole", d_values, tasks, threads, energy=energy)


def scan_energy(
    system: CollisionSystem,
    params: ShortRangeParams,
    e_values,
    grid: RadialGrid | None = None,
    l_max: int = DEFAULT_L_MAX,
    threads: int = 1,
    delta_sr: float | None = None,
    channels: list[Channel] | None = None,
    phase_overrides: dict[Channel, float] | None = None,
) -> RateCurve:
    """Per-channel loss probabilities and rates over an energy grid."""
    e_values = np.asarray(e_values, dtype=float)
    if e_values.ndim != 1 or len(e_values) == 0:
        raise ValueError("e_values must be a non-empty 1-D array")
    if np.any(e_values <= 0) or np.any(np.diff(e_values) <= 0):
        raise ValueError("e_values must be positive and strictly increasing")
    grid = grid or RadialGrid()
    if delta_sr is None:
        delta_sr = calibrate_phase(system, params, grid)
    selected = set(channels) if channels is not None else None
    tasks = [
        ("energy", e, system, params, delta_sr, None, grid, l_max,
         phase_overrides, selected)
        for e in e_values
    ]
    return _run_scan("energy", e_values, tasks, threads, dipole=system.dipole)


# --- resonance detection and series fitting ---------------------------------


@dataclass(frozen=True)
class Resonance:
    """A detected rate peak: refined position, prominence, grid index."""

    position: float
    prominence: float
    index: int


def detect_resonances(
    curve: RateCurve,
    prominence_factor: float = 1.5,
    baseline_window: int = 15,
) -> list[Resonance]:
    """Local maxima of the total rate standing above a running-median baseline.

    The median window makes the baseline follow the steep universal
    background without being dragged up by narrow peaks; positions are
    refined by a parabola through the three log-rate samples around each
    maximum.  An empty list is a perfectly valid outcome (washed-out
    spectra).
    """
    if prominence_factor <= 1.0:
        raise ValueError("prominence_factor must exceed 1")
    v = np.asarray(curve.total, dtype=float)
    if len(v) < baseline_window:
        raise ValueError("curve has fewer points than the baseline window")
    x = np.asarray(curve.x, dtype=float)
    floor = np.max(v) * 1e-300 if np.max(v) > 0 else 1e-300
    v = np.maximum(v, floor)
    baseline = ndimage.median_filter(v, size=baseline_window, mode="nearest")
    out = []
    for i in range(1, len(v) - 1):
        if not (v[i] > v[i - 1] and v[i] >= v[i + 1]):
            continue
        prominence = v[i] / baseline[i]
        if prominence < prominence_factor:
            continue
        y0, y1, y2 = np.log(v[i - 1 : i + 2])
        denom = y0 - 2.0 * y1 + y2
        if denom < 0:
            shift = 0.5 * (y0 - y2) / denom
            shift = min(0.5, max(-0.5, shift))
        else:
            shift = 0.0
        spacing = 0.5 * (x[i + 1] - x[i - 1])
        out.append(Resonance(position=x[i] + shift * spacing,
                             prominence=float(prominence), index=i))
    return out


@dataclass(frozen=True)
class SeriesFit:
    """Parameters of the confluent resonance-position series."""

    scale: float
    n_zero: float
    n_infinity: float
    residual_rms: float


def fit_resonance_series(positions) -> SeriesFit:
    """Fit x(n) = scale * sqrt((n_zero + n)/(n_infinity - n)) to positions.

    Positions are assigned consecutive integers n = 0, 1, ... in order; the
    fit minimizes relative residuals with several starts of the accumulation
    index to escape its shallow valley.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 1 or len(pos) < 4:
        raise ValueError("need at least 4 resonance positions")
    if np.any(pos <= 0) or np.any(np.diff(pos) <= 0):
        raise ValueError("positions must be positive and strictly increasing")
    count = len(pos)
    n = np.arange(count, dtype=float)

    def residuals(p):
        scale, n_zero, tail = p
        model = scale * np.sqrt((n_zero + n) / (count - 1 + tail - n))
        return model / pos - 1.0

    best = None
    for tail0 in (0.5, 1.0, 3.0, 8.0, 20.0, 60.0):
        root0 = math.sqrt(0.5 / (count - 1 + tail0))
        p0 = np.array([pos[0] / root0, 0.5, tail0])
        try:
            res = optimize.least_squares(
                residuals,
                p0,
                bounds=([1e-300, 0.0, 1e-9], [np.inf, 1e3, 1e9]),
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
            )
        except Exception:  # noqa: BLE001 - a failed start is not fatal
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("resonance-series fit failed from every starting point")
    scale, n_zero, tail = best.x
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return SeriesFit(
        scale=float(scale),
        n_zero=float(n_zero),
        n_infinity=float(count - 1 + tail),
        residual_rms=rms,
    )


# --- dataset ingestion and the (s, y) fit ------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Measured loss rates versus dipole moment, in laboratory units."""

    d_debye: np.ndarray
    rate_cm3s: np.ndarray
    sigma_cm3s: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        d = np.asarray(self.d_debye, dtype=float)
        k = np.asarray(self.rate_cm3s, dtype=float)
        object.__setattr__(self, "d_debye", d)
        object.__setattr__(self, "rate_cm3s", k)
        if d.ndim != 1 or len(d) == 0 or k.shape != d.shape:
            raise ValueError("dataset needs matching non-empty d and K columns")
        if np.any(d < 0):
            raise ValueError("dipole moments must be non-negative")
        if np.any(k <= 0):
            raise ValueError("rates must be positive")
        if self.sigma_cm3s is not None:
            s = np.asarray(self.sigma_cm3s, dtype=float)
            object.__setattr__(self, "sigma_cm3s", s)
            if s.shape != d.shape:
                raise ValueError("sigma column length mismatch")
            if np.any(s <= 0):
                raise ValueError("uncertainties must be positive")

    def __len__(self) -> int:
        return len(self.d_debye)


def load_dataset(path: str) -> Dataset:
    """Read a `d_debye,K_cm3_s[,sigma]` CSV; `#` lines are comments."""
    rows = []
    header = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or (raw[0].lstrip().startswith("#")):
                continue
            cells = [c.strip() for c in raw]
            if header is None:
                header = cells
                if header[:2] != ["d_debye", "K_cm3_s"] or len(header) > 3 or (
                    len(header) == 3 and header[2] != "sigma"
                ):
                    raise ValueError(
                        f"{path}: expected header d_debye,K_cm3_s[,sigma], got "
                        + ",".join(header)
                    )
                continue
            if len(cells) != len(header):
                raise ValueError(f"{path}:{lineno}: wrong number of columns")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if header is None or not rows:
        raise ValueError(f"{path}: no data rows found")
    data = np.asarray(rows, dtype=float)
    sigma = data[:, 2] if data.shape[1] == 3 else None
    return Dataset(
        d_debye=data[:, 0], rate_cm3s=data[:, 1], sigma_cm3s=sigma, provenance=path
    )


@dataclass(frozen=True)
class ShortRangeFit:
    """Outcome of the (s, y) fit: best parameters and quality measures."""

    params: ShortRangeParams
    fitted: tuple[str, ...]
    values: np.ndarray
    covariance: np.ndarray
    chi2: float
    n_points: int
    n_evaluations: int
    on_bound: bool


def fit_short_range(
    dataset: Dataset,
    system: CollisionSystem,
    energy: float,
    initial: ShortRangeParams,
    fit: tuple[str, ...] = ("y",),
    grid: RadialGrid | None = None,
    l_max: int = DEFAULT_L_MAX,
    threads: int = 1,
    max_iterations: int = 200,
) -> ShortRangeFit:
    """Weighted least squares of (a subset of) s and y on log rates.

    Every objective evaluation runs a full dipole scan at the dataset's
    dipole values; y is clipped into [0, 1] by the objective, and a best
    fit sitting on that bound is flagged.  The covariance comes from a
    finite-difference Hessian of chi-squared at the optimum (scaled by the
    reduced chi-squared when the dataset carries no uncertainties).
    """
    if not fit or any(name not in ("s", "y") for name in fit):
        raise ValueError("fit must be a non-empty subset of ('s', 'y')")
    if len(set(fit)) != len(fit):
        raise ValueError("fit names must be unique")
    grid = grid or RadialGrid()
    d_au = units.dipole_from_debye(dataset.d_debye)
    d_unique, inverse = np.unique(d_au, return_inverse=True)
    log_obs = np.log(units.rate_from_cm3_per_s(dataset.rate_cm3s))
    if dataset.sigma_cm3s is not None:
        weights = dataset.sigma_cm3s / dataset.rate_cm3s  # sigma of log K
    else:
        weights = np.ones(len(dataset))

    calibrations: dict[float, float] = {}
    evaluations = 0

    def chi2_at(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        trial = {"s": initial.s, "y": initial.y}
        for name, val in zip(fit, x):
            trial[name] = float(val)
        trial["y"] = min(1.0, max(0.0, trial["y"]))
        params = ShortRangeParams(s=trial["s"], y=trial["y"], r_match=initial.r_match)
        if params.s not in calibrations:
            calibrations[params.s] = calibrate_phase(system, params, grid)
        try:
            curve = scan_dipole(
                system,
                params,
                energy,
                d_unique,
                grid=grid,
                l_max=l_max,
                threads=threads,
                delta_sr=calibrations[params.s],
            )
        except ColdchemError as exc:
            raise FitError(
                f"objective evaluation failed at s = {params.s:.6g}, "
                f"y = {params.y:.6g}: {exc}"
            ) from exc
        log_model = np.log(np.maximum(curve.total[inverse], 1e-300))
        r = (log_model - log_obs) / weights
        return float(np.dot(r, r))

    x0 = np.array([getattr(initial, name) for name in fit], dtype=float)
    result = optimize.minimize(
        chi2_at,
        x0,
        method="Nelder-Mead",
        options={
            "maxiter": max_iterations,
            "xatol": 1e-4,
            "fatol": 1e-6,
            "initial_simplex": _initial_simplex(x0, fit),
        },
    )
    best = result.x.copy()
    names = dict(zip(fit, best))
    if "y" in names:
        names["y"] = min(1.0, max(0.0, names["y"]))
        best[fit.index("y")] = names["y"]
    params_best = ShortRangeParams(
        s=float(names.get("s", initial.s)), y=float(names.get("y", initial.y)),
        r_match=initial.r_match,
    )
    chi2_min = chi2_at(best)
    on_bound = "y" in names and (names["y"] < 1e-3 or names["y"] > 1.0 - 1e-3)
    cov = _fd_covariance(chi2_at, best, chi2_min, len(dataset), dataset.sigma_cm3s is not None)
    return ShortRangeFit(
        params=params_best,
        fitted=tuple(fit),
        values=best,
        covariance=cov,
        chi2=chi2_min,
        n_points=len(dataset),
        n_evaluations=evaluations,
        on_bound=on_bound,
    )


def _initial_simplex(x0: np.ndarray, fit: tuple[str, ...]) -> np.ndarray:
    steps = {"s": 0.25, "y": 0.1}
    simplex = np.tile(x0, (len(x0) + 1, 1))
    for i, name in enumerate(fit):
        step = steps[name]
        if name == "y" and x0[i] + step > 1.0:
            step = -step
        simplex[i + 1, i] += step
    return simplex


def _fd_covariance(
    objective, x: np.ndarray, f0: float, n_points: int, has_sigma: bool
) -> np.ndarray:
    """Covariance from a central-difference Hessian of chi-squared."""
    p = len(x)
    h = np.maximum(0.02, 0.02 * np.abs(x))
    hess = np.empty((p, p))
    f_plus = np.empty(p)
    f_minus = np.empty(p)
    for i in range(p):
        e = np.zeros(p)
        e[i] = h[i]
        f_plus[i] = objective(x + e)
        f_minus[i] = objective(x - e)
        hess[i, i] = (f_plus[i] - 2.0 * f0 + f_minus[i]) / h[i] ** 2
    for i in range(p):
        for j in range(i + 1, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h[i]
            ej[j] = h[j]
            fpp = objective(x + ei + ej)
            fpm = objective(x + ei - ej)
            fmp = objective(x - ei + ej)
            fmm = objective(x - ei - ej)
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    try:
        cov = 2.0 * np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = 2.0 * np.linalg.pinv(hess)
    if not has_sigma:
        dof = max(n_points - p, 1)
        cov = cov * (f0 / dof)
    return cov
