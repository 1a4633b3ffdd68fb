"""Long-range interaction and single-field adiabatic potential curves.

The collision channels are partial waves |L, M> with M the conserved
projection of L on the dipole polarization axis.  Two polarized point
dipoles interact through the P2(cos theta) anisotropy,

    V(R) = [L(L+1)/(2 mu R^2)] delta_LL' - (C6/R^6) delta_LL'
           - (2 d^2 / R^3) <L M| P2 |L' M>,

which couples partial waves with |L - L'| = 0, 2 and the same parity.
Diagonalizing the coupled matrix at fixed R yields adiabatic curves; for
identical fermions the lowest ones develop a dipole-induced barrier whose
height controls the loss rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GridError, NumericalError

C6_SIGN = -1.0  # dispersion is attractive: coefficient enters as -C6/R^6


class Symmetry(Enum):
    FERMIONS = "fermions"
    BOSONS = "bosons"
    DISTINGUISHABLE = "distinguishable"


@dataclass(frozen=True, order=True)
class Channel:
    """A single partial wave |L, M>."""

    L: int
    M: int

    def __post_init__(self):
        if not isinstance(self.L, int) or not isinstance(self.M, int):
            raise TypeError("channel quantum numbers must be integers")
        if self.L < 0:
            raise ValueError(f"L must be non-negative, got {self.L}")
        if abs(self.M) > self.L:
            raise ValueError(f"|M| must not exceed L, got L={self.L}, M={self.M}")


@dataclass(frozen=True)
class CollisionSystem:
    """Reduced mass, dispersion coefficient, dipole and exchange symmetry.

    All quantities in atomic units.  ``dipole`` is the induced lab-frame
    dipole moment of each molecule.  ``g_override`` forces the rate
    prefactor g for users who prefer the opposite indistinguishability
    convention.
    """

    reduced_mass: float
    c6: float
    dipole: float = 0.0
    symmetry: Symmetry = Symmetry.FERMIONS
    g_override: int | None = None

    def __post_init__(self):
        if self.reduced_mass <= 0:
            raise ValueError("reduced mass must be positive")
        if self.c6 <= 0:
            raise ValueError("C6 must be positive")
        if self.dipole < 0:
            raise ValueError("dipole must be non-negative")
        if not isinstance(self.symmetry, Symmetry):
            raise TypeError("symmetry must be a Symmetry enum member")
        if self.g_override is not None and self.g_override not in (1, 2):
            raise ValueError("g_override must be 1 or 2")

    @property
    def c3(self) -> float:
        """Overall strength of the R^-3 term, V3 = -c3 * P2 element / R^3."""
        return 2.0 * self.dipole**2

    @property
    def statistical_factor(self) -> int:
        """Rate-coefficient prefactor g: 1 for identical particles, 2 otherwise."""
        if self.g_override is not None:
            return self.g_override
        return 2 if self.symmetry is Symmetry.DISTINGUISHABLE else 1

    def allowed_parities(self) -> tuple[int, ...]:
        """L parities present in the basis: (1,) odd, (0,) even, or both."""
        if self.symmetry is Symmetry.FERMIONS:
            return (1,)
        if self.symmetry is Symmetry.BOSONS:
            return (0,)
        return (0, 1)


def wigner_3j_zero_m(l1: int, l2: int, l3: int) -> float:
    """Wigner 3j symbol (l1 l2 l3; 0 0 0)."""
    j = l1 + l2 + l3
    if j % 2 == 1:
        return 0.0
    if l3 < abs(l1 - l2) or l3 > l1 + l2:
        return 0.0
    g = j // 2
    lf = math.lgamma
    # Racah closed form for all-zero projections.
    log_tri = 0.5 * (
        lf(j - 2 * l1 + 1) + lf(j - 2 * l2 + 1) + lf(j - 2 * l3 + 1) - lf(j + 2)
    )
    log_fac = lf(g + 1) - lf(g - l1 + 1) - lf(g - l2 + 1) - lf(g - l3 + 1)
    return (-1.0) ** g * math.exp(log_tri + log_fac)


def wigner_3j(l1: int, l2: int, l3: int, m1: int, m2: int, m3: int) -> float:
    """Wigner 3j symbol via the Racah sum.  Safe for the small L used here."""
    if m1 + m2 + m3 != 0:
        return 0.0
    if l3 < abs(l1 - l2) or l3 > l1 + l2:
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m3) > l3:
        return 0.0
    lf = math.lgamma
    log_tri = 0.5 * (
        lf(l1 + l2 - l3 + 1)
        + lf(l1 - l2 + l3 + 1)
        + lf(-l1 + l2 + l3 + 1)
        - lf(l1 + l2 + l3 + 2)
    )
    log_pre = 0.5 * (
        lf(l1 + m1 + 1)
        + lf(l1 - m1 + 1)
        + lf(l2 + m2 + 1)
        + lf(l2 - m2 + 1)
        + lf(l3 + m3 + 1)
        + lf(l3 - m3 + 1)
    )
    t_min = max(0, l2 - l3 - m1, l1 - l3 + m2)
    t_max = min(l1 + l2 - l3, l1 - m1, l2 + m2)
    total = 0.0
    for t in range(t_min, t_max + 1):
        log_den = (
            lf(t + 1)
            + lf(l3 - l2 + m1 + t + 1)
            + lf(l3 - l1 - m2 + t + 1)
            + lf(l1 + l2 - l3 - t + 1)
            + lf(l1 - m1 - t + 1)
            + lf(l2 + m2 - t + 1)
        )
        total += (-1.0) ** t * math.exp(log_tri + log_pre - log_den)
    return (-1.0) ** (l1 - l2 - m3) * total


def p2_matrix_element(L: int, Lp: int, M: int) -> float:
    """<L M| P2(cos theta) |L' M> for real spherical-harmonic partial waves.

    Nonzero only for L' = L or L' = L +/- 2 (same parity, rank-2 coupling).
    """
    for name, v in (("L", L), ("Lp", Lp)):
        if not isinstance(v, (int, np.integer)):
            raise TypeError(f"{name} must be an integer")
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    if abs(M) > min(L, Lp):
        raise ValueError("|M| must not exceed both L and L'")
    if (L + Lp) % 2 == 1 or abs(L - Lp) > 2:
        return 0.0
    if L == Lp:
        # Diagonal closed form avoids the 3j machinery on the hot path.
        return (L * (L + 1) - 3 * M * M) / ((2 * L - 1) * (2 * L + 3))
    phase = (-1.0) ** M
    norm = math.sqrt((2 * L + 1) * (2 * Lp + 1))
    return (
        phase
        * norm
        * wigner_3j_zero_m(L, 2, Lp)
        * wigner_3j(L, 2, Lp, -M, 0, M)
    )


@dataclass(frozen=True)
class ChannelBasis:
    """Channels sharing conserved M and L parity, ordered by increasing L."""

    channels: tuple[Channel, ...]
    m_projection: int
    parity: int
    l_max: int

    def __post_init__(self):
        if not self.channels:
            raise ValueError("basis must contain at least one channel")
        ells = [c.L for c in self.channels]
        if any(c.M != self.m_projection for c in self.channels):
            raise ValueError("all channels must share the basis projection M")
        if any(l % 2 != self.parity for l in ells):
            raise ValueError("all channels must share the basis parity")
        if any(b <= a for a, b in zip(ells, ells[1:])):
            raise ValueError("channel L values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.channels)

    def index(self, channel: Channel) -> int:
        return self.channels.index(channel)


def build_basis(m_projection: int, parity: int, l_max: int) -> ChannelBasis:
    """All |L, M> with L <= l_max, L parity fixed, |M| <= L."""
    if parity not in (0, 1):
        raise ValueError("parity must be 0 (even L) or 1 (odd L)")
    if l_max < 0:
        raise ValueError("l_max must be non-negative")
    l_start = max(parity, abs(m_projection))
    if (l_start % 2) != parity:
        l_start += 1
    channels = tuple(
        Channel(L, m_projection) for L in range(l_start, l_max + 1, 2)
    )
    if not channels:
        raise ValueError(
            f"empty basis: no L in [{parity}, {l_max}] with parity {parity} "
            f"supports M={m_projection}"
        )
    return ChannelBasis(channels, m_projection, parity, l_max)


def coupling_matrix(basis: ChannelBasis) -> np.ndarray:
    """Dimensionless P2 coupling matrix over the basis (symmetric)."""
    n = len(basis)
    w = np.zeros((n, n))
    for i, ci in enumerate(basis.channels):
        for j in range(i, n):
            cj = basis.channels[j]
            w[i, j] = w[j, i] = p2_matrix_element(ci.L, cj.L, basis.m_projection)
    return w


def potential_matrix(
    system: CollisionSystem, basis: ChannelBasis, r: float | np.ndarray
) -> np.ndarray:
    """Interaction matrix W(R) in hartree; batched over a radial array.

    Shape (n, n) for scalar r, (len(r), n, n) for 1-D r.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("radius must be positive")
    scalar = r_arr.ndim == 0
    r_arr = np.atleast_1d(r_arr)
    n = len(basis)
    ell = np.array([c.L for c in basis.channels], dtype=float)
    diag = (
        ell * (ell + 1.0) / (2.0 * system.reduced_mass * r_arr[:, None] ** 2)
        + C6_SIGN * system.c6 / r_arr[:, None] ** 6
    )
    w = -system.c3 * coupling_matrix(basis) / r_arr[:, None, None] ** 3
    w[:, np.arange(n), np.arange(n)] += diag
    return w[0] if scalar else w


@dataclass
class AdiabaticCurve:
    """One adiabatic eigenvalue branch of a (M, parity) block.

    ``index`` is the rank of the eigenvalue within the block (0 = lowest);
    since curves of one block do not cross, the rank labels the curve at
    every radius.  ``channel`` is the partial wave the curve correlates to
    as R -> infinity.
    """

    system: CollisionSystem
    basis: ChannelBasis
    index: int
    channel: Channel
    r_grid: np.ndarray
    values: np.ndarray
    asymptotic_weight: float
    vectors: np.ndarray = field(repr=False, default=None)

    def __call__(self, r: float | np.ndarray) -> float | np.ndarray:
        """Exact eigenvalue at arbitrary radius (re-diagonalizes the block)."""
        if len(self.basis) == 1:
            c = self.channel
            r_arr = np.asarray(r, dtype=float)
            return (
                c.L * (c.L + 1) / (2.0 * self.system.reduced_mass * r_arr**2)
                + C6_SIGN * self.system.c6 / r_arr**6
                - self.system.c3 * p2_matrix_element(c.L, c.L, c.M) / r_arr**3
            )
        w = potential_matrix(self.system, self.basis, r)
        vals = np.linalg.eigvalsh(w)
        return vals[..., self.index]


def adiabatic_curves(
    system: CollisionSystem,
    basis: ChannelBasis,
    r_grid: np.ndarray,
    min_asymptotic_weight: float = 0.99,
) -> list[AdiabaticCurve]:
    """Diagonalize the block on a grid and label each branch asymptotically.

    The grid must extend far enough that every eigenvector has at least
    ``min_asymptotic_weight`` of its norm in a single partial wave at the
    outermost point; otherwise the labeling is ambiguous and GridError is
    raised.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or len(r_grid) < 2:
        raise ValueError("r_grid must be a 1-D array with at least two points")
    if np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be strictly increasing")
    w = potential_matrix(system, basis, r_grid)
    try:
        vals, vecs = np.linalg.eigh(w)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed on the block sampling: {exc}") from exc
    # fix the eigenvector gauge: largest component positive at the first
    # sample, then non-negative overlap with the previous sample
    first = vecs[0]
    flip = np.sign(first[np.argmax(np.abs(first), axis=0), np.arange(first.shape[1])])
    flip[flip == 0] = 1.0
    vecs[0] = first * flip
    overlaps = np.einsum("rij,rij->rj", vecs[1:], vecs[:-1])
    signs = np.where(overlaps < 0, -1.0, 1.0)
    vecs[1:] *= np.cumprod(signs, axis=0)[:, None, :]
    curves = []
    weights = vecs[-1] ** 2  # (component, curve) at the outermost radius
    taken = set()
    for idx in range(len(basis)):
        comp = int(np.argmax(weights[:, idx]))
        weight = float(weights[comp, idx])
        if weight < min_asymptotic_weight:
            raise GridError(
                f"curve {idx} of block M={basis.m_projection} has only "
                f"{weight:.3f} asymptotic weight at R={r_grid[-1]:.1f}; "
                "extend the grid"
            )
        if comp in taken:
            raise GridError(
                f"two curves of block M={basis.m_projection} map to the same "
                f"asymptotic channel; extend the grid"
            )
        taken.add(comp)
        curves.append(
            AdiabaticCurve(
                system=system,
                basis=basis,
                index=idx,
                channel=basis.channels[comp],
                r_grid=r_grid,
                values=vals[:, idx].copy(),
                asymptotic_weight=weight,
                vectors=vecs[:, :, idx].copy(),
            )
        )
    return curves


def lowest_curves(
    system: CollisionSystem, l_max: int, r_grid: np.ndarray
) -> dict[tuple[int, int], list[AdiabaticCurve]]:
    """Adiabatic curves for every (M >= 0, parity) block of the system."""
    out = {}
    for parity in system.allowed_parities():
        for m in range(0, l_max + 1):
            try:
                basis = build_basis(m, parity, l_max)
            except ValueError:
                continue
            out[(m, parity)] = adiabatic_curves(system, basis, r_grid)
    return out


def single_channel_curve(
    system: CollisionSystem, channel: Channel, r_grid: np.ndarray | None = None
) -> AdiabaticCurve:
    """A one-channel adiabatic curve (exact, no diagonalization involved)."""
    basis = ChannelBasis((channel,), channel.M, channel.L % 2, channel.L)
    if r_grid is None:
        # wide default so barrier bracketing works out of the box
        r_grid = np.geomspace(10.0, 10000.0, 800)
    r_grid = np.asarray(r_grid, dtype=float)
    curve = AdiabaticCurve(
        system=system,
        basis=basis,
        index=0,
        channel=channel,
        r_grid=r_grid,
        values=np.zeros_like(r_grid),
        asymptotic_weight=1.0,
        vectors=np.ones((len(r_grid), 1)),
    )
    curve.values = np.asarray(curve(r_grid))
    return curve


@dataclass(frozen=True)
class Barrier:
    """Location and height of a potential maximum (atomic units)."""

    r_top: float
    height: float


def find_barrier(curve: AdiabaticCurve, refine_iterations: int = 60) -> Barrier | None:
    """Locate the outermost positive maximum of an adiabatic curve.

    Returns None when the sampled curve has no positive local maximum (no
    barrier).  The maximum is refined by golden-section search on the exact
    eigenvalue, so the result is limited by machine precision, not by the
    sampling grid.
    """
    v = curve.values
    if v[-1] > v[-2] and v[-1] > 0:
        # a purely attractive tail rising toward zero is fine; a positive
        # rising edge means the grid stops before the barrier top
        raise GridError("curve still rising at the outer grid edge; extend the grid")
    inner = np.nonzero(
        (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]) & (v[1:-1] > 0)
    )[0]
    if len(inner) == 0:
        return None
    i = int(inner[-1]) + 1
    lo, hi = curve.r_grid[i - 1], curve.r_grid[i + 1]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = curve(x1), curve(x2)
    for _ in range(refine_iterations):
        if f1 > f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = curve(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = curve(x2)
        if hi - lo < 1e-12 * hi:
            break
    r_top = 0.5 * (lo + hi)
    return Barrier(r_top=r_top, height=float(curve(r_top)))
