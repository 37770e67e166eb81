"""Non-uniform 1D grid, finite-difference stencils, and mass-conservative refinement.

The grid carries mirrored pseudo-intervals at both ends (the ghost spacing
equals the adjacent real spacing, and ghost values copy the boundary value),
which closes every three-point stencil with a homogeneous Neumann condition.
That closure makes the weighted second-difference operator symmetric, which
is what the time steppers rely on for exact discrete-mass conservation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Mesh",
    "RefinementConfig",
    "build_uniform_mesh",
    "d1_apply",
    "d2_apply",
    "refinement_indicators",
    "compute_refinement_flags",
    "midpoint_interpolate",
    "refine",
]


class Mesh:
    """Strictly increasing grid points with precomputed stencil coefficients.

    Attributes
    ----------
    points : (N+1,) float array, strictly increasing.
    spacings : (N,) float array, ``points[j+1] - points[j]``.
    dx_minus, dx_plus : (N+1,) arrays of left/right interval lengths per
        point, with the ghost convention at the ends.
    weights : (N+1,) quadrature weights ``(dx_minus + dx_plus) / 2`` used by
        the discrete mass and the potential part of the discrete energy.
    trap_weights : (N+1,) composite-trapezoid weights (half-intervals at the
        two boundary points, no ghost contribution).

    Instances are treated as immutable; refinement builds a new Mesh.
    """

    __slots__ = (
        "points",
        "spacings",
        "dx_minus",
        "dx_plus",
        "weights",
        "trap_weights",
        "_d1",
        "_d2",
        "_half_offdiag",
    )

    def __init__(self, points):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 1 or points.size < 2:
            raise ConfigurationError("a mesh needs at least two points")
        spacings = np.diff(points)
        if not np.all(spacings > 0.0):
            raise ConfigurationError("mesh points must be strictly increasing")
        self.points = points
        self.spacings = spacings
        self.dx_minus = np.concatenate(([spacings[0]], spacings))
        self.dx_plus = np.concatenate((spacings, [spacings[-1]]))
        self.weights = 0.5 * (self.dx_minus + self.dx_plus)
        tw = np.empty(points.size)
        tw[0] = 0.5 * spacings[0]
        tw[-1] = 0.5 * spacings[-1]
        tw[1:-1] = 0.5 * (spacings[:-1] + spacings[1:])
        self.trap_weights = tw
        self._d1 = None
        self._d2 = None
        self._half_offdiag = None

    @property
    def n_points(self) -> int:
        return self.points.size

    @property
    def n_intervals(self) -> int:
        return self.points.size - 1

    def d2_coefficients(self):
        """(lower, diag, upper) rows of the second-difference operator.

        Ghost values are already folded into the two boundary diagonals, so
        ``lower[0]`` and ``upper[-1]`` are zero and unused.
        """
        if self._d2 is None:
            dm, dp = self.dx_minus, self.dx_plus
            s = dm + dp
            lower = 2.0 / (dm * s)
            diag = -2.0 / (dm * dp)
            upper = 2.0 / (s * dp)
            diag = diag.copy()
            diag[0] += lower[0]
            diag[-1] += upper[-1]
            lower = lower.copy()
            upper = upper.copy()
            lower[0] = 0.0
            upper[-1] = 0.0
            self._d2 = (lower, diag, upper)
        return self._d2

    def d1_coefficients(self):
        """(lower, diag, upper) rows of the first-derivative stencil."""
        if self._d1 is None:
            dm, dp = self.dx_minus, self.dx_plus
            s = dm + dp
            lower = -dp / (dm * s)
            diag = (dp - dm) / (dm * dp)
            upper = dm / (s * dp)
            diag = diag.copy()
            diag[0] += lower[0]
            diag[-1] += upper[-1]
            lower = lower.copy()
            upper = upper.copy()
            lower[0] = 0.0
            upper[-1] = 0.0
            self._d1 = (lower, diag, upper)
        return self._d1

    def half_d2_offdiagonals(self):
        """Complex copies of half the d2 off-diagonals, for implicit solves."""
        if self._half_offdiag is None:
            lower, _, upper = self.d2_coefficients()
            self._half_offdiag = (
                (0.5 * lower[1:]).astype(np.complex128),
                (0.5 * upper[:-1]).astype(np.complex128),
            )
        return self._half_offdiag


def build_uniform_mesh(lc: float, dx: float) -> Mesh:
    """Uniform grid on ``[-lc, lc]`` with spacing ``dx``.

    ``2 * lc`` must be an integer multiple of ``dx`` up to rounding noise.
    """
    if lc <= 0.0:
        raise ConfigurationError("half-length lc must be positive")
    if dx <= 0.0 or dx > 2.0 * lc:
        raise ConfigurationError("spacing dx must lie in (0, 2*lc]")
    q = 2.0 * lc / dx
    n = int(round(q))
    if n < 1 or abs(q - n) > 1e-8 * max(1, n):
        raise ConfigurationError(
            f"2*lc/dx = {q!r} is not an integer; choose a divisible spacing"
        )
    return Mesh(np.linspace(-lc, lc, n + 1))


def _apply_rows(rows, f: np.ndarray) -> np.ndarray:
    lower, diag, upper = rows
    out = diag * f
    out[:-1] += upper[:-1] * f[1:]
    out[1:] += lower[1:] * f[:-1]
    return out


def _check_field(mesh: Mesh, f) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != (mesh.n_points,):
        raise ValueError(
            f"field length {f.shape} does not match mesh with {mesh.n_points} points"
        )
    return f


def d2_apply(mesh: Mesh, f) -> np.ndarray:
    """Second-difference of ``f`` on the mesh, Neumann-closed at the ends."""
    return _apply_rows(mesh.d2_coefficients(), _check_field(mesh, f))


def d1_apply(mesh: Mesh, f) -> np.ndarray:
    """First-derivative stencil applied to ``f``, Neumann-closed at the ends."""
    return _apply_rows(mesh.d1_coefficients(), _check_field(mesh, f))


@dataclass(frozen=True)
class RefinementConfig:
    """Refinement tolerances with thresholds frozen from the initial state.

    ``m_tol1`` / ``m_tol2`` are computed once at t=0 and never updated, so
    the refinement criterion always compares against the initial resolution.
    """

    tol1: float
    tol2: float
    sigma: int
    m_tol1: float
    m_tol2: float

    def __post_init__(self):
        if self.tol1 <= 0.0 or self.tol2 <= 0.0:
            raise ConfigurationError("refinement tolerances must be positive")

    @classmethod
    def from_initial_state(
        cls, mesh: Mesh, u0, sigma: int, tol1: float = 2.0, tol2: float = 0.5
    ) -> "RefinementConfig":
        gamma, eta = refinement_indicators(mesh, u0, sigma)
        m1 = tol1 * float(gamma.max())
        m2 = tol2 * float(eta.max())
        if m1 == 0.0 and m2 == 0.0:
            raise ConfigurationError(
                "refinement thresholds are degenerate (zero initial field)"
            )
        return cls(tol1=tol1, tol2=tol2, sigma=sigma, m_tol1=m1, m_tol2=m2)


def refinement_indicators(mesh: Mesh, u, sigma: int):
    """Per-interval indicators ``(gamma, eta)``.

    gamma_j = dx_j^(1/sigma) * |amp_{j+1} - amp_j| flags unresolved jumps,
    eta_j   = dx_j^(1/sigma) * (amp_{j+1} + amp_j) flags amplitude growth,
    where ``amp = |u|``. Working on the modulus is deliberate: under rough
    forcing the phase of u is white at grid scale and carries no structure a
    finer grid could resolve, while the envelope |u| is what must stay
    resolved as the solution focuses.
    """
    u = _check_field(mesh, u)
    amp = np.abs(u)
    scale = mesh.spacings ** (1.0 / sigma)
    gamma = scale * np.abs(amp[1:] - amp[:-1])
    eta = scale * (amp[1:] + amp[:-1])
    return gamma, eta


def compute_refinement_flags(mesh: Mesh, u, cfg: RefinementConfig) -> np.ndarray:
    """Boolean per-interval flags: split where an indicator exceeds its threshold."""
    gamma, eta = refinement_indicators(mesh, u, cfg.sigma)
    return (gamma > cfg.m_tol1) | (eta > cfg.m_tol2)


def _signed_quadratic_mean(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    mag = np.sqrt(0.5 * (p * p + q * q))
    return np.where(p + q >= 0.0, mag, -mag)


def midpoint_interpolate(left, right):
    """Midpoint value whose squared modulus is the mean of its neighbours'.

    Real and imaginary parts are interpolated separately as the root-mean
    square of the neighbouring parts, signed by the sum (sign(0) := +1), so
    ``|w|^2 = (|left|^2 + |right|^2) / 2`` holds exactly. A linear midpoint
    would instead lose ``|left - right|^2 * dx / 4`` of discrete mass per
    split interval.
    """
    left = np.asarray(left, dtype=np.complex128)
    right = np.asarray(right, dtype=np.complex128)
    out = _signed_quadratic_mean(left.real, right.real) + 1j * _signed_quadratic_mean(
        left.imag, right.imag
    )
    if out.ndim == 0:
        return complex(out)
    return out


def refine(mesh: Mesh, u, flags):
    """Split every flagged interval at its midpoint.

    Returns ``(mesh, u)`` unchanged (same objects) when nothing is flagged.
    New values come from :func:`midpoint_interpolate`, so the discrete mass
    is unchanged up to roundoff for interior splits; splitting one of the two
    boundary intervals also rescales that end's ghost weight, which physical
    fields never trigger (the indicators vanish where the solution decays).
    """
    u = _check_field(mesh, u)
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (mesh.n_intervals,):
        raise ValueError(
            f"flags length {flags.shape} does not match {mesh.n_intervals} intervals"
        )
    if not flags.any():
        return mesh, u
    idx = np.flatnonzero(flags)
    mid_x = 0.5 * (mesh.points[idx] + mesh.points[idx + 1])
    mid_u = midpoint_interpolate(u[idx], u[idx + 1])
    new_points = np.insert(mesh.points, idx + 1, mid_x)
    new_u = np.insert(np.asarray(u, dtype=np.complex128), idx + 1, mid_u)
    return Mesh(new_points), new_u
