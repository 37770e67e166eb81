"""Discrete invariants, focusing diagnostics, and profile comparisons."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, d1_apply, d2_apply

__all__ = [
    "discrete_mass",
    "discrete_energy",
    "approx_mass_trapezoid",
    "gradient_norm",
    "series_range",
    "ErrorRanges",
    "error_ranges",
    "focusing_scale",
    "contraction_rate",
    "rescaled_time",
    "ground_state",
    "profile_distance",
    "PeakFit",
    "blowup_center",
    "BlowupInfo",
    "RefinementEvent",
    "ProfileCheck",
    "TrajectoryDiagnostics",
    "CSV_COLUMNS",
    "write_series_csv",
    "read_series_csv",
]


def _abs2(u: np.ndarray) -> np.ndarray:
    return u.real * u.real + u.imag * u.imag


def discrete_mass(mesh: Mesh, u) -> float:
    """``sum_j |u_j|^2 (dx_j + dx_{j-1}) / 2`` with ghost spacings at the ends."""
    u = np.asarray(u)
    return float(mesh.weights @ _abs2(u))


def discrete_energy(mesh: Mesh, u, sigma: int) -> float:
    """Kinetic difference quotients minus the focusing potential.

    ``sum_j |u_{j+1}-u_j|^2 / (2 dx_j) - sum_j w_j |u_j|^(2 sigma + 2) / (2 sigma + 2)``
    with the same ghosted weights ``w_j`` as the discrete mass.
    """
    u = np.asarray(u)
    du = u[1:] - u[:-1]
    kinetic = 0.5 * float((_abs2(du) / mesh.spacings).sum())
    potential = float(mesh.weights @ _abs2(u) ** (sigma + 1)) / (2.0 * sigma + 2.0)
    return kinetic - potential


def approx_mass_trapezoid(mesh: Mesh, u) -> float:
    """Composite-trapezoid approximation of the squared L2 norm."""
    u = np.asarray(u)
    return float(mesh.trap_weights @ _abs2(u))


def gradient_norm(mesh: Mesh, u) -> float:
    """Trapezoid L2 norm of the stencil first derivative."""
    g = d1_apply(mesh, np.asarray(u, dtype=np.complex128))
    return float(np.sqrt(mesh.trap_weights @ _abs2(g)))


def series_range(values) -> float:
    """max - min of a series; the drift metric for conserved quantities."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot take the range of an empty series")
    return float(values.max() - values.min())


@dataclass(frozen=True)
class ErrorRanges:
    mass_dis: float
    mass_app: float
    energy: float


def error_ranges(diag: "TrajectoryDiagnostics") -> ErrorRanges:
    """Drift ranges of discrete mass, trapezoid mass, and discrete energy."""
    return ErrorRanges(
        mass_dis=series_range(diag.mass_dis),
        mass_app=series_range(diag.mass_app),
        energy=series_range(diag.energy_dis),
    )


def focusing_scale(mesh: Mesh, u, sigma: int, mode: str = "supnorm") -> float:
    """Focusing scale L: ``1 / ||u||_inf^sigma`` or the gradient-based form
    ``(1 / ||grad u||)^(2/alpha)`` with ``alpha = 1 + 2/sigma``."""
    u = np.asarray(u)
    if mode == "supnorm":
        sup = float(np.abs(u).max())
        return 1.0 / sup**sigma if sup > 0.0 else np.inf
    if mode == "gradient":
        gn = gradient_norm(mesh, u)
        if gn == 0.0:
            return np.inf
        alpha = 1.0 + 2.0 / sigma
        return float((1.0 / gn) ** (2.0 / alpha))
    raise ValueError(f"unknown focusing mode {mode!r}")


def contraction_rate(mesh: Mesh, u, sigma: int) -> float:
    """The rate a = -L L_t evaluated from the field itself.

    ``a = -(2/alpha) (||grad u||^2)^(-(2/alpha + 1)) * integral(|u|^(2 sigma)
    Im(u_xx conj(u)))`` with ``alpha = 1 + 2/sigma``; the integral uses the
    composite trapezoid rule. Real fields (and global phase rotations of
    them) give exactly zero.
    """
    u = np.asarray(u, dtype=np.complex128)
    uxx = d2_apply(mesh, u)
    integrand = _abs2(u) ** sigma * (uxx * np.conj(u)).imag
    integral = float(mesh.trap_weights @ integrand)
    if integral == 0.0:
        return 0.0
    g = d1_apply(mesh, u)
    gn2 = float(mesh.trap_weights @ _abs2(g))
    alpha = 1.0 + 2.0 / sigma
    return -(2.0 / alpha) * gn2 ** (-(2.0 / alpha + 1.0)) * integral


def rescaled_time(dts, scales) -> np.ndarray:
    """Cumulative rescaled time ``tau_m = sum_{k<m} dt_k / L_k^2``.

    Input arrays pair the step size taken from ``t_k`` with the focusing
    scale at ``t_k``; the output has one more entry than the input and
    starts at zero. When the adaptive rule sets ``dt_k = dt0 * L_k^2`` the
    sum telescopes to ``m * dt0`` exactly.
    """
    dts = np.asarray(dts, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if dts.shape != scales.shape:
        raise ValueError("dt and L series must have equal length")
    tau = np.empty(dts.size + 1)
    tau[0] = 0.0
    np.cumsum(dts / scales**2, out=tau[1:])
    return tau


def ground_state(sigma: int, x):
    """The explicit standing-wave profile ``(1+sigma)^(1/(2 sigma)) sech^(1/sigma)(sigma x)``."""
    x = np.asarray(x, dtype=np.float64)
    amp = (1.0 + sigma) ** (1.0 / (2.0 * sigma))
    out = amp * np.cosh(sigma * x) ** (-1.0 / sigma)
    if out.ndim == 0:
        return float(out)
    return out


def profile_distance(
    mesh: Mesh,
    u,
    sigma: int,
    x_c: float,
    scale: float,
    xi_max: float = 2.0,
    n_samples: int = 401,
) -> float:
    """Sup distance between the rescaled field modulus and the ground state.

    Samples ``L^(1/sigma) |u(x_c + L xi)|`` by linear interpolation on
    ``xi in [-xi_max, xi_max]`` and compares against ``Q(xi)``. Only the
    core window is compared; the tails are noise-dominated.
    """
    if scale <= 0.0:
        raise ValueError("focusing scale must be positive")
    u = np.asarray(u)
    xi = np.linspace(-xi_max, xi_max, n_samples)
    sampled = np.interp(x_c + scale * xi, mesh.points, np.abs(u))
    rescaled = scale ** (1.0 / sigma) * sampled
    return float(np.abs(rescaled - ground_state(sigma, xi)).max())


@dataclass(frozen=True)
class PeakFit:
    """Sub-grid peak location of |u|^2 with a degeneracy marker."""

    x: float
    degenerate: bool


def blowup_center(mesh: Mesh, u) -> PeakFit:
    """Parabolic (three-point) interpolation of the |u|^2 peak.

    Exact for sampled parabolas on any spacing. A boundary argmax returns
    the boundary point; a flat or non-concave neighbourhood returns the
    leftmost argmax with ``degenerate=True``.
    """
    u = np.asarray(u)
    y = _abs2(u)
    i = int(np.argmax(y))
    if y.max() == y.min():
        return PeakFit(float(mesh.points[0]), True)
    if i == 0 or i == mesh.n_points - 1:
        return PeakFit(float(mesh.points[i]), False)
    h1 = mesh.points[i] - mesh.points[i - 1]
    h2 = mesh.points[i + 1] - mesh.points[i]
    s = h1 + h2
    d1 = (-h2 / (h1 * s)) * y[i - 1] + ((h2 - h1) / (h1 * h2)) * y[i] + (h1 / (s * h2)) * y[i + 1]
    d2 = 2.0 * (y[i - 1] / (h1 * s) - y[i] / (h1 * h2) + y[i + 1] / (s * h2))
    if d2 >= 0.0:
        return PeakFit(float(mesh.points[i]), True)
    return PeakFit(float(mesh.points[i] - d1 / d2), False)


@dataclass(frozen=True)
class BlowupInfo:
    time: float
    center: float
    cause: str
    center_degenerate: bool = False


@dataclass(frozen=True)
class RefinementEvent:
    t: float
    n_points: int
    trace: int


@dataclass(frozen=True)
class ProfileCheck:
    """Core-profile comparison recorded when L first crosses a decade."""

    t: float
    scale: float
    distance: float
    center: float


CSV_COLUMNS = (
    "step",
    "t",
    "dt",
    "M_dis",
    "H_dis",
    "M_app",
    "sup_norm",
    "grad_norm",
    "L",
    "a",
    "tau",
    "n_points",
)


@dataclass
class TrajectoryDiagnostics:
    """Recorded time series plus the terminal outcome of one trajectory."""

    step: np.ndarray
    t: np.ndarray
    dt: np.ndarray
    mass_dis: np.ndarray
    energy_dis: np.ndarray
    mass_app: np.ndarray
    sup_norm: np.ndarray
    grad_norm: np.ndarray
    scale: np.ndarray
    rate: np.ndarray
    tau: np.ndarray
    n_points: np.ndarray
    blowup: BlowupInfo | None = None
    aborted: str | None = None
    refinements: list[RefinementEvent] = field(default_factory=list)
    profile_checks: list[ProfileCheck] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.blowup is None and self.aborted is None

    @property
    def status(self) -> str:
        if self.blowup is not None:
            return "blowup"
        if self.aborted is not None:
            return "aborted"
        return "completed"

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "step": self.step,
            "t": self.t,
            "dt": self.dt,
            "M_dis": self.mass_dis,
            "H_dis": self.energy_dis,
            "M_app": self.mass_app,
            "sup_norm": self.sup_norm,
            "grad_norm": self.grad_norm,
            "L": self.scale,
            "a": self.rate,
            "tau": self.tau,
            "n_points": self.n_points,
        }


def write_series_csv(diag: TrajectoryDiagnostics, path) -> None:
    """One row per recorded step, full double precision, header mandatory."""
    cols = diag.columns()
    n = diag.step.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for k in range(n):
            row = []
            for name in CSV_COLUMNS:
                v = cols[name][k]
                if name in ("step", "n_points"):
                    row.append(str(int(v)))
                else:
                    row.append(format(float(v), ".17g"))
            writer.writerow(row)


def read_series_csv(path) -> dict[str, np.ndarray]:
    """Load a diagnostics CSV back into named float arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged CSV")
    return {name: data[:, k] for k, name in enumerate(header)}
