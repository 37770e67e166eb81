"""Seeded Gaussian increments and grid-tied noise coefficients.

Increments come from a counter-based generator keyed by
``(seed, trial_index)`` with the step index selecting a disjoint counter
block, so the stream position depends only on those three integers: trials
can run in any order, and refining the mesh mid-run never perturbs draws at
other steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .mesh import Mesh

__all__ = [
    "NoiseKind",
    "NoiseModel",
    "NoiseCoeffs",
    "draw_increments",
    "noise_coefficients",
    "forcing_term",
    "trace_and_mphi",
]

_MASK64 = (1 << 64) - 1

SQRT3_HALF = 0.5 * np.sqrt(3.0)


class NoiseKind(str, Enum):
    DETERMINISTIC = "det"
    ADDITIVE = "add"
    MULTIPLICATIVE = "mult"


@dataclass(frozen=True)
class NoiseModel:
    """Noise kind, strength, and the identity of its random stream."""

    kind: NoiseKind = NoiseKind.DETERMINISTIC
    eps: float = 0.0
    seed: int = 0
    trial_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.eps < 0.0:
            raise ConfigurationError("noise strength eps must be >= 0")

    @property
    def active(self) -> bool:
        """True when the model actually draws randomness.

        eps == 0 short-circuits all sampling so deterministic baselines are
        reproducible regardless of the seed.
        """
        return self.kind is not NoiseKind.DETERMINISTIC and self.eps > 0.0


def draw_increments(model: NoiseModel, step_index: int, n_points: int) -> np.ndarray:
    """``n_points`` i.i.d. standard normal draws for one time step."""
    key = (model.seed & _MASK64) | ((model.trial_index & _MASK64) << 64)
    bits = np.random.Philox(key=key, counter=int(step_index) << 128)
    return np.random.Generator(bits).standard_normal(n_points)


@dataclass(frozen=True)
class NoiseCoeffs:
    """Per-point coefficients f_tilde plus the raw increments behind them."""

    f_tilde: np.ndarray
    chi: np.ndarray


def noise_coefficients(mesh: Mesh, dt: float, chi) -> NoiseCoeffs:
    """Hat-basis noise coefficients on the current mesh.

    Interior points get

        f_j = (sqrt(3)/2) * (sqrt(dx_{j-1}) + sqrt(dx_j))
              / (sqrt(dt) * (dx_{j-1} + dx_j)) * chi_j,

    and the mirrored ghost spacings reduce this at the two ends to
    ``(sqrt(3)/2) * chi / sqrt(dt * dx_edge)``, matching the half-hat basis
    elements there. On a uniform grid every point reduces to
    ``(sqrt(3)/2) * chi / sqrt(dt * dx)``.
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    chi = np.asarray(chi, dtype=np.float64)
    if chi.shape != (mesh.n_points,):
        raise ValueError(
            f"chi length {chi.shape} does not match mesh with {mesh.n_points} points"
        )
    dm, dp = mesh.dx_minus, mesh.dx_plus
    f = SQRT3_HALF * (np.sqrt(dm) + np.sqrt(dp)) / (np.sqrt(dt) * (dm + dp)) * chi
    return NoiseCoeffs(f_tilde=f, chi=chi)


def forcing_term(kind: NoiseKind, eps: float, coeffs: NoiseCoeffs, u_mid=None):
    """Right-hand-side forcing for one step.

    Multiplicative forcing carries the midpoint iterate (Stratonovich
    midpoint rule); additive forcing is the bare coefficient field.
    """
    kind = NoiseKind(kind)
    if kind is NoiseKind.DETERMINISTIC:
        return np.zeros(coeffs.f_tilde.shape, dtype=np.complex128)
    if kind is NoiseKind.ADDITIVE:
        return (eps * coeffs.f_tilde).astype(np.complex128)
    if u_mid is None:
        raise ValueError("multiplicative forcing needs the midpoint field")
    return eps * np.asarray(u_mid, dtype=np.complex128) * coeffs.f_tilde


def trace_and_mphi(mesh: Mesh) -> tuple[int, float]:
    """Trace of the projected covariance (= point count) and the gradient
    sup diagnostic ``12 (N+1) / dx^3``.

    The second value is stated for a uniform grid; on a non-uniform mesh the
    minimum spacing is used, which makes it an upper-bound diagnostic only.
    """
    n = mesh.n_points
    dx = float(mesh.spacings.min())
    return n, 12.0 * n / dx**3
