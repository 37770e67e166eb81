"""One implicit time step of the three schemes, with adaptive step control.

All three schemes advance ``i u_t + u_xx + |u|^(2s) u = eps f(u)`` through
the midpoint form

    i (u' - u)/dt + D2 (u + u')/2 + P (u + u')/2 = g,

where the potential coefficient P distinguishes the schemes:

* MEC: the symmetric-sum ratio of consecutive |u|^2 powers, which conserves
  both discrete mass and discrete energy (deterministic case);
* CN:  |(u + u')/2|^(2s), second order, mass-conservative;
* LE:  a two-step linear extrapolation of |u|^(2s), so only one linear
  solve is needed per step.

Multiplicative forcing enters the linear system implicitly: the eps*f/2
piece multiplying u' sits on the matrix diagonal, which keeps the
Stratonovich midpoint exact per iterate and the discrete mass conserved to
solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigurationError, NonConvergenceError, NumericalBreakdownError
from .mesh import Mesh
from .noise import NoiseKind, NoiseModel, draw_increments, noise_coefficients

__all__ = [
    "Scheme",
    "SolverConfig",
    "State",
    "StepReport",
    "adapt_dt",
    "mec_ratio",
    "le_potential",
    "tridiagonal_solve",
    "step",
]


class Scheme(str, Enum):
    MEC = "mec"
    CN = "cn"
    LE = "le"


@dataclass(frozen=True)
class SolverConfig:
    """Scheme selection and the knobs of the stepping loop."""

    scheme: Scheme = Scheme.LE
    sigma: int = 2
    fp_tol: float = 1e-10
    fp_max_iter: int = 2000
    dt_floor: float = 1e-14
    l_stop: float = 1e-12
    point_cap: int = 2_000_000
    adaptive_dt: bool = True
    pin_boundaries: bool = False
    le_bootstrap: Scheme = Scheme.CN

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "le_bootstrap", Scheme(self.le_bootstrap))
        if self.sigma < 1 or int(self.sigma) != self.sigma:
            raise ConfigurationError("sigma must be a positive integer")
        if self.fp_tol <= 0.0:
            raise ConfigurationError("fp_tol must be positive")
        if self.fp_max_iter < 1:
            raise ConfigurationError("fp_max_iter must be >= 1")
        if self.le_bootstrap is Scheme.LE:
            raise ConfigurationError("the LE bootstrap step must use MEC or CN")


@dataclass
class State:
    """Field, mesh, and the multi-step memory carried between steps."""

    mesh: Mesh
    u: np.ndarray
    t: float
    dt_prev: float
    dt0: float
    v_prev: np.ndarray | None = None
    step_index: int = 0

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.complex128)
        if self.u.shape != (self.mesh.n_points,):
            raise ValueError("field length does not match the mesh")
        if self.dt_prev <= 0.0 or self.dt0 <= 0.0:
            raise ConfigurationError("time steps must be positive")


@dataclass(frozen=True)
class StepReport:
    """Inner-solve statistics for one accepted step."""

    iterations: int
    residual: float
    dt: float
    dt_at_floor: bool


def adapt_dt(state: State, cfg: SolverConfig) -> float:
    """Next step size: ``min(dt_prev, dt0 / ||u||_inf^(2 sigma))``.

    The result never grows, so the rescaled time advances by at most dt0 per
    step and the physical time can never overrun a blow-up. The value is
    clipped at ``cfg.dt_floor``; reaching the floor is the driver's signal
    that focusing has outrun the representable step size.
    """
    sup = float(np.abs(state.u).max())
    if sup > 0.0:
        candidate = state.dt0 / sup ** (2 * cfg.sigma)
        dt = min(state.dt_prev, candidate)
    else:
        dt = state.dt_prev
    return max(dt, cfg.dt_floor)


def mec_ratio(a, b, sigma: int):
    """Symmetric-sum form of ``(a^(s+1) - b^(s+1)) / ((s+1)(a - b))``.

    Evaluates ``sum_{k=0..s} a^k b^(s-k) / (s+1)``, which is algebraically
    identical for ``a != b`` and stays finite (equal to ``a^s``) at ``a == b``.
    """
    if sigma < 1 or int(sigma) != sigma:
        raise ConfigurationError("sigma must be a positive integer")
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    acc = b_arr**sigma
    pa = np.ones_like(acc)
    for k in range(1, sigma + 1):
        pa = pa * a_arr
        acc = acc + pa * b_arr ** (sigma - k)
    acc = acc / (sigma + 1)
    if acc.ndim == 0:
        return float(acc)
    return acc


def le_potential(v_curr, v_prev, dt_curr: float, dt_prev: float):
    """Extrapolated midpoint potential ``((2 + r) V^m - r V^(m-1)) / 2``
    with ``r = dt_curr / dt_prev``; equal steps give ``(3 V^m - V^(m-1)) / 2``."""
    r = dt_curr / dt_prev
    return 0.5 * ((2.0 + r) * np.asarray(v_curr) - r * np.asarray(v_prev))


def tridiagonal_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve the tridiagonal system by Gaussian elimination (LAPACK gtsv).

    ``lower`` and ``upper`` have length n-1, ``diag`` and ``rhs`` length n.
    Raises :class:`NumericalBreakdownError` on an exactly singular pivot.
    """
    diag = np.asarray(diag)
    rhs = np.asarray(rhs)
    lower = np.asarray(lower)
    upper = np.asarray(upper)
    n = diag.shape[0]
    if rhs.shape[0] != n or lower.shape[0] != n - 1 or upper.shape[0] != n - 1:
        raise ValueError("inconsistent tridiagonal system shapes")
    if any(np.iscomplexobj(v) for v in (lower, diag, upper, rhs)):
        gtsv = lapack.zgtsv
        cast = np.complex128
    else:
        gtsv = lapack.dgtsv
        cast = np.float64
    _, _, _, x, info = gtsv(
        lower.astype(cast), diag.astype(cast), upper.astype(cast), rhs.astype(cast)
    )
    if info > 0:
        raise NumericalBreakdownError(f"zero pivot in tridiagonal solve (row {info})")
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to gtsv")
    return x


def _potential_power(u: np.ndarray, sigma: int) -> np.ndarray:
    a = u.real * u.real + u.imag * u.imag
    return a**sigma


def step(state: State, cfg: SolverConfig, noise: NoiseModel) -> tuple[State, StepReport]:
    """Advance the state by one accepted time step of the configured scheme.

    Returns the new state and a report with the inner-iteration count, the
    final iterate residual, the step size used, and whether the adaptive
    rule was clipped at the floor (the blow-up-imminent signal).
    """
    mesh = state.mesh
    u = state.u
    n = mesh.n_points

    if cfg.adaptive_dt:
        dt = adapt_dt(state, cfg)
        at_floor = dt <= cfg.dt_floor
    else:
        dt = state.dt0
        at_floor = False

    scheme = cfg.scheme
    if scheme is Scheme.LE and state.step_index == 0:
        scheme = cfg.le_bootstrap
    if scheme is Scheme.LE and state.v_prev is None:
        raise ConfigurationError("LE needs the previous potential after step 0")

    multiplicative = noise.active and noise.kind is NoiseKind.MULTIPLICATIVE
    additive = noise.active and noise.kind is NoiseKind.ADDITIVE
    f_tilde = None
    if noise.active:
        chi = draw_increments(noise, state.step_index, n)
        f_tilde = noise_coefficients(mesh, dt, chi).f_tilde

    lower, diag_t, upper = mesh.d2_coefficients()
    lo_half, up_half = mesh.half_d2_offdiagonals()

    inv = 1j / dt
    base_diag = inv + 0.5 * diag_t
    if multiplicative:
        base_diag = base_diag - (0.5 * noise.eps) * f_tilde

    # rhs_fixed = 2i/dt * u - A u for the iterate-independent part of A.
    t_half_u = 0.5 * _apply_t(lower, diag_t, upper, u)
    rhs_fixed = inv * u - t_half_u
    if multiplicative:
        rhs_fixed = rhs_fixed + (0.5 * noise.eps) * (f_tilde * u)
    elif additive:
        rhs_fixed = rhs_fixed + noise.eps * f_tilde

    v_state = None
    if cfg.scheme is Scheme.LE:
        v_state = _potential_power(u, cfg.sigma)

    if scheme is Scheme.LE:
        pot = le_potential(v_state, state.v_prev, dt, state.dt_prev)
        w = _solve_iterate(lo_half, base_diag, up_half, pot, rhs_fixed, u)
        iterations, residual = 1, 0.0
    else:
        abs2_u = u.real * u.real + u.imag * u.imag
        w = u.copy()
        iterations = 0
        residual = np.inf
        for _ in range(cfg.fp_max_iter):
            if scheme is Scheme.MEC:
                abs2_w = w.real * w.real + w.imag * w.imag
                pot = mec_ratio(abs2_w, abs2_u, cfg.sigma)
            else:
                pot = _potential_power(0.5 * (u + w), cfg.sigma)
            w_new = _solve_iterate(lo_half, base_diag, up_half, pot, rhs_fixed, u)
            residual = float(np.abs(w_new - w).max())
            w = w_new
            iterations += 1
            if residual < cfg.fp_tol:
                break
        else:
            raise NonConvergenceError(iterations, residual, state.t)

    if cfg.pin_boundaries and n > 2:
        w[0] = w[1]
        w[-1] = w[-2]

    new_state = State(
        mesh=mesh,
        u=w,
        t=state.t + dt,
        dt_prev=dt,
        dt0=state.dt0,
        v_prev=v_state,
        step_index=state.step_index + 1,
    )
    return new_state, StepReport(iterations, residual, dt, at_floor)


def _apply_t(lower, diag, upper, f):
    out = diag * f
    out[:-1] += upper[:-1] * f[1:]
    out[1:] += lower[1:] * f[:-1]
    return out


def _solve_iterate(lo_half, base_diag, up_half, pot, rhs_fixed, u):
    half_pot = 0.5 * pot
    _, _, _, x, info = lapack.zgtsv(
        lo_half.copy(),
        base_diag + half_pot,
        up_half.copy(),
        rhs_fixed - half_pot * u,
        overwrite_dl=1,
        overwrite_d=1,
        overwrite_du=1,
        overwrite_b=1,
    )
    if info != 0:
        raise NumericalBreakdownError(f"zero pivot in tridiagonal solve (row {info})")
    return x
