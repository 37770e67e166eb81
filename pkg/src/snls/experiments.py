"""Trajectory driver, Monte Carlo ensembles, and blow-up regression fits."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigurationError, FitRefusedError, NonConvergenceError, NumericalBreakdownError
from .mesh import (
    Mesh,
    RefinementConfig,
    build_uniform_mesh,
    compute_refinement_flags,
    refine,
)
from .noise import NoiseKind, NoiseModel
from .observables import (
    BlowupInfo,
    ProfileCheck,
    RefinementEvent,
    TrajectoryDiagnostics,
    approx_mass_trapezoid,
    blowup_center,
    contraction_rate,
    discrete_energy,
    discrete_mass,
    gradient_norm,
    ground_state,
    profile_distance,
)
from .schemes import Scheme, SolverConfig, State, step

__all__ = [
    "RunConfig",
    "TrialOutcome",
    "EnsembleSummary",
    "initial_field",
    "run_trajectory",
    "run_ensemble",
    "RateFit",
    "fit_blowup_rate",
    "CorrectionFit",
    "fit_a_correction",
    "supercritical_rate_check",
    "CenterStats",
    "center_statistics",
    "CurveFit",
    "ExpectedCurves",
    "expected_curves",
]

INITIAL_KINDS = ("ground", "gauss", "supergauss")


@dataclass(frozen=True)
class RunConfig:
    """Everything one trajectory needs; ensembles add only the trial index.

    ``refine`` switches the full adaptive machinery: per-step time-step
    adaptation, interval flagging, and mass-conservative splitting. With
    ``refine=False`` the run uses the fixed step ``dt0`` on the fixed initial
    grid, which is the right mode for conservation and growth studies.
    """

    sigma: int = 2
    initial: str = "ground"
    amplitude: float = 1.0
    lc: float = 20.0
    dx: float = 0.05
    dt0: float = 0.005
    noise: str = "det"
    eps: float = 0.0
    seed: int = 0
    scheme: str = "le"
    refine: bool = True
    tol1: float = 2.0
    tol2: float = 0.5
    t_end: float = 5.0
    l_stop: float = 1e-12
    dt_floor: float = 1e-14
    fp_tol: float = 1e-10
    fp_max_iter: int = 2000
    point_cap: int = 2_000_000
    stride: int = 10
    max_steps: int = 5_000_000
    pin_boundaries: bool = False
    le_bootstrap: str = "cn"

    def __post_init__(self):
        if self.initial not in INITIAL_KINDS:
            raise ConfigurationError(
                f"initial data must be one of {INITIAL_KINDS}, got {self.initial!r}"
            )
        NoiseKind(self.noise)
        Scheme(self.scheme)
        for name in ("amplitude", "lc", "dx", "dt0", "t_end", "l_stop", "dt_floor"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be positive")
        if self.stride < 1 or self.max_steps < 1:
            raise ConfigurationError("stride and max_steps must be >= 1")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            scheme=Scheme(self.scheme),
            sigma=self.sigma,
            fp_tol=self.fp_tol,
            fp_max_iter=self.fp_max_iter,
            dt_floor=self.dt_floor,
            l_stop=self.l_stop,
            point_cap=self.point_cap,
            adaptive_dt=self.refine,
            pin_boundaries=self.pin_boundaries,
            le_bootstrap=Scheme(self.le_bootstrap),
        )

    def noise_model(self, trial: int) -> NoiseModel:
        return NoiseModel(
            kind=NoiseKind(self.noise), eps=self.eps, seed=self.seed, trial_index=trial
        )

    def as_dict(self) -> dict:
        return asdict(self)


def initial_field(cfg: RunConfig, mesh: Mesh) -> np.ndarray:
    """Sample the configured initial data on the mesh (complex dtype)."""
    x = mesh.points
    if cfg.initial == "ground":
        profile = ground_state(cfg.sigma, x)
    elif cfg.initial == "gauss":
        profile = np.exp(-(x**2))
    else:
        profile = np.exp(-(x**4))
    return (cfg.amplitude * profile).astype(np.complex128)


class _Recorder:
    """Accumulates diagnostics rows; one trajectory owns one recorder."""

    def __init__(self, sigma: int):
        self.sigma = sigma
        self.rows: list[tuple] = []
        self.refinements: list[RefinementEvent] = []
        self.profile_checks: list[ProfileCheck] = []
        self._last_step = -1

    def record(self, step_index: int, t: float, dt: float, tau: float, state: State):
        if step_index == self._last_step:
            return
        self._last_step = step_index
        mesh, u = state.mesh, state.u
        sup = float(np.abs(u).max())
        scale = 1.0 / sup**self.sigma if sup > 0.0 else np.inf
        self.rows.append(
            (
                step_index,
                t,
                dt,
                discrete_mass(mesh, u),
                discrete_energy(mesh, u, self.sigma),
                approx_mass_trapezoid(mesh, u),
                sup,
                gradient_norm(mesh, u),
                scale,
                contraction_rate(mesh, u, self.sigma),
                tau,
                mesh.n_points,
            )
        )

    def finalize(self, blowup: BlowupInfo | None, aborted: str | None) -> TrajectoryDiagnostics:
        data = np.asarray(self.rows, dtype=np.float64)
        return TrajectoryDiagnostics(
            step=data[:, 0].astype(np.int64),
            t=data[:, 1],
            dt=data[:, 2],
            mass_dis=data[:, 3],
            energy_dis=data[:, 4],
            mass_app=data[:, 5],
            sup_norm=data[:, 6],
            grad_norm=data[:, 7],
            scale=data[:, 8],
            rate=data[:, 9],
            tau=data[:, 10],
            n_points=data[:, 11].astype(np.int64),
            blowup=blowup,
            aborted=aborted,
            refinements=self.refinements,
            profile_checks=self.profile_checks,
        )


def _dd_add(hi: float, lo: float, x: float) -> tuple[float, float]:
    # Compensated accumulation: keeps sub-ulp step sizes from stalling t.
    s = hi + x
    if abs(hi) >= abs(x):
        lo += (hi - s) + x
    else:
        lo += (x - s) + hi
    hi2 = s + lo
    lo = lo - (hi2 - s)
    return hi2, lo


def run_trajectory(cfg: RunConfig, trial: int = 0) -> TrajectoryDiagnostics:
    """Run one trajectory to ``t_end``, blow-up, or abort.

    The loop per accepted step: advance with the configured scheme, update
    the compensated clock and the rescaled time, declare blow-up when the
    focusing scale crosses ``l_stop`` / the step hits its floor / the inner
    iteration fails, then (if enabled) flag and split intervals, and record
    diagnostics every ``stride`` steps plus at refinement events and at the
    end. Abnormal terminations are recorded, never raised.
    """
    mesh = build_uniform_mesh(cfg.lc, cfg.dx)
    u0 = initial_field(cfg, mesh)
    scfg = cfg.solver_config()
    noise = cfg.noise_model(trial)
    ref_cfg = None
    if cfg.refine:
        ref_cfg = RefinementConfig.from_initial_state(
            mesh, u0, cfg.sigma, tol1=cfg.tol1, tol2=cfg.tol2
        )

    state = State(mesh=mesh, u=u0, t=0.0, dt_prev=cfg.dt0, dt0=cfg.dt0)
    rec = _Recorder(cfg.sigma)
    rec.record(0, 0.0, 0.0, 0.0, state)

    t_hi, t_lo = 0.0, 0.0
    tau = 0.0
    blowup: BlowupInfo | None = None
    aborted: str | None = None
    sigma = cfg.sigma
    scale0 = 1.0 / float(np.abs(u0).max()) ** sigma
    pc_threshold = 10.0 ** math.floor(math.log10(scale0))
    if pc_threshold >= scale0:
        pc_threshold /= 10.0

    while True:
        if state.t >= cfg.t_end:
            break
        if state.step_index >= cfg.max_steps:
            aborted = "max_steps"
            break

        sup_before = float(np.abs(state.u).max())
        scale_before = 1.0 / sup_before**sigma if sup_before > 0.0 else np.inf

        try:
            state, report = step(state, scfg, noise)
        except NonConvergenceError:
            blowup = _blowup_info(state, "non_convergence")
            break
        except NumericalBreakdownError:
            aborted = "numerical_breakdown"
            break

        t_hi, t_lo = _dd_add(t_hi, t_lo, report.dt)
        state.t = t_hi
        if np.isfinite(scale_before):
            tau += report.dt / scale_before**2

        sup = float(np.abs(state.u).max())
        if not np.isfinite(sup):
            aborted = "non_finite"
            break
        scale = 1.0 / sup**sigma if sup > 0.0 else np.inf

        cause = None
        if scale <= cfg.l_stop:
            cause = "l_stop"
        elif report.dt_at_floor:
            cause = "dt_floor"

        refined = False
        if cfg.refine and cause is None:
            flags = compute_refinement_flags(state.mesh, state.u, ref_cfg)
            if flags.any():
                new_mesh, new_u = refine(state.mesh, state.u, flags)
                if new_mesh.n_points > cfg.point_cap:
                    aborted = "point_cap"
                    break
                v_prev = state.v_prev
                if v_prev is not None:
                    idx = np.flatnonzero(flags)
                    mids = (0.5 * (v_prev[idx] ** (1.0 / sigma) + v_prev[idx + 1] ** (1.0 / sigma))) ** sigma
                    v_prev = np.insert(v_prev, idx + 1, mids)
                state = replace(state, mesh=new_mesh, u=new_u, v_prev=v_prev)
                refined = True
                rec.refinements.append(
                    RefinementEvent(t=state.t, n_points=new_mesh.n_points, trace=new_mesh.n_points)
                )

        while scale <= pc_threshold:
            fit = blowup_center(state.mesh, state.u)
            # A core matching L^(-1/sigma) Q((x - x_c)/L) has sup norm
            # Q(0) L^(-1/sigma), so the profile-consistent scale carries a
            # Q(0)^sigma = sqrt(1 + sigma) factor on top of the sup-norm L.
            scale_prof = math.sqrt(1.0 + sigma) * scale
            rec.profile_checks.append(
                ProfileCheck(
                    t=state.t,
                    scale=scale,
                    distance=profile_distance(
                        state.mesh, state.u, sigma, fit.x, scale_prof
                    ),
                    center=fit.x,
                )
            )
            pc_threshold /= 10.0

        if cause is not None:
            rec.record(state.step_index, state.t, report.dt, tau, state)
            blowup = _blowup_info(state, cause)
            break

        if refined or state.step_index % cfg.stride == 0:
            rec.record(state.step_index, state.t, report.dt, tau, state)

    last_dt = rec.rows[-1][2] if rec.rows else 0.0
    rec.record(state.step_index, state.t, last_dt, tau, state)
    return rec.finalize(blowup, aborted)


def _blowup_info(state: State, cause: str) -> BlowupInfo:
    fit = blowup_center(state.mesh, state.u)
    return BlowupInfo(
        time=state.t, center=fit.x, cause=cause, center_degenerate=fit.degenerate
    )


@dataclass(frozen=True)
class TrialOutcome:
    """Terminal record of one ensemble member."""

    trial: int
    status: str
    t_final: float
    steps: int
    n_points: int
    scale_final: float
    cause: str | None = None
    blowup_time: float | None = None
    center: float | None = None


@dataclass
class EnsembleSummary:
    """Aggregated outcomes and mean curves on a common time grid."""

    config: RunConfig
    n_trials: int
    outcomes: list[TrialOutcome]
    curve_times: np.ndarray
    mass_mean: np.ndarray
    mass_var: np.ndarray
    energy_mean: np.ndarray
    energy_var: np.ndarray
    alive_count: np.ndarray
    blowup_fraction: float
    centers: np.ndarray
    center_stats: "CenterStats | None"
    diagnostics: list[TrajectoryDiagnostics] | None = None


def _run_trial(args) -> tuple[int, TrajectoryDiagnostics]:
    cfg, trial = args
    return trial, run_trajectory(cfg, trial)


def run_ensemble(
    cfg: RunConfig,
    n_trials: int,
    workers: int = 1,
    keep_diagnostics: bool = False,
    curve_points: int = 201,
) -> EnsembleSummary:
    """Run ``n_trials`` independent trajectories and aggregate deterministically.

    Trials own noise streams indexed by ``(seed, trial)``, so the result is
    a pure function of ``(cfg, n_trials)``; ``workers`` only changes the
    wall-clock. Individual aborts are recorded, not fatal.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    jobs = [(cfg, k) for k in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_trial, jobs, chunksize=1))
    else:
        results = dict(map(_run_trial, jobs))
    diags = [results[k] for k in range(n_trials)]

    outcomes = []
    centers = []
    for k, d in enumerate(diags):
        out = TrialOutcome(
            trial=k,
            status=d.status,
            t_final=float(d.t[-1]),
            steps=int(d.step[-1]),
            n_points=int(d.n_points[-1]),
            scale_final=float(d.scale[-1]),
            cause=(d.blowup.cause if d.blowup else d.aborted),
            blowup_time=(d.blowup.time if d.blowup else None),
            center=(d.blowup.center if d.blowup else None),
        )
        outcomes.append(out)
        if d.blowup is not None:
            centers.append(d.blowup.center)

    times = np.linspace(0.0, cfg.t_end, curve_points)
    mass = np.full((n_trials, curve_points), np.nan)
    energy = np.full((n_trials, curve_points), np.nan)
    for k, d in enumerate(diags):
        alive = times <= d.t[-1]
        mass[k, alive] = np.interp(times[alive], d.t, d.mass_dis)
        energy[k, alive] = np.interp(times[alive], d.t, d.energy_dis)
    alive_count = np.sum(~np.isnan(mass), axis=0)
    with np.errstate(invalid="ignore"):
        mass_mean = np.nanmean(mass, axis=0)
        energy_mean = np.nanmean(energy, axis=0)
        mass_var = np.nanvar(mass, axis=0, ddof=1)
        energy_var = np.nanvar(energy, axis=0, ddof=1)

    centers_arr = np.asarray(centers, dtype=np.float64)
    stats = center_statistics(centers_arr) if centers_arr.size >= 2 else None
    return EnsembleSummary(
        config=cfg,
        n_trials=n_trials,
        outcomes=outcomes,
        curve_times=times,
        mass_mean=mass_mean,
        mass_var=mass_var,
        energy_mean=energy_mean,
        energy_var=energy_var,
        alive_count=alive_count,
        blowup_fraction=len(centers) / n_trials,
        centers=centers_arr,
        center_stats=stats,
        diagnostics=diags if keep_diagnostics else None,
    )


@dataclass(frozen=True)
class RateFit:
    """Power-law fit ``log L ~ slope * log(T - t)`` with estimated T."""

    t_blowup: float
    slope: float
    residual: float


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (y - ym)) / sxx
    resid = y - ym - slope * dx
    return slope, ym - slope * xm, float(resid @ resid)


def fit_blowup_rate(t, scale) -> RateFit:
    """Estimate the blow-up time and rate exponent from an (t, L) series.

    The blow-up time is found by golden-section search over
    ``(t_last, t_last + 10 * dt_last]`` (the adaptive step guarantees the
    run stops just short of the blow-up), minimizing the least-squares
    residual of ``log L`` against ``log(T - t)``. Needs at least 20 samples
    spanning three decades of L decrease.
    """
    t = np.asarray(t, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if t.shape != scale.shape:
        raise ValueError("t and L series must have equal length")
    keep = np.isfinite(t) & np.isfinite(scale) & (scale > 0.0)
    t, scale = t[keep], scale[keep]
    order = np.argsort(t, kind="stable")
    t, scale = t[order], scale[order]
    if t.size >= 2:
        # Deep-focusing runs can record several rows at one representable
        # time; keep the latest sample of each repeated instant.
        strict = np.concatenate((t[1:] > t[:-1], [True]))
        t, scale = t[strict], scale[strict]
    if t.size < 20:
        raise FitRefusedError("need at least 20 samples for a rate fit")
    if scale.max() / scale.min() < 1e3:
        raise FitRefusedError("need three decades of focusing for a rate fit")
    t_last = t[-1]
    dt_last = t_last - t[-2]
    if dt_last <= 0.0:
        raise FitRefusedError("time series is not strictly increasing at the end")

    y = np.log(scale)
    # (t_last - t) + gap avoids the catastrophic cancellation of
    # (t_last + gap) - t when the gap is far below one ulp of t.
    from_last = t_last - t

    def sse_of(log_gap: float) -> float:
        x = np.log(from_last + math.exp(log_gap))
        return _linfit(x, y)[2]

    # Deep-focusing series record time in ulp-sized ticks, so the nominal
    # 10*dt_last bracket is floored at the representable resolution of t.
    gap_hi = max(10.0 * dt_last, 128.0 * np.spacing(abs(t_last)))
    lo = math.log(gap_hi) - 30.0
    hi = math.log(gap_hi)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = sse_of(c), sse_of(d)
    for _ in range(200):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = sse_of(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = sse_of(d)
        if b - a < 1e-13:
            break
    gap = math.exp(0.5 * (a + b))
    x = np.log(from_last + gap)
    slope, _, sse = _linfit(x, y)
    return RateFit(
        t_blowup=t_last + gap, slope=slope, residual=math.sqrt(sse / t.size)
    )


@dataclass(frozen=True)
class CorrectionFit:
    """OLS of the contraction rate against 1/ln(tau)."""

    intercept: float
    slope: float


def fit_a_correction(tau, rate) -> CorrectionFit:
    """Fit ``a ~ intercept + slope / ln(tau)`` over the last decade of tau.

    Only samples with ``tau > 1`` participate (the regressor needs
    ``ln tau > 0``); a critical collapse gives intercept near zero, a
    supercritical one gives the limit rate as the intercept.
    """
    tau = np.asarray(tau, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if tau.shape != rate.shape:
        raise ValueError("tau and rate series must have equal length")
    keep = np.isfinite(tau) & np.isfinite(rate) & (tau > 1.0)
    tau, rate = tau[keep], rate[keep]
    if tau.size == 0:
        raise FitRefusedError("no usable samples with tau > 1")
    keep = tau >= tau.max() / 10.0
    tau, rate = tau[keep], rate[keep]
    if tau.size < 2:
        raise FitRefusedError("need at least two samples in the last tau decade")
    slope, intercept, _ = _linfit(1.0 / np.log(tau), rate)
    return CorrectionFit(intercept=intercept, slope=slope)


def supercritical_rate_check(t, sup_norm, a_limit: float, t_blowup: float, sigma: int):
    """Ratio ``r(t) = ||u||_inf * (2 a (T - t))^(1/(2 sigma))``.

    For a collapse at the pure square-root rate the ratio tends to one.
    Entries at or beyond the estimated blow-up time come back as NaN.
    """
    t = np.asarray(t, dtype=np.float64)
    sup_norm = np.asarray(sup_norm, dtype=np.float64)
    remaining = t_blowup - t
    with np.errstate(invalid="ignore"):
        r = np.where(
            remaining > 0.0,
            sup_norm * (2.0 * a_limit * np.maximum(remaining, 0.0)) ** (1.0 / (2.0 * sigma)),
            np.nan,
        )
    return r


@dataclass(frozen=True)
class CenterStats:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float


def center_statistics(sample) -> CenterStats:
    """Unbiased moment estimators; skew/kurtosis are NaN below n=3 / n=4."""
    x = np.asarray(sample, dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for moment estimates")
    mean = float(x.mean())
    d = x - mean
    var = float(d @ d) / (n - 1)
    skew = math.nan
    kurt = math.nan
    if var > 0.0:
        s = math.sqrt(var)
        if n >= 3:
            skew = (n / ((n - 1) * (n - 2))) * float(np.sum(d**3)) / s**3
        if n >= 4:
            m4 = float(np.sum(d**4))
            kurt = (n * (n + 1) / ((n - 1) * (n - 2) * (n - 3))) * m4 / s**4 - 3.0 * (
                n - 1
            ) ** 2 / ((n - 2) * (n - 3))
    return CenterStats(mean=mean, variance=var, skewness=skew, excess_kurtosis=kurt)


@dataclass(frozen=True)
class CurveFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class ExpectedCurves:
    times: np.ndarray
    mass_mean: np.ndarray
    energy_mean: np.ndarray
    mass_fit: CurveFit
    energy_fit: CurveFit


def _fit_curve(times: np.ndarray, values: np.ndarray) -> CurveFit:
    keep = np.isfinite(values)
    x, y = times[keep], values[keep]
    if x.size < 2:
        raise FitRefusedError("need at least two mean-curve points to fit")
    slope, intercept, sse = _linfit(x, y)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0.0 else 1.0
    return CurveFit(slope=slope, intercept=intercept, r_squared=r2)


def expected_curves(summary: EnsembleSummary) -> ExpectedCurves:
    """Trial-mean mass/energy curves with least-squares lines through them."""
    return ExpectedCurves(
        times=summary.curve_times,
        mass_mean=summary.mass_mean,
        energy_mean=summary.energy_mean,
        mass_fit=_fit_curve(summary.curve_times, summary.mass_mean),
        energy_fit=_fit_curve(summary.curve_times, summary.energy_mean),
    )
