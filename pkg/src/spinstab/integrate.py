"""Time stepping for the measured spin system.

Three integrators live here.  The workhorse is an explicit Euler-Maruyama
scheme for the Ito master equation with a per-step projection back onto the
state space; it runs whole batches of trajectories at once, each driven by
its own counter-based noise stream so that results do not depend on how an
ensemble is chunked across workers.  The same machinery drives the paired
unnormalized filter propagated from the reconstructed observation record,
and a fourth-order Runge-Kutta integrator covers the deterministic control
system built on the Stratonovich drift.

All trajectories are reproducible from (seed, trajectory index) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spin import (
    ModelParams,
    ProjectionPolicy,
    SpinOperators,
    hermitize,
    project_to_state_space,
)
from .dynamics import (
    FeedbackLaw,
    diffusion,
    drift_ito,
    drift_stratonovich,
    feedback_value,
    validate_law,
    zakai_fields,
)

__all__ = [
    "SdeConfig",
    "TrajectoryRecord",
    "PiecewiseControl",
    "noise_increments",
    "step_count",
    "sme_step",
    "simulate_batch",
    "simulate_sme",
    "simulate_zakai_pair",
    "simulate_ode",
]


@dataclass(frozen=True)
class SdeConfig:
    """Discretization and recording choices for one stochastic run."""

    dt: float
    t_final: float
    record_stride: int = 1
    seed: int = 0
    projection: ProjectionPolicy = field(default_factory=ProjectionPolicy)
    store_states: bool = False

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < self.dt:
            raise ValueError("horizon shorter than a single step")
        if self.record_stride < 1:
            raise ValueError(f"record stride must be >= 1, got {self.record_stride}")


def step_count(cfg: SdeConfig) -> int:
    """Number of steps covering [0, t_final]; rounds up, never truncates."""
    return int(np.ceil(cfg.t_final / cfg.dt - 1e-9))


@dataclass
class TrajectoryRecord:
    """Sampled observables of one trajectory on a uniform grid.

    ``min_eig``, ``herm_defect``, and ``trace_defect`` are measured at each
    recorded sample so that state validity along the whole run can be
    asserted after the fact without storing full states.
    """

    times: np.ndarray
    diag: np.ndarray
    control: np.ndarray
    min_eig: np.ndarray
    herm_defect: np.ndarray
    trace_defect: np.ndarray
    states: Optional[np.ndarray] = None

    @property
    def final_diag(self) -> np.ndarray:
        return self.diag[-1]


def noise_increments(seed: int, traj_index: int, n_steps: int, dt: float) -> np.ndarray:
    """Wiener increments N(0, dt) for one trajectory, reproducible by key.

    A counter-based generator keyed by (seed, index) makes every trajectory's
    stream independent of execution order and worker layout.
    """
    if traj_index < 0:
        raise ValueError(f"trajectory index must be nonnegative, got {traj_index}")
    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(traj_index)))
    return rng.normal(0.0, np.sqrt(dt), size=n_steps)


def sme_step(
    rho: np.ndarray,
    u,
    dW,
    dt: float,
    params: ModelParams,
    ops: SpinOperators,
    policy: ProjectionPolicy,
) -> np.ndarray:
    """One Euler-Maruyama step followed by projection onto the state space."""
    m = (
        rho
        + drift_ito(rho, u, params, ops) * dt
        + np.sqrt(params.eta) * _scale(dW) * diffusion(rho, params, ops)
    )
    return project_to_state_space(m, policy)


def _scale(x):
    return x if np.ndim(x) == 0 else np.asarray(x)[..., None, None]


def _sample_metrics(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    herm = np.max(
        np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))), axis=(-2, -1)
    )
    trace = np.abs(np.einsum("...ii->...", rho).real - 1.0)
    lam = np.linalg.eigvalsh(hermitize(rho))
    return lam[..., 0], herm, trace


def simulate_batch(
    rho0: np.ndarray,
    law: FeedbackLaw,
    cfg: SdeConfig,
    params: ModelParams,
    ops: SpinOperators,
    traj_indices: np.ndarray,
) -> dict:
    """Propagate a batch of trajectories under the Ito master equation.

    Parameters
    ----------
    rho0 : ndarray
        Initial states, shape (B, N, N); typically B copies of one state.
    traj_indices : ndarray
        Global trajectory indices keying each row's noise stream.

    Returns
    -------
    dict
        Arrays keyed by observable name; leading dimension is the batch.
    """
    validate_law(law, params.levels)
    n_batch = rho0.shape[0]
    steps = step_count(cfg)
    n_rec = steps // cfg.record_stride + 1
    dt = cfg.dt

    noise = np.empty((n_batch, steps))
    for row, idx in enumerate(traj_indices):
        noise[row] = noise_increments(cfg.seed, int(idx), steps, dt)

    rho = rho0.astype(complex)
    rec = {
        "times": np.arange(n_rec) * (dt * cfg.record_stride),
        "diag": np.empty((n_batch, n_rec, params.levels)),
        "control": np.empty((n_batch, n_rec)),
        "min_eig": np.empty((n_batch, n_rec)),
        "herm_defect": np.empty((n_batch, n_rec)),
        "trace_defect": np.empty((n_batch, n_rec)),
    }
    if cfg.store_states:
        rec["states"] = np.empty((n_batch, n_rec, params.levels, params.levels), complex)

    pos = 0
    for k in range(steps + 1):
        u = feedback_value(law, rho, ops)
        if k % cfg.record_stride == 0:
            rec["diag"][:, pos] = np.einsum("bii->bi", rho).real
            rec["control"][:, pos] = u
            lo, herm, tr = _sample_metrics(rho)
            rec["min_eig"][:, pos] = lo
            rec["herm_defect"][:, pos] = herm
            rec["trace_defect"][:, pos] = tr
            if cfg.store_states:
                rec["states"][:, pos] = rho
            pos += 1
        if k == steps:
            break
        try:
            rho = sme_step(
                rho, u, noise[:, k], dt, params, ops, cfg.projection
            )
        except (ValueError, RuntimeError) as exc:
            raise RuntimeError(f"integration failed at t={k * dt:.6g}: {exc}") from exc
    return rec


def _single_record(rec: dict) -> TrajectoryRecord:
    return TrajectoryRecord(
        times=rec["times"],
        diag=rec["diag"][0],
        control=rec["control"][0],
        min_eig=rec["min_eig"][0],
        herm_defect=rec["herm_defect"][0],
        trace_defect=rec["trace_defect"][0],
        states=rec["states"][0] if "states" in rec else None,
    )


def simulate_sme(
    rho0: np.ndarray,
    law: FeedbackLaw,
    cfg: SdeConfig,
    params: ModelParams,
    ops: SpinOperators,
    traj_index: int = 0,
) -> TrajectoryRecord:
    """Single stochastic trajectory with state feedback."""
    rec = simulate_batch(
        rho0[None, :, :], law, cfg, params, ops, np.array([traj_index])
    )
    return _single_record(rec)


def simulate_zakai_pair(
    rho0: np.ndarray,
    law: FeedbackLaw,
    cfg: SdeConfig,
    params: ModelParams,
    ops: SpinOperators,
    traj_index: int = 0,
) -> tuple[TrajectoryRecord, TrajectoryRecord, float]:
    """Run the master equation and its unnormalized filter on shared noise.

    The observation record dy = dW + 2 sqrt(eta M) Tr(J_z rho) dt is rebuilt
    from the reference trajectory each step and drives the linear filter,
    whose trace is renormalized away after every update (the filtering state
    is scale-free, so this changes nothing but conditioning).  The returned
    gap is the worst Frobenius distance between the two paths on the
    recording grid; for an exact integrator it would vanish identically.
    """
    validate_law(law, params.levels)
    steps = step_count(cfg)
    dt = cfg.dt
    sqe = np.sqrt(params.eta)
    gain = 2.0 * np.sqrt(params.eta * params.strength)
    noise = noise_increments(cfg.seed, traj_index, steps, dt)

    rho = rho0.astype(complex)
    filt = rho0.astype(complex)
    n_rec = steps // cfg.record_stride + 1
    out_s = _empty_single(n_rec, params.levels, cfg)
    out_z = _empty_single(n_rec, params.levels, cfg)
    max_gap = 0.0

    pos = 0
    for k in range(steps + 1):
        if k % cfg.record_stride == 0:
            _record_single(out_s, pos, rho, law, ops)
            _record_single(out_z, pos, filt, law, ops)
            gap = float(np.linalg.norm(filt - rho))
            max_gap = max(max_gap, gap)
            pos += 1
        if k == steps:
            break
        a = float(np.einsum("i,ii->", ops.weights, rho).real)
        dy = noise[k] + gain * a * dt
        u_ref = feedback_value(law, rho, ops)
        u_filt = feedback_value(law, filt, ops)
        try:
            rho = sme_step(rho, u_ref, noise[k], dt, params, ops, cfg.projection)
        except (ValueError, RuntimeError) as exc:
            raise RuntimeError(f"integration failed at t={k * dt:.6g}: {exc}") from exc
        fdrift, fdiff = zakai_fields(filt, u_filt, params, ops)
        m = hermitize(filt + fdrift * dt + sqe * dy * fdiff)
        tr = float(np.trace(m).real)
        if tr <= 0.0:
            raise RuntimeError(f"filter trace collapsed at t={(k + 1) * dt:.6g}")
        filt = m / tr
    times = np.arange(n_rec) * (dt * cfg.record_stride)
    return (
        _finish_single(out_s, times),
        _finish_single(out_z, times),
        max_gap,
    )


def _empty_single(n_rec: int, levels: int, cfg: SdeConfig) -> dict:
    out = {
        "diag": np.empty((n_rec, levels)),
        "control": np.empty(n_rec),
        "min_eig": np.empty(n_rec),
        "herm_defect": np.empty(n_rec),
        "trace_defect": np.empty(n_rec),
    }
    if cfg.store_states:
        out["states"] = np.empty((n_rec, levels, levels), complex)
    return out


def _record_single(out: dict, pos: int, rho: np.ndarray, law, ops) -> None:
    out["diag"][pos] = np.diag(rho).real
    out["control"][pos] = feedback_value(law, rho, ops)
    lo, herm, tr = _sample_metrics(rho)
    out["min_eig"][pos] = lo
    out["herm_defect"][pos] = herm
    out["trace_defect"][pos] = tr
    if "states" in out:
        out["states"][pos] = rho


def _finish_single(out: dict, times: np.ndarray) -> TrajectoryRecord:
    return TrajectoryRecord(
        times=times,
        diag=out["diag"],
        control=out["control"],
        min_eig=out["min_eig"],
        herm_defect=out["herm_defect"],
        trace_defect=out["trace_defect"],
        states=out.get("states"),
    )


@dataclass(frozen=True)
class PiecewiseControl:
    """Piecewise-constant open-loop input v(t).

    ``values[i]`` applies on [times[i], times[i+1]); the last value holds to
    the end of the run.  ``times[0]`` must be 0.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("breakpoints and values must be equal-length 1-d arrays")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("breakpoints must start at 0 and increase strictly")

    def at(self, t: float) -> float:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(idx, 0)])


def simulate_ode(
    rho0: np.ndarray,
    law: FeedbackLaw,
    control: PiecewiseControl,
    cfg: SdeConfig,
    params: ModelParams,
    ops: SpinOperators,
) -> TrajectoryRecord:
    """Deterministic control flow: Stratonovich drift plus sqrt(eta) G v(t).

    Classic fixed-step RK4.  The state feedback inside the drift is evaluated
    on each stage state; v is evaluated at each stage time.  No eigenvalue
    clipping is applied, so genuine boundary behavior stays visible; a step
    is rejected if the state leaves the valid set by more than the policy's
    drift bound.
    """
    validate_law(law, params.levels)
    steps = step_count(cfg)
    dt = cfg.dt
    sqe = np.sqrt(params.eta)

    def field_at(t: float, rho: np.ndarray) -> np.ndarray:
        u = feedback_value(law, rho, ops)
        return drift_stratonovich(rho, u, params, ops) + sqe * control.at(
            t
        ) * diffusion(rho, params, ops)

    rho = rho0.astype(complex)
    n_rec = steps // cfg.record_stride + 1
    out = _empty_single(n_rec, params.levels, cfg)
    pos = 0
    for k in range(steps + 1):
        if k % cfg.record_stride == 0:
            _record_single(out, pos, rho, law, ops)
            pos += 1
        if k == steps:
            break
        t = k * dt
        k1 = field_at(t, rho)
        k2 = field_at(t + 0.5 * dt, rho + 0.5 * dt * k1)
        k3 = field_at(t + 0.5 * dt, rho + 0.5 * dt * k2)
        k4 = field_at(t + dt, rho + dt * k3)
        rho = hermitize(rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        rho = rho / np.trace(rho).real
        lo = float(np.min(np.linalg.eigvalsh(rho)))
        if lo < -cfg.projection.drift_bound:
            raise RuntimeError(
                f"step rejected at t={t + dt:.6g}: min eigenvalue {lo:.3e} "
                "left the state space beyond the drift bound"
            )
    times = np.arange(n_rec) * (dt * cfg.record_stride)
    return _finish_single(out, times)
