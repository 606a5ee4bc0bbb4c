"""Monte Carlo ensembles: execution, aggregation, presets, persistence.

An ensemble is a pure function of its configuration: every trajectory's
noise is keyed by (base seed, trajectory index), workers only split the
index range, and aggregation runs in index order, so the worker count can
never change a digit of the output.  The CSV written here, together with
its metadata sidecar, is the package's external data interface.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .spin import (
    ModelParams,
    build_operators,
    pure_state,
    validate_state,
)
from .dynamics import EdgeTarget, FeedbackLaw, GeneralTarget, Zero, validate_law
from .integrate import SdeConfig, TrajectoryRecord, simulate_batch, step_count
from .analysis import (
    ExponentEstimate,
    bures_from_population,
    classify_convergence,
    estimate_exponent,
    lyapunov_edge,
    lyapunov_general,
    lyapunov_qsr,
)

__all__ = [
    "OBSERVABLES",
    "EnsembleConfig",
    "EnsembleStats",
    "default_observables",
    "run_ensemble",
    "preset",
    "PRESET_NAMES",
    "write_csv",
    "read_csv",
    "meta_path_for",
]

OBSERVABLES = frozenset(
    {"V_qsr", "V_edge", "V_general", "dB_target", "dB_set", "diagonals", "control"}
)


def default_observables(law: FeedbackLaw) -> frozenset[str]:
    """The observable set the CSV schema expects for this law."""
    if isinstance(law, Zero):
        return frozenset({"V_qsr", "dB_set", "diagonals", "control"})
    if isinstance(law, EdgeTarget):
        return frozenset({"V_edge", "dB_target", "diagonals", "control"})
    return frozenset({"V_general", "dB_target", "diagonals", "control"})


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything needed to reproduce an ensemble bit for bit."""

    model: ModelParams
    law: FeedbackLaw
    initial: np.ndarray
    sde: SdeConfig
    n_traj: int = 10
    base_seed: int = 0
    workers: int = 1
    observables: frozenset[str] = None  # type: ignore[assignment]
    threshold: float = 0.99
    window_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError(f"need at least one trajectory, got {self.n_traj}")
        if self.workers < 0:
            raise ValueError(f"workers must be >= 0, got {self.workers}")
        validate_law(self.law, self.model.levels)
        validate_state(self.initial)
        if self.initial.shape != (self.model.levels, self.model.levels):
            raise ValueError("initial state shape does not match the level count")
        obs = self.observables
        if obs is None:
            obs = default_observables(self.law)
        else:
            obs = frozenset(obs)
            unknown = obs - OBSERVABLES
            if unknown:
                raise ValueError(f"unknown observables: {sorted(unknown)}")
            _warn_mismatched(obs, self.law)
        object.__setattr__(self, "observables", obs)
        # frozen dataclass holding an array: freeze the array too
        arr = np.array(self.initial, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "initial", arr)


def _warn_mismatched(obs: frozenset[str], law: FeedbackLaw) -> None:
    wanted = default_observables(law)
    law_v = {"V_qsr", "V_edge", "V_general"}
    odd = (obs & law_v) - wanted
    if odd:
        warnings.warn(
            f"observables {sorted(odd)} do not match the configured law",
            stacklevel=3,
        )


@dataclass
class EnsembleStats:
    """Aggregated ensemble output plus per-trajectory diagnostics."""

    config: EnsembleConfig
    times: np.ndarray
    mean: dict[str, np.ndarray]
    se: dict[str, np.ndarray]
    slopes: np.ndarray
    exponents: list[ExponentEstimate | None]
    classes: np.ndarray
    frequencies: np.ndarray
    undecided: int
    worst_min_eig: float
    worst_herm_defect: float
    worst_trace_defect: float

    def __post_init__(self) -> None:
        counted = int((self.classes >= 0).sum()) + self.undecided
        if counted != self.config.n_traj:
            raise ValueError("class counts do not partition the ensemble")


def _law_v_name(law: FeedbackLaw) -> str:
    if isinstance(law, Zero):
        return "V_qsr"
    if isinstance(law, EdgeTarget):
        return "V_edge"
    return "V_general"


def _law_db_name(law: FeedbackLaw) -> str:
    return "dB_set" if isinstance(law, Zero) else "dB_target"


def _series_for(name: str, diag: np.ndarray, control: np.ndarray, law: FeedbackLaw):
    """Derive one observable time series (B, T) from recorded diagonals."""
    if name == "V_qsr":
        root = np.sqrt(np.clip(diag, 0.0, None)).sum(axis=-1)
        return 0.5 * (root**2 - 1.0)
    if name == "V_edge":
        return np.sqrt(np.clip(1.0 - diag[..., law.nbar], 0.0, None))
    if name == "V_general":
        mask = np.ones(diag.shape[-1], dtype=bool)
        mask[law.nbar] = False
        return np.sqrt(np.clip(diag[..., mask], 0.0, None)).sum(axis=-1)
    if name == "dB_target":
        return bures_from_population(diag[..., law.nbar])
    if name == "dB_set":
        return bures_from_population(diag.max(axis=-1))
    if name == "control":
        return control
    raise ValueError(f"no derivation for observable {name}")


def _run_chunk(cfg: EnsembleConfig, lo: int, hi: int) -> dict:
    """Integrate trajectories [lo, hi); on failure, find the culprit row."""
    ops = build_operators(cfg.model)
    rho0 = np.repeat(cfg.initial[None], hi - lo, axis=0)
    idx = np.arange(lo, hi)
    try:
        return simulate_batch(rho0, cfg.law, cfg.sde, cfg.model, ops, idx)
    except RuntimeError:
        for i in idx:
            try:
                simulate_batch(
                    cfg.initial[None], cfg.law, cfg.sde, cfg.model, ops,
                    np.array([i]),
                )
            except RuntimeError as exc:
                raise RuntimeError(f"trajectory {i}: {exc}") from exc
        raise


def _chunk_bounds(n_traj: int, workers: int) -> list[tuple[int, int]]:
    size = -(-n_traj // workers)
    return [(lo, min(lo + size, n_traj)) for lo in range(0, n_traj, size)]


def run_ensemble(cfg: EnsembleConfig) -> EnsembleStats:
    """Run the configured ensemble and aggregate it.

    The worker count affects wall time only; trajectory i always consumes
    the noise stream keyed (base_seed, i) and chunks are concatenated in
    index order before any statistic is touched.
    """
    workers = cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)
    workers = min(workers, cfg.n_traj)
    sde = SdeConfig(
        dt=cfg.sde.dt,
        t_final=cfg.sde.t_final,
        record_stride=cfg.sde.record_stride,
        seed=cfg.base_seed,
        projection=cfg.sde.projection,
        store_states=False,
    )
    run_cfg = EnsembleConfig(
        model=cfg.model, law=cfg.law, initial=cfg.initial, sde=sde,
        n_traj=cfg.n_traj, base_seed=cfg.base_seed, workers=workers,
        observables=cfg.observables, threshold=cfg.threshold,
        window_fraction=cfg.window_fraction,
    )
    bounds = _chunk_bounds(cfg.n_traj, workers)
    if workers == 1 or len(bounds) == 1:
        chunks = [_run_chunk(run_cfg, lo, hi) for lo, hi in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, run_cfg, lo, hi) for lo, hi in bounds]
            chunks = [f.result() for f in futures]

    times = chunks[0]["times"]
    diag = np.concatenate([c["diag"] for c in chunks], axis=0)
    control = np.concatenate([c["control"] for c in chunks], axis=0)
    min_eig = np.concatenate([c["min_eig"] for c in chunks], axis=0)
    herm = np.concatenate([c["herm_defect"] for c in chunks], axis=0)
    trace = np.concatenate([c["trace_defect"] for c in chunks], axis=0)

    mean: dict[str, np.ndarray] = {}
    se: dict[str, np.ndarray] = {}
    n = cfg.n_traj
    for name in sorted(cfg.observables):
        series = diag if name == "diagonals" else _series_for(name, diag, control, cfg.law)
        mean[name] = series.mean(axis=0)
        se[name] = (
            series.std(axis=0, ddof=1) / np.sqrt(n) if n > 1
            else np.zeros(series.shape[1:])
        )

    target = None if isinstance(cfg.law, Zero) else cfg.law.nbar
    exponents: list[ExponentEstimate | None] = []
    slopes = np.full(n, np.nan)
    classes = np.full(n, -1, dtype=int)
    for i in range(n):
        rec = TrajectoryRecord(
            times=times, diag=diag[i], control=control[i], min_eig=min_eig[i],
            herm_defect=herm[i], trace_defect=trace[i],
        )
        got = classify_convergence(rec, cfg.threshold)
        classes[i] = -1 if got is None else got
        try:
            est = estimate_exponent(rec, target, cfg.window_fraction)
        except ValueError:
            est = None  # collapsed to the target before the fit window
        exponents.append(est)
        if est is not None:
            slopes[i] = est.slope

    levels = cfg.model.levels
    frequencies = np.array([(classes == k).sum() / n for k in range(levels)])
    undecided = int((classes == -1).sum())
    return EnsembleStats(
        config=run_cfg,
        times=times,
        mean=mean,
        se=se,
        slopes=slopes,
        exponents=exponents,
        classes=classes,
        frequencies=frequencies,
        undecided=undecided,
        worst_min_eig=float(min_eig.min()),
        worst_herm_defect=float(herm.max()),
        worst_trace_defect=float(trace.max()),
    )


PRESET_NAMES = ("fig1_qsr", "fig2_edge", "fig3_general_interior", "fig4_general_boundary")

# Shared figure parameters: three levels, no detuning, eta = 0.3 (the one
# caption printing "0,3" is read as a decimal-comma typo), unit measurement
# strength, horizon 10.
_BASE = dict(levels=3, omega=0.0, eta=0.3, strength=1.0)


def preset(
    name: str,
    *,
    n_traj: int = 10,
    dt: float = 1e-3,
    t_final: float = 10.0,
    record_stride: int = 10,
    base_seed: int = 0,
    workers: int = 1,
    threshold: float = 0.99,
) -> EnsembleConfig:
    """Named experiment configurations matching the reference figures."""
    model = ModelParams(**_BASE)
    mixed = np.diag([0.3, 0.4, 0.3]).astype(complex)
    if name == "fig1_qsr":
        law: FeedbackLaw = Zero()
        initial = mixed
    elif name == "fig2_edge":
        law = EdgeTarget(nbar=0, alpha=10.0, beta=5.0, gamma=10.0)
        initial = pure_state(2, 3)
    elif name == "fig3_general_interior":
        law = GeneralTarget(nbar=1, alpha=0.3, beta=10.0)
        initial = mixed
    elif name == "fig4_general_boundary":
        law = GeneralTarget(nbar=1, alpha=0.3, beta=10.0)
        initial = pure_state(2, 3)
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    sde = SdeConfig(dt=dt, t_final=t_final, record_stride=record_stride, seed=base_seed)
    return EnsembleConfig(
        model=model, law=law, initial=initial, sde=sde,
        n_traj=n_traj, base_seed=base_seed, workers=workers, threshold=threshold,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_header(levels: int) -> str:
    cols = ["t", "mean_V", "se_V", "mean_dB", "se_dB"]
    cols += [f"mean_rho{n}{n}" for n in range(levels)]
    cols += ["mean_u", "se_u"]
    return ",".join(cols)


def write_csv(stats: EnsembleStats, path: str | os.PathLike) -> None:
    """Write the ensemble CSV and its metadata sidecar.

    Floats go out as shortest round-trip decimals, so reading the file back
    reproduces every mean and standard error exactly.
    """
    cfg = stats.config
    v_name = _law_v_name(cfg.law)
    db_name = _law_db_name(cfg.law)
    levels = cfg.model.levels
    lines = [csv_header(levels)]
    for k, t in enumerate(stats.times):
        row = [
            _fmt(t),
            _fmt(stats.mean[v_name][k]),
            _fmt(stats.se[v_name][k]),
            _fmt(stats.mean[db_name][k]),
            _fmt(stats.se[db_name][k]),
        ]
        row += [_fmt(stats.mean["diagonals"][k, n]) for n in range(levels)]
        row += [_fmt(stats.mean["control"][k]), _fmt(stats.se["control"][k])]
        lines.append(",".join(row))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(meta_path_for(path), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_meta_payload(stats), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"could not write ensemble output at {path}: {exc}") from exc


def meta_path_for(path: str | os.PathLike) -> str:
    text = os.fspath(path)
    stem = text[: -len(".csv")] if text.endswith(".csv") else text
    return stem + ".meta.json"


def _law_payload(law: FeedbackLaw) -> dict:
    if isinstance(law, Zero):
        return {"kind": "zero"}
    if isinstance(law, EdgeTarget):
        return {"kind": "edge", "nbar": law.nbar, "alpha": law.alpha,
                "beta": law.beta, "gamma": law.gamma}
    return {"kind": "general", "nbar": law.nbar, "alpha": law.alpha, "beta": law.beta}


def _meta_payload(stats: EnsembleStats) -> dict:
    cfg = stats.config
    return {
        "model": asdict(cfg.model),
        "law": _law_payload(cfg.law),
        "initial": [[[z.real, z.imag] for z in row] for row in cfg.initial],
        "sde": {
            "dt": cfg.sde.dt,
            "t_final": cfg.sde.t_final,
            "record_stride": cfg.sde.record_stride,
            "seed": cfg.sde.seed,
        },
        "n_traj": cfg.n_traj,
        "base_seed": cfg.base_seed,
        "workers": cfg.workers,
        "observables": sorted(cfg.observables),
        "threshold": cfg.threshold,
        "window_fraction": cfg.window_fraction,
        "effective_horizon": step_count(cfg.sde) * cfg.sde.dt,
        "frequencies": [float(f) for f in stats.frequencies],
        "undecided": stats.undecided,
        "slopes": [None if np.isnan(s) else float(s) for s in stats.slopes],
        "worst_min_eig": stats.worst_min_eig,
        "worst_herm_defect": stats.worst_herm_defect,
        "worst_trace_defect": stats.worst_trace_defect,
    }


def read_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    """Read an ensemble CSV back as (column names, data array)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.array(
            [[float(x) for x in line.strip().split(",")] for line in fh if line.strip()]
        )
    return header, data
