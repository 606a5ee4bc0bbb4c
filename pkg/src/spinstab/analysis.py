"""Lyapunov machinery, convergence diagnostics, and condition audits.

The closed-form infinitesimal generators here are consequences of the Ito
rule applied to functions of the diagonal populations; a Monte Carlo Dynkin
estimator is provided as an independent check on every closed form.  The
audit walks the hypotheses the stabilization guarantees rest on (passage
condition, nondegeneracy, linear control bound, the sandwich inequalities,
and the local generator ratio) over sampled regions of the state space and
reports violations with worst-case margins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spin import (
    ModelParams,
    ProjectionPolicy,
    SpinOperators,
    bures_distance,
    pure_state,
    random_density,
)
from .dynamics import (
    EdgeTarget,
    FeedbackLaw,
    GeneralTarget,
    Zero,
    diffusion,
    drift_ito,
    feedback_value,
    p_bar,
    rotation_gain,
    sample_plateau,
    validate_law,
    variance_jz,
)
from .integrate import TrajectoryRecord

__all__ = [
    "ExponentEstimate",
    "ConditionCheck",
    "ConditionReport",
    "lyapunov_qsr",
    "lyapunov_edge",
    "lyapunov_general",
    "generator_qsr",
    "generator_edge",
    "generator_general",
    "qsr_bound_constants",
    "dynkin_estimate",
    "qsr_generator_bound_check",
    "bures_from_population",
    "estimate_exponent",
    "classify_convergence",
    "sample_near_target",
    "audit_conditions",
]

# Populations below this are treated as numerically extinct when they appear
# under square roots in denominators or inside logs.
POPULATION_FLOOR = 1e-12


def lyapunov_qsr(rho: np.ndarray) -> float | np.ndarray:
    """Half the sum of sqrt(rho_nn rho_mm) over distinct diagonal pairs.

    Vanishes exactly on the reduction set (all population on one level) and
    is computed via the square-of-sums identity to stay O(N).
    """
    diag = np.einsum("...ii->...i", rho).real
    root = np.sqrt(np.clip(diag, 0.0, None)).sum(axis=-1)
    val = 0.5 * (root**2 - 1.0)
    return float(val) if np.ndim(val) == 0 else val


def lyapunov_edge(nbar: int, rho: np.ndarray) -> float | np.ndarray:
    """sqrt(1 - target population); only meaningful for extreme targets."""
    pop = rho[..., nbar, nbar].real
    val = np.sqrt(np.clip(1.0 - pop, 0.0, None))
    return float(val) if np.ndim(val) == 0 else val


def lyapunov_general(nbar: int, rho: np.ndarray) -> float | np.ndarray:
    """Sum of sqrt(rho_kk) over all non-target levels."""
    diag = np.einsum("...ii->...i", rho).real
    mask = np.ones(diag.shape[-1], dtype=bool)
    mask[nbar] = False
    val = np.sqrt(np.clip(diag[..., mask], 0.0, None)).sum(axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def generator_qsr(
    rho: np.ndarray, params: ModelParams
) -> float | np.ndarray:
    """Exact generator of the pairwise-root function under open-loop dynamics.

    Each pair sqrt(rho_nn rho_mm) decays at rate (n-m)^2 eta M / 2, so the
    generator is a weighted version of the function itself.
    """
    diag = np.einsum("...ii->...i", rho).real
    n = diag.shape[-1]
    idx = np.arange(n)
    gap2 = (idx[:, None] - idx[None, :]) ** 2
    root = np.sqrt(np.clip(diag, 0.0, None))
    cross = np.einsum("...i,...j,ij->...", root, root, gap2)
    val = -0.25 * params.eta * params.strength * cross
    return float(val) if np.ndim(val) == 0 else val


def generator_edge(
    nbar: int,
    rho: np.ndarray,
    law: EdgeTarget,
    params: ModelParams,
    ops: SpinOperators,
) -> float | np.ndarray:
    """Closed-form generator of the edge Lyapunov function under the edge law."""
    pop = rho[..., nbar, nbar].real
    v = np.sqrt(np.clip(1.0 - pop, 0.0, None))
    if np.any(v == 0.0):
        raise ValueError("generator undefined at the target state")
    u = feedback_value(law, rho, ops)
    gain = rotation_gain(nbar, rho, ops)
    p = p_bar(nbar, rho, ops)
    em = params.eta * params.strength
    val = 0.5 * u * gain / v - 0.5 * em * p**2 * pop**2 / v**3
    return float(val) if np.ndim(val) == 0 else val


def generator_general(
    nbar: int,
    rho: np.ndarray,
    law: GeneralTarget,
    params: ModelParams,
    ops: SpinOperators,
) -> float | np.ndarray:
    """Closed-form generator of the off-target-root sum under the global law.

    Requires an interior state: the first sum divides by sqrt(rho_kk).
    """
    diag = np.einsum("...ii->...i", rho).real
    if np.any(diag <= 0.0):
        raise ValueError("generator requires strictly positive diagonals")
    levels = diag.shape[-1]
    u = feedback_value(law, rho, ops)
    em = params.eta * params.strength
    a = np.einsum("i,...ii->...", ops.weights, rho).real
    total = 0.0
    for k in range(levels):
        if k == nbar:
            continue
        root = np.sqrt(diag[..., k])
        p_k = ops.weights[k] - a
        total = total + (
            -0.5 * u * rotation_gain(k, rho, ops) / root
            - 0.5 * em * p_k**2 * root
        )
    return float(total) if np.ndim(total) == 0 else total


def qsr_bound_constants(params: ModelParams) -> tuple[float, float]:
    """Constants squeezing the pairwise-root function between Bures distances."""
    spin = params.spin
    return 0.5, spin * (2.0 * spin + 1.0)


def dynkin_estimate(
    vfun,
    rho: np.ndarray,
    law: FeedbackLaw,
    params: ModelParams,
    ops: SpinOperators,
    *,
    delta: float = 1e-4,
    n_samples: int = 100_000,
    seed: int = 0,
) -> tuple[float, float]:
    """One-step Monte Carlo estimate of the generator of ``vfun`` at ``rho``.

    Returns (estimate, standard error).  Antithetic noise pairs cancel the
    O(sqrt(delta)) fluctuation of the estimator, leaving O(delta) bias plus
    the genuine second-order term; the standard error is computed from pair
    means, so it is honest for the paired estimator.
    """
    from .spin import project_to_state_space

    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    u = feedback_value(law, rho, ops)
    base = rho + drift_ito(rho, u, params, ops) * delta
    kick = np.sqrt(params.eta) * diffusion(rho, params, ops)
    dw = rng.normal(0.0, np.sqrt(delta), size=n_samples)
    policy = ProjectionPolicy(drift_bound=np.inf)
    plus = project_to_state_space(base[None] + dw[:, None, None] * kick[None], policy)
    minus = project_to_state_space(base[None] - dw[:, None, None] * kick[None], policy)
    v0 = vfun(rho)
    pair = 0.5 * (vfun(plus) + vfun(minus)) - v0
    est = float(pair.mean() / delta)
    se = float(pair.std(ddof=1) / np.sqrt(n_samples) / delta)
    return est, se


def qsr_generator_bound_check(
    rho: np.ndarray,
    params: ModelParams,
    ops: SpinOperators,
    *,
    delta: float = 1e-4,
    n_samples: int = 100_000,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Monte Carlo generator of the pairwise-root function vs its decay bound.

    Returns (lhs, rhs, se): the Dynkin estimate at u = 0, the bound
    -(eta M / 2) V, and the estimate's standard error.  The contract is
    lhs <= rhs up to statistical tolerance.
    """
    lhs, se = dynkin_estimate(
        lyapunov_qsr, rho, Zero(), params, ops,
        delta=delta, n_samples=n_samples, seed=seed,
    )
    rhs = -0.5 * params.eta * params.strength * lyapunov_qsr(rho)
    return lhs, float(rhs), se


@dataclass(frozen=True)
class ExponentEstimate:
    """Trailing-window fit of log distance against time."""

    slope: float
    intercept: float
    window: tuple[float, float]
    r_squared: float

    def __post_init__(self) -> None:
        lo, hi = self.window
        if not lo < hi:
            raise ValueError(f"empty fit window [{lo}, {hi}]")
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError(f"r_squared out of range: {self.r_squared}")


def bures_from_population(pop) -> np.ndarray:
    """Bures distance to a pure diagonal target given its population.

    Exact for any state, coherences included: fidelity to a rank-one target
    is the matrix element itself.
    """
    return np.sqrt(np.clip(2.0 - 2.0 * np.sqrt(np.clip(pop, 0.0, 1.0)), 0.0, None))


def estimate_exponent(
    record: TrajectoryRecord,
    target: int | None,
    window_fraction: float = 0.5,
) -> ExponentEstimate:
    """Least-squares slope of log Bures distance over the trailing window.

    ``target`` is a level index, or None for the distance to the whole
    reduction set (which only sharpens the nearest-level distance).  The fit
    runs from ``window_fraction`` of the horizon to the last sample before
    numerical collapse below the population floor.
    """
    if not 0.0 < window_fraction < 1.0:
        raise ValueError(f"window fraction must be in (0,1), got {window_fraction}")
    if target is None:
        pop = record.diag.max(axis=-1)
    else:
        pop = record.diag[:, target]
    d = bures_from_population(pop)
    times = record.times
    alive = d > POPULATION_FLOOR
    if not alive.all():
        last = int(np.argmin(alive))  # first collapsed sample
    else:
        last = len(times)
    t_start = window_fraction * times[-1]
    sel = (times >= t_start) & (np.arange(len(times)) < last)
    if sel.sum() < 2:
        t_collapse = times[last] if last < len(times) else times[-1]
        raise ValueError(
            f"no fit window: trajectory collapsed to the target by t={t_collapse:.6g}"
        )
    x = times[sel]
    y = np.log(d[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return ExponentEstimate(
        slope=float(slope),
        intercept=float(intercept),
        window=(float(x[0]), float(x[-1])),
        r_squared=min(r2, 1.0),
    )


def classify_convergence(record: TrajectoryRecord, threshold: float = 0.99):
    """Level index the trajectory settled on, or None if undecided.

    The rule looks only at the final sample; a threshold above 1/2 makes the
    winner unique.
    """
    if not 0.5 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0.5, 1), got {threshold}")
    final = record.final_diag
    n = int(np.argmax(final))
    return n if final[n] > threshold else None


@dataclass(frozen=True)
class ConditionCheck:
    """Outcome of one audited hypothesis."""

    condition: str
    samples: int
    violations: int
    worst_margin: float
    vacuous: bool = False

    def __post_init__(self) -> None:
        if self.violations > self.samples:
            raise ValueError("more violations than samples")


@dataclass(frozen=True)
class ConditionReport:
    """All audited hypotheses for one feedback law."""

    law: FeedbackLaw
    checks: tuple[ConditionCheck, ...]

    @property
    def total_violations(self) -> int:
        return sum(c.violations for c in self.checks)

    @property
    def passed(self) -> bool:
        return self.total_violations == 0


def sample_near_target(
    nbar: int,
    lam: float,
    levels: int,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Random states with target population in (lam, 1).

    Mixes a full-support random state with the target projector so that the
    target population lands uniformly in the shell; all other diagonals stay
    strictly positive, which the general-law generator requires.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"shell parameter must be in (0,1), got {lam}")
    out = np.empty((size, levels, levels), dtype=complex)
    target = pure_state(nbar, levels)
    count = 0
    while count < size:
        sigma = random_density(levels, rng, size=size)
        goal = rng.uniform(lam, 1.0, size=size)
        for i in range(size):
            base = sigma[i, nbar, nbar].real
            if base >= goal[i]:
                continue
            s = (goal[i] - base) / (1.0 - base)
            out[count] = (1.0 - s) * sigma[i] + s * target
            count += 1
            if count == size:
                break
    return out


def _law_lyapunov(law: FeedbackLaw):
    if isinstance(law, EdgeTarget):
        return lambda rho: lyapunov_edge(law.nbar, rho)
    return lambda rho: lyapunov_general(law.nbar, rho)


def _sandwich_factors(law: FeedbackLaw, levels: int) -> tuple[float, float]:
    if isinstance(law, EdgeTarget):
        return np.sqrt(2.0) / 2.0, 1.0
    return np.sqrt(2.0) / 2.0, np.sqrt(float(levels - 1))


def _shell_constant(
    law: FeedbackLaw, lam: float, params: ModelParams, ops: SpinOperators
) -> float:
    """Decay constant of the local generator bound on the population shell."""
    em = params.eta * params.strength
    if isinstance(law, EdgeTarget):
        edge_c = ops.c_ext[1] if law.nbar == 0 else ops.c_ext[params.levels - 1]
        return 0.5 * em * lam**2 - law.alpha * edge_c * (1.0 - lam) ** (
            0.5 * (law.beta - 1.0)
        )
    # largest level gap to the target, max(nbar, 2J - nbar)
    span = max(law.nbar, (params.levels - 1) - law.nbar)
    gamma_sum = float(sum(ops.c_ext[k] + ops.c_ext[k + 1]
                          for k in range(params.levels) if k != law.nbar))
    return 0.5 * em * (1.0 - span * (1.0 - lam)) ** 2 - (
        law.alpha * gamma_sum * span**law.beta * (1.0 - lam) ** (law.beta - 0.5)
    )


def _control_cap(law: FeedbackLaw, lam: float, ops: SpinOperators, levels: int) -> float:
    """Constant in the linear control bound u <= cap * V on the shell."""
    if isinstance(law, EdgeTarget):
        edge_c = ops.c_ext[law.nbar] + ops.c_ext[law.nbar + 1]
        return law.alpha + 2.0 * law.gamma * edge_c
    span = max(law.nbar, (levels - 1) - law.nbar)
    return law.alpha * span**law.beta * (1.0 - lam) ** (law.beta - 0.5)


def audit_conditions(
    law: FeedbackLaw,
    params: ModelParams,
    ops: SpinOperators,
    n_samples: int = 10_000,
    seed: int = 0,
    *,
    lam: float = 0.9,
    exclusion_radius: float = 0.01,
    nondeg_margin: float = 1e-8,
) -> ConditionReport:
    """Sampled audit of the hypotheses behind the convergence guarantees.

    Five checks: strict positivity of the passage drift on the zero-drive
    plateau, nondegeneracy of the diffusion coupling at control zeros, the
    linear control bound, the Lyapunov/Bures sandwich, and the generator
    ratio on the population shell near the target.  Inequalities are audited
    with a small floating-point slack; ``worst_margin`` is the minimum slack
    seen, negative on violation.
    """
    if isinstance(law, Zero):
        raise ValueError("audit applies to stabilizing laws only")
    validate_law(law, params.levels)
    levels = params.levels
    nbar = law.nbar
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    target = pure_state(nbar, levels)
    em = params.eta * params.strength
    slack = 1e-12
    checks = []

    # Passage condition on the plateau where the drive vanishes.  For edge
    # targets the plateau is the target alone, so there is nothing to sample.
    if isinstance(law, EdgeTarget):
        checks.append(ConditionCheck("C1_passage", 0, 0, np.inf, vacuous=True))
        plateau = None
    else:
        plateau = _sample_plateau_excluding(
            nbar, levels, rng, n_samples, target, exclusion_radius
        )
        u = feedback_value(law, plateau, ops)
        gain = rotation_gain(nbar, plateau, ops)
        lhs = 2.0 * em * variance_jz(plateau, ops) * plateau[:, nbar, nbar].real
        margin = lhs - u * gain
        checks.append(
            ConditionCheck(
                "C1_passage",
                len(plateau),
                int((margin <= 0.0).sum()),
                float(margin.min()),
            )
        )

    # Nondegeneracy where the drive vanishes away from the target: the
    # diagonal diffusion couples to the drive through twice the root of the
    # measurement strength times the population variance.
    zeros = _sample_control_zeros(law, params, ops, rng, n_samples, target,
                                  exclusion_radius, plateau)
    if zeros is None or len(zeros) == 0:
        checks.append(ConditionCheck("C2_nondeg", 0, 0, np.inf, vacuous=True))
    else:
        coupling = 2.0 * np.sqrt(params.strength) * variance_jz(zeros, ops)
        margin = np.abs(coupling) - nondeg_margin
        checks.append(
            ConditionCheck(
                "C2_nondeg",
                len(zeros),
                int((margin <= 0.0).sum()),
                float(margin.min()),
            )
        )

    # Linear control bound and generator ratio, both on the shell.
    shell = sample_near_target(nbar, lam, levels, rng, n_samples)
    vfun = _law_lyapunov(law)
    v = vfun(shell)
    u = feedback_value(law, shell, ops)
    cap = _control_cap(law, lam, ops, levels)
    margin = cap * v - u + slack
    checks.append(
        ConditionCheck(
            "C3_bound", n_samples, int((margin < 0.0).sum()), float(margin.min())
        )
    )

    lo_f, hi_f = _sandwich_factors(law, levels)
    sandwich = random_density(levels, rng, size=n_samples)
    v_s = vfun(sandwich)
    d_s = np.array([bures_distance(s, target) for s in sandwich])
    margin = np.minimum(v_s - lo_f * d_s, hi_f * d_s - v_s) + slack
    checks.append(
        ConditionCheck(
            "thm_i_bounds", n_samples, int((margin < 0.0).sum()), float(margin.min())
        )
    )

    const = _shell_constant(law, lam, params, ops)
    if isinstance(law, EdgeTarget):
        gen = generator_edge(nbar, shell, law, params, ops)
    else:
        gen = generator_general(nbar, shell, law, params, ops)
    margin = -const * v - gen + slack
    checks.append(
        ConditionCheck(
            "thm_ii_ratio", n_samples, int((margin < 0.0).sum()), float(margin.min())
        )
    )
    return ConditionReport(law=law, checks=tuple(checks))


def _sample_plateau_excluding(
    nbar, levels, rng, n_samples, target, radius
) -> np.ndarray:
    kept = []
    need = n_samples
    while need > 0:
        batch = sample_plateau(nbar, levels, rng, size=need)
        far = np.array([bures_distance(r, target) > radius for r in batch])
        kept.append(batch[far])
        need = n_samples - sum(len(k) for k in kept)
    return np.concatenate(kept)[:n_samples]


def _sample_control_zeros(
    law, params, ops, rng, n_samples, target, radius, plateau
):
    """States where the drive vanishes but the target is not reached.

    For the global law these are exactly the plateau states.  For the edge
    law, zeros occur where the alignment term balances the distance term;
    they are found by scaling the coherences of random states until the two
    terms match, rejecting draws for which no admissible scaling exists.
    """
    if isinstance(law, GeneralTarget):
        return plateau
    levels = params.levels
    nbar = law.nbar
    if law.gamma == 0.0:
        # pure distance drive never vanishes away from the target
        return None
    found = []
    attempts = 0
    while len(found) < n_samples and attempts < 50:
        attempts += 1
        batch = random_density(levels, rng, size=n_samples)
        gain = rotation_gain(nbar, batch, ops)
        pop = batch[:, nbar, nbar].real
        needed = law.alpha * (1.0 - pop) ** law.beta / law.gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = needed / gain
        ok = (gain > 0.0) & (scale > 0.0) & (scale <= 1.0)
        for i in np.nonzero(ok)[0]:
            mixed = _scale_coherences(batch[i], float(scale[i]))
            if bures_distance(mixed, target) > radius:
                found.append(mixed)
                if len(found) == n_samples:
                    break
    return np.array(found) if found else None


def _scale_coherences(rho: np.ndarray, s: float) -> np.ndarray:
    out = np.diag(np.diag(rho)).astype(complex)
    return out + s * (rho - out)
