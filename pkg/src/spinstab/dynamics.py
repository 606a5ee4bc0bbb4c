"""Vector fields and feedback laws of the measured spin system.

The Ito drift F, diffusion G, Stratonovich drift, and the unnormalized
filtering fields are all cheap elementwise expressions in the J_z eigenbasis;
only the control commutator needs actual matrix products.  Every function
accepts batched states of shape ``(..., N, N)`` and scalar or batched u.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .spin import ModelParams, SpinOperators


@dataclass(frozen=True)
class Zero:
    """Open-loop evolution, u identically zero."""


@dataclass(frozen=True)
class EdgeTarget:
    """Feedback stabilizing an extreme eigenstate (nbar 0 or 2J).

    u = alpha (1 - Tr(rho target))^beta - gamma Tr(i[J_y, rho] target).
    """

    nbar: int
    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta <= 0.5:
            raise ValueError(f"beta must exceed 1/2, got {self.beta}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.nbar < 0:
            raise ValueError(f"target index must be nonnegative, got {self.nbar}")


@dataclass(frozen=True)
class GeneralTarget:
    """Feedback u = alpha P^beta stabilizing any eigenstate nbar."""

    nbar: int
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta <= 0.5:
            raise ValueError(f"beta must exceed 1/2, got {self.beta}")
        if self.nbar < 0:
            raise ValueError(f"target index must be nonnegative, got {self.nbar}")


FeedbackLaw = Union[Zero, EdgeTarget, GeneralTarget]


def validate_law(law: FeedbackLaw, levels: int) -> None:
    """Check target indices against the system dimension."""
    if isinstance(law, EdgeTarget) and law.nbar not in (0, levels - 1):
        raise ValueError(
            f"edge law requires target 0 or {levels - 1}, got {law.nbar}"
        )
    if isinstance(law, (EdgeTarget, GeneralTarget)) and law.nbar >= levels:
        raise ValueError(f"target {law.nbar} out of range for {levels} levels")


def signed_power(x, beta: float):
    """x^beta, extended continuously to negative bases.

    Integer beta keeps the plain power (even exponents stay unsigned, as in
    the simulated laws); non-integer beta uses sign(x)|x|^beta to stay real.
    """
    if float(beta).is_integer():
        return x ** beta
    return np.sign(x) * np.abs(x) ** beta


def _jz_expect(rho: np.ndarray, ops: SpinOperators):
    return np.einsum("i,...ii->...", ops.weights, rho).real


def p_bar(nbar: int, rho: np.ndarray, ops: SpinOperators):
    """Population imbalance J - nbar - Tr(J_z rho); zero exactly on P_nbar."""
    spin = ops.weights[0]
    return spin - nbar - _jz_expect(rho, ops)


def variance_jz(rho: np.ndarray, ops: SpinOperators):
    """Tr(J_z^2 rho) - Tr(J_z rho)^2; vanishes only on single-eigenvalue mixtures."""
    second = np.einsum("i,...ii->...", ops.weights**2, rho).real
    return second - _jz_expect(rho, ops) ** 2


def rotation_gain(nbar: int, rho: np.ndarray, ops: SpinOperators):
    """Tr(i[J_y, rho] target), the population outflow of level nbar per unit u.

    Closed form 2 c_{n+1} Re(rho_{n,n+1}) - 2 c_n Re(rho_{n,n-1}); boundary
    coefficients are zero.
    """
    levels = ops.weights.shape[0]
    val = 0.0
    if nbar + 1 < levels:
        val = val + 2.0 * ops.c_ext[nbar + 1] * rho[..., nbar, nbar + 1].real
    if nbar - 1 >= 0:
        val = val - 2.0 * ops.c_ext[nbar] * rho[..., nbar, nbar - 1].real
    return val


def feedback_value(law: FeedbackLaw, rho: np.ndarray, ops: SpinOperators):
    """Evaluate the control u(rho) for the given law."""
    if isinstance(law, Zero):
        return np.zeros(rho.shape[:-2]) if rho.ndim > 2 else 0.0
    validate_law(law, ops.weights.shape[0])
    if isinstance(law, EdgeTarget):
        pop = rho[..., law.nbar, law.nbar].real
        # Rounding can push the population a hair past one; the base of the
        # fractional power must not go negative.
        miss = np.clip(1.0 - pop, 0.0, None)
        val = law.alpha * miss**law.beta - law.gamma * rotation_gain(
            law.nbar, rho, ops
        )
    else:
        val = law.alpha * signed_power(p_bar(law.nbar, rho, ops), law.beta)
    return float(val) if np.ndim(val) == 0 else val


def _control_term(rho: np.ndarray, u, ops: SpinOperators) -> np.ndarray:
    comm = ops.jy @ rho - rho @ ops.jy
    if np.ndim(u) == 0:
        return -1j * u * comm
    return -1j * np.asarray(u)[..., None, None] * comm


def drift_ito(
    rho: np.ndarray, u, params: ModelParams, ops: SpinOperators
) -> np.ndarray:
    """Ito drift F(rho) = -iw[J_z,rho] + M(J_z rho J_z - {J_z^2, rho}/2) - iu[J_y,rho]."""
    w = ops.weights
    delta = w[:, None] - w[None, :]
    mask = -1j * params.omega * delta - 0.5 * params.strength * delta**2
    out = mask * rho
    if np.ndim(u) != 0 or u != 0.0:
        out = out + _control_term(rho, u, ops)
    return out


def diffusion(rho: np.ndarray, params: ModelParams, ops: SpinOperators) -> np.ndarray:
    """Diffusion G(rho) = sqrt(M)(J_z rho + rho J_z - 2 Tr(J_z rho) rho)."""
    w = ops.weights
    anti = w[:, None] + w[None, :]
    a = _jz_expect(rho, ops)
    return np.sqrt(params.strength) * (anti * rho - 2.0 * a[..., None, None] * rho)


def drift_stratonovich(
    rho: np.ndarray, u, params: ModelParams, ops: SpinOperators
) -> np.ndarray:
    """Stratonovich drift; equals F minus half the diffusion's self-correction."""
    w = ops.weights
    eta, strength = params.eta, params.strength
    delta = w[:, None] - w[None, :]
    mask = -1j * params.omega * delta + strength * (
        (1.0 - eta) * w[:, None] * w[None, :]
        - 0.5 * (1.0 + eta) * (w[:, None] ** 2 + w[None, :] ** 2)
    )
    second = np.einsum("i,...ii->...", w**2, rho).real
    a = _jz_expect(rho, ops)
    out = (
        mask * rho
        + 2.0 * eta * strength * second[..., None, None] * rho
        + 2.0
        * eta
        * strength
        * a[..., None, None]
        * ((w[:, None] + w[None, :]) * rho - 2.0 * a[..., None, None] * rho)
    )
    if np.ndim(u) != 0 or u != 0.0:
        out = out + _control_term(rho, u, ops)
    return out


def zakai_fields(
    rho_tilde: np.ndarray, u, params: ModelParams, ops: SpinOperators
) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized filtering fields (F(rho~), G~(rho~)).

    G~(rho~) = sqrt(M)(J_z rho~ + rho~ J_z) has no trace subtraction, which is
    what makes the equation linear; the integrator supplies the sqrt(eta)
    factor on the observation increment.
    """
    w = ops.weights
    gt = np.sqrt(params.strength) * ((w[:, None] + w[None, :]) * rho_tilde)
    return drift_ito(rho_tilde, u, params, ops), gt


def normalize(rho_tilde: np.ndarray) -> np.ndarray:
    """Divide by the trace; the filtering state it represents."""
    tr = np.einsum("...ii->...", rho_tilde).real
    if np.any(tr <= 0.0):
        raise ValueError("unnormalized state has non-positive trace")
    return rho_tilde / tr[..., None, None]


def delta_bar(
    nbar: int, rho: np.ndarray, u, params: ModelParams, ops: SpinOperators
):
    """Drift of the target population along the deterministic control flow.

    Audit-only quantity; the stochastic integrator never evaluates it.
    """
    eta, strength = params.eta, params.strength
    spin = ops.weights[0]
    pop = rho[..., nbar, nbar].real
    second = np.einsum("i,...ii->...", ops.weights**2, rho).real
    a = _jz_expect(rho, ops)
    p = spin - nbar - a
    return (
        2.0 * eta * strength * (second - (spin - nbar) ** 2) * pop
        - u * rotation_gain(nbar, rho, ops)
        + 4.0 * eta * strength * p * a * pop
    )


def sample_plateau(
    nbar: int,
    levels: int,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Random states on the plateau where the distance-to-target drive is zero.

    Draws full-support random states, then shifts diagonal mass convexly
    toward one extreme projector until Tr(J_z rho) equals the target weight.
    Mixing with a diagonal projector preserves positivity and only ever adds
    population, so the result keeps every diagonal of the seed state alive.
    """
    from .spin import pure_state, random_density

    if not 0 <= nbar < levels:
        raise ValueError(f"target index {nbar} out of range for {levels} levels")
    n = 1 if size is None else size
    spin = 0.5 * (levels - 1)
    weights = spin - np.arange(levels)
    goal = weights[nbar]
    rho = random_density(levels, rng, size=n)
    a = np.einsum("i,nii->n", weights, rho).real
    out = np.empty_like(rho)
    top = pure_state(0, levels)
    bottom = pure_state(levels - 1, levels)
    for i in range(n):
        if a[i] > goal:
            # drain excess weight by mixing toward the lowest-weight projector
            s = (a[i] - goal) / (a[i] + spin)
            out[i] = (1.0 - s) * rho[i] + s * bottom
        else:
            s = (goal - a[i]) / (spin - a[i]) if a[i] < goal else 0.0
            out[i] = (1.0 - s) * rho[i] + s * top
    return out[0] if size is None else out
