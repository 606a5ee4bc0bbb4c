"""Angular momentum operators, density matrix validity, and the Bures metric.

Dense complex linear algebra for N-level systems.  Everything here is a pure
function of small matrices; batched inputs with leading dimensions are
supported wherever it is cheap to do so (shape ``(..., N, N)``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TOL_HERM",
    "TOL_TRACE",
    "TOL_PSD",
    "ModelParams",
    "SpinOperators",
    "ProjectionPolicy",
    "build_operators",
    "pure_state",
    "eigenstate_set",
    "random_density",
    "expectation",
    "bures_distance",
    "bures_to_set",
    "hermitize",
    "is_valid_state",
    "validate_state",
    "project_to_state_space",
]

# An order above double-precision accumulation over ~1e5 integration steps.
TOL_HERM = 1e-9
TOL_TRACE = 1e-9
TOL_PSD = 1e-8


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the measured angular momentum system.

    Attributes
    ----------
    levels : int
        Dimension N of the Hilbert space, N >= 2.
    omega : float
        Angular frequency of the free Hamiltonian term (1/time), >= 0.
    eta : float
        Detector efficiency, in (0, 1].
    strength : float
        Measurement strength M (1/time), > 0.
    """

    levels: int
    omega: float = 0.0
    eta: float = 1.0
    strength: float = 1.0

    def __post_init__(self) -> None:
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.strength <= 0.0:
            raise ValueError(f"strength must be positive, got {self.strength}")
        if self.omega < 0.0:
            raise ValueError(f"omega must be nonnegative, got {self.omega}")

    @property
    def spin(self) -> float:
        """Total spin J = (N - 1) / 2."""
        return (self.levels - 1) / 2.0


@dataclass(frozen=True)
class SpinOperators:
    """Matrix representations of J_z and J_y plus the ladder coefficients.

    Attributes
    ----------
    jz : ndarray
        N x N real diagonal matrix with entries J, J-1, ..., -J.
    jy : ndarray
        N x N complex Hermitian tridiagonal matrix.
    c : ndarray
        The 2J ladder coefficients, ``c[m-1]`` holding c_m = (1/2)sqrt((2J+1-m)m).
    weights : ndarray
        Diagonal of jz as a length-N vector, for elementwise fast paths.
    c_ext : ndarray
        Length N+1 view of the coefficients indexed by physical subscript,
        with c_0 = c_N = 0 so boundary terms vanish without branching.
    """

    jz: np.ndarray
    jy: np.ndarray
    c: np.ndarray
    weights: np.ndarray
    c_ext: np.ndarray


def build_operators(params: ModelParams) -> SpinOperators:
    """Construct the angular momentum operators for ``params.levels`` levels.

    Returns
    -------
    SpinOperators
        Immutable container with jz, jy, and the ladder coefficients.
    """
    n = params.levels
    j = params.spin
    weights = j - np.arange(n, dtype=float)
    jz = np.diag(weights)
    m = np.arange(1, n, dtype=float)
    c = 0.5 * np.sqrt((2.0 * j + 1.0 - m) * m)
    jy = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        jy[k - 1, k] = -1j * c[k - 1]
        jy[k, k - 1] = 1j * c[k - 1]
    c_ext = np.concatenate(([0.0], c, [0.0]))
    for arr in (jz, jy, c, weights, c_ext):
        arr.setflags(write=False)
    return SpinOperators(jz=jz, jy=jy, c=c, weights=weights, c_ext=c_ext)


def pure_state(nbar: int, levels: int) -> np.ndarray:
    """Return the pure target state e_nbar e_nbar* as an N x N matrix."""
    if not 0 <= nbar < levels:
        raise ValueError(f"target index {nbar} out of range for {levels} levels")
    rho = np.zeros((levels, levels), dtype=complex)
    rho[nbar, nbar] = 1.0
    return rho


def eigenstate_set(levels: int) -> list[np.ndarray]:
    """All measurement eigenstates, the reduction target set."""
    return [pure_state(n, levels) for n in range(levels)]


def random_density(
    levels: int, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Full-support random states: flat-simplex spectrum in a random basis.

    Eigenvalues come from the uniform distribution on the probability simplex
    and are conjugated by the unitary factor of a complex Ginibre matrix.  No
    physical ensemble is implied; this is a sampler with full support on the
    state space for property tests and audits.
    """
    n = 1 if size is None else size
    lam = rng.dirichlet(np.ones(levels), size=n)
    ginibre = rng.normal(size=(n, levels, levels)) + 1j * rng.normal(
        size=(n, levels, levels)
    )
    q, r = np.linalg.qr(ginibre)
    # fix the QR phase ambiguity so the unitary is Haar distributed
    phase = np.einsum("nii->ni", r)
    q = q * (phase / np.abs(phase))[:, None, :]
    rho = hermitize(np.einsum("nik,nk,njk->nij", q, lam, np.conj(q)))
    return rho[0] if size is None else rho


def hermitize(m: np.ndarray) -> np.ndarray:
    """Symmetrize to the nearest Hermitian matrix, (m + m*)/2."""
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def expectation(operator: np.ndarray, rho: np.ndarray) -> float | np.ndarray:
    """Tr(A rho) for a Hermitian operator A; real part returned.

    ``rho`` may carry leading batch dimensions.
    """
    if operator.shape[-1] != rho.shape[-1]:
        raise ValueError(
            f"dimension mismatch: operator {operator.shape} vs state {rho.shape}"
        )
    val = np.einsum("ij,...ji->...", operator, rho)
    out = np.real(val)
    return float(out) if out.ndim == 0 else out


def _min_eigenvalue(rho: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(hermitize(rho))))


def is_valid_state(
    rho: np.ndarray,
    tol_herm: float = TOL_HERM,
    tol_trace: float = TOL_TRACE,
    tol_psd: float = TOL_PSD,
) -> bool:
    """Check the density matrix invariants within the given tolerances."""
    if rho.shape[-1] != rho.shape[-2]:
        return False
    if np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))) > tol_herm:
        return False
    if abs(np.einsum("...ii->...", rho).real - 1.0) > tol_trace:
        return False
    return _min_eigenvalue(rho) >= -tol_psd


def validate_state(
    rho: np.ndarray,
    tol_herm: float = TOL_HERM,
    tol_trace: float = TOL_TRACE,
    tol_psd: float = TOL_PSD,
) -> None:
    """Raise ValueError with the violated invariant if ``rho`` is not a state."""
    herm = float(np.max(np.abs(rho - np.conj(np.swapaxes(rho, -1, -2)))))
    if herm > tol_herm:
        raise ValueError(f"not Hermitian: max asymmetry {herm:.3e}")
    tr = complex(np.trace(rho)).real
    if abs(tr - 1.0) > tol_trace:
        raise ValueError(f"trace {tr!r} differs from 1 beyond tolerance")
    lo = _min_eigenvalue(rho)
    if lo < -tol_psd:
        raise ValueError(f"not positive semidefinite: min eigenvalue {lo:.3e}")


@dataclass(frozen=True)
class ProjectionPolicy:
    """How raw integrator iterates get pushed back onto the state space.

    ``clip`` enables eigenvalue clipping at zero; disable it when probing
    boundary behavior, where clipping would mask genuine rank deficiency.
    ``drift_bound`` is the largest Frobenius correction the projection will
    accept before declaring the integration unstable.
    """

    clip: bool = True
    drift_bound: float = 0.05
    tol_psd: float = TOL_PSD


def project_to_state_space(m: np.ndarray, policy: ProjectionPolicy) -> np.ndarray:
    """Hermitize, optionally clip negative eigenvalues, renormalize the trace.

    Parameters
    ----------
    m : ndarray
        Raw iterate of shape ``(..., N, N)``, expected to lie within
        ``policy.drift_bound`` of the state space.

    Returns
    -------
    ndarray
        Valid density matrix (batch) of the same shape.

    Raises
    ------
    ValueError
        If the trace is not positive after clipping.
    RuntimeError
        If the applied correction exceeds ``policy.drift_bound``.
    """
    out = hermitize(m)
    if policy.clip:
        # Gershgorin gives a cheap lower eigenvalue bound; only matrices that
        # might actually violate PSD pay for an eigendecomposition.
        diag = np.einsum("...ii->...i", out).real
        radius = np.sum(np.abs(out), axis=-1) - np.abs(diag)
        suspect = np.min(diag - radius, axis=-1) < -policy.tol_psd
        if np.any(suspect):
            sub = out[suspect] if out.ndim > 2 else out[None]
            lam, vec = np.linalg.eigh(sub)
            bad = lam[:, 0] < -policy.tol_psd
            if np.any(bad):
                lam = np.clip(lam, 0.0, None)
                rebuilt = np.einsum(
                    "bij,bj,bkj->bik", vec[bad], lam[bad], np.conj(vec[bad])
                )
                sub[bad] = rebuilt
            if out.ndim > 2:
                out[suspect] = sub
            else:
                out = sub[0]
    tr = np.einsum("...ii->...", out).real
    if np.any(tr <= 0.0):
        raise ValueError("state trace not positive after clipping")
    out = out / tr[..., None, None]
    drift = np.sqrt(np.sum(np.abs(m - out) ** 2, axis=(-2, -1)))
    worst = float(np.max(drift))
    if worst > policy.drift_bound:
        raise RuntimeError(
            f"projection correction {worst:.3e} exceeds drift bound "
            f"{policy.drift_bound:.3e}; the integration step is too large"
        )
    return out


def _sqrt_psd(rho: np.ndarray, tol_psd: float) -> np.ndarray:
    lam, vec = np.linalg.eigh(rho)
    if lam[0] < -tol_psd:
        raise ValueError(f"matrix square root undefined: min eigenvalue {lam[0]:.3e}")
    lam = np.clip(lam, 0.0, None)
    return (vec * np.sqrt(lam)) @ np.conj(vec.T)


def bures_distance(
    rho_a: np.ndarray, rho_b: np.ndarray, tol_psd: float = TOL_PSD
) -> float:
    """Bures distance sqrt(2 - 2 sqrt(F)) with F the fidelity.

    When ``rho_b`` is pure the closed form sqrt(2 - 2 sqrt(Tr(rho_a rho_b)))
    is used; the general case goes through eigendecomposition square roots.
    """
    if rho_a.shape != rho_b.shape:
        raise ValueError(f"shape mismatch: {rho_a.shape} vs {rho_b.shape}")
    lam_b, vec_b = np.linalg.eigh(hermitize(rho_b))
    if lam_b[0] < -tol_psd:
        raise ValueError(f"second state not PSD: min eigenvalue {lam_b[0]:.3e}")
    if lam_b[-1] >= 1.0 - 1e-12:
        # Rank one: fidelity reduces to the overlap with the top eigenvector.
        psi = vec_b[:, -1]
        overlap = float(np.real(np.conj(psi) @ rho_a @ psi))
        return float(np.sqrt(max(0.0, 2.0 - 2.0 * np.sqrt(max(0.0, overlap)))))
    s = _sqrt_psd(hermitize(rho_a), tol_psd)
    inner = np.linalg.eigvalsh(hermitize(s @ rho_b @ s))
    fid_root = float(np.sum(np.sqrt(np.clip(inner, 0.0, None))))
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * fid_root)))


def bures_to_set(rho: np.ndarray, targets: list[np.ndarray]) -> float:
    """Distance to a set of states: minimum over the members."""
    if not targets:
        raise ValueError("target set is empty")
    return min(bures_distance(rho, t) for t in targets)
