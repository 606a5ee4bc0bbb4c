"""Operator construction, state helpers, projection, and Bures metric."""

from __future__ import annotations

import numpy as np
import pytest

from spinstab import (
    ModelParams,
    ProjectionPolicy,
    bures_distance,
    bures_to_set,
    build_operators,
    eigenstate_set,
    expectation,
    hermitize,
    is_valid_state,
    project_to_state_space,
    pure_state,
    random_density,
    validate_state,
)

from conftest import wishart_state

RHO_MIX = np.diag([0.3, 0.4, 0.3]).astype(complex)
HALF = np.sqrt(2.0) / 2.0


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(levels=1)
    with pytest.raises(ValueError):
        ModelParams(levels=3, eta=0.0)
    with pytest.raises(ValueError):
        ModelParams(levels=3, eta=1.5)
    with pytest.raises(ValueError):
        ModelParams(levels=3, strength=0.0)
    with pytest.raises(ValueError):
        ModelParams(levels=3, omega=-0.1)
    assert ModelParams(levels=3).spin == 1.0
    assert ModelParams(levels=2).spin == 0.5


def test_operators_three_level(ops3):
    assert np.array_equal(ops3.weights, [1.0, 0.0, -1.0])
    assert np.array_equal(ops3.jz, np.diag([1.0, 0.0, -1.0]))
    np.testing.assert_allclose(ops3.c, [HALF, HALF], atol=1e-15)
    np.testing.assert_allclose(ops3.c_ext, [0.0, HALF, HALF, 0.0], atol=1e-15)
    jy_ref = np.array(
        [
            [0.0, -1j * HALF, 0.0],
            [1j * HALF, 0.0, -1j * HALF],
            [0.0, 1j * HALF, 0.0],
        ]
    )
    np.testing.assert_allclose(ops3.jy, jy_ref, atol=1e-15)
    assert not ops3.jz.flags.writeable
    assert not ops3.jy.flags.writeable


def test_operators_two_level(ops2):
    np.testing.assert_allclose(ops2.c, [0.5], atol=1e-15)
    jy_ref = np.array([[0.0, -0.5j], [0.5j, 0.0]])
    np.testing.assert_allclose(ops2.jy, jy_ref, atol=1e-15)
    assert np.array_equal(ops2.weights, [0.5, -0.5])


def test_commutation_relation(ops3):
    # [J_z, J_y] = -i J_x with J_x the real tridiagonal partner
    jx = np.abs(ops3.jy)
    comm = ops3.jz @ ops3.jy - ops3.jy @ ops3.jz
    np.testing.assert_allclose(comm, -1j * jx, atol=1e-15)


def test_pure_state_and_set():
    rho = pure_state(1, 3)
    assert rho[1, 1] == 1.0 and np.trace(rho) == 1.0
    with pytest.raises(ValueError):
        pure_state(3, 3)
    with pytest.raises(ValueError):
        pure_state(-1, 3)
    targets = eigenstate_set(3)
    assert len(targets) == 3
    for n, t in enumerate(targets):
        assert t[n, n] == 1.0
        np.testing.assert_allclose(t @ t, t, atol=1e-15)


def test_expectation_values(ops3):
    assert expectation(ops3.jz, RHO_MIX) == pytest.approx(0.0, abs=1e-15)
    assert expectation(ops3.jz @ ops3.jz, RHO_MIX) == pytest.approx(0.6)
    assert expectation(ops3.jz, pure_state(0, 3)) == pytest.approx(1.0)
    batch = np.stack([RHO_MIX, pure_state(0, 3)])
    np.testing.assert_allclose(expectation(ops3.jz, batch), [0.0, 1.0], atol=1e-15)


def test_hermitize():
    m = np.array([[1.0, 2.0 + 1j], [0.0, 3.0]])
    h = hermitize(m)
    np.testing.assert_allclose(h, h.conj().T, atol=1e-16)
    np.testing.assert_allclose(h[0, 1], 1.0 + 0.5j)


def test_state_validation(rng):
    assert is_valid_state(RHO_MIX)
    validate_state(RHO_MIX)
    for _ in range(20):
        validate_state(wishart_state(rng, 3))
    bad_trace = np.diag([0.6, 0.6, 0.0]).astype(complex)
    assert not is_valid_state(bad_trace)
    with pytest.raises(ValueError, match="trace"):
        validate_state(bad_trace)
    bad_herm = RHO_MIX.copy()
    bad_herm[0, 1] = 0.1
    with pytest.raises(ValueError, match="[Hh]ermitian"):
        validate_state(bad_herm)
    bad_psd = np.diag([1.1, -0.1, 0.0]).astype(complex)
    with pytest.raises(ValueError, match="eigenvalue"):
        validate_state(bad_psd)


def test_projection_policy_defaults():
    policy = ProjectionPolicy()
    assert policy.clip is True
    assert policy.drift_bound == pytest.approx(0.05)
    assert policy.tol_psd == pytest.approx(1e-8)


def test_projection_renormalizes():
    policy = ProjectionPolicy(drift_bound=1.0)
    out = project_to_state_space(np.diag([0.6, 0.6, 0.0]).astype(complex), policy)
    np.testing.assert_allclose(out, np.diag([0.5, 0.5, 0.0]), atol=1e-15)


def test_projection_clips_negative():
    policy = ProjectionPolicy(drift_bound=1.0)
    out = project_to_state_space(np.diag([1.01, -0.01, 0.0]).astype(complex), policy)
    np.testing.assert_allclose(out, np.diag([1.0, 0.0, 0.0]), atol=1e-12)
    assert np.linalg.eigvalsh(out)[0] >= 0.0


def test_projection_idempotent(rng):
    policy = ProjectionPolicy()
    for _ in range(10):
        rho = wishart_state(rng, 3)
        again = project_to_state_space(rho, policy)
        np.testing.assert_allclose(again, rho, atol=1e-12)


def test_projection_tolerates_tiny_negatives():
    # below tol_psd the cheap Gershgorin gate skips the eigendecomposition
    policy = ProjectionPolicy()
    rho = np.diag([1.0 + 1e-9, -1e-9, 0.0]).astype(complex)
    out = project_to_state_space(rho, policy)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-15)
    assert np.linalg.eigvalsh(out)[0] >= -policy.tol_psd


def test_projection_clip_disabled():
    policy = ProjectionPolicy(clip=False, drift_bound=1.0)
    rho = np.diag([1.05, -0.05, 0.0]).astype(complex)
    out = project_to_state_space(rho, policy)
    assert np.linalg.eigvalsh(out)[0] < 0.0  # negative part survives
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-15)


def test_projection_rejects_large_correction():
    policy = ProjectionPolicy(drift_bound=0.05)
    with pytest.raises(RuntimeError, match="drift bound"):
        project_to_state_space(np.diag([1.5, -0.5, 0.0]).astype(complex), policy)


def test_projection_rejects_nonpositive_trace():
    policy = ProjectionPolicy(drift_bound=np.inf)
    with pytest.raises(ValueError, match="trace"):
        project_to_state_space(np.diag([-1.0, -1.0, 0.0]).astype(complex), policy)


def test_projection_batched(rng):
    policy = ProjectionPolicy(drift_bound=1.0)
    batch = np.stack([wishart_state(rng, 3) for _ in range(5)])
    batch[2] = np.diag([1.01, -0.01, 0.0])
    out = project_to_state_space(batch, policy)
    assert out.shape == batch.shape
    for k in range(5):
        validate_state(out[k])


def test_bures_frozen_values():
    assert bures_distance(RHO_MIX, pure_state(1, 3)) == pytest.approx(
        np.sqrt(2.0 - 2.0 * np.sqrt(0.4)), abs=1e-12
    )
    assert bures_distance(pure_state(0, 3), pure_state(2, 3)) == pytest.approx(
        np.sqrt(2.0), abs=1e-12
    )
    assert bures_distance(
        np.diag([0.5, 0.5, 0.0]).astype(complex), pure_state(0, 3)
    ) == pytest.approx(np.sqrt(2.0 - 2.0 * np.sqrt(0.5)), abs=1e-12)
    assert bures_distance(RHO_MIX, RHO_MIX) == pytest.approx(0.0, abs=1e-7)


def test_bures_pure_path_matches_general(rng):
    # closed form against an in-test eigendecomposition fidelity
    for _ in range(100):
        rho = wishart_state(rng, 3)
        psi = rng.normal(size=3) + 1j * rng.normal(size=3)
        psi /= np.linalg.norm(psi)
        sigma = np.outer(psi, psi.conj())
        lam, vec = np.linalg.eigh(rho)
        s = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T
        inner = np.linalg.eigvalsh(s @ sigma @ s)
        fid_root = np.sum(np.sqrt(np.clip(inner, 0.0, None)))
        ref = np.sqrt(max(0.0, 2.0 - 2.0 * fid_root))
        # the eigh route carries sqrt(spurious eigenvalue) noise near 1e-8
        assert bures_distance(rho, sigma) == pytest.approx(ref, abs=1e-7)


def test_bures_symmetry_and_triangle(rng):
    for _ in range(20):
        a, b, c = (wishart_state(rng, 3) for _ in range(3))
        dab = bures_distance(a, b)
        assert dab == pytest.approx(bures_distance(b, a), abs=1e-9)
        assert dab <= bures_distance(a, c) + bures_distance(c, b) + 1e-9


def test_bures_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        bures_distance(RHO_MIX, pure_state(0, 2))


def test_bures_to_set():
    targets = eigenstate_set(3)
    assert bures_to_set(RHO_MIX, targets) == pytest.approx(
        np.sqrt(2.0 - 2.0 * np.sqrt(0.4)), abs=1e-12
    )
    assert bures_to_set(pure_state(2, 3), targets) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="empty"):
        bures_to_set(RHO_MIX, [])


def test_random_density_validity(rng):
    single = random_density(3, rng)
    validate_state(single)
    batch = random_density(3, rng, size=50)
    assert batch.shape == (50, 3, 3)
    for k in range(50):
        validate_state(batch[k])
    # same seed, same draw
    a = random_density(4, np.random.default_rng(7))
    b = random_density(4, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
