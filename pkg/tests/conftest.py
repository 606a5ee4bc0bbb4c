"""Shared fixtures.

``wishart_state`` is intentionally a different construction from
``spinstab.random_density`` (complex Wishart normalized by its trace
versus Dirichlet eigenvalues under a Haar rotation) so tests that
exercise the library sampler have an independent source of states.
"""

from __future__ import annotations

import numpy as np
import pytest

from spinstab import ModelParams, build_operators


def wishart_state(rng: np.random.Generator, levels: int) -> np.ndarray:
    a = rng.normal(size=(levels, levels)) + 1j * rng.normal(size=(levels, levels))
    w = a @ a.conj().T
    w = 0.5 * (w + w.conj().T)
    return w / np.trace(w).real


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def params3() -> ModelParams:
    return ModelParams(levels=3, omega=0.0, eta=0.3, strength=1.0)


@pytest.fixture(scope="session")
def ops3(params3):
    return build_operators(params3)


@pytest.fixture(scope="session")
def params2() -> ModelParams:
    return ModelParams(levels=2, omega=0.0, eta=0.5, strength=1.0)


@pytest.fixture(scope="session")
def ops2(params2):
    return build_operators(params2)
