"""Shared helpers for the test suite."""

import numpy as np
import pytest


def rand_psd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """Random symmetric positive semidefinite matrix."""
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T)


def rand_pd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    """Random symmetric positive definite matrix, eigenvalues >= floor."""
    return rand_psd(rng, n) + floor * np.eye(n)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-300)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
