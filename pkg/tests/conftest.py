"""Shared fixtures and independent numerical oracles for the test suite."""

import numpy as np
import pytest

from pavelab import algebra as alg
from pavelab import families


def power_iteration_norm(mat: np.ndarray, iters: int = 800, seed: int = 0) -> float:
    """Independent operator-norm estimate: power iteration on mat* mat."""
    rng = np.random.default_rng(seed)
    d = mat.shape[1]
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    v /= np.linalg.norm(v)
    gram = mat.conj().T @ mat
    lam = 0.0
    for _ in range(iters):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = nw
    return float(np.sqrt(lam))


def op_norm_power(x: alg.Element) -> float:
    return max(power_iteration_norm(b) if b.size else 0.0 for b in x.blocks)


def partial_trace_right(mat: np.ndarray, k: int, d: int) -> np.ndarray:
    """(id ⊗ Tr/d) on M_k ⊗ M_d in row-major tensor coordinates."""
    return np.einsum("iaja->ij", mat.reshape(k, d, k, d)) / d


def partial_trace_left(mat: np.ndarray, k: int, d: int) -> np.ndarray:
    """(Tr/k ⊗ id) on M_k ⊗ M_d."""
    return np.einsum("iaib->ab", mat.reshape(k, d, k, d)) / k


@pytest.fixture(scope="session")
def corpus():
    """The acceptance corpus: builtin inclusions with exactly known index."""
    return [families.scalars_in(2), families.scalars_in(3),
            families.scalars_in(4), families.tensor_product(2, 2),
            families.tensor_product(2, 3)]
