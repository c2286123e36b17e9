import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


def dft_matrix(n: int) -> np.ndarray:
    """Orthonormal DFT matrix, the dense oracle for the FFT-based paths."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
