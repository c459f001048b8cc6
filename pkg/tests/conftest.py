import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

import nhkpm as nk


def spmax(m):
    """Largest absolute entry of a sparse matrix (0 for an empty one)."""
    return abs(m).max() if m.nnz else 0.0


def match_spectra(a, b):
    """Maximum pairing distance between two eigenvalue multisets."""
    a = np.asarray(a)
    b = np.asarray(b)
    assert a.shape == b.shape
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return cost[rows, cols].max()


def dense_values(H):
    return np.linalg.eigvals(np.asarray(H.todense()))


@pytest.fixture(scope="session")
def xxz_l2():
    p = nk.SpinChainParams(L=2, J=1.0, gamma=0.0, Jz=0.5, hz=0.0, bc="open")
    return nk.build_spin_chain(p)


@pytest.fixture(scope="session")
def hermitian_l8():
    p = nk.SpinChainParams(L=8, J=1.0, gamma=0.0, Jz=0.5, hz=0.0, bc="open")
    return nk.build_spin_chain(p)


@pytest.fixture(scope="session")
def nh_l8_hz2():
    p = nk.SpinChainParams(L=8, J=1.0, gamma=0.0, Jz=0.5, hz=2.0, bc="open")
    return nk.build_spin_chain(p)
