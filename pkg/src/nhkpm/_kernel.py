"""Compiled inner loop for the complex-energy recursion.

The batch is organized as (grid node) x (vector pair): all pairs at one node
share the Hamiltonian row gathers, which is what makes the evaluation of
many sites/channels on a common grid cheap.  Every (node, pair) cell is
computed independently, so results are bitwise reproducible for any thread
count or batch composition.  Falls back to the scipy implementation in
kpm.py when numba is unavailable.
"""

from __future__ import annotations

import os

import numpy as np

# the default TBB layer emits a version warning on this platform; the
# workqueue layer behaves identically for our per-column parallelism
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True, nogil=True, parallel=True)
    def _four_vector_batch(indptr, indices, data, indptr_t, indices_t, data_t,
                           lefts_conj, rights, omegas, coeff, blowup_factor,
                           out, status):
        """coeff[m] = (-1)^(m+1) g_{2m-1}, m = 1..N; out[j, p] collects the
        odd overlap sum for node j and pair p; status[j, p] = first
        blown-up degree or 0.

        The two-term updates are done in place: after the even step a_prev
        holds alpha_{2m} (gathers read a_odd only, the self-term is read
        before it is overwritten), after the odd step a_odd holds
        alpha_{2m+1}, and likewise for the psi pair, which needs alpha_{2m}
        (already in a_prev) as its source term.
        """
        n_nodes = omegas.shape[0]
        npair, dim = rights.shape
        N = coeff.shape[0] - 1
        for j in prange(n_nodes):
            w = omegas[j]
            wc = np.conj(w)
            a_prev = np.empty((dim, npair), dtype=np.complex128)   # alpha_0
            a_odd = np.empty((dim, npair), dtype=np.complex128)    # alpha_1
            p_prev = np.zeros((dim, npair), dtype=np.complex128)   # psi_0
            p_odd = np.empty((dim, npair), dtype=np.complex128)    # psi_1
            for i in range(dim):
                for p in range(npair):
                    a_prev[i, p] = rights[p, i]
                    p_odd[i, p] = rights[p, i]
            for i in range(dim):                                   # alpha_1 = B alpha_0
                for p in range(npair):
                    a_odd[i, p] = wc * a_prev[i, p]
                for k in range(indptr_t[i], indptr_t[i + 1]):
                    h = data_t[k]
                    c = indices_t[k]
                    for p in range(npair):
                        a_odd[i, p] -= h * a_prev[c, p]

            norm0 = np.zeros(npair)
            for i in range(dim):
                for p in range(npair):
                    norm0[p] += a_prev[i, p].real**2 + a_prev[i, p].imag**2
            for p in range(npair):
                norm0[p] = max(np.sqrt(norm0[p]), 1e-300)

            total = np.zeros(npair, dtype=np.complex128)
            for i in range(dim):
                for p in range(npair):
                    total[p] += coeff[1] * lefts_conj[p, i] * p_odd[i, p]

            for m in range(1, N):
                # even step (multiplies by a = w - H): a_prev <- alpha_{2m},
                # p_prev <- psi_{2m}
                for i in range(dim):
                    for p in range(npair):
                        a_prev[i, p] = 2.0 * w * a_odd[i, p] - a_prev[i, p]
                        p_prev[i, p] = 2.0 * w * p_odd[i, p] - p_prev[i, p]
                    for k in range(indptr[i], indptr[i + 1]):
                        h2 = 2.0 * data[k]
                        c = indices[k]
                        for p in range(npair):
                            a_prev[i, p] -= h2 * a_odd[c, p]
                            p_prev[i, p] -= h2 * p_odd[c, p]
                # odd step (multiplies by b = conj(w) - H^dag): a_odd <-
                # alpha_{2m+1}, p_odd <- psi_{2m+1}
                for i in range(dim):
                    for p in range(npair):
                        a_odd[i, p] = 2.0 * wc * a_prev[i, p] - a_odd[i, p]
                        p_odd[i, p] = 2.0 * wc * p_prev[i, p] + 2.0 * a_prev[i, p] - p_odd[i, p]
                    for k in range(indptr_t[i], indptr_t[i + 1]):
                        h2 = 2.0 * data_t[k]
                        c = indices_t[k]
                        for p in range(npair):
                            a_odd[i, p] -= h2 * a_prev[c, p]
                            p_odd[i, p] -= h2 * p_prev[c, p]
                cm = coeff[m + 1]
                for i in range(dim):
                    for p in range(npair):
                        total[p] += cm * lefts_conj[p, i] * p_odd[i, p]

                if m % 32 == 0:
                    for p in range(npair):
                        if status[j, p] == 0:
                            norm = 0.0
                            for i in range(dim):
                                norm += a_odd[i, p].real**2 + a_odd[i, p].imag**2
                            if np.sqrt(norm) > blowup_factor * norm0[p]:
                                status[j, p] = 2 * m + 1
            for p in range(npair):
                out[j, p] = total[p]
