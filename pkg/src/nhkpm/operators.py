"""Sparse operator builders: spin chains, their fermion form, Hatano-Nelson,
Hermitrization and spectral rescaling.

Basis convention for the 2^L spin Hilbert space: basis states are enumerated
by the binary representation of the basis index, site 1 is the least
significant bit, and a set bit means spin up.  Sites are 1-based; the
staggered-field rule (h_l = -hz exactly when l mod 4 in {2, 3}) is applied to
the 1-based index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DROP_TOL = 1e-14

# single-site blocks, index 0 = down, index 1 = up
_SZ = np.array([[-0.5, 0.0], [0.0, 0.5]], dtype=complex)
_SP = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
_SM = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
_SX = 0.5 * (_SP + _SM)
_SY = -0.5j * (_SP - _SM)
_BLOCKS = {"x": _SX, "y": _SY, "z": _SZ, "plus": _SP, "minus": _SM}


@dataclass(frozen=True)
class SpinChainParams:
    """Couplings of the asymmetric-exchange spin-1/2 chain with a staggered
    imaginary field."""

    L: int
    J: float = 1.0
    gamma: float = 0.0
    Jz: float = 0.0
    hz: float = 0.0
    bc: str = "open"

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise ValueError(f"L must be an integer >= 1, got {self.L!r}")
        for name in ("J", "gamma", "Jz", "hz"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        if self.bc not in ("open", "periodic"):
            raise ValueError(f"bc must be 'open' or 'periodic', got {self.bc!r}")


@dataclass(frozen=True)
class ScalingRecord:
    """Shift-and-scale transform H -> (H - shift)/delta and its inverse."""

    delta: float
    shift: complex = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta!r}")

    def to_physical(self, scaled: complex) -> complex:
        return scaled * self.delta + self.shift

    def to_scaled(self, physical: complex) -> complex:
        return (physical - self.shift) / self.delta


def finalize(m: sp.spmatrix) -> sp.csr_matrix:
    """Canonical CSR form: duplicates summed, entries below DROP_TOL removed,
    indices sorted."""
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.data[np.abs(m.data) < DROP_TOL] = 0.0
    m.eliminate_zeros()
    m.sort_indices()
    return m


def spin_operator(l: int, kind: str, L: int) -> sp.csr_matrix:
    """Spin-1/2 operator of the given kind on site l of an L-site chain,
    identity on all other sites."""
    if not 1 <= l <= L:
        raise ValueError(f"site index {l} out of range 1..{L}")
    if kind not in _BLOCKS:
        raise ValueError(f"unknown operator kind {kind!r}")
    op = sp.csr_matrix(_BLOCKS[kind])
    left = sp.identity(2 ** (L - l), dtype=complex, format="csr")
    right = sp.identity(2 ** (l - 1), dtype=complex, format="csr")
    return finalize(sp.kron(sp.kron(left, op, format="csr"), right, format="csr"))


def staggered_field(l: int, hz: float) -> float:
    """Field on 1-based site l: -hz on sites with l mod 4 in {2, 3}, else 0."""
    return -hz if l % 4 in (2, 3) else 0.0


def _chain_bonds(p: SpinChainParams) -> list[tuple[int, int]]:
    bonds = [(l, l + 1) for l in range(1, p.L)]
    if p.bc == "periodic" and p.L > 1:
        bonds.append((p.L, 1))
    return bonds


def build_spin_chain(p: SpinChainParams) -> sp.csr_matrix:
    """Asymmetric-exchange XXZ chain with staggered imaginary field,

        H = sum_l [ (J+g)/2 S+_l S-_{l+1} + (J-g)/2 S-_l S+_{l+1}
                    + Jz Sz_l Sz_{l+1} ] + sum_l i h_l Sz_l,

    non-Hermitian whenever gamma or hz is nonzero.  Under periodic bc the
    (L, 1) bond keeps the bulk forward/backward orientation.
    """
    dim = 2**p.L
    H = sp.csr_matrix((dim, dim), dtype=complex)
    for l, m in _chain_bonds(p):
        H = H + 0.5 * (p.J + p.gamma) * (spin_operator(l, "plus", p.L) @ spin_operator(m, "minus", p.L))
        H = H + 0.5 * (p.J - p.gamma) * (spin_operator(l, "minus", p.L) @ spin_operator(m, "plus", p.L))
        H = H + p.Jz * (spin_operator(l, "z", p.L) @ spin_operator(m, "z", p.L))
    for l in range(1, p.L + 1):
        h = staggered_field(l, p.hz)
        if h != 0.0:
            H = H + 1j * h * spin_operator(l, "z", p.L)
    return finalize(H)


def _fermion_parity(state: int, l: int) -> int:
    """(-1)^(number of occupied sites strictly below 1-based site l)."""
    mask = (1 << (l - 1)) - 1
    return -1 if bin(state & mask).count("1") % 2 else 1


def _hop_entries(l_to: int, l_from: int, amp: complex, L: int, rows, cols, vals):
    """Accumulate amp * c^dag_{l_to} c_{l_from} in the occupation basis with
    Jordan-Wigner string signs (string = product of -2Sz_j for j < l)."""
    bit_from = 1 << (l_from - 1)
    bit_to = 1 << (l_to - 1)
    for state in range(2**L):
        if not state & bit_from:
            continue
        mid = state ^ bit_from
        sign = _fermion_parity(state, l_from)
        if mid & bit_to:
            continue
        new = mid | bit_to
        sign *= _fermion_parity(mid, l_to)
        rows.append(new)
        cols.append(state)
        vals.append(amp * sign)


def build_fermion_chain(p: SpinChainParams) -> sp.csr_matrix:
    """Jordan-Wigner image of the spin chain: spinless fermions with
    asymmetric hopping (J+g)/2 forward, (J-g)/2 backward, density-density
    interaction Jz (n_l - 1/2)(n_{l+1} - 1/2) and field i h_l (n_l - 1/2).

    Open chains only; the string convention c_l = (prod_{j<l} -2Sz_j) S-_l
    makes the matrix agree with the spin chain in the shared basis.
    """
    if p.bc != "open":
        raise ValueError("fermion chain is defined for open boundary conditions only")
    dim = 2**p.L
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for l in range(1, p.L):
        _hop_entries(l, l + 1, 0.5 * (p.J + p.gamma), p.L, rows, cols, vals)
        _hop_entries(l + 1, l, 0.5 * (p.J - p.gamma), p.L, rows, cols, vals)
    # diagonal: interaction and staggered imaginary field on occupations
    diag = np.zeros(dim, dtype=complex)
    for state in range(dim):
        for l in range(1, p.L):
            n_l = (state >> (l - 1)) & 1
            n_m = (state >> l) & 1
            diag[state] += p.Jz * (n_l - 0.5) * (n_m - 0.5)
        for l in range(1, p.L + 1):
            h = staggered_field(l, p.hz)
            if h != 0.0:
                n_l = (state >> (l - 1)) & 1
                diag[state] += 1j * h * (n_l - 0.5)
    H = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)
    H = H + sp.diags(diag, format="csr")
    return finalize(H)


def build_hatano_nelson(L: int, t: float, gamma: float, bc: str = "open") -> sp.csr_matrix:
    """Single-particle Hatano-Nelson chain: hopping t+gamma to the right
    (upper diagonal), t-gamma to the left (lower diagonal).  Periodic bc adds
    the matching corner entries."""
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    if bc not in ("open", "periodic"):
        raise ValueError(f"bc must be 'open' or 'periodic', got {bc!r}")
    fwd = (t + gamma) * np.ones(L - 1, dtype=complex)
    bwd = (t - gamma) * np.ones(L - 1, dtype=complex)
    H = sp.diags([fwd, bwd], offsets=[1, -1], format="lil", dtype=complex)
    if bc == "periodic":
        H[L - 1, 0] = t + gamma
        H[0, L - 1] = t - gamma
    return finalize(H)


def hermitrize(H: sp.spmatrix, omega: complex) -> sp.csr_matrix:
    """Hermitian block embedding of omega - H:

        [[0, omega - H], [conj(omega) - H^dag, 0]]

    Exactly Hermitian for every H and omega; singular iff omega is an
    eigenvalue of H."""
    n, m = H.shape
    if n != m:
        raise ValueError(f"H must be square, got shape {H.shape}")
    upper = omega * sp.identity(n, dtype=complex, format="csr") - sp.csr_matrix(H, dtype=complex)
    lower = upper.conjugate().T.tocsr()
    return finalize(sp.bmat([[None, upper], [lower, None]], format="csr"))


def similarity_transform_params(p: SpinChainParams) -> SpinChainParams:
    """Parameters of the gauge-equivalent symmetric chain: the asymmetry is
    removed and the exchange becomes J' = sqrt((J+g)(J-g)); spectra of the
    two open chains coincide."""
    if p.bc != "open":
        raise ValueError("similarity transformation applies to open chains only")
    if not abs(p.gamma) < p.J:
        raise ValueError(f"requires |gamma| < J, got gamma={p.gamma}, J={p.J}")
    J_prime = float(np.sqrt((p.J + p.gamma) * (p.J - p.gamma)))
    return SpinChainParams(L=p.L, J=J_prime, gamma=0.0, Jz=p.Jz, hz=p.hz, bc=p.bc)


def rescale(H: sp.spmatrix, delta: float, shift: complex = 0.0) -> tuple[sp.csr_matrix, ScalingRecord]:
    """(H - shift*I)/delta together with the record needed to undo it."""
    record = ScalingRecord(delta=float(delta), shift=complex(shift))
    n = H.shape[0]
    scaled = (sp.csr_matrix(H, dtype=complex) - shift * sp.identity(n, dtype=complex, format="csr")) / delta
    return finalize(scaled), record


def estimate_scale_factor(H: sp.spmatrix, omega_max: float) -> float:
    """Scale factor guaranteeing the Hermitrized spectrum of (H, omega) fits
    in (-1, 1) for every |omega| <= omega_max.

    Uses the max row-sum norm of the Hermitrized block structure (the larger
    of the row-sum norms of H and H^dag) plus omega_max, with a 10% margin.
    Always an upper bound on the largest singular value of omega - H.
    """
    A = sp.csr_matrix(H)
    absA = abs(A)
    row = absA.sum(axis=1).max() if A.nnz else 0.0
    col = absA.sum(axis=0).max() if A.nnz else 0.0
    return 1.1 * (float(max(row, col)) + float(omega_max))
