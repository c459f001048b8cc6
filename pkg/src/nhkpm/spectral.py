"""Physics-facing observables: local dynamical spin correlators in the
complex energy plane, their total and site-projected reductions, the total
density of states, entanglement entropy, and the Hermitian-limit structure
factor."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .eigensolver import EigenPair
from .kpm import (KpmPlan, chebyshev_moments, check_resolution,
                  evaluate_spectral_batch, hermitian_kpm_density, jackson_kernel)
from .maps import ProjectedProfile, SpectralMap
from .operators import spin_operator


class CoverageError(ValueError):
    """The requested reduction needs more grid coverage than the map has."""


def _site_count(H: sp.spmatrix) -> int:
    L = int(round(np.log2(H.shape[0])))
    if 2**L != H.shape[0]:
        raise ValueError(f"dimension {H.shape[0]} is not a spin-chain Hilbert space")
    return L


def _check_shift_matches(plan: KpmPlan, e_gs: complex):
    if abs(plan.scaling.shift - e_gs) > 1e-8 * max(1.0, abs(e_gs)):
        raise ValueError(
            f"plan shift {plan.scaling.shift:.8g} must equal the ground-state "
            f"energy {e_gs:.8g}; excitation energies are measured from it"
        )


def _excitation_pairs(gs: EigenPair, l: int, L: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(left, right) vector pairs of the two excitation channels on site l:
    raising on both ground vectors, then lowering on both."""
    s_plus = spin_operator(l, "plus", L)
    s_minus = spin_operator(l, "minus", L)
    return [
        (s_plus @ gs.left, s_plus @ gs.right),
        (s_minus @ gs.left, s_minus @ gs.right),
    ]


def _map_metadata(plan: KpmPlan, **extra) -> dict:
    md = {
        "order": plan.order,
        "delta": plan.scaling.delta,
        "shift": [plan.scaling.shift.real, plan.scaling.shift.imag],
        "width": plan.width,
    }
    md.update(extra)
    return md


def correlator_maps(H: sp.spmatrix, gs: EigenPair, sites: list[int],
                    re_axis: np.ndarray, im_axis: np.ndarray, plan: KpmPlan,
                    workers: int = 1) -> list[SpectralMap]:
    """Local dynamical spin correlators S(omega, l) for several sites in one
    batched evaluation.  Grid energies are relative to the ground state; the
    plan's shift must be the ground-state energy."""
    _check_shift_matches(plan, gs.value)
    L = _site_count(H)
    for l in sites:
        if not 1 <= l <= L:
            raise ValueError(f"site index {l} out of range 1..{L}")
    pairs = []
    for l in sites:
        pairs.extend(_excitation_pairs(gs, l, L))
    abs_re = np.asarray(re_axis, float) + gs.value.real
    abs_im = np.asarray(im_axis, float) + gs.value.imag
    channel_values = evaluate_spectral_batch(H, pairs, abs_re, abs_im, plan, workers)
    maps = []
    for k, l in enumerate(sites):
        values = channel_values[2 * k] + channel_values[2 * k + 1]
        maps.append(SpectralMap(
            re_omega_axis=np.asarray(re_axis, float),
            im_omega_axis=np.asarray(im_axis, float),
            values=values,
            metadata=_map_metadata(plan, site=l, e_gs=[gs.value.real, gs.value.imag]),
        ))
    return maps


def dynamical_spin_correlator(H: sp.spmatrix, gs: EigenPair, l: int,
                              re_axis: np.ndarray, im_axis: np.ndarray,
                              plan: KpmPlan, workers: int = 1) -> SpectralMap:
    """S(omega, l): both excitation channels of site l summed, on a grid of
    energies relative to the ground state."""
    return correlator_maps(H, gs, [l], re_axis, im_axis, plan, workers)[0]


def total_correlator(maps: list[SpectralMap]) -> SpectralMap:
    """Modulus of the site-summed correlator (the absolute value is taken
    after summation, so phases may cancel)."""
    if not maps:
        raise ValueError("no maps to sum")
    first = maps[0]
    for m in maps[1:]:
        if not first.same_grid(m):
            raise ValueError("maps do not share a common grid")
    total = np.sum([m.values for m in maps], axis=0)
    return SpectralMap(
        re_omega_axis=first.re_omega_axis,
        im_omega_axis=first.im_omega_axis,
        values=np.abs(total).astype(complex),
        metadata={**first.metadata, "site": None, "reduction": "abs_site_sum"},
    )


def projected_structure_factor(maps: list[SpectralMap], E_axis: np.ndarray | None = None,
                               im_extent: float | None = None) -> ProjectedProfile:
    """Site-resolved real-energy weights |integral of S(E + iy, l) dy| by
    trapezoid over each map's imaginary axis.

    The imaginary axis must cover the excitation spectrum's imaginary extent
    (pass im_extent when an oracle bound is known) plus a 3-width margin;
    otherwise the quadrature silently loses weight and an error is raised.
    """
    if not maps:
        raise ValueError("no maps to project")
    first = maps[0]
    width = first.metadata.get("width", 0.0)
    needed = (im_extent if im_extent is not None else 0.0) + 3.0 * width
    y = first.im_omega_axis
    if y[0] > -needed or y[-1] < needed:
        raise CoverageError(
            f"imaginary axis [{y[0]:.3g}, {y[-1]:.3g}] does not cover the "
            f"required extent +/-{needed:.3g}"
        )
    sites = []
    columns = []
    for m in maps:
        if not first.same_grid(m):
            raise ValueError("maps do not share a common grid")
        sites.append(m.metadata.get("site", len(sites) + 1))
        columns.append(np.abs(np.trapezoid(m.values, y, axis=1)))
    native = np.stack(columns, axis=1)
    if E_axis is None:
        E_axis = first.re_omega_axis
        values = native
    else:
        E_axis = np.asarray(E_axis, dtype=float)
        values = np.stack(
            [np.interp(E_axis, first.re_omega_axis, native[:, k]) for k in range(native.shape[1])],
            axis=1,
        )
    return ProjectedProfile(E_axis=E_axis, site_axis=np.asarray(sites, int), values=values)


def total_dos(H: sp.spmatrix, re_axis: np.ndarray, im_axis: np.ndarray, plan: KpmPlan,
              mode: str = "exact_trace", n_vectors: int = 16, seed: int = 11,
              workers: int = 1, resolution_check: bool | str = "auto") -> SpectralMap:
    """Total density of states sum_n delta^2(omega - E_n).

    exact_trace sums the diagonal over the full canonical basis; stochastic
    averages over seeded random-phase vectors and reports the sample
    variance in the metadata."""
    dim = H.shape[0]
    if mode == "exact_trace":
        if dim > 4096:
            raise ValueError(f"exact_trace limited to dim <= 4096, got {dim}")
        eye = np.eye(dim, dtype=complex)
        pairs = [(eye[:, j], eye[:, j]) for j in range(dim)]
        contributions = evaluate_spectral_batch(H, pairs, re_axis, im_axis, plan, workers)
        values = np.sum(contributions, axis=0)
        extra = {"mode": mode}
    elif mode == "stochastic":
        rng = np.random.default_rng(seed)
        pairs = []
        for _ in range(n_vectors):
            z = np.exp(2j * np.pi * rng.random(dim))
            pairs.append((z, z))
        contributions = np.array(evaluate_spectral_batch(H, pairs, re_axis, im_axis, plan, workers))
        values = contributions.mean(axis=0)
        var = np.mean(np.abs(contributions - values) ** 2, axis=0)
        extra = {
            "mode": mode,
            "n_vectors": n_vectors,
            "seed": seed,
            "variance_mean": float(var.mean()),
            "variance_max": float(var.max()),
        }
    else:
        raise ValueError(f"unknown DOS mode {mode!r}")

    metadata = _map_metadata(plan, **extra)
    run_check = resolution_check is True or (resolution_check == "auto" and dim <= 64)
    if run_check:
        metadata["resolution"] = check_resolution(H, re_axis, im_axis, plan)
    return SpectralMap(re_omega_axis=np.asarray(re_axis, float),
                       im_omega_axis=np.asarray(im_axis, float),
                       values=values, metadata=metadata)


def entanglement_entropy(state: np.ndarray, L: int, cut: int) -> float:
    """Bipartite entanglement entropy in bits across the bond after site
    `cut`, from the singular values of the state reshaped to the
    (sites 1..cut) x (sites cut+1..L) bipartition."""
    state = np.asarray(state).ravel()
    if state.size != 2**L:
        raise ValueError(f"state length {state.size} does not match L={L}")
    if not 1 <= cut < L:
        raise ValueError(f"cut must satisfy 1 <= cut < L, got {cut}")
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"state must be normalized, |norm - 1| = {abs(norm - 1.0):.3e}")
    # site 1 is the least significant bit: low bits index the left block
    M = state.reshape(2 ** (L - cut), 2**cut)
    lam = np.linalg.svd(M, compute_uv=False) ** 2
    lam = lam[lam > 1e-15]
    return float(-np.sum(lam * np.log2(lam)))


def hermitian_structure_factor(H0: sp.spmatrix, gs: EigenPair, l: int,
                               E_grid: np.ndarray, plan: KpmPlan) -> np.ndarray:
    """Local spin structure factor of a Hermitian chain via the single-
    variable KPM path: spectrum shifted so the ground state sits at zero and
    compressed by the plan's scale factor, Jackson-damped density evaluated
    on the physical excitation energies E_grid."""
    H0 = sp.csr_matrix(H0, dtype=complex)
    diff = H0 - H0.conjugate().T.tocsr()
    scale = max(np.abs(H0.data).max() if H0.nnz else 0.0, 1.0)
    if diff.nnz and np.abs(diff.data).max() > 1e-12 * scale:
        raise ValueError("hermitian_structure_factor requires a Hermitian operator")
    _check_shift_matches(plan, gs.value)
    L = _site_count(H0)
    dim = H0.shape[0]
    Hs = (H0 - plan.scaling.shift * sp.identity(dim, dtype=complex, format="csr")) / plan.scaling.delta
    Hs = Hs.tocsr()
    M = plan.order
    kernel = jackson_kernel(M)
    mu = np.zeros(M + 1, dtype=complex)
    for kind in ("plus", "minus"):
        v = spin_operator(l, kind, L) @ gs.right
        mu += chebyshev_moments(Hs, v, v, M)
    E_scaled = np.asarray(E_grid, dtype=float) / plan.scaling.delta
    rho = hermitian_kpm_density(mu, kernel, E_scaled) / plan.scaling.delta
    return rho.real
