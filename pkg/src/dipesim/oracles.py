"""Exact ground-truth quantities the protocols and tests compare against.

All functions are pure and operate on small dense matrices; eigen- and
singular-value decompositions use numpy's Hermitian solvers.  Imaginary
residues above 1e-10 on quantities that must be real raise instead of
being silently discarded.
"""

from __future__ import annotations

import numpy as np

from .linalg import (
    DensityMatrix,
    InvariantViolation,
    UnitaryMatrix,
    kron_all,
    n_qubits,
    permutation_operator,
    rotated_diag_probs,
    suffix_blocks,
    swap_operator,
    trace_out_suffix,
)

IMAG_TOL = 1e-10


def trace_product(a: np.ndarray, b: np.ndarray):
    """tr(A B) without forming the product matrix."""
    return np.einsum("ij,ji->", a, b)


def _real_checked(value: complex, what: str) -> float:
    if abs(value.imag) > IMAG_TOL:
        raise InvariantViolation(f"{what} has imaginary residue {value.imag:.3e}")
    return float(value.real)


def inner_product(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """tr(rho sigma); raises on dimension mismatch or imaginary residue."""
    if rho.dim != sigma.dim:
        raise InvariantViolation(f"dimension mismatch {rho.dim} vs {sigma.dim}")
    return _real_checked(trace_product(rho.mat, sigma.mat), "tr(rho sigma)")


def purity(rho: DensityMatrix) -> float:
    """tr(rho^2), computed as inner_product(rho, rho)."""
    return inner_product(rho, rho)


def partial_ip(rho: DensityMatrix, sigma: DensityMatrix, k: int) -> float:
    """f_k = tr(tr_{>k}(rho) tr_{>k}(sigma)) on the first k qubits."""
    if rho.dim != sigma.dim:
        raise InvariantViolation(f"dimension mismatch {rho.dim} vs {sigma.dim}")
    rk = trace_out_suffix(rho.mat, k)
    sk = trace_out_suffix(sigma.mat, k)
    return _real_checked(trace_product(rk, sk), "f_k")


def alg1_conditional_mean(rho: DensityMatrix, sigma: DensityMatrix, u: UnitaryMatrix) -> float:
    """E[collision indicator | U] = sum_b <b|U rho U^d|b><b|U sigma U^d|b>."""
    p = rotated_diag_probs(rho.mat, u.mat)
    q = rotated_diag_probs(sigma.mat, u.mat)
    return float(np.dot(p, q))


def alg2_conditional_mean(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    k: int,
    u: UnitaryMatrix,
    method: str = "blocks",
) -> float:
    """Exact conditional mean of the paired swap-collision value given U.

    Two algebraically equal routes are implemented and cross-checked by
    tests:

    * ``blocks``: sum over matching suffix outcomes of
      Pr[x] Pr[y] 1[x=y] tr(rho_x sigma_y) with normalised post states.
    * ``operator``: trace of the dense operator
      sum_b SWAP_prefix kron (U^dag|b><b|U)^{kron 2} against rho kron sigma,
      with registers ordered (A-prefix, A-suffix, B-prefix, B-suffix).
    """
    n = rho.qubits
    if not 0 <= k <= n:
        raise InvariantViolation(f"k={k} outside 0..{n}")
    if method == "blocks":
        pa, blocks_a = suffix_blocks(rho.mat, u.mat, k)
        pb, blocks_b = suffix_blocks(sigma.mat, u.mat, k)
        total = 0.0
        for x in range(pa.shape[0]):
            if pa[x] <= 0.0 or pb[x] <= 0.0:
                continue
            t = np.real(trace_product(blocks_a[x] / pa[x], blocks_b[x] / pb[x]))
            total += pa[x] * pb[x] * t
        return float(total)
    if method == "operator":
        ds = 1 << (n - k)
        swap_pre = swap_operator(k)
        op = np.zeros((1 << (2 * n), 1 << (2 * n)), dtype=np.complex128)
        for b in range(ds):
            row = u.mat[b]
            proj = np.outer(row.conj(), row)
            grouped = kron_all(swap_pre, proj, proj)
            op += _regroup_prefixes(grouped, n, k)
        joint = np.kron(rho.mat, sigma.mat)
        return _real_checked(trace_product(op, joint), "conditional mean")
    raise ValueError(f"unknown method {method!r}")


def _regroup_prefixes(grouped: np.ndarray, n: int, k: int) -> np.ndarray:
    """Reorder (A-pre, B-pre, A-suf, B-suf) into (A-pre, A-suf, B-pre, B-suf).

    Implemented as conjugation by the wire permutation on 2n qubits.
    """
    if k == 0 or k == n:
        return grouped
    # Wire w of the grouped layout holds: A-pre for w<=k, B-pre for
    # k<w<=2k, A-suf for 2k<w<=n+k, B-suf above.  Send it to its slot in
    # the natural layout (A-pre, A-suf, B-pre, B-suf).
    perm = [0] * (2 * n)
    for w in range(1, 2 * n + 1):
        if w <= k:
            target = w
        elif w <= 2 * k:
            target = n + (w - k)
        elif w <= n + k:
            target = k + (w - 2 * k)
        else:
            target = n + k + (w - n - k)
        perm[w - 1] = target
    p = permutation_operator(perm, 2 * n, 2)
    return p @ grouped @ p.conj().T


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Half the trace norm of rho - sigma (Hermitian spectral form)."""
    vals = np.linalg.eigvalsh(rho.mat - sigma.mat)
    return float(0.5 * np.sum(np.abs(vals)))


def hs_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Frobenius (Schatten-2) norm of rho - sigma."""
    return float(np.linalg.norm(rho.mat - sigma.mat))


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 via spectral square roots."""
    root = _sqrtm_psd(rho.mat)
    inner = root @ sigma.mat @ root
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    return float(np.sum(np.sqrt(vals)) ** 2)
