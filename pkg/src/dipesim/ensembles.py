"""Seeded samplers for the random-state families the simulator exercises.

All samplers are pure functions of (parameters, generator); identical
generator state yields bit-identical output.  Gaussian inputs come from
:func:`dipesim.rng.complex_normals` (Box-Muller), never from numpy's own
normal sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import DensityMatrix, InvariantViolation, UnitaryMatrix, dim_cap
from .rng import complex_normals


@dataclass(frozen=True)
class InducedStateParams:
    """Random induced state: trace an ancilla of dimension ``ancilla_dim``
    out of a Haar-random pure state on ``2**n * ancilla_dim`` dimensions.

    The accuracy parameter is represented as 1/ancilla_dim with an integer
    ancilla dimension; nothing in the construction needs 1/epsilon to be a
    power of two, so any ancilla_dim >= 1 is accepted and epsilon-indexed
    formulas use 1/ancilla_dim.
    """

    n: int
    ancilla_dim: int

    def __post_init__(self):
        if self.n < 0 or self.ancilla_dim < 1:
            raise InvariantViolation("need n >= 0 and ancilla_dim >= 1")
        if self.total_dim > dim_cap():
            raise InvariantViolation(f"total dimension {self.total_dim} exceeds cap {dim_cap()}")

    @property
    def system_dim(self) -> int:
        return 1 << self.n

    @property
    def total_dim(self) -> int:
        return self.system_dim * self.ancilla_dim

    @property
    def epsilon(self) -> float:
        return 1.0 / self.ancilla_dim


@dataclass(frozen=True)
class MixtureParams:
    """Uniform convex mixture of r independent Haar-random pure states."""

    d: int
    r: int

    def __post_init__(self):
        if self.d < 1 or self.r < 1:
            raise InvariantViolation("need d >= 1 and r >= 1")


def ginibre(d: int, rng: np.random.Generator) -> np.ndarray:
    """d x d matrix of iid standard complex normals."""
    return complex_normals(rng, d * d).reshape(d, d)


def _qr_q_and_rdiag(mats: np.ndarray) -> tuple:
    """Q factor and diag(R) of a (stack of) square complex matrices.

    Uses the LAPACK-backed gufuncs directly when available, skipping the
    upper-triangular copy of R that np.linalg.qr performs (only the
    diagonal is needed here); falls back to np.linalg.qr otherwise.
    Both routes produce bit-identical results.
    """
    try:
        from numpy.linalg import _umath_linalg

        work = mats.astype(np.complex128, copy=True)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore", under="ignore"):
            tau = _umath_linalg.qr_r_raw(work, signature="D->D")
            diag = np.diagonal(work, axis1=-2, axis2=-1).copy()
            q = _umath_linalg.qr_reduced(work, tau, signature="DD->D")
        return q, diag
    except (ImportError, AttributeError, TypeError):
        q, r = np.linalg.qr(mats)
        return q, np.diagonal(r, axis1=-2, axis2=-1)


def qr_phase_fix(mats: np.ndarray) -> np.ndarray:
    """QR with the R-diagonal phase correction, applied slice-wise.

    Each slice becomes Q * diag(r/|r|) with r the diagonal of its R
    factor, which makes QR of a Ginibre slice Haar-distributed.
    """
    q, diag = _qr_q_and_rdiag(np.asarray(mats, dtype=np.complex128))
    return q * (diag / np.abs(diag))[..., None, :]


def haar_unitary(d: int, rng: np.random.Generator) -> UnitaryMatrix:
    """Haar-distributed d x d unitary (Ginibre QR with phase correction)."""
    return UnitaryMatrix(qr_phase_fix(ginibre(d, rng)), validate=False)


def haar_state_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    """Normalised Gaussian vector, Haar-distributed on the unit sphere."""
    v = complex_normals(rng, d)
    return v / np.linalg.norm(v)


def haar_state_vectors(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent Haar state vectors, one per row."""
    g = complex_normals(rng, count * d).reshape(count, d)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def haar_state(d: int, rng: np.random.Generator) -> DensityMatrix:
    """Haar-random pure state as a density matrix."""
    return DensityMatrix.pure(haar_state_vector(d, rng))


def induced_state(params: InducedStateParams, rng: np.random.Generator) -> DensityMatrix:
    """Reduced state of a Haar vector after tracing out the ancilla.

    The Haar vector on system x ancilla is reshaped to a system-by-ancilla
    matrix G (ancilla indices least significant), giving G G^dag / |G|^2.
    Rank is at most min(system_dim, ancilla_dim).
    """
    g = complex_normals(rng, params.total_dim).reshape(params.system_dim, params.ancilla_dim)
    w = g @ g.conj().T
    return DensityMatrix(w / np.real(w.trace()))


def convex_mixture(params: MixtureParams, rng: np.random.Generator) -> DensityMatrix:
    """Average of r Haar pure states; rank at most r."""
    vecs = haar_state_vectors(params.d, params.r, rng)
    mix = np.einsum("ri,rj->ij", vecs, vecs.conj()) / params.r
    return DensityMatrix(mix)


def conjugated(rho: DensityMatrix, rng: np.random.Generator) -> DensityMatrix:
    """U rho U^dag for a Haar-random U; spectrum is preserved."""
    u = haar_unitary(rho.dim, rng).mat
    return DensityMatrix(u @ rho.mat @ u.conj().T)


LEMMA41_MAX_EPS = 1.0 / 36.0


def lemma41_pair(eps: float) -> tuple:
    """Diagonal qubit pair whose purities differ by exactly 2*eps.

    rho0 = diag(1/3, 2/3); rho1 shifts the weights by
    delta = 1/6 - sqrt(1/36 - eps).  Requires 0 <= eps <= 1/36.
    """
    if not 0.0 <= eps <= LEMMA41_MAX_EPS:
        raise InvariantViolation(f"eps={eps} outside [0, 1/36]")
    delta = 1.0 / 6.0 - math.sqrt(1.0 / 36.0 - eps)
    rho0 = DensityMatrix.diagonal([1.0 / 3.0, 2.0 / 3.0])
    rho1 = DensityMatrix.diagonal([1.0 / 3.0 + delta, 2.0 / 3.0 - delta])
    gap = np.real((rho0.mat @ rho0.mat).trace() - (rho1.mat @ rho1.mat).trace())
    if abs(gap - 2.0 * eps) > 1e-12:
        raise InvariantViolation(f"purity gap {gap} deviates from 2*eps")
    return rho0, rho1
