"""Dense complex linear algebra over multi-qubit registers.

Conventions used throughout the package:

* Qubits are numbered from 1 and qubit 1 is the most significant bit of
  the basis index, so an n-qubit basis state |i_1 ... i_n> has index
  sum_j i_j * 2**(n-j).
* A register splits as prefix (qubits 1..k) and suffix (qubits k+1..n);
  basis index = prefix * 2**(n-k) + suffix.
* Operators are dense row-major complex128 arrays; no sparse formats
  (targeted dimensions stay at or below the configured cap).

Measurement sampling uses inverse-CDF draws; any residual probability
mass left by rounding goes to the final outcome, which keeps sampling
deterministic with bias below the renormalisation tolerance.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
UNITARY_TOL = 1e-10
PSD_TOL = 1e-9
PROB_SUM_TOL = 1e-9
MIN_OUTCOME_PROB = 1e-14

DEFAULT_DIM_CAP = 4096


class InvariantViolation(ValueError):
    """A constructed object or sampled value broke a numeric invariant."""


class DimCapExceeded(ValueError):
    """An operator would exceed the configured dimension cap."""


def dim_cap() -> int:
    """Operator dimension cap; DIPESIM_DIM_CAP overrides the default."""
    raw = os.environ.get("DIPESIM_DIM_CAP")
    return int(raw) if raw else DEFAULT_DIM_CAP


def _as_complex(mat) -> np.ndarray:
    # Always copy: constructed wrappers freeze their backing array and must
    # not alias caller-owned buffers.
    arr = np.array(mat, dtype=np.complex128, order="C", copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvariantViolation(f"expected a square matrix, got shape {arr.shape}")
    return arr


def n_qubits(dim: int) -> int:
    """log2(dim), rejecting non-powers of two."""
    n = dim.bit_length() - 1
    if dim <= 0 or (1 << n) != dim:
        raise InvariantViolation(f"dimension {dim} is not a power of two")
    return n


class DensityMatrix:
    """Hermitian, unit-trace, PSD operator on a d-dimensional register.

    Hermiticity and trace are always validated; the PSD check runs only
    under ``__debug__`` since the eigendecomposition dominates the cost.
    Instances are immutable: the backing array is marked read-only.
    """

    __slots__ = ("mat", "dim")

    def __init__(self, entries, *, validate: bool = True):
        mat = _as_complex(entries)
        if validate:
            herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
            if herm > HERMITIAN_TOL:
                raise InvariantViolation(f"not Hermitian: deviation {herm:.3e}")
            tr = mat.trace()
            if abs(tr - 1.0) > TRACE_TOL:
                raise InvariantViolation(f"trace {tr} deviates from 1")
            if __debug__ and mat.shape[0] > 1:
                lo = float(np.linalg.eigvalsh(mat)[0])
                if lo < -PSD_TOL:
                    raise InvariantViolation(f"not PSD: min eigenvalue {lo:.3e}")
        mat.setflags(write=False)
        self.mat = mat
        self.dim = mat.shape[0]

    @property
    def qubits(self) -> int:
        return n_qubits(self.dim)

    @classmethod
    def pure(cls, vec) -> "DensityMatrix":
        v = np.asarray(vec, dtype=np.complex128).ravel()
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise InvariantViolation("zero vector")
        v = v / nrm
        return cls(np.outer(v, v.conj()), validate=False)

    @classmethod
    def basis(cls, dim: int, index: int = 0) -> "DensityMatrix":
        v = np.zeros(dim, dtype=np.complex128)
        v[index] = 1.0
        return cls.pure(v)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=np.complex128) / dim, validate=False)

    @classmethod
    def diagonal(cls, probs) -> "DensityMatrix":
        p = np.asarray(probs, dtype=float)
        return cls(np.diag(p.astype(np.complex128)))

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim})"


class UnitaryMatrix:
    """d x d unitary; validates max |U^dag U - I| <= 1e-10 on construction."""

    __slots__ = ("mat", "dim")

    def __init__(self, entries, *, validate: bool = True):
        mat = _as_complex(entries)
        if validate:
            dev = np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])))
            if dev > UNITARY_TOL:
                raise InvariantViolation(f"not unitary: deviation {dev:.3e}")
        mat.setflags(write=False)
        self.mat = mat
        self.dim = mat.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "UnitaryMatrix":
        return cls(np.eye(dim, dtype=np.complex128), validate=False)

    def __repr__(self) -> str:
        return f"UnitaryMatrix(dim={self.dim})"


def kron(a, b) -> np.ndarray:
    """Kronecker product, (A kron B)[id_B*i+k, id_B*j+l] = A[i,j] B[k,l]."""
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(*ops) -> np.ndarray:
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, np.asarray(op))
    return out


def partial_trace(mat, keep: Iterable[int]) -> np.ndarray:
    """Reduce an n-qubit operator to the qubits in ``keep`` (1-based).

    Kept qubits stay in their original order; ``keep=()`` returns the
    1x1 matrix [[tr(M)]].  Trace is preserved.
    """
    m = _as_complex(mat)
    n = n_qubits(m.shape[0])
    keep_list = sorted(set(keep))
    if any(q < 1 or q > n for q in keep_list):
        raise InvariantViolation(f"keep={keep_list} outside 1..{n}")
    if len(keep_list) == n:
        return m.copy()
    t = m.reshape((2,) * (2 * n))
    # Row axis of qubit q is q-1, column axis is n+q-1; traced qubits get
    # a shared einsum label on both axes.
    labels = list(range(2 * n))
    out_rows, out_cols = [], []
    for q in range(1, n + 1):
        if q in keep_list:
            out_rows.append(labels[q - 1])
            out_cols.append(labels[n + q - 1])
        else:
            labels[n + q - 1] = labels[q - 1]
    reduced = np.einsum(t, labels, out_rows + out_cols)
    dk = 2 ** len(keep_list)
    return np.ascontiguousarray(reduced.reshape(dk, dk))


def trace_out_suffix(mat, k: int) -> np.ndarray:
    """Keep the first k qubits of an n-qubit operator (trace the rest)."""
    n = n_qubits(np.asarray(mat).shape[0])
    return partial_trace(mat, range(1, k + 1))


def swap_operator(m: int) -> np.ndarray:
    """Unitary on 2m qubits exchanging the two m-qubit registers."""
    dm = 1 << m
    dim = dm * dm
    cols = np.arange(dim)
    rows = (cols % dm) * dm + cols // dm
    op = np.zeros((dim, dim), dtype=np.complex128)
    op[rows, cols] = 1.0
    return op


def _check_perm(perm: Sequence[int], t: int) -> tuple:
    p = tuple(int(v) for v in perm)
    if sorted(p) != list(range(1, t + 1)):
        raise InvariantViolation(f"{perm} is not a bijection on 1..{t}")
    return p


def cycle_count(perm: Sequence[int]) -> int:
    """Number of cycles of a bijection on {1..t} (fixed points count)."""
    p = _check_perm(perm, len(perm))
    seen = [False] * len(p)
    cycles = 0
    for start in range(len(p)):
        if seen[start]:
            continue
        cycles += 1
        j = start
        while not seen[j]:
            seen[j] = True
            j = p[j] - 1
    return cycles


def permutation_indices(perm: Sequence[int], t: int, d: int) -> np.ndarray:
    """Row index hit by each basis column under the copy permutation.

    The operator acts as pi |i_1..i_t> = |i_{pi^-1(1)} .. i_{pi^-1(t)}>,
    with register 1 the most significant base-d digit.
    """
    p = _check_perm(perm, t)
    dim = d**t
    cols = np.arange(dim)
    digits = np.empty((t, dim), dtype=np.int64)
    rem = cols
    for j in range(t - 1, -1, -1):
        digits[j] = rem % d
        rem = rem // d
    rows = np.zeros(dim, dtype=np.int64)
    # Output digit at slot j is the input digit of register pi^-1(j); build
    # via the forward map: input register r lands in slot pi(r).
    for r in range(t):
        slot = p[r] - 1
        rows += digits[r] * d ** (t - 1 - slot)
    return rows


def permutation_operator(perm: Sequence[int], t: int, d: int) -> np.ndarray:
    """Permutation matrix on (C^d)^{tensor t}; tr = d**cycle_count(perm)."""
    dim = d**t
    if dim > dim_cap():
        raise DimCapExceeded(f"d**t = {dim} exceeds cap {dim_cap()}")
    rows = permutation_indices(perm, t, d)
    op = np.zeros((dim, dim), dtype=np.complex128)
    op[rows, np.arange(dim)] = 1.0
    return op


@dataclass(frozen=True)
class PermutationOp:
    """Copy permutation on t qudits of local dimension d."""

    t: int
    perm: tuple
    d: int

    def __post_init__(self):
        _check_perm(self.perm, self.t)

    def matrix(self) -> np.ndarray:
        return permutation_operator(self.perm, self.t, self.d)

    def cycle_count(self) -> int:
        return cycle_count(self.perm)


SYM_PROJECTOR_MAX_T = 6


def sym_projector(t: int, d: int) -> np.ndarray:
    """Projector onto the symmetric subspace of t copies of C^d.

    Average of all t! copy permutations; idempotent with trace
    C(d+t-1, t).  Capped at t <= 6 (720 operators).
    """
    import itertools

    if t > SYM_PROJECTOR_MAX_T:
        raise DimCapExceeded(f"t={t} exceeds the t! operator-sum cap {SYM_PROJECTOR_MAX_T}")
    dim = d**t
    if dim > dim_cap():
        raise DimCapExceeded(f"d**t = {dim} exceeds cap {dim_cap()}")
    acc = np.zeros((dim, dim))
    cols = np.arange(dim)
    for perm in itertools.permutations(range(1, t + 1)):
        acc[permutation_indices(perm, t, d), cols] += 1.0
    return acc / math.factorial(t)


# -- measurement sampling ---------------------------------------------------
#
# The helpers below accept either a single unitary (shape (d, d)) or a
# stack with leading batch axes; per-slice arithmetic is identical in
# both forms, which the protocol runners rely on for bit-reproducible
# vectorised execution.


def rotated_diag_probs(rho_mat: np.ndarray, u) -> np.ndarray:
    """Born probabilities <b|U rho U^dag|b> for each basis outcome b."""
    u = np.asarray(u)
    g = u @ rho_mat
    return np.real(np.sum(g * u.conj(), axis=-1))


def suffix_blocks(rho_mat: np.ndarray, u, k: int) -> tuple:
    """Unnormalised prefix blocks after measuring the suffix in basis U.

    For an n-qubit state with prefix width k and a unitary on the
    2**(n-k)-dimensional suffix, returns ``(probs, blocks)`` where
    ``blocks[..., x, i, j] = <x| (I kron U) rho (I kron U)^dag |x>_{ij}``
    (a k-qubit operator per suffix outcome x) and ``probs[..., x]`` is
    its trace, the Born probability of x.
    """
    u = np.asarray(u)
    dim = rho_mat.shape[0]
    dp = 1 << k
    ds = dim // dp
    if dp == 1:
        # Scalar prefix: blocks are the rotated diagonal entries.
        flat = np.sum((u @ rho_mat) * u.conj(), axis=-1)
        return np.real(flat), flat[..., None, None]
    r4 = rho_mat.reshape(dp, ds, dp, ds)
    r_m = np.ascontiguousarray(r4.transpose(0, 2, 1, 3)).reshape(dp * dp, ds, ds)
    z = u[..., None, :, :] @ r_m
    w = np.sum(z * u.conj()[..., None, :, :], axis=-1)
    blocks = np.swapaxes(w, -1, -2).reshape(w.shape[:-2] + (ds, dp, dp))
    probs = np.real(np.trace(blocks, axis1=-2, axis2=-1))
    return probs, blocks


def sample_from_probs(probs: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF outcomes for uniform draws ``u``.

    ``probs`` has outcome axis last; ``u`` may carry extra trailing draw
    axes that broadcast against the batch axes of ``probs``.  Raises if
    any probability row's sum deviates from 1 by more than the tolerance;
    otherwise draws are implicitly renormalised (u is compared against
    the unnormalised CDF scaled by the row sum) and residual rounding
    mass lands on the final outcome.
    """
    probs = np.asarray(probs)
    u = np.asarray(u)
    cum = np.cumsum(probs, axis=-1)
    total = cum[..., -1]
    if np.any(np.abs(total - 1.0) > PROB_SUM_TOL):
        worst = float(np.max(np.abs(total - 1.0)))
        raise InvariantViolation(f"probability sum deviates from 1 by {worst:.3e}")
    extra = u.ndim - (probs.ndim - 1)
    cse = cum.reshape(cum.shape[:-1] + (1,) * extra + (cum.shape[-1],))
    v = u * total.reshape(total.shape + (1,) * extra)
    idx = np.sum(cse <= v[..., None], axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def measure_rotated_basis(rho: DensityMatrix, u: UnitaryMatrix, rng: np.random.Generator) -> int:
    """Sample outcome b with probability <b|U rho U^dag|b>."""
    if rho.dim != u.dim:
        raise InvariantViolation(f"dimension mismatch {rho.dim} vs {u.dim}")
    probs = rotated_diag_probs(rho.mat, u.mat)
    return int(sample_from_probs(probs, rng.random()))


def measure_suffix_keep_prefix(
    rho: DensityMatrix, u: UnitaryMatrix, k: int, rng: np.random.Generator
) -> tuple:
    """Measure the last n-k qubits in basis U; return (outcome, post state).

    The outcome x is drawn with Pr[x] = tr[(I_k kron U^dag|x><x|U) rho];
    the returned state is the normalised k-qubit block.  For k = n the
    single trivial outcome is 0 and the post state is rho itself exactly
    (the draw is still consumed to keep stream accounting uniform).
    """
    n = rho.qubits
    if not 0 <= k <= n:
        raise InvariantViolation(f"k={k} outside 0..{n}")
    if u.dim != 1 << (n - k):
        raise InvariantViolation(f"unitary dim {u.dim} != 2**(n-k)")
    if k == n:
        rng.random()
        return 0, rho
    probs, blocks = suffix_blocks(rho.mat, u.mat, k)
    x = int(sample_from_probs(probs, rng.random()))
    p = probs[x]
    if p < MIN_OUTCOME_PROB:
        raise InvariantViolation(f"sampled outcome {x} has probability {p:.3e}")
    post = DensityMatrix(blocks[x] / p)
    return x, post
