"""Executable estimation protocols: the full swap test, the shared-basis
collision protocol (Algorithm 1 style), the partial-swap protocol with a
k-qubit one-way channel (Algorithm 2 style), and the purity reduction.

Randomness discipline
---------------------
A run consumes Philox streams keyed by ``(master_seed, stream_id)`` as laid
out in :mod:`dipesim.rng`.  Batch i's unitary comes from its own stream
(``4 + i``) so two parties can derive the identical basis from the shared
seed; Alice's and Bob's measurement draws come from one per-run stream each
with a fixed per-batch consumption (m draws for Alice; 2m for Bob in the
partial-swap protocol, basis draw then swap draw per copy).  The run
functions vectorise across batches in chunks, but every chunked operation
is slice-identical to the sequential per-batch API, so transcripts and
estimates are bit-reproducible either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as _rng
from .ensembles import haar_unitary, qr_phase_fix
from .linalg import (
    MIN_OUTCOME_PROB,
    DensityMatrix,
    InvariantViolation,
    UnitaryMatrix,
    measure_suffix_keep_prefix,
    rotated_diag_probs,
    sample_from_probs,
    suffix_blocks,
    trace_out_suffix,
)
from .oracles import inner_product, trace_product

ALG1 = "alg1"
ALG2 = "alg2"

DEFAULT_CALIBRATION = 8.0
RUN_CHUNK = 8192
_CHUNK_ENTRY_BUDGET = 1 << 18


def _chunk_size(d: int) -> int:
    """Batches per vectorised chunk, capped so the unitary stack stays
    within a fixed entry budget at large d."""
    return max(64, min(RUN_CHUNK, _CHUNK_ENTRY_BUDGET // max(1, d * d)))


@dataclass(frozen=True)
class ProtocolConfig:
    """Run parameters: register width, channel width, accuracy target,
    batching, swap-phase budget and the master seed."""

    n: int
    k: int
    epsilon: float
    n_batches: int
    copies_per_batch: int
    swap_copies: int
    master_seed: int
    protocol: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.k <= self.n:
            raise InvariantViolation(f"k={self.k} outside 0..{self.n}")
        if self.n_batches * self.copies_per_batch < 1:
            raise InvariantViolation("need n_batches * copies_per_batch >= 1")
        if self.epsilon <= 0:
            raise InvariantViolation("epsilon must be positive")

    def with_seed(self, seed: int) -> "ProtocolConfig":
        return replace(self, master_seed=seed)


@dataclass(frozen=True)
class Estimate:
    """Point estimate with batch-mean standard error.

    ``stderr`` is None when fewer than two batches were run (undefined).
    ``samples`` counts copies consumed per party.
    """

    value: float
    stderr: Optional[float]
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise InvariantViolation("samples must be >= 1")
        if self.stderr is not None and self.stderr < 0:
            raise InvariantViolation("stderr must be >= 0")


@dataclass
class BatchRecord:
    """Per-batch outcomes: shared unitary stream id plus the x/y/z lists.

    z is empty for the shared-basis protocol, which has no swap outcomes.
    """

    index: int
    unitary_stream: int
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    z: list = field(default_factory=list)


@dataclass
class Transcript:
    """Ordered record of a run: swap-phase outcomes then per-batch records."""

    protocol: str
    master_seed: int
    fk_outcomes: list = field(default_factory=list)
    batches: list = field(default_factory=list)


@dataclass
class BatchRng:
    """Streams one batch consumes: the shared unitary stream plus each
    party's per-run measurement stream."""

    unitary: np.random.Generator
    alice: np.random.Generator
    bob: np.random.Generator
    unitary_stream: int
    index: int = -1

    @classmethod
    def for_batch(
        cls,
        seed: int,
        index: int,
        alice: np.random.Generator,
        bob: np.random.Generator,
    ) -> "BatchRng":
        sid = _rng.batch_stream_id(index)
        return cls(
            unitary=_rng.stream(seed, sid),
            alice=alice,
            bob=bob,
            unitary_stream=sid,
            index=index,
        )


def _swap_plus_prob(a_mat: np.ndarray, b_mat: np.ndarray) -> float:
    return 0.5 * (1.0 + float(np.real(trace_product(a_mat, b_mat))))


def swap_test_sample(rho: DensityMatrix, sigma: DensityMatrix, rng: np.random.Generator) -> int:
    """One swap-test outcome: +1 with probability (1 + tr(rho sigma))/2.

    The outcome probability is computed exactly and Bernoulli-sampled;
    the 2d-dimensional joint state is never materialised.
    """
    p_plus = 0.5 * (1.0 + inner_product(rho, sigma))
    return 1 if rng.random() < p_plus else -1


# -- Algorithm 1 style: shared random basis, collision estimator ------------


def alg1_batch(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    m: int,
    rng: BatchRng,
    u_override: Optional[UnitaryMatrix] = None,
) -> tuple:
    """One batch: shared Haar basis, m outcomes per party, all-pairs
    collision value w_i = (2^n + 1) g_i - 1.

    ``u_override`` replaces the sampled unitary (test hook); the unitary
    stream is left untouched in that case.
    """
    d = rho.dim
    u = u_override if u_override is not None else haar_unitary(d, rng.unitary)
    pa = rotated_diag_probs(rho.mat, u.mat)
    pb = rotated_diag_probs(sigma.mat, u.mat)
    xs = sample_from_probs(pa, rng.alice.random(m))
    ys = sample_from_probs(pb, rng.bob.random(m))
    w = float((d + 1) * _collision_mean(xs, ys) - 1.0)
    record = BatchRecord(
        index=rng.index,
        unitary_stream=rng.unitary_stream,
        x=[int(v) for v in xs],
        y=[int(v) for v in ys],
    )
    return w, record


def _collision_mean(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All-pairs collision frequency (1/m^2) sum_{j,l} 1[x_j = y_l]."""
    m = xs.shape[-1]
    eq = xs[..., :, None] == ys[..., None, :]
    return eq.sum(axis=(-2, -1)) / (m * m)


def alg1_run(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    config: ProtocolConfig,
    record_transcript: bool = True,
) -> tuple:
    """Run the shared-basis protocol; returns (Estimate, Transcript).

    Vectorised across batches in chunks; bit-identical to composing
    :func:`alg1_batch` sequentially with the documented streams.
    """
    if rho.dim != sigma.dim or rho.qubits != config.n:
        raise InvariantViolation("state dimensions do not match the configuration")
    d = rho.dim
    seed = config.master_seed
    nb, m = config.n_batches, config.copies_per_batch
    alice = _rng.stream(seed, _rng.STREAM_ALICE)
    bob = _rng.stream(seed, _rng.STREAM_BOB)
    transcript = Transcript(protocol=ALG1, master_seed=seed)
    w_parts = []
    chunk = _chunk_size(d)
    for lo in range(0, nb, chunk):
        hi = min(lo + chunk, nb)
        u_stack = _unitary_stack(seed, lo, hi, d)
        pa = rotated_diag_probs(rho.mat, u_stack)
        pb = rotated_diag_probs(sigma.mat, u_stack)
        xs = sample_from_probs(pa, alice.random((hi - lo, m)))
        ys = sample_from_probs(pb, bob.random((hi - lo, m)))
        w_parts.append((d + 1) * _collision_mean(xs, ys) - 1.0)
        if record_transcript:
            for i in range(hi - lo):
                transcript.batches.append(
                    BatchRecord(
                        index=lo + i,
                        unitary_stream=_rng.batch_stream_id(lo + i),
                        x=[int(v) for v in xs[i]],
                        y=[int(v) for v in ys[i]],
                    )
                )
    w_values = np.concatenate(w_parts)
    return _estimate_from_batches(w_values, samples=nb * m), transcript


def _unitary_stack(seed: int, lo: int, hi: int, d: int) -> np.ndarray:
    """Haar unitaries for batches lo..hi-1, each from its own stream.

    Bit-identical to calling haar_unitary per batch: the uniform block,
    Box-Muller transform and stacked QR are all slice-wise identical to
    their single-matrix forms.
    """
    ids = range(_rng.batch_stream_id(lo), _rng.batch_stream_id(hi))
    u = _rng.stream_uniform_block(seed, ids, 2 * d * d)
    gins = _rng.complex_from_normals(_rng.box_muller(u)).reshape(hi - lo, d, d)
    return qr_phase_fix(gins)


def _estimate_from_batches(w_values: np.ndarray, samples: int) -> Estimate:
    value = float(np.mean(w_values))
    if w_values.size >= 2:
        stderr = float(np.std(w_values, ddof=1) / math.sqrt(w_values.size))
    else:
        stderr = None
    return Estimate(value=value, stderr=stderr, samples=samples)


# -- Algorithm 2 style: partial swap test over a k-qubit channel ------------


def _fk_outcomes(
    rho: DensityMatrix, sigma: DensityMatrix, k: int, n_swap: int, rng: np.random.Generator
) -> np.ndarray:
    """Swap-phase outcomes on the k-qubit marginals (N_k Bernoulli draws).

    At k = 0 the marginals are scalars and f_0 = 1 exactly, so the phase
    is deterministic (+1); the draws are still consumed.
    """
    if k == 0:
        p_plus = 1.0
    else:
        rk = trace_out_suffix(rho.mat, k)
        sk = trace_out_suffix(sigma.mat, k)
        p_plus = _swap_plus_prob(rk, sk)
    u = rng.random(n_swap)
    return np.where(u < p_plus, 1, -1)


def _fk_estimate(outcomes: np.ndarray) -> Estimate:
    value = float(np.mean(outcomes))
    if outcomes.size >= 2:
        stderr = float(np.std(outcomes, ddof=1) / math.sqrt(outcomes.size))
    else:
        stderr = None
    return Estimate(value=value, stderr=stderr, samples=outcomes.size)


def alg2_fk_phase(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    k: int,
    n_swap: int,
    rng: np.random.Generator,
) -> Estimate:
    """Estimate f_k = tr(tr_{>k} rho tr_{>k} sigma) from n_swap partial
    swap tests; the +-1 mean equals 2 Pr[+1] - 1."""
    if n_swap < 1:
        raise InvariantViolation("need at least one swap sample")
    return _fk_estimate(_fk_outcomes(rho, sigma, k, n_swap, rng))


def alg2_batch(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    k: int,
    m: int,
    rng: BatchRng,
    u_override: Optional[UnitaryMatrix] = None,
) -> tuple:
    """One partial-swap batch; returns (g_i, BatchRecord).

    Per copy: Alice measures the suffix and keeps her k-qubit post state;
    Bob does the same, then draws the swap outcome with the exact
    conditional probability (1 + tr(rho_x sigma_y))/2.  Measuring the
    suffix before the prefix swap is valid because the two POVMs act on
    disjoint tensor factors.  g_i = (1/m) sum_j z_j 1[x_j = y_j].
    """
    n = rho.qubits
    ds = 1 << (n - k)
    if u_override is not None:
        u = u_override
    elif ds == 1:
        # Trivial suffix: the basis is an unused global phase, skip it.
        u = UnitaryMatrix.identity(1)
    else:
        u = haar_unitary(ds, rng.unitary)
    xs, ys, zs = [], [], []
    for _ in range(m):
        x, post_a = measure_suffix_keep_prefix(rho, u, k, rng.alice)
        y, post_b = measure_suffix_keep_prefix(sigma, u, k, rng.bob)
        z = swap_test_sample(post_a, post_b, rng.bob)
        xs.append(x)
        ys.append(y)
        zs.append(z)
    g = _paired_swap_mean(np.array(xs), np.array(ys), np.array(zs))
    record = BatchRecord(index=rng.index, unitary_stream=rng.unitary_stream, x=xs, y=ys, z=zs)
    return float(g), record


def _paired_swap_mean(xs: np.ndarray, ys: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """(1/m) sum_j (1[z_j=+1, x_j=y_j] - 1[z_j=-1, x_j=y_j])."""
    return ((xs == ys) * zs).sum(axis=-1) / xs.shape[-1]


def alg2_run(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    config: ProtocolConfig,
    record_transcript: bool = True,
) -> tuple:
    """Run the partial-swap protocol; returns (Estimate, Transcript).

    The swap phase runs once and its estimate is reused across batches;
    w_i = (2^(n-k) + 1) g_i - f_k_hat, so E[w] = tr(rho sigma) plus the
    fixed offset f_k - E[f_k_hat].  Estimate.stderr is the batch-mean
    standard error; the swap-phase error is recoverable from the
    transcript's fk outcomes.
    """
    if rho.dim != sigma.dim or rho.qubits != config.n:
        raise InvariantViolation("state dimensions do not match the configuration")
    n, k = config.n, config.k
    ds = 1 << (n - k)
    seed = config.master_seed
    nb, m = config.n_batches, config.copies_per_batch
    fk_z = _fk_outcomes(rho, sigma, k, config.swap_copies, _rng.stream(seed, _rng.STREAM_FK))
    fk_value = float(np.mean(fk_z))
    alice = _rng.stream(seed, _rng.STREAM_ALICE)
    bob = _rng.stream(seed, _rng.STREAM_BOB)
    transcript = Transcript(protocol=ALG2, master_seed=seed, fk_outcomes=[int(v) for v in fk_z])
    w_parts = []
    t_full = None
    if ds == 1:
        # k = n: trivial suffix outcome, post states are the inputs exactly.
        t_full = float(np.real(trace_product(rho.mat, sigma.mat)))
    chunk = _chunk_size(ds)
    for lo in range(0, nb, chunk):
        hi = min(lo + chunk, nb)
        bsz = hi - lo
        ua = alice.random((bsz, m))
        ub = bob.random((bsz, 2 * m)).reshape(bsz, m, 2)
        if ds == 1:
            xs = np.zeros((bsz, m), dtype=np.int64)
            ys = np.zeros((bsz, m), dtype=np.int64)
            p_plus = 0.5 * (1.0 + t_full)
        else:
            u_stack = _unitary_stack(seed, lo, hi, ds)
            pa, blocks_a = suffix_blocks(rho.mat, u_stack, k)
            pb, blocks_b = suffix_blocks(sigma.mat, u_stack, k)
            xs = sample_from_probs(pa, ua)
            ys = sample_from_probs(pb, ub[..., 0])
            rows = np.arange(bsz)[:, None]
            px = np.take_along_axis(pa, xs, axis=1)
            py = np.take_along_axis(pb, ys, axis=1)
            if np.any(px < MIN_OUTCOME_PROB) or np.any(py < MIN_OUTCOME_PROB):
                raise InvariantViolation("sampled outcome with vanishing probability")
            post_a = blocks_a[rows, xs] / px[..., None, None]
            post_b = blocks_b[rows, ys] / py[..., None, None]
            t = np.real(np.einsum("...ij,...ji->...", post_a, post_b))
            p_plus = 0.5 * (1.0 + t)
        zs = np.where(ub[..., 1] < p_plus, 1, -1)
        g = _paired_swap_mean(xs, ys, zs)
        w_parts.append((ds + 1) * g - fk_value)
        if record_transcript:
            for i in range(bsz):
                transcript.batches.append(
                    BatchRecord(
                        index=lo + i,
                        unitary_stream=_rng.batch_stream_id(lo + i),
                        x=[int(v) for v in xs[i]],
                        y=[int(v) for v in ys[i]],
                        z=[int(v) for v in zs[i]],
                    )
                )
    w_values = np.concatenate(w_parts)
    return _estimate_from_batches(w_values, samples=nb * m + config.swap_copies), transcript


def purity_estimate(rho: DensityMatrix, config: ProtocolConfig) -> Estimate:
    """Estimate tr(rho^2) by running the partial-swap protocol on two
    independent copy streams of the same state.

    This realises the memory-bounded reading of a k-qubit register: per
    round, the first copy's measured k-qubit post state is held while the
    second copy is measured against it.  Only this protocol-induced
    instance of the memory model is implemented.
    """
    est, _ = alg2_run(rho, rho, config, record_transcript=False)
    return est


def choose_params(
    n: int,
    k: int,
    epsilon: float,
    c: float = DEFAULT_CALIBRATION,
    master_seed: int = 0,
) -> ProtocolConfig:
    """Pick the cheaper protocol branch and its batching for (n, k, eps).

    Shared-basis branch: N = ceil(c * max(1/eps^2, 2^(n/2)/eps)) total
    copies, split as m = largest divisor of N at most 2^n (variance-
    optimal batch size), N_b = N/m.  Partial-swap branch:
    N_b = ceil(c * 2^(n-k)/eps^2) with m = 1 and N_k = ceil(c/eps^2).
    The branch with fewer copies wins; ties go to the shared-basis
    branch.  The choice is recorded in ``protocol``.
    """
    if epsilon <= 0:
        raise InvariantViolation("epsilon must be positive")
    n1 = math.ceil(c * max(1.0 / epsilon**2, 2.0 ** (n / 2.0) / epsilon))
    n2 = math.ceil(c * 2.0 ** (n - k) / epsilon**2)
    nk = math.ceil(c / epsilon**2)
    if n1 <= n2:
        m = _largest_divisor_at_most(n1, min(1 << n, n1))
        return ProtocolConfig(
            n=n,
            k=k,
            epsilon=epsilon,
            n_batches=n1 // m,
            copies_per_batch=m,
            swap_copies=nk,
            master_seed=master_seed,
            protocol=ALG1,
        )
    return ProtocolConfig(
        n=n,
        k=k,
        epsilon=epsilon,
        n_batches=n2,
        copies_per_batch=1,
        swap_copies=nk,
        master_seed=master_seed,
        protocol=ALG2,
    )


def _largest_divisor_at_most(n: int, cap: int) -> int:
    for m in range(min(cap, n), 0, -1):
        if n % m == 0:
            return m
    return 1


def run_protocol(
    rho: DensityMatrix,
    sigma: DensityMatrix,
    config: ProtocolConfig,
    record_transcript: bool = True,
) -> tuple:
    """Dispatch on config.protocol (alg1/alg2)."""
    if config.protocol == ALG1:
        return alg1_run(rho, sigma, config, record_transcript)
    if config.protocol == ALG2:
        return alg2_run(rho, sigma, config, record_transcript)
    raise InvariantViolation(f"config.protocol must be {ALG1!r} or {ALG2!r}")
