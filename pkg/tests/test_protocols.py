"""Protocol runners: swap test, shared-basis collision protocol,
partial-swap protocol, purity reduction and parameter selection."""

import math

import numpy as np
import pytest

from dipesim import rng as R
from dipesim.ensembles import InducedStateParams, haar_state, induced_state
from dipesim.linalg import DensityMatrix, InvariantViolation, UnitaryMatrix, suffix_blocks
from dipesim.oracles import inner_product, partial_ip, purity
from dipesim.protocols import (
    ALG1,
    ALG2,
    BatchRng,
    Estimate,
    ProtocolConfig,
    _estimate_from_batches,
    _fk_outcomes,
    _unitary_stack,
    alg1_batch,
    alg1_run,
    alg2_batch,
    alg2_fk_phase,
    alg2_run,
    choose_params,
    purity_estimate,
    swap_test_sample,
)


def seeded_pair(n: int, seed: int):
    gen = R.stream(seed, 0)
    return (
        induced_state(InducedStateParams(n, 3), gen),
        induced_state(InducedStateParams(n, 2), gen),
    )


def combined_stderr(estimate: Estimate, transcript) -> float:
    """Batch-mean stderr plus the swap-phase stderr in quadrature."""
    fk = np.array(transcript.fk_outcomes, dtype=float)
    fk_var = fk.var(ddof=1) / fk.size if fk.size >= 2 else 0.0
    return math.sqrt(estimate.stderr**2 + fk_var)


class TestSwapTestSample:
    def test_identical_pure_always_plus(self):
        psi = haar_state(4, R.stream(0, 0))
        gen = R.stream(1, 0)
        assert all(swap_test_sample(psi, psi, gen) == 1 for _ in range(64))

    def test_orthogonal_states_coin_flip(self):
        a, b = DensityMatrix.basis(2, 0), DensityMatrix.basis(2, 1)
        gen = R.stream(2, 0)
        n = 20_000
        plus = sum(swap_test_sample(a, b, gen) == 1 for _ in range(n))
        sigma = math.sqrt(n * 0.25)
        assert abs(plus - n / 2) <= 3 * sigma

    def test_maximally_mixed_three_quarters(self):
        rho = DensityMatrix.maximally_mixed(2)
        gen = R.stream(3, 0)
        n = 100_000
        plus = sum(swap_test_sample(rho, rho, gen) == 1 for _ in range(n))
        p = 0.75
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(plus - p * n) <= 3 * sigma


class TestAlg1Batch:
    def test_forced_identity_basis(self):
        psi = DensityMatrix.basis(4, 0)
        streams = BatchRng.for_batch(0, 0, R.stream(0, R.STREAM_ALICE), R.stream(0, R.STREAM_BOB))
        w, record = alg1_batch(psi, psi, 4, streams, u_override=UnitaryMatrix.identity(4))
        assert w == 4.0  # (2^n + 1) * 1 - 1 with n = 2
        assert record.x == [0, 0, 0, 0] and record.y == [0, 0, 0, 0]
        assert record.z == []

    def test_conditional_mean_fixed_basis(self):
        # With U fixed, E[collision value] is the exact paired sum.
        from dipesim.ensembles import haar_unitary
        from dipesim.oracles import alg1_conditional_mean

        rho, sigma = seeded_pair(2, 5)
        u = haar_unitary(4, R.stream(6, 0))
        expect = alg1_conditional_mean(rho, sigma, u)
        alice = R.stream(7, R.STREAM_ALICE)
        bob = R.stream(7, R.STREAM_BOB)
        reps = 100_000
        m = 2
        vals = np.empty(reps)
        for i in range(reps):
            streams = BatchRng.for_batch(7, i, alice, bob)
            w, _ = alg1_batch(rho, sigma, m, streams, u_override=u)
            vals[i] = (w + 1.0) / 5.0  # back out the collision mean (d = 4)
        se = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean() - expect) <= 3 * se


class TestAlg1Run:
    def test_maximally_mixed_mean(self):
        n = 2
        rho = DensityMatrix.maximally_mixed(1 << n)
        config = ProtocolConfig(n, 0, 0.1, 20_000, 2, 1, 17, ALG1)
        est, _ = alg1_run(rho, rho, config, record_transcript=False)
        assert abs(est.value - 2.0**-n) <= 3 * est.stderr

    def test_seeded_pair_unbiased(self):
        rho, sigma = seeded_pair(2, 21)
        config = ProtocolConfig(2, 0, 0.1, 50_000, 4, 1, 23, ALG1)
        est, _ = alg1_run(rho, sigma, config, record_transcript=False)
        assert abs(est.value - inner_product(rho, sigma)) <= 3 * est.stderr

    def test_identical_pure_states(self):
        psi = haar_state(16, R.stream(31, 0))
        config = ProtocolConfig(4, 0, 0.1, 2000, 8, 1, 33, ALG1)
        est, _ = alg1_run(psi, psi, config, record_transcript=False)
        assert abs(est.value - 1.0) <= 3 * est.stderr

    def test_orthogonal_pure_states(self):
        a = DensityMatrix.basis(16, 0)
        b = DensityMatrix.basis(16, 5)
        config = ProtocolConfig(4, 0, 0.1, 2000, 8, 1, 35, ALG1)
        est, _ = alg1_run(a, b, config, record_transcript=False)
        assert abs(est.value) <= 3 * est.stderr

    def test_run_matches_sequential_batches(self):
        rho, sigma = seeded_pair(3, 41)
        config = ProtocolConfig(3, 0, 0.1, 63, 5, 1, 43, ALG1)
        est, transcript = alg1_run(rho, sigma, config)
        alice = R.stream(43, R.STREAM_ALICE)
        bob = R.stream(43, R.STREAM_BOB)
        ws = []
        for i in range(63):
            streams = BatchRng.for_batch(43, i, alice, bob)
            w, record = alg1_batch(rho, sigma, 5, streams)
            ws.append(w)
            assert record.x == transcript.batches[i].x
            assert record.y == transcript.batches[i].y
            assert record.unitary_stream == transcript.batches[i].unitary_stream
        seq = _estimate_from_batches(np.array(ws), samples=63 * 5)
        assert seq.value == est.value and seq.stderr == est.stderr


class TestFkPhase:
    def test_zero_width_exact_one(self):
        rho, sigma = seeded_pair(2, 51)
        est = alg2_fk_phase(rho, sigma, 0, 500, R.stream(0, R.STREAM_FK))
        assert est.value == 1.0
        assert est.stderr == 0.0

    def test_full_width_estimates_inner_product(self):
        rho, sigma = seeded_pair(2, 52)
        est = alg2_fk_phase(rho, sigma, 2, 100_000, R.stream(1, R.STREAM_FK))
        assert abs(est.value - inner_product(rho, sigma)) <= 3 * est.stderr

    def test_partial_width_against_oracle(self):
        rho, sigma = seeded_pair(3, 53)
        est = alg2_fk_phase(rho, sigma, 1, 100_000, R.stream(2, R.STREAM_FK))
        assert abs(est.value - partial_ip(rho, sigma, 1)) <= 3 * est.stderr

    def test_requires_samples(self):
        rho, sigma = seeded_pair(2, 54)
        with pytest.raises(InvariantViolation):
            alg2_fk_phase(rho, sigma, 1, 0, R.stream(3, 0))


class TestAlg2Run:
    def test_full_width_combines_to_inner_product(self):
        rho, sigma = seeded_pair(3, 61)
        config = ProtocolConfig(3, 3, 0.1, 30_000, 1, 30_000, 63, ALG2)
        est, transcript = alg2_run(rho, sigma, config, record_transcript=False)
        f = inner_product(rho, sigma)
        assert abs(est.value - f) <= 3 * combined_stderr(est, transcript)

    def test_zero_width_collision_reduction(self):
        # z is +1 on every copy and the estimator reduces to the paired
        # collision form with E[g] = (f + 1)/(2^n + 1).
        rho, sigma = seeded_pair(2, 62)
        config = ProtocolConfig(2, 0, 0.1, 100_000, 1, 100, 65, ALG2)
        est, transcript = alg2_run(rho, sigma, config)
        assert transcript.fk_outcomes == [1] * 100
        assert all(all(z == 1 for z in b.z) for b in transcript.batches[:200])
        f = inner_product(rho, sigma)
        g_values = np.array(
            [(1 if b.x == b.y else 0) * b.z[0] for b in transcript.batches], dtype=float
        )
        se = g_values.std(ddof=1) / math.sqrt(g_values.size)
        assert abs(g_values.mean() - (f + 1.0) / 5.0) <= 3 * se

    def test_partial_width_conditional_mean(self):
        # Empirical E[g] = (f + f_1)/(2^(n-k) + 1) at n=3, k=1.
        rho, sigma = seeded_pair(3, 66)
        config = ProtocolConfig(3, 1, 0.1, 100_000, 1, 100, 67, ALG2)
        est, transcript = alg2_run(rho, sigma, config)
        f = inner_product(rho, sigma)
        f1 = partial_ip(rho, sigma, 1)
        g_values = np.array(
            [(1 if b.x == b.y else 0) * b.z[0] for b in transcript.batches], dtype=float
        )
        se = g_values.std(ddof=1) / math.sqrt(g_values.size)
        assert abs(g_values.mean() - (f + f1) / 5.0) <= 3 * se

    def test_pure_product_state_any_width(self):
        psi = DensityMatrix.basis(8, 0)
        for k in (0, 1, 2, 3):
            config = ProtocolConfig(3, k, 0.1, 4000, 1, 2000, 70 + k, ALG2)
            est, transcript = alg2_run(psi, psi, config, record_transcript=False)
            tol = 3 * combined_stderr(est, transcript)
            assert abs(est.value - 1.0) <= max(tol, 1e-12)

    def test_seeded_midwidth_unbiased(self):
        rho, sigma = seeded_pair(4, 75)
        config = ProtocolConfig(4, 2, 0.1, 50_000, 1, 100_000, 77, ALG2)
        est, transcript = alg2_run(rho, sigma, config, record_transcript=False)
        f = inner_product(rho, sigma)
        assert abs(est.value - f) <= 3 * combined_stderr(est, transcript)

    def test_cross_protocol_consistency(self):
        # Zero-width partial-swap runs and the shared-basis protocol are
        # both unbiased for the same target.
        rho, sigma = seeded_pair(2, 80)
        f = inner_product(rho, sigma)
        config2 = ProtocolConfig(2, 0, 0.1, 60_000, 1, 100, 81, ALG2)
        est2, tr2 = alg2_run(rho, sigma, config2, record_transcript=False)
        config1 = ProtocolConfig(2, 0, 0.1, 60_000, 1, 1, 82, ALG1)
        est1, _ = alg1_run(rho, sigma, config1, record_transcript=False)
        pooled = math.sqrt(combined_stderr(est2, tr2) ** 2 + est1.stderr**2)
        assert abs(est1.value - est2.value) <= 3 * pooled

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_unbiased_full_width_grid(self, n):
        # Every channel width for each register size: the batch mean
        # stays within three standard errors of the oracle.
        rho, sigma = seeded_pair(n, 90 + n)
        f = inner_product(rho, sigma)
        for k in range(n + 1):
            config = ProtocolConfig(n, k, 0.1, 50_000, 1, 20_000, 190 + 10 * n + k, ALG2)
            est, transcript = alg2_run(rho, sigma, config, record_transcript=False)
            assert abs(est.value - f) <= 3 * combined_stderr(est, transcript), (n, k)

    def test_stderr_missing_single_batch(self):
        rho, sigma = seeded_pair(2, 95)
        config = ProtocolConfig(2, 1, 0.1, 1, 1, 10, 96, ALG2)
        est, _ = alg2_run(rho, sigma, config)
        assert est.stderr is None

    def test_transcript_determinism(self):
        rho, sigma = seeded_pair(2, 97)
        config = ProtocolConfig(2, 1, 0.1, 200, 2, 50, 98, ALG2)
        est_a, tr_a = alg2_run(rho, sigma, config)
        est_b, tr_b = alg2_run(rho, sigma, config)
        assert est_a == est_b
        assert tr_a == tr_b

    def test_transcript_record_shape(self):
        rho, sigma = seeded_pair(2, 97)
        m = 3
        config = ProtocolConfig(2, 1, 0.1, 50, m, 20, 102, ALG2)
        _, transcript = alg2_run(rho, sigma, config)
        assert len(transcript.batches) == 50
        for i, record in enumerate(transcript.batches):
            assert record.index == i
            assert len(record.x) == len(record.y) == len(record.z) == m
            assert all(z in (-1, 1) for z in record.z)
            assert record.unitary_stream == 4 + i
        assert all(z in (-1, 1) for z in transcript.fk_outcomes)

    def test_unbiasedness_contract_offset(self):
        # E[w] = f + (f_k - E[fk_hat]); with the swap phase pinned to one
        # sample the offset is visible and equals f_k - z_1.
        rho, sigma = seeded_pair(2, 99)
        config = ProtocolConfig(2, 1, 0.5, 40_000, 1, 1, 100, ALG2)
        est, transcript = alg2_run(rho, sigma, config)
        f = inner_product(rho, sigma)
        fk_hat = float(np.mean(transcript.fk_outcomes))
        f1 = partial_ip(rho, sigma, 1)
        expect = f + (f1 - fk_hat)
        assert abs(est.value - expect) <= 3 * est.stderr


class TestVarianceDecomposition:
    def test_total_variance_splits(self):
        # Var(g) = Var_U(E[g|U]) + E_U[Var(g|U)] within 5% relative error.
        n, k, seed = 2, 1, 103
        rho, sigma = seeded_pair(n, seed)
        reps = 100_000
        config = ProtocolConfig(n, k, 0.1, reps, 1, 10, seed + 1, ALG2)
        est, transcript = alg2_run(rho, sigma, config)
        fk_hat = float(np.mean(transcript.fk_outcomes))
        ds = 1 << (n - k)
        g_samples = np.array(
            [(1 if b.x == b.y else 0) * b.z[0] for b in transcript.batches], dtype=float
        )
        total = g_samples.var(ddof=1)
        # Exact conditional moments for the same sampled bases.
        cond_mean = np.empty(reps)
        cond_var = np.empty(reps)
        chunk = 8192
        for lo in range(0, reps, chunk):
            hi = min(lo + chunk, reps)
            u_stack = _unitary_stack(seed + 1, lo, hi, ds)
            pa, blocks_a = suffix_blocks(rho.mat, u_stack, k)
            pb, blocks_b = suffix_blocks(sigma.mat, u_stack, k)
            t = np.real(np.einsum("bxij,bxji->bx", blocks_a, blocks_b))
            mean = np.sum(t, axis=1)  # sum_x tr(block_a block_b) = E[g|U]
            second = np.sum(pa * pb, axis=1)  # Pr[x = y | U] = E[g^2|U]
            cond_mean[lo:hi] = mean
            cond_var[lo:hi] = second - mean**2
        decomposed = cond_mean.var(ddof=1) + cond_var.mean()
        assert abs(total - decomposed) / total <= 0.05


class TestPurityEstimate:
    def test_pure_state(self):
        psi = haar_state(8, R.stream(110, 0))
        config = ProtocolConfig(3, 3, 0.1, 8000, 1, 8000, 111, ALG2)
        est = purity_estimate(psi, config)
        assert abs(est.value - 1.0) <= max(3 * est.stderr, 0.02)

    def test_maximally_mixed(self):
        rho = DensityMatrix.maximally_mixed(8)
        config = ProtocolConfig(3, 1, 0.1, 20_000, 1, 20_000, 112, ALG2)
        est = purity_estimate(rho, config)
        assert abs(est.value - 0.125) <= 3 * est.stderr

    def test_induced_state_against_oracle(self):
        rho = induced_state(InducedStateParams(3, 4), R.stream(113, 0))
        config = ProtocolConfig(3, 2, 0.1, 30_000, 1, 30_000, 114, ALG2)
        est = purity_estimate(rho, config)
        assert abs(est.value - purity(rho)) <= max(3 * est.stderr, 0.02)


class TestChooseParams:
    def test_zero_width_always_shared_basis(self):
        for n in (2, 4, 6, 8):
            for eps in (0.05, 0.1, 0.3):
                assert choose_params(n, 0, eps).protocol == ALG1

    def test_full_width_large_register_partial_swap(self):
        config = choose_params(8, 8, 0.1)
        assert config.protocol == ALG2
        assert config.n_batches == math.ceil(8.0 / 0.01)
        assert config.copies_per_batch == 1
        assert config.swap_copies == math.ceil(8.0 / 0.01)

    def test_tiny_epsilon_shared_basis(self):
        n = 6
        eps = 2.0**-n
        config = choose_params(n, n, eps)
        n1 = math.ceil(8.0 * max(1.0 / eps**2, 2.0 ** (n / 2.0) / eps))
        n2 = math.ceil(8.0 * 2.0 ** (n - n) / eps**2)
        assert n1 <= n2
        assert config.protocol == ALG1
        assert config.n_batches * config.copies_per_batch == n1

    def test_budget_product_exact(self):
        for n, k, eps in [(4, 0, 0.1), (6, 3, 0.1), (4, 2, 0.25)]:
            config = choose_params(n, k, eps)
            if config.protocol == ALG1:
                target = math.ceil(8.0 * max(1.0 / eps**2, 2.0 ** (n / 2.0) / eps))
                assert config.n_batches * config.copies_per_batch == target
                assert config.copies_per_batch <= 1 << n

    def test_tie_goes_to_shared_basis(self):
        # n=4, k=4, eps=0.1: both budgets are 800.
        config = choose_params(4, 4, 0.1)
        assert config.protocol == ALG1

    def test_epsilon_guard(self):
        with pytest.raises(InvariantViolation):
            choose_params(4, 0, 0.0)


class TestConfigValidation:
    def test_k_range(self):
        with pytest.raises(InvariantViolation):
            ProtocolConfig(2, 3, 0.1, 10, 1, 10, 0, ALG2)

    def test_positive_copies(self):
        with pytest.raises(InvariantViolation):
            ProtocolConfig(2, 1, 0.1, 0, 1, 10, 0, ALG2)

    def test_estimate_fields(self):
        with pytest.raises(InvariantViolation):
            Estimate(value=0.5, stderr=-0.1, samples=10)
        with pytest.raises(InvariantViolation):
            Estimate(value=0.5, stderr=0.1, samples=0)
