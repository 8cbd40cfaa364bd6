"""Two-process TCP runs: wire codec, session equivalence with in-process
runs, channel accounting and the one-way property."""

import math
import multiprocessing as mp
import socket
import threading

import numpy as np
import pytest

from dipesim import netsim
from dipesim import rng as R
from dipesim.ensembles import InducedStateParams, induced_state
from dipesim.protocols import ALG1, ALG2, Estimate, ProtocolConfig, alg1_run, alg2_run


def seeded_pair(n: int, seed: int):
    gen = R.stream(seed, 0)
    return (
        induced_state(InducedStateParams(n, 3), gen),
        induced_state(InducedStateParams(n, 2), gen),
    )


def tcp_run(config, rho, sigma, session_log=None, timeout=30.0):
    """One Alice/Bob session over loopback TCP in two OS processes."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    port = listener.getsockname()[1]
    ctx = mp.get_context("fork")
    queue = ctx.Queue()

    def bob_proc():
        report = netsim.run_bob(
            config, sigma, listener=listener, timeout=timeout, session_log=session_log
        )
        queue.put((report.estimate, report.ledger, report.transcript))

    bob = ctx.Process(target=bob_proc)
    bob.start()
    alice_report = netsim.run_alice(config, rho, ("127.0.0.1", port), timeout=timeout)
    estimate, ledger, transcript = queue.get(timeout=timeout)
    bob.join(timeout=timeout)
    listener.close()
    return alice_report, netsim.BobReport(estimate=estimate, ledger=ledger, transcript=transcript)


class TestCodec:
    def test_hello_roundtrip(self):
        config = ProtocolConfig(3, 1, 0.1, 40, 2, 25, 12345, ALG2)
        payload = netsim.encode_hello(config, 2)
        assert netsim.decode_hello(payload) == (2, 3, 1, 40, 2, 25, 12345)

    def test_batch_meta_roundtrip(self):
        payload = netsim.encode_batch_meta(7, 11)
        assert netsim.decode_batch_meta(payload) == (7, 11)

    def test_outcomes_roundtrip(self):
        payload = netsim.encode_outcomes([3, 0, 9])
        assert netsim.decode_outcomes(payload) == [3, 0, 9]

    def test_qstate_bit_exact(self):
        gen = R.stream(0, 0)
        rho = induced_state(InducedStateParams(2, 3), gen)
        payload = netsim.encode_qstate(2, rho.mat)
        k, mat = netsim.decode_qstate(payload)
        assert k == 2
        assert np.array_equal(mat, rho.mat)

    def test_fk_sample_roundtrip(self):
        assert netsim.decode_fk_sample(netsim.encode_fk_sample(-1)) == -1
        assert netsim.decode_fk_sample(netsim.encode_fk_sample(1)) == 1

    def test_result_roundtrip(self):
        est = Estimate(value=0.375, stderr=0.01, samples=5)
        assert netsim.decode_result(netsim.encode_result(est)) == (0.375, 0.01)
        missing = Estimate(value=0.5, stderr=None, samples=5)
        w, se = netsim.decode_result(netsim.encode_result(missing))
        assert w == 0.5 and math.isnan(se)

    def test_frame_stream_roundtrip(self):
        blob = netsim.pack_frame(netsim.MSG_BYE) + netsim.pack_frame(
            netsim.MSG_FK_SAMPLE, netsim.encode_fk_sample(1)
        )
        frames = netsim.unpack_frames(blob)
        assert [t for t, _ in frames] == [netsim.MSG_BYE, netsim.MSG_FK_SAMPLE]

    def test_malformed_frames(self):
        with pytest.raises(netsim.FrameError):
            netsim.unpack_frames(b"\x01\x00")
        with pytest.raises(netsim.FrameError):
            netsim.unpack_frames(netsim.pack_frame(netsim.MSG_BYE)[:-1] + b"\x05\x00\x00\x00\x01")
        with pytest.raises(netsim.FrameError):
            netsim.decode_outcomes(b"\x02\x00\x00\x00\x01\x00\x00\x00")
        with pytest.raises(netsim.FrameError):
            netsim.decode_qstate(b"")


class TestSession:
    def test_partial_swap_session_bit_identical(self):
        rho, sigma = seeded_pair(3, 5)
        config = ProtocolConfig(3, 1, 0.1, 30, 2, 25, 55, ALG2)
        est_ip, tr_ip = alg2_run(rho, sigma, config)
        alice_report, bob_report = tcp_run(config, rho, sigma)
        assert bob_report.estimate.value == est_ip.value
        assert bob_report.estimate.stderr == est_ip.stderr
        assert bob_report.transcript == tr_ip
        assert alice_report.frames_received_after_ack == 0

    def test_shared_basis_session_bit_identical(self):
        rho, sigma = seeded_pair(2, 6)
        config = ProtocolConfig(2, 0, 0.1, 25, 4, 1, 66, ALG1)
        est_ip, tr_ip = alg1_run(rho, sigma, config)
        alice_report, bob_report = tcp_run(config, rho, sigma)
        assert bob_report.estimate.value == est_ip.value
        assert bob_report.transcript == tr_ip
        # no quantum channel in the shared-basis protocol
        assert bob_report.ledger.quantum_qubits_sent == 0
        assert bob_report.ledger.quantum_payload_bytes == 0

    def test_zero_width_sends_no_qstate(self):
        rho, sigma = seeded_pair(2, 7)
        config = ProtocolConfig(2, 0, 0.1, 10, 1, 8, 77, ALG2)
        _, bob_report = tcp_run(config, rho, sigma)
        assert bob_report.ledger.quantum_qubits_sent == 0
        assert bob_report.ledger.quantum_payload_bytes == 0

    def test_qubit_accounting_full_width(self):
        rho, sigma = seeded_pair(2, 8)
        config = ProtocolConfig(2, 2, 0.1, 12, 2, 9, 88, ALG2)
        _, bob_report = tcp_run(config, rho, sigma)
        assert bob_report.ledger.quantum_qubits_sent == 2 * (12 * 2 + 9)
        per_state = 1 + 16 * (1 << 2) ** 2
        assert bob_report.ledger.quantum_payload_bytes == per_state * (12 * 2 + 9)

    def test_ledgers_agree_between_parties(self):
        rho, sigma = seeded_pair(2, 9)
        config = ProtocolConfig(2, 1, 0.1, 10, 2, 6, 99, ALG2)
        alice_report, bob_report = tcp_run(config, rho, sigma)
        # Alice counts her HELLO; Bob counts the same set of received
        # frames (his ack is not on his receive ledger).
        assert alice_report.ledger.quantum_qubits_sent == bob_report.ledger.quantum_qubits_sent
        assert alice_report.ledger.quantum_payload_bytes == bob_report.ledger.quantum_payload_bytes
        assert alice_report.ledger.classical_bytes == bob_report.ledger.classical_bytes

    def test_session_log_replayable(self, tmp_path):
        rho, sigma = seeded_pair(2, 10)
        config = ProtocolConfig(2, 1, 0.1, 5, 1, 4, 101, ALG2)
        log = tmp_path / "session.bin"
        _, bob_report = tcp_run(config, rho, sigma, session_log=str(log))
        frames = netsim.unpack_frames(log.read_bytes())
        types = [t for t, _ in frames]
        assert types[0] == netsim.MSG_HELLO
        assert types[-1] == netsim.MSG_RESULT
        fk = [netsim.decode_fk_sample(p) for t, p in frames if t == netsim.MSG_FK_SAMPLE]
        assert fk == bob_report.transcript.fk_outcomes
        w, se = netsim.decode_result(frames[-1][1])
        assert w == bob_report.estimate.value

    def test_config_mismatch_aborts(self):
        rho, sigma = seeded_pair(2, 11)
        config_a = ProtocolConfig(2, 1, 0.1, 5, 1, 4, 11, ALG2)
        config_b = ProtocolConfig(2, 1, 0.1, 6, 1, 4, 11, ALG2)
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]
        errors = []

        def bob():
            try:
                netsim.run_bob(config_b, sigma, listener=listener, timeout=10)
            except netsim.NetsimError as exc:
                errors.append(exc)

        thread = threading.Thread(target=bob)
        thread.start()
        with pytest.raises(netsim.NetsimError):
            netsim.run_alice(config_a, rho, ("127.0.0.1", port), timeout=10)
        thread.join(timeout=10)
        listener.close()
        assert errors and isinstance(errors[0], netsim.DimensionMismatch)

    def test_connection_timeout(self):
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        config = ProtocolConfig(2, 1, 0.1, 5, 1, 4, 12, ALG2)
        sigma = seeded_pair(2, 12)[1]
        with pytest.raises(netsim.ConnectionLost):
            netsim.run_bob(config, sigma, listener=listener, timeout=0.2)
        listener.close()

    def test_multi_seed_equivalence(self):
        # Small-scale version of the netsim acceptance criterion.
        for seed in range(5):
            rho, sigma = seeded_pair(2, 200 + seed)
            config = ProtocolConfig(2, 1, 0.1, 8, 1, 5, 300 + seed, ALG2)
            est_ip, _ = alg2_run(rho, sigma, config, record_transcript=False)
            _, bob_report = tcp_run(config, rho, sigma)
            assert bob_report.estimate.value == est_ip.value
