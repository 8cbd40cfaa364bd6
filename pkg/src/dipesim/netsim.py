"""Two-process protocol runs over TCP with a framed binary wire format.

The k-qubit quantum channel is simulated by serialising Alice's k-qubit
post-measurement density matrix (4^k complex entries; physically this is
k qubits, and the ledger accounts it as such).  Framing:

    frame := u32 payload-length (little-endian) | u8 type | payload

Payload layouts (all integers little-endian, floats IEEE-754 f64):

    HELLO              u8 protocol (1 or 2), u8 n, u8 k, u32 N_b, u32 m,
                       u32 N_k, u64 shared seed
    BATCH_META         u32 batch index, u64 unitary stream id
    CLASSICAL_OUTCOMES u32 count, count x u32
    QSTATE             u8 k, 4^k complex entries as (re, im) f64 pairs,
                       row-major
    FK_SAMPLE          i8 z
    RESULT             f64 w, f64 stderr (NaN when undefined)
    BYE                empty

Canonical session (one-way after the ack): Alice connects and sends HELLO;
Bob replies with an identical HELLO as acknowledgment, the only frame that
ever flows Bob to Alice.  Alice then streams the swap-phase QSTATEs (one
per copy, skipped entirely when k = 0), then per batch a BATCH_META
followed per copy by CLASSICAL_OUTCOMES then QSTATE, and finally BYE.
Bob samples his own outcomes from the shared-seed streams, so his estimate
and transcript are bit-identical to the in-process run.  FK_SAMPLE and
RESULT frames never cross the wire; they appear in Bob's optional binary
session log, which records the session in the same framing for replay.
"""

from __future__ import annotations

import socket
import struct
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as _rng
from .ensembles import haar_unitary
from .linalg import (
    DensityMatrix,
    InvariantViolation,
    measure_rotated_basis,
    measure_suffix_keep_prefix,
    trace_out_suffix,
)
from .protocols import (
    ALG1,
    ALG2,
    BatchRecord,
    Estimate,
    ProtocolConfig,
    Transcript,
    _collision_mean,
    _estimate_from_batches,
    _paired_swap_mean,
    _swap_plus_prob,
)

MSG_HELLO = 1
MSG_BATCH_META = 2
MSG_CLASSICAL_OUTCOMES = 3
MSG_QSTATE = 4
MSG_FK_SAMPLE = 5
MSG_RESULT = 6
MSG_BYE = 7

_HELLO_STRUCT = struct.Struct("<BBBIIIQ")
_BATCH_META_STRUCT = struct.Struct("<IQ")
_RESULT_STRUCT = struct.Struct("<dd")

DEFAULT_TIMEOUT = 30.0


class NetsimError(Exception):
    """Base for netsim aborts."""


class FrameError(NetsimError):
    """Malformed frame or unexpected message type."""


class DimensionMismatch(NetsimError):
    """Negotiated parameters disagree between the two endpoints."""


class QstateInvariantError(NetsimError):
    """A received QSTATE payload failed density-matrix validation."""


class ConnectionLost(NetsimError):
    """Peer closed the connection mid-protocol or a read timed out."""


@dataclass
class ChannelLedger:
    """Byte and qubit accounting for the Alice-to-Bob channel."""

    classical_bytes: int = 0
    quantum_payload_bytes: int = 0
    quantum_qubits_sent: int = 0
    frames: int = 0
    bob_to_alice_after_ack: int = 0

    def count(self, msg_type: int, payload_len: int, k: int) -> None:
        self.frames += 1
        if msg_type == MSG_QSTATE:
            self.quantum_payload_bytes += payload_len
            self.quantum_qubits_sent += k
        else:
            self.classical_bytes += 5 + payload_len


@dataclass
class AliceReport:
    """Alice's exit report: what she sent and that nothing came back."""

    ledger: ChannelLedger
    batches_sent: int
    frames_received_after_ack: int


@dataclass
class BobReport:
    """Bob's results: the estimate, channel accounting and his transcript."""

    estimate: Estimate
    ledger: ChannelLedger
    transcript: Transcript


# -- codec --------------------------------------------------------------------


def encode_hello(config: ProtocolConfig, protocol_id: int) -> bytes:
    return _HELLO_STRUCT.pack(
        protocol_id,
        config.n,
        config.k,
        config.n_batches,
        config.copies_per_batch,
        config.swap_copies,
        config.master_seed,
    )


def decode_hello(payload: bytes) -> tuple:
    if len(payload) != _HELLO_STRUCT.size:
        raise FrameError(f"HELLO payload has {len(payload)} bytes")
    return _HELLO_STRUCT.unpack(payload)


def encode_batch_meta(index: int, stream_id: int) -> bytes:
    return _BATCH_META_STRUCT.pack(index, stream_id)


def decode_batch_meta(payload: bytes) -> tuple:
    if len(payload) != _BATCH_META_STRUCT.size:
        raise FrameError(f"BATCH_META payload has {len(payload)} bytes")
    return _BATCH_META_STRUCT.unpack(payload)


def encode_outcomes(values) -> bytes:
    vals = [int(v) for v in values]
    return struct.pack(f"<I{len(vals)}I", len(vals), *vals)


def decode_outcomes(payload: bytes) -> list:
    if len(payload) < 4:
        raise FrameError("CLASSICAL_OUTCOMES payload too short")
    (count,) = struct.unpack_from("<I", payload)
    if len(payload) != 4 + 4 * count:
        raise FrameError("CLASSICAL_OUTCOMES length mismatch")
    return list(struct.unpack_from(f"<{count}I", payload, 4))


def encode_qstate(k: int, mat: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(mat, dtype=np.complex128).ravel()
    if arr.size != 1 << (2 * k):
        raise FrameError(f"QSTATE for k={k} needs {1 << (2 * k)} entries, got {arr.size}")
    flat = np.empty(2 * arr.size)
    flat[0::2] = arr.real
    flat[1::2] = arr.imag
    return struct.pack("<B", k) + flat.tobytes()


def decode_qstate(payload: bytes) -> tuple:
    if not payload:
        raise FrameError("empty QSTATE payload")
    k = payload[0]
    dim = 1 << k
    expected = 1 + 16 * dim * dim
    if len(payload) != expected:
        raise FrameError(f"QSTATE payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f8", offset=1)
    mat = (flat[0::2] + 1j * flat[1::2]).reshape(dim, dim)
    return k, mat


def encode_fk_sample(z: int) -> bytes:
    return struct.pack("<b", z)


def decode_fk_sample(payload: bytes) -> int:
    if len(payload) != 1:
        raise FrameError("FK_SAMPLE payload must be one byte")
    return struct.unpack("<b", payload)[0]


def encode_result(estimate: Estimate) -> bytes:
    stderr = estimate.stderr if estimate.stderr is not None else float("nan")
    return _RESULT_STRUCT.pack(estimate.value, stderr)


def decode_result(payload: bytes) -> tuple:
    if len(payload) != _RESULT_STRUCT.size:
        raise FrameError("RESULT payload must be two f64")
    return _RESULT_STRUCT.unpack(payload)


def pack_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return struct.pack("<IB", len(payload), msg_type) + payload


def unpack_frames(blob: bytes) -> list:
    """Split a byte string of concatenated frames into (type, payload) pairs."""
    frames = []
    pos = 0
    while pos < len(blob):
        if len(blob) - pos < 5:
            raise FrameError("truncated frame header")
        length, msg_type = struct.unpack_from("<IB", blob, pos)
        pos += 5
        if len(blob) - pos < length:
            raise FrameError("truncated frame payload")
        frames.append((msg_type, blob[pos : pos + length]))
        pos += length
    return frames


# -- socket helpers -----------------------------------------------------------


def _read_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except socket.timeout as exc:
            raise ConnectionLost("read timed out") from exc
        if not chunk:
            raise ConnectionLost("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> tuple:
    header = _read_exact(sock, 5)
    length, msg_type = struct.unpack("<IB", header)
    payload = _read_exact(sock, length) if length else b""
    return msg_type, payload


def _send_frame(sock: socket.socket, msg_type: int, payload: bytes, ledger: ChannelLedger, k: int):
    sock.sendall(pack_frame(msg_type, payload))
    ledger.count(msg_type, len(payload), k)


def _expect(msg_type: int, expected: int) -> None:
    if msg_type != expected:
        raise FrameError(f"expected message type {expected}, got {msg_type}")


def _connect_with_retry(endpoint: tuple, timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection(endpoint, timeout=timeout)
            sock.settimeout(timeout)
            return sock
        except OSError:
            if time.monotonic() >= deadline:
                raise ConnectionLost(f"could not connect to {endpoint}")
            time.sleep(0.05)


# -- endpoints ----------------------------------------------------------------


def run_alice(
    config: ProtocolConfig,
    rho: DensityMatrix,
    endpoint: tuple,
    timeout: float = DEFAULT_TIMEOUT,
) -> AliceReport:
    """Alice's side: measure her copies and stream outcomes plus k-qubit
    post states to Bob.  Returns her ledger and confirms the one-way
    property (nothing received after the HELLO ack)."""
    protocol_id = 1 if config.protocol == ALG1 else 2
    seed = config.master_seed
    n, k = config.n, config.k
    ledger = ChannelLedger()
    sock = _connect_with_retry(endpoint, timeout)
    try:
        _send_frame(sock, MSG_HELLO, encode_hello(config, protocol_id), ledger, k)
        msg_type, payload = _read_frame(sock)
        _expect(msg_type, MSG_HELLO)
        if decode_hello(payload) != decode_hello(encode_hello(config, protocol_id)):
            raise DimensionMismatch("HELLO acknowledgment does not match the configuration")
        alice = _rng.stream(seed, _rng.STREAM_ALICE)
        if protocol_id == 2 and k > 0:
            rho_k = trace_out_suffix(rho.mat, k)
            qpayload = encode_qstate(k, rho_k)
            for _ in range(config.swap_copies):
                _send_frame(sock, MSG_QSTATE, qpayload, ledger, k)
        for index in range(config.n_batches):
            sid = _rng.batch_stream_id(index)
            _send_frame(sock, MSG_BATCH_META, encode_batch_meta(index, sid), ledger, k)
            u = _batch_unitary(seed, sid, rho.dim if protocol_id == 1 else 1 << (n - k))
            if protocol_id == 1:
                xs = [measure_rotated_basis(rho, u, alice) for _ in range(config.copies_per_batch)]
                _send_frame(sock, MSG_CLASSICAL_OUTCOMES, encode_outcomes(xs), ledger, k)
            else:
                for _ in range(config.copies_per_batch):
                    x, post = measure_suffix_keep_prefix(rho, u, k, alice)
                    _send_frame(sock, MSG_CLASSICAL_OUTCOMES, encode_outcomes([x]), ledger, k)
                    if k > 0:
                        _send_frame(sock, MSG_QSTATE, encode_qstate(k, post.mat), ledger, k)
        _send_frame(sock, MSG_BYE, b"", ledger, k)
        # One-way property: nothing may arrive after the ack; a clean EOF
        # is the only acceptable read result.
        received_after_ack = 0
        try:
            if sock.recv(1):
                received_after_ack = 1
        except (socket.timeout, OSError):
            pass
        return AliceReport(
            ledger=ledger,
            batches_sent=config.n_batches,
            frames_received_after_ack=received_after_ack,
        )
    finally:
        sock.close()


def run_bob(
    config: ProtocolConfig,
    sigma: DensityMatrix,
    endpoint: tuple = None,
    timeout: float = DEFAULT_TIMEOUT,
    listener: Optional[socket.socket] = None,
    session_log: Optional[str] = None,
) -> BobReport:
    """Bob's side: receive Alice's stream, draw his own outcomes from the
    shared-seed streams and produce the estimate.

    Pass either ``endpoint`` (bind address) or an already-listening
    ``listener`` socket.  ``session_log`` writes every received frame plus
    Bob's FK_SAMPLE and RESULT frames to a replayable binary log.
    """
    own = None
    if listener is None:
        own = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        own.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        own.bind(endpoint)
        own.listen(1)
        listener = own
    listener.settimeout(timeout)
    try:
        try:
            conn, _ = listener.accept()
        except socket.timeout as exc:
            raise ConnectionLost("no connection before timeout") from exc
    finally:
        if own is not None:
            own.close()
    conn.settimeout(timeout)
    log_frames = []
    ledger = ChannelLedger()

    def read_frame() -> tuple:
        msg_type, payload = _read_frame(conn)
        ledger.count(msg_type, len(payload), config.k)
        if session_log is not None:
            log_frames.append((msg_type, payload))
        return msg_type, payload

    try:
        msg_type, payload = read_frame()
        _expect(msg_type, MSG_HELLO)
        hello = decode_hello(payload)
        protocol_id = 1 if config.protocol == ALG1 else 2
        expected = decode_hello(encode_hello(config, protocol_id))
        if hello != expected:
            raise DimensionMismatch(f"HELLO {hello} does not match local configuration {expected}")
        conn.sendall(pack_frame(MSG_HELLO, payload))
        report = _bob_session(config, sigma, protocol_id, read_frame, ledger)
        if session_log is not None:
            for z in report.transcript.fk_outcomes:
                log_frames.append((MSG_FK_SAMPLE, encode_fk_sample(z)))
            log_frames.append((MSG_RESULT, encode_result(report.estimate)))
            with open(session_log, "wb") as fh:
                for msg_type, payload in log_frames:
                    fh.write(pack_frame(msg_type, payload))
        return report
    finally:
        conn.close()


def _bob_session(
    config: ProtocolConfig,
    sigma: DensityMatrix,
    protocol_id: int,
    read_frame,
    ledger: ChannelLedger,
) -> BobReport:
    seed = config.master_seed
    n, k = config.n, config.k
    nb, m = config.n_batches, config.copies_per_batch
    d_suffix = 1 << (n - k)
    bob = _rng.stream(seed, _rng.STREAM_BOB)
    transcript = Transcript(protocol=ALG1 if protocol_id == 1 else ALG2, master_seed=seed)
    w_values = np.empty(nb)
    fk_value = 0.0
    if protocol_id == 2:
        fk_gen = _rng.stream(seed, _rng.STREAM_FK)
        sigma_k = trace_out_suffix(sigma.mat, k)
        fk_z = []
        for _ in range(config.swap_copies):
            if k > 0:
                msg_type, payload = read_frame()
                _expect(msg_type, MSG_QSTATE)
                rho_k = _validated_qstate(payload, k)
                p_plus = _swap_plus_prob(rho_k, sigma_k)
            else:
                # Scalar marginals: f_0 = 1 exactly, the swap phase is
                # deterministic; the draw is still consumed.
                p_plus = 1.0
            fk_z.append(1 if fk_gen.random() < p_plus else -1)
        fk_arr = np.array(fk_z)
        fk_value = float(np.mean(fk_arr))
        transcript.fk_outcomes = [int(v) for v in fk_z]
    for index in range(nb):
        msg_type, payload = read_frame()
        _expect(msg_type, MSG_BATCH_META)
        batch_index, stream_id = decode_batch_meta(payload)
        if batch_index != index:
            raise FrameError(f"batch {batch_index} arrived out of order (expected {index})")
        u = _batch_unitary(seed, stream_id, sigma.dim if protocol_id == 1 else d_suffix)
        if protocol_id == 1:
            msg_type, payload = read_frame()
            _expect(msg_type, MSG_CLASSICAL_OUTCOMES)
            xs = decode_outcomes(payload)
            if len(xs) != m:
                raise FrameError(f"expected {m} outcomes, got {len(xs)}")
            ys = [measure_rotated_basis(sigma, u, bob) for _ in range(m)]
            g = _collision_mean(np.array(xs), np.array(ys))
            w_values[index] = (sigma.dim + 1) * g - 1.0
            transcript.batches.append(
                BatchRecord(index=index, unitary_stream=stream_id, x=xs, y=ys)
            )
        else:
            xs, ys, zs = [], [], []
            for _ in range(m):
                msg_type, payload = read_frame()
                _expect(msg_type, MSG_CLASSICAL_OUTCOMES)
                outcomes = decode_outcomes(payload)
                if len(outcomes) != 1:
                    raise FrameError("per-copy CLASSICAL_OUTCOMES must carry one value")
                x = outcomes[0]
                if k > 0:
                    msg_type, payload = read_frame()
                    _expect(msg_type, MSG_QSTATE)
                    post_a = DensityMatrix(_validated_qstate(payload, k), validate=False)
                else:
                    post_a = DensityMatrix(np.eye(1, dtype=np.complex128), validate=False)
                y, post_b = measure_suffix_keep_prefix(sigma, u, k, bob)
                p_plus = _swap_plus_prob(post_a.mat, post_b.mat)
                z = 1 if bob.random() < p_plus else -1
                xs.append(int(x))
                ys.append(y)
                zs.append(z)
            g = _paired_swap_mean(np.array(xs), np.array(ys), np.array(zs))
            w_values[index] = (d_suffix + 1) * g - fk_value
            transcript.batches.append(
                BatchRecord(index=index, unitary_stream=stream_id, x=xs, y=ys, z=zs)
            )
    msg_type, _ = read_frame()
    _expect(msg_type, MSG_BYE)
    samples = nb * m + (config.swap_copies if protocol_id == 2 else 0)
    estimate = _estimate_from_batches(w_values, samples=samples)
    return BobReport(estimate=estimate, ledger=ledger, transcript=transcript)


def _batch_unitary(seed: int, stream_id: int, dim: int):
    """Shared per-batch basis; a 1-dimensional basis is an unused global
    phase and is skipped (matching the in-process runners)."""
    from .linalg import UnitaryMatrix

    if dim == 1:
        return UnitaryMatrix.identity(1)
    return haar_unitary(dim, _rng.stream(seed, stream_id))


def _validated_qstate(payload: bytes, k: int) -> np.ndarray:
    got_k, mat = decode_qstate(payload)
    if got_k != k:
        raise DimensionMismatch(f"QSTATE carries k={got_k}, expected {k}")
    try:
        DensityMatrix(mat)
    except InvariantViolation as exc:
        raise QstateInvariantError(str(exc)) from exc
    return mat
