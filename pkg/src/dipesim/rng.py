"""Counter-based random streams for reproducible simulation runs.

Every random quantity in this package is drawn from a Philox-backed numpy
Generator keyed by a ``(seed, stream_id)`` pair.  Philox is counter-based,
so any component of a run can be regenerated in isolation and two OS
processes can derive identical unitaries from nothing but the shared seed.

Stream ids used by the protocol runners (see :mod:`dipesim.protocols`):

====  ==============================================================
 0    input-state sourcing (CLI-level sampling)
 1    partial-swap phase outcomes, receiver side
 2    Alice's per-copy basis draws, consumed in batch order (m per batch)
 3    Bob's per-copy draws; in the k-qubit protocol each copy consumes
      two draws, basis outcome then swap outcome (2m per batch)
 4+i  batch i's shared unitary stream
====  ==============================================================

Gaussians come from the Box-Muller transform applied to uniform draws,
never from the Generator's own ziggurat sampler, so the uniform stream
fully determines every sample and the construction is portable.
"""

from __future__ import annotations

import numpy as np

STREAM_STATE = 0
STREAM_FK = 1
STREAM_ALICE = 2
STREAM_BOB = 3
STREAM_BATCH_BASE = 4

_MASK64 = (1 << 64) - 1


def stream(seed: int, stream_id: int) -> np.random.Generator:
    """Generator for the Philox stream keyed by (seed, stream_id)."""
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def batch_stream_id(index: int) -> int:
    """Stream id of batch ``index``'s shared unitary stream."""
    return STREAM_BATCH_BASE + index


def box_muller(uniforms: np.ndarray) -> np.ndarray:
    """Box-Muller transform along the last axis (even length required).

    Pair ``p`` uses uniforms ``(u[2p], u[2p+1])``; ``log1p(-u)`` keeps the
    radial term finite at u = 0.  Purely elementwise, so applying it to a
    stack of rows is bit-identical to transforming each row separately.
    """
    u1 = uniforms[..., 0::2]
    u2 = uniforms[..., 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    out = np.empty_like(uniforms)
    out[..., 0::2] = r * np.cos(2.0 * np.pi * u2)
    out[..., 1::2] = r * np.sin(2.0 * np.pi * u2)
    return out


def standard_normals(gen: np.random.Generator, count: int) -> np.ndarray:
    """``count`` standard normals via Box-Muller pairs; consumes
    ``2 * ceil(count / 2)`` uniforms."""
    pairs = (count + 1) // 2
    return box_muller(gen.random(2 * pairs))[:count]


def complex_from_normals(z: np.ndarray) -> np.ndarray:
    """Interleaved normals to standard complex normals along the last axis:
    entry j is (z[2j] + i z[2j+1]) / sqrt(2)."""
    return (z[..., 0::2] + 1j * z[..., 1::2]) / np.sqrt(2.0)


def complex_normals(gen: np.random.Generator, count: int) -> np.ndarray:
    """``count`` standard complex normals; entry ``j`` is built from
    Box-Muller pair ``j``."""
    return complex_from_normals(standard_normals(gen, 2 * count))


def stream_uniform_block(seed: int, stream_ids, draws: int) -> np.ndarray:
    """First ``draws`` uniforms of each stream, one row per stream id.

    Bit-identical to ``stream(seed, sid).random(draws)`` per row; a single
    Philox bit generator is re-keyed in place, which avoids per-stream
    construction overhead in batch-heavy runs.
    """
    ids = list(stream_ids)
    bit_gen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
    gen = np.random.Generator(bit_gen)
    state = dict(bit_gen.state)
    out = np.empty((len(ids), draws))
    zero_counter = np.zeros(4, dtype=np.uint64)
    for row, sid in enumerate(ids):
        state["state"] = {
            "counter": zero_counter,
            "key": np.array([seed & _MASK64, sid & _MASK64], dtype=np.uint64),
        }
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bit_gen.state = state
        out[row] = gen.random(draws)
    return out
