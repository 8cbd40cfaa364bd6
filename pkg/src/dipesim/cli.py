"""Command-line harness: run protocols, identity-check suites, parameter
sweeps and distinguishing experiments; write CSV.

Determinism contract: every random quantity flows from --seed (drawn from
OS entropy and recorded in the output when absent), and re-running with
the same seed reproduces the CSV byte-for-byte except for the wall-time
column.  Config precedence: CLI flags override --config key=value entries,
which override built-in defaults.

Exit codes: 0 success, 1 usage error, 2 numeric-invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import secrets
import sys
import time

import numpy as np

from . import identities, netsim, oracles, protocols
from . import rng as _rng
from .ensembles import (
    InducedStateParams,
    MixtureParams,
    convex_mixture,
    haar_state,
    haar_unitary,
    induced_state,
)
from .linalg import DensityMatrix, DimCapExceeded, InvariantViolation, dim_cap
from .protocols import (
    ALG1,
    ALG2,
    DEFAULT_CALIBRATION,
    Estimate,
    ProtocolConfig,
    choose_params,
    purity_estimate,
    swap_test_sample,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


RUN_HEADER = [
    "run_id",
    "protocol",
    "n",
    "k",
    "epsilon",
    "N_b",
    "m",
    "N_k",
    "seed",
    "estimate",
    "stderr",
    "exact",
    "abs_error",
    "wall_ms",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _CsvSink:
    """Appends rows to a file (header written once) or buffers for stdout."""

    def __init__(self, path: str, header: list):
        self.path = path
        self.header = header
        self.rows = []

    def write(self, row: list) -> None:
        self.rows.append([_fmt(v) for v in row])

    def flush(self) -> None:
        if self.path == "-":
            out = sys.stdout
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(self.header)
            writer.writerows(self.rows)
            return
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                has_header = bool(fh.readline().strip())
        except FileNotFoundError:
            has_header = False
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if not has_header:
                writer.writerow(self.header)
            writer.writerows(self.rows)


def _load_config_file(path: str) -> dict:
    values = {}
    if not path:
        return values
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"bad config line: {line!r}")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return values


def _resolve(args, file_values: dict, key: str, default, cast):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_values:
        return cast(file_values[key])
    return default


def _resolve_seed(args, file_values: dict) -> int:
    seed = _resolve(args, file_values, "seed", None, int)
    if seed is None:
        seed = secrets.randbits(63)
    return seed


def parse_state(spec: str, n: int, gen: np.random.Generator) -> DensityMatrix:
    """Resolve a state-source string: haar, induced:dE, mixture:r, mixed,
    pure-basis, file:path."""
    d = 1 << n
    if d > dim_cap():
        raise DimCapExceeded(f"2**n = {d} exceeds cap {dim_cap()}")
    if spec == "haar":
        return haar_state(d, gen)
    if spec.startswith("induced:"):
        return induced_state(InducedStateParams(n, int(spec.split(":", 1)[1])), gen)
    if spec.startswith("mixture:"):
        return convex_mixture(MixtureParams(d, int(spec.split(":", 1)[1])), gen)
    if spec == "mixed":
        return DensityMatrix.maximally_mixed(d)
    if spec == "pure-basis":
        return DensityMatrix.basis(d, 0)
    if spec.startswith("file:"):
        return DensityMatrix(np.load(spec.split(":", 1)[1]))
    raise UsageError(f"unknown state source {spec!r}")


def _state_pair(state_a: str, state_b: str, n: int, seed: int) -> tuple:
    gen = _rng.stream(seed, _rng.STREAM_STATE)
    rho = parse_state(state_a, n, gen)
    sigma = rho if state_b == "same" else parse_state(state_b, n, gen)
    return rho, sigma


def _default_config(protocol: str, n: int, k: int, epsilon: float, args, fvals) -> ProtocolConfig:
    """Fill N_b/m/N_k from flags, falling back to the calibrated budget."""
    c = _resolve(args, fvals, "calibration", DEFAULT_CALIBRATION, float)
    nk = _resolve(args, fvals, "nk", None, int)
    nb = _resolve(args, fvals, "nb", None, int)
    m = _resolve(args, fvals, "m", None, int)
    if protocol == ALG1:
        base = choose_params(n, k, epsilon, c)
        if base.protocol != ALG1:
            n1 = math.ceil(c * max(1.0 / epsilon**2, 2.0 ** (n / 2.0) / epsilon))
            mm = protocols._largest_divisor_at_most(n1, min(1 << n, n1))
            base = ProtocolConfig(n, k, epsilon, n1 // mm, mm, base.swap_copies, 0, ALG1)
    else:
        n2 = math.ceil(c * 2.0 ** (n - k) / epsilon**2)
        base = ProtocolConfig(n, k, epsilon, n2, 1, math.ceil(c / epsilon**2), 0, ALG2)
    return ProtocolConfig(
        n=n,
        k=k,
        epsilon=epsilon,
        n_batches=nb if nb is not None else base.n_batches,
        copies_per_batch=m if m is not None else base.copies_per_batch,
        swap_copies=nk if nk is not None else base.swap_copies,
        master_seed=0,
        protocol=protocol,
    )


# -- estimate ------------------------------------------------------------------


def cmd_estimate(args) -> int:
    fvals = _load_config_file(args.config)
    n = _resolve(args, fvals, "n", 3, int)
    k = _resolve(args, fvals, "k", 0, int)
    epsilon = _resolve(args, fvals, "epsilon", 0.1, float)
    runs = _resolve(args, fvals, "runs", 1, int)
    base_seed = _resolve_seed(args, fvals)
    protocol = args.protocol
    sink = _CsvSink(args.out, RUN_HEADER)
    for run_index in range(runs):
        seed = (base_seed + run_index) & ((1 << 63) - 1)
        rho, sigma = _state_pair(args.state_a, args.state_b, n, seed)
        start = time.perf_counter()
        if protocol == "swap":
            nk = _resolve(args, fvals, "nk", math.ceil(8.0 / epsilon**2), int)
            gen = _rng.stream(seed, _rng.STREAM_FK)
            zs = np.array([swap_test_sample(rho, sigma, gen) for _ in range(nk)], dtype=float)
            est = Estimate(
                value=float(zs.mean()),
                stderr=float(zs.std(ddof=1) / math.sqrt(nk)) if nk >= 2 else None,
                samples=nk,
            )
            config = ProtocolConfig(n, k, epsilon, 1, 1, nk, seed, None)
            exact = oracles.inner_product(rho, sigma)
        elif protocol == "purity":
            config = _default_config(ALG2, n, k, epsilon, args, fvals).with_seed(seed)
            est = purity_estimate(rho, config)
            exact = oracles.purity(rho)
        else:
            config = _default_config(protocol, n, k, epsilon, args, fvals).with_seed(seed)
            est, _ = protocols.run_protocol(rho, sigma, config, record_transcript=False)
            exact = oracles.inner_product(rho, sigma)
        wall_ms = (time.perf_counter() - start) * 1000.0
        sink.write(
            [
                run_index,
                protocol,
                n,
                k,
                epsilon,
                config.n_batches,
                config.copies_per_batch,
                config.swap_copies,
                seed,
                est.value,
                est.stderr,
                exact,
                abs(est.value - exact),
                f"{wall_ms:.3f}",
            ]
        )
    sink.flush()
    return EXIT_OK


# -- check ---------------------------------------------------------------------


def _single_check(args, seed: int) -> list:
    gen = _rng.stream(seed, 1)
    name = args.name
    if name == "haar_moment":
        return [identities.check_haar_moment(args.d, args.t, args.samples or 100_000, gen)]
    if name == "chiribella":
        rho = identities._seeded_sym_state(args.d, args.a, _rng.stream(seed, 0))
        return [identities.check_chiribella(args.d, args.a, args.b, rho)]
    if name == "mp_bound":
        rho = identities._seeded_sym_state(args.d, args.a, _rng.stream(seed, 0))
        return [
            identities.check_mp_bound(args.d, args.a, args.b, rho, corrected=True),
            identities.check_mp_bound(args.d, args.a, args.b, rho, corrected=False),
        ]
    if name == "perm_inequality":
        d = args.d
        rx = identities._seeded_state(d**args.x, _rng.stream(seed, 0))
        ry = identities._seeded_state(d**args.y, _rng.stream(seed, 0))
        return [identities.check_perm_inequality(rx, ry, args.x, args.y)]
    if name == "stirling":
        return [identities.check_stirling_identity(args.t, args.x)]
    if name == "likelihood":
        leaf = [int(ch) for ch in args.leaf] if args.leaf else [0] * args.t
        return [
            identities.check_likelihood_ratio(
                args.d, args.de, args.t, leaf, args.samples or 200_000, gen
            )
        ]
    if name == "likelihood_norm":
        return [identities.check_likelihood_normalization(args.d, args.de, args.t)]
    if name == "collision_moments":
        return [identities.check_collision_moments(args.d, args.t, args.samples or 100_000, gen)]
    if name == "povm_swap_bound":
        return [identities.check_povm_swap_bound(args.instance, args.n, args.k, gen)]
    if name == "induced_moments":
        return [identities.check_induced_moments(args.n, args.de, args.samples or 100_000, gen)]
    raise UsageError(f"unknown check {name!r}")


def cmd_check(args) -> int:
    seed = args.seed if args.seed is not None else secrets.randbits(63)
    sink = _CsvSink(args.out, identities.CSV_HEADER)
    reports = []
    if args.name:
        for i in range(args.seeds):
            reports.extend(_single_check(args, seed + i))
    else:
        for i in range(args.seeds):
            s = seed + i
            if args.suite in ("exact", "all"):
                reports.extend(identities.exact_suite(s))
            if args.suite in ("mp", "all"):
                reports.extend(identities.mp_suite(s))
            if args.suite in ("mc", "all"):
                reports.extend(identities.mc_suite(s))
    for rep in reports:
        sink.write(identities.report_row(rep))
    sink.flush()
    passed = sum(1 for r in reports if r.passed)
    print(f"checks: {passed}/{len(reports)} passed", file=sys.stderr)
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------


VARIANCE_HEADER = [
    "n",
    "k",
    "epsilon",
    "N_b",
    "m",
    "N_k",
    "seed",
    "var_wi",
    "mean_w",
    "exact",
    "wall_ms",
]
ERROR_HEADER = ["n", "k", "epsilon", "N", "reps", "seed", "mean_abs_error", "success_rate"]
EPSILON_HEADER = [
    "n",
    "k",
    "epsilon",
    "protocol",
    "N",
    "N_k",
    "reps",
    "seed",
    "success_rate",
    "mean_abs_error",
]


def variance_sweep(n: int, k_list: list, n_batches: int, n_swap: int, seed: int) -> list:
    """Per-batch variance of the partial-swap protocol at m=1 across k.

    Runs the purity-style instance (both parties hold the same seeded
    induced state, ancilla dimension 2) and shares it across all k so the
    scaling is a paired comparison.  var(w_i) is recovered from the
    batch-mean standard error as stderr^2 * N_b.
    """
    gen = _rng.stream(seed, _rng.STREAM_STATE)
    rows = []
    rho = induced_state(InducedStateParams(n, 2), gen)
    sigma = rho
    exact = oracles.inner_product(rho, sigma)
    for idx, k in enumerate(k_list):
        config = ProtocolConfig(n, k, 0.1, n_batches, 1, n_swap, seed + idx + 1, ALG2)
        start = time.perf_counter()
        est, _ = protocols.alg2_run(rho, sigma, config, record_transcript=False)
        wall_ms = (time.perf_counter() - start) * 1000.0
        var_wi = est.stderr**2 * n_batches
        rows.append([n, k, 0.1, n_batches, 1, n_swap, seed + idx + 1, var_wi, est.value, exact, f"{wall_ms:.3f}"])
    return rows


def fit_log2_slope(k_values, variances) -> float:
    """Least-squares slope of log2(var) against k."""
    x = np.asarray(k_values, dtype=float)
    y = np.log2(np.asarray(variances, dtype=float))
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def _error_cell(cell) -> list:
    n, k, epsilon, total, reps, seed, idx = cell
    errors = []
    for rep in range(reps):
        s = seed + idx * 10_000 + rep
        rho, sigma = _state_pair("haar", "haar", n, s)
        config = ProtocolConfig(n, k, epsilon, total, 1, max(100, total), s, ALG2)
        est, _ = protocols.alg2_run(rho, sigma, config, record_transcript=False)
        errors.append(abs(est.value - oracles.inner_product(rho, sigma)))
    errors = np.array(errors)
    return [n, k, epsilon, total, reps, seed, float(errors.mean()), float((errors <= epsilon).mean())]


def _epsilon_cell(cell) -> list:
    n, k, epsilon, reps, seed, c, idx = cell
    config = choose_params(n, k, epsilon, c)
    hits = []
    errors = []
    for rep in range(reps):
        s = seed + idx * 10_000 + rep
        rho, sigma = _state_pair("haar", "haar", n, s)
        est, _ = protocols.run_protocol(rho, sigma, config.with_seed(s), record_transcript=False)
        err = abs(est.value - oracles.inner_product(rho, sigma))
        errors.append(err)
        hits.append(err <= epsilon)
    return [
        n,
        k,
        epsilon,
        config.protocol,
        config.n_batches * config.copies_per_batch,
        config.swap_copies,
        reps,
        seed,
        float(np.mean(hits)),
        float(np.mean(errors)),
    ]


def _map_cells(worker, cells, workers: int) -> list:
    """Run independent sweep cells, optionally in a process pool; results
    come back in grid order either way."""
    if workers <= 1:
        return [worker(cell) for cell in cells]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, cells))


def error_sweep(n: int, k: int, epsilon: float, n_list: list, reps: int, seed: int, workers: int = 1) -> list:
    cells = [(n, k, epsilon, total, reps, seed, idx) for idx, total in enumerate(n_list)]
    return _map_cells(_error_cell, cells, workers)


def epsilon_sweep(n: int, k: int, eps_list: list, reps: int, seed: int, c: float, workers: int = 1) -> list:
    cells = [(n, k, epsilon, reps, seed, c, idx) for idx, epsilon in enumerate(eps_list)]
    return _map_cells(_epsilon_cell, cells, workers)


def cmd_sweep(args) -> int:
    fvals = _load_config_file(args.config)
    seed = _resolve_seed(args, fvals)
    if args.kind == "variance":
        n = _resolve(args, fvals, "n", 6, int)
        k_list = [int(v) for v in (args.k_list or "0,2,4,6").split(",")]
        nb = _resolve(args, fvals, "nb", 20_000, int)
        nk = _resolve(args, fvals, "nk", 2_000, int)
        rows = variance_sweep(n, k_list, nb, nk, seed)
        sink = _CsvSink(args.out, VARIANCE_HEADER)
    elif args.kind == "error":
        n = _resolve(args, fvals, "n", 4, int)
        k = _resolve(args, fvals, "k", 2, int)
        epsilon = _resolve(args, fvals, "epsilon", 0.1, float)
        n_list = [int(v) for v in (args.n_list or "125,250,500,1000,2000,4000").split(",")]
        reps = _resolve(args, fvals, "reps", 20, int)
        workers = _resolve(args, fvals, "workers", 1, int)
        rows = error_sweep(n, k, epsilon, n_list, reps, seed, workers)
        sink = _CsvSink(args.out, ERROR_HEADER)
    elif args.kind == "epsilon":
        n = _resolve(args, fvals, "n", 4, int)
        k = _resolve(args, fvals, "k", 2, int)
        eps_list = [float(v) for v in (args.eps_list or "0.05,0.1,0.2,0.4").split(",")]
        reps = _resolve(args, fvals, "reps", 30, int)
        c = _resolve(args, fvals, "calibration", DEFAULT_CALIBRATION, float)
        workers = _resolve(args, fvals, "workers", 1, int)
        rows = epsilon_sweep(n, k, eps_list, reps, seed, c, workers)
        sink = _CsvSink(args.out, EPSILON_HEADER)
    else:
        raise UsageError(f"unknown sweep kind {args.kind!r}")
    for row in rows:
        sink.write(row)
    sink.flush()
    return EXIT_OK


# -- distinguish -----------------------------------------------------------------


DISTINGUISH_HEADER = [
    "trial",
    "mode",
    "n",
    "param",
    "truth",
    "statistic",
    "threshold",
    "guess",
    "success",
    "seed",
]


def cmd_distinguish(args) -> int:
    fvals = _load_config_file(args.config)
    n = _resolve(args, fvals, "n", 3, int)
    trials = _resolve(args, fvals, "trials", 200, int)
    seed = _resolve_seed(args, fvals)
    mode = args.mode
    d = 1 << n
    sink = _CsvSink(args.out, DISTINGUISH_HEADER)
    successes = 0
    for trial in range(trials):
        s = (seed + trial) & ((1 << 63) - 1)
        gen = _rng.stream(s, _rng.STREAM_STATE)
        if mode in ("purity", "purity-oracle"):
            ancilla = _resolve(args, fvals, "de", 2, int)
            epsilon = 1.0 / ancilla
            threshold = 2.0**-n + epsilon / 3.0
            if args.truth == "mixed":
                truth = "mixed"
            elif args.truth == "ensemble":
                truth = "ensemble"
            else:
                truth = "mixed" if gen.random() < 0.5 else "ensemble"
            if truth == "mixed":
                state = DensityMatrix.maximally_mixed(d)
            else:
                state = induced_state(InducedStateParams(n, ancilla), gen)
            if mode == "purity-oracle":
                statistic = oracles.purity(state)
            else:
                nb = _resolve(args, fvals, "nb", 4000, int)
                nk = _resolve(args, fvals, "nk", 4000, int)
                k = _resolve(args, fvals, "k", n, int)
                config = ProtocolConfig(n, k, epsilon / 3.0, nb, 1, nk, s, ALG2)
                statistic = purity_estimate(state, config).value
            guess = "mixed" if statistic < threshold else "ensemble"
            param = f"dE={ancilla}"
        elif mode == "dipe2":
            r = _resolve(args, fvals, "r", 1, int)
            mean_purity = (r + r * (r - 1) / d) / r**2
            threshold = mean_purity / 2.0
            epsilon = _resolve(args, fvals, "epsilon", threshold, float)
            truth = "same" if gen.random() < 0.5 else "independent"
            rho = convex_mixture(MixtureParams(d, r), gen)
            sigma = rho if truth == "same" else convex_mixture(MixtureParams(d, r), gen)
            config = choose_params(n, 0, epsilon, master_seed=s)
            est, _ = protocols.run_protocol(rho, sigma, config, record_transcript=False)
            statistic = est.value
            guess = "same" if statistic > threshold else "independent"
            param = f"r={r}"
        elif mode == "dipe1":
            ancilla = _resolve(args, fvals, "de", 2, int)
            base = induced_state(InducedStateParams(n, ancilla), gen)
            threshold = oracles.purity(base) / 2.0
            epsilon = _resolve(args, fvals, "epsilon", threshold, float)
            truth = "same" if gen.random() < 0.5 else "independent"
            u = haar_unitary(d, gen).mat
            rho = DensityMatrix(u @ base.mat @ u.conj().T)
            if truth == "same":
                sigma = rho
            else:
                v = haar_unitary(d, gen).mat
                sigma = DensityMatrix(v @ base.mat @ v.conj().T)
            config = choose_params(n, 0, epsilon, master_seed=s)
            est, _ = protocols.run_protocol(rho, sigma, config, record_transcript=False)
            statistic = est.value
            guess = "same" if statistic > threshold else "independent"
            param = f"dE={ancilla}"
        else:
            raise UsageError(f"unknown mode {mode!r}")
        success = guess == truth
        successes += success
        sink.write([trial, mode, n, param, truth, statistic, threshold, guess, int(success), s])
    sink.flush()
    print(f"success_rate={successes / trials:.6f} ({successes}/{trials})", file=sys.stderr)
    return EXIT_OK


# -- netsim ----------------------------------------------------------------------


NETSIM_HEADER = [
    "run_id",
    "protocol",
    "n",
    "k",
    "N_b",
    "m",
    "N_k",
    "seed",
    "estimate",
    "stderr",
    "classical_bytes",
    "quantum_payload_bytes",
    "quantum_qubits_sent",
    "frames",
]


def _netsim_config(args, fvals, seed: int) -> ProtocolConfig:
    n = _resolve(args, fvals, "n", 3, int)
    k = _resolve(args, fvals, "k", 1, int)
    nb = _resolve(args, fvals, "nb", 40, int)
    m = _resolve(args, fvals, "m", 2, int)
    nk = _resolve(args, fvals, "nk", 25, int)
    protocol = ALG1 if args.protocol == ALG1 else ALG2
    return ProtocolConfig(n, k, 0.1, nb, m, nk, seed, protocol)


def _parse_endpoint(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


def cmd_netsim(args) -> int:
    fvals = _load_config_file(args.config)
    seed = _resolve_seed(args, fvals)
    config = _netsim_config(args, fvals, seed)
    rho, sigma = _state_pair(args.state_a, args.state_b, config.n, seed)
    endpoint = _parse_endpoint(args.endpoint)
    timeout = _resolve(args, fvals, "timeout", netsim.DEFAULT_TIMEOUT, float)
    if args.role == "alice":
        report = netsim.run_alice(config, rho, endpoint, timeout=timeout)
        print(
            f"alice: sent {report.ledger.frames} frames, "
            f"{report.ledger.classical_bytes} classical bytes, "
            f"{report.ledger.quantum_qubits_sent} qubits",
            file=sys.stderr,
        )
        return EXIT_OK
    if args.role == "bob":
        report = netsim.run_bob(config, sigma, endpoint, timeout=timeout, session_log=args.session_log)
        _write_netsim_row(args, config, seed, report)
        return EXIT_OK
    # loopback: both endpoints as separate OS processes
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    queue = ctx.Queue()

    def bob_proc():
        rep = netsim.run_bob(config, sigma, endpoint, timeout=timeout, session_log=args.session_log)
        queue.put(
            (
                rep.estimate,
                rep.ledger,
                len(rep.transcript.batches),
            )
        )

    bob = ctx.Process(target=bob_proc)
    bob.start()
    alice_report = netsim.run_alice(config, rho, endpoint)
    estimate, ledger, _ = queue.get(timeout=netsim.DEFAULT_TIMEOUT)
    bob.join()
    if alice_report.frames_received_after_ack:
        raise InvariantViolation("one-way property violated: Bob sent frames after the ack")
    report = netsim.BobReport(estimate=estimate, ledger=ledger, transcript=protocols.Transcript(config.protocol, seed))
    _write_netsim_row(args, config, seed, report)
    return EXIT_OK


def _write_netsim_row(args, config: ProtocolConfig, seed: int, report) -> None:
    sink = _CsvSink(args.out, NETSIM_HEADER)
    sink.write(
        [
            0,
            config.protocol,
            config.n,
            config.k,
            config.n_batches,
            config.copies_per_batch,
            config.swap_copies,
            seed,
            report.estimate.value,
            report.estimate.stderr,
            report.ledger.classical_bytes,
            report.ledger.quantum_payload_bytes,
            report.ledger.quantum_qubits_sent,
            report.ledger.frames,
        ]
    )
    sink.flush()
    print(f"w={report.estimate.value!r} stderr={report.estimate.stderr!r}", file=sys.stderr)


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dipesim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run one protocol and record a CSV row")
    est.add_argument("--protocol", choices=[ALG1, ALG2, "purity", "swap"], required=True)
    est.add_argument("--n", type=int)
    est.add_argument("--k", type=int)
    est.add_argument("--epsilon", type=float)
    est.add_argument("--nb", type=int, help="batch count N_b")
    est.add_argument("--m", type=int, help="copies per batch")
    est.add_argument("--nk", type=int, help="swap-phase copies N_k")
    est.add_argument("--calibration", type=float)
    est.add_argument("--state-a", default="haar")
    est.add_argument("--state-b", default="same")
    est.add_argument("--runs", type=int)
    est.add_argument("--seed", type=int)
    est.add_argument("--config", default="")
    est.add_argument("--out", default="-")
    est.set_defaults(func=cmd_estimate)

    chk = sub.add_parser("check", help="run identity checks, emit CheckReport CSV")
    chk.add_argument("--suite", choices=["exact", "mp", "mc", "all"], default="exact")
    chk.add_argument("--name")
    chk.add_argument("--seeds", type=int, default=1)
    chk.add_argument("--seed", type=int)
    chk.add_argument("--d", type=int, default=2)
    chk.add_argument("--de", type=int, default=2)
    chk.add_argument("--t", "--T", dest="t", type=int, default=2)
    chk.add_argument("--a", type=int, default=1)
    chk.add_argument("--b", type=int, default=1)
    chk.add_argument("--x", type=int, default=1)
    chk.add_argument("--y", type=int, default=1)
    chk.add_argument("--n", type=int, default=2)
    chk.add_argument("--k", type=int, default=0)
    chk.add_argument("--leaf")
    chk.add_argument("--instance", default="computational")
    chk.add_argument("--samples", type=int)
    chk.add_argument("--out", default="-")
    chk.set_defaults(func=cmd_check)

    swp = sub.add_parser("sweep", help="grid runs; CSV of error/variance/success")
    swp.add_argument("--kind", choices=["variance", "error", "epsilon"], required=True)
    swp.add_argument("--n", type=int)
    swp.add_argument("--k", type=int)
    swp.add_argument("--epsilon", type=float)
    swp.add_argument("--k-list")
    swp.add_argument("--n-list")
    swp.add_argument("--eps-list")
    swp.add_argument("--nb", type=int)
    swp.add_argument("--nk", type=int)
    swp.add_argument("--reps", type=int)
    swp.add_argument("--calibration", type=float)
    swp.add_argument("--workers", type=int, help="process-pool size for sweep cells")
    swp.add_argument("--seed", type=int)
    swp.add_argument("--config", default="")
    swp.add_argument("--out", default="-")
    swp.set_defaults(func=cmd_sweep)

    dst = sub.add_parser("distinguish", help="decision experiments vs ground truth")
    dst.add_argument("--mode", choices=["purity", "purity-oracle", "dipe1", "dipe2"], required=True)
    dst.add_argument("--n", type=int)
    dst.add_argument("--de", type=int)
    dst.add_argument("--r", type=int)
    dst.add_argument("--k", type=int)
    dst.add_argument("--nb", type=int)
    dst.add_argument("--nk", type=int)
    dst.add_argument("--epsilon", type=float)
    dst.add_argument("--trials", type=int)
    dst.add_argument("--truth", choices=["coin", "mixed", "ensemble"], default="coin")
    dst.add_argument("--seed", type=int)
    dst.add_argument("--config", default="")
    dst.add_argument("--out", default="-")
    dst.set_defaults(func=cmd_distinguish)

    net = sub.add_parser("netsim", help="run a protocol as two processes over TCP")
    net.add_argument("--role", choices=["alice", "bob", "loopback"], required=True)
    net.add_argument("--endpoint", default="127.0.0.1:7761")
    net.add_argument("--protocol", choices=[ALG1, ALG2], default=ALG2)
    net.add_argument("--n", type=int)
    net.add_argument("--k", type=int)
    net.add_argument("--nb", type=int)
    net.add_argument("--m", type=int)
    net.add_argument("--nk", type=int)
    net.add_argument("--state-a", default="haar")
    net.add_argument("--state-b", default="haar")
    net.add_argument("--session-log")
    net.add_argument("--timeout", type=float)
    net.add_argument("--seed", type=int)
    net.add_argument("--config", default="")
    net.add_argument("--out", default="-")
    net.set_defaults(func=cmd_netsim)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantViolation, DimCapExceeded, netsim.NetsimError) as exc:
        print(f"numeric invariant failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
