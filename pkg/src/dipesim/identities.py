"""Standalone numeric checks of the closed-form identities and bounds the
estimation analysis relies on.  Each check returns a :class:`CheckReport`
with a residual and a pass threshold; exact checks use absolute residuals,
Monte Carlo checks report the residual in units of the MC standard error
(threshold 3).

Exact expected tensors are always computed from the symmetric-subspace
form, never by sampling; sampling appears only in checks whose point is
sampling correctness.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import haar_unitary
from .linalg import (
    DensityMatrix,
    InvariantViolation,
    cycle_count,
    kron_all,
    permutation_indices,
    permutation_operator,
    swap_operator,
    sym_projector,
)
from .oracles import trace_product
from .rng import complex_normals

MC_SIGMA_THRESHOLD = 3.0
EXACT_THRESHOLD = 1e-9
_HAAR_MOMENT_THRESHOLDS = {1: 0.02, 2: 0.02, 3: 0.03}
_MC_CHUNK = 20000


@dataclass
class CheckReport:
    """Outcome of one identity check; passed iff residual <= threshold."""

    name: str
    params: dict = field(default_factory=dict)
    residual: float = 0.0
    threshold: float = EXACT_THRESHOLD
    passed: bool = False
    samples: int = 0

    def __post_init__(self):
        self.passed = self.residual <= self.threshold

    def params_str(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.params.items())


CSV_HEADER = ["name", "params", "residual", "threshold", "passed", "samples"]


def report_row(report: CheckReport) -> list:
    return [
        report.name,
        report.params_str(),
        repr(report.residual),
        repr(report.threshold),
        str(report.passed),
        str(report.samples),
    ]


def _sigma_units(diff: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return abs(diff) / se


def _haar_mean_exact(d: int, t: int) -> np.ndarray:
    return sym_projector(t, d) / math.comb(d + t - 1, t)


def _seeded_state(dim: int, gen: np.random.Generator) -> DensityMatrix:
    """Full-rank seeded state: normalised Gaussian Gram matrix."""
    g = complex_normals(gen, dim * dim).reshape(dim, dim)
    w = g @ g.conj().T
    return DensityMatrix(w / np.real(w.trace()))


def _seeded_sym_state(d: int, copies: int, gen: np.random.Generator) -> DensityMatrix:
    """Seeded state supported on the symmetric subspace of ``copies`` qudits.

    The measure-and-prepare channel reads only this component of its
    input (tr(rho psi^{kron a}) projects onto it), so identity checks for
    multi-copy inputs are stated on this domain.
    """
    x = _seeded_state(d**copies, gen)
    if copies == 1:
        return x
    sym = sym_projector(copies, d)
    w = sym @ x.mat @ sym
    return DensityMatrix(w / np.real(w.trace()))


# -- Haar moment -------------------------------------------------------------


def check_haar_moment(
    d: int, t: int, n_samples: int, rng: np.random.Generator, threshold: float = None
) -> CheckReport:
    """Frobenius distance between the MC mean of psi^{kron t} and the
    symmetric-subspace closed form."""
    dim = d**t
    acc = np.zeros((dim, dim), dtype=np.complex128)
    done = 0
    while done < n_samples:
        b = min(_MC_CHUNK, n_samples - done)
        g = complex_normals(rng, b * d).reshape(b, d)
        vecs = g / np.linalg.norm(g, axis=1, keepdims=True)
        power = vecs
        for _ in range(t - 1):
            power = (power[:, :, None] * vecs[:, None, :]).reshape(b, -1)
        acc += np.einsum("bi,bj->ij", power, power.conj())
        done += b
    residual = float(np.linalg.norm(acc / n_samples - _haar_mean_exact(d, t)))
    if threshold is None:
        threshold = _HAAR_MOMENT_THRESHOLDS.get(t, 0.03)
    return CheckReport(
        name="haar_moment",
        params={"d": d, "t": t},
        residual=residual,
        threshold=threshold,
        samples=n_samples,
    )


# -- Chiribella's measure-and-prepare identity -------------------------------


def _trace_down_copies(x: np.ndarray, a: int, d: int, s: int) -> np.ndarray:
    """Trace the last a-s copies (local dimension d) out of an a-copy operator."""
    ds, dt = d**s, d ** (a - s)
    x4 = x.reshape(ds, dt, ds, dt)
    return np.einsum("itjt->ij", x4)


def _clone(y: np.ndarray, s: int, b: int, d: int) -> np.ndarray:
    """Optimal-cloning channel from s to b copies."""
    sym = sym_projector(b, d)
    padded = kron_all(y, np.eye(d ** (b - s))) if b > s else y
    coef = math.comb(d + s - 1, s) / math.comb(d + b - 1, b)
    return coef * (sym @ padded @ sym)


def _mean_prepared(x: np.ndarray, a: int, b: int, d: int) -> np.ndarray:
    """E_psi tr(X psi^{kron a}) psi^{kron b}, exactly.

    Equals tr_A[(X kron I_B) S_{a+b}] / C(d+a+b-1, a+b).
    """
    sym = sym_projector(a + b, d)
    da, db = d**a, d**b
    s4 = sym.reshape(da, db, da, db)
    contracted = np.einsum("ag,gbac->bc", x, s4)
    return contracted / math.comb(d + a + b - 1, a + b)


def measure_and_prepare(x: np.ndarray, a: int, b: int, d: int) -> np.ndarray:
    """MP channel: C(a+d-1, a) E_psi tr(X psi^{kron a}) psi^{kron b}."""
    return math.comb(a + d - 1, a) * _mean_prepared(x, a, b, d)


def check_chiribella(d: int, a: int, b: int, rho: DensityMatrix) -> CheckReport:
    """Max-entry difference between the MP channel and its cloning-channel
    decomposition, both computed exactly.  ``rho`` is the a-copy input
    (dimension d**a)."""
    if rho.dim != d**a:
        raise InvariantViolation(f"input dimension {rho.dim} != d**a = {d ** a}")
    lhs = measure_and_prepare(rho.mat, a, b, d)
    rhs = np.zeros_like(lhs)
    for s in range(min(a, b) + 1):
        weight = math.comb(a, s) * math.comb(d + b - 1, b - s) / math.comb(d + a + b - 1, b)
        rhs += weight * _clone(_trace_down_copies(rho.mat, a, d, s), s, b, d)
    residual = float(np.max(np.abs(lhs - rhs)))
    return CheckReport(
        name="chiribella",
        params={"d": d, "a": a, "b": b},
        residual=residual,
        threshold=EXACT_THRESHOLD,
    )


def check_mp_bound(
    d: int, a: int, b: int, rho: DensityMatrix, corrected: bool = True
) -> CheckReport:
    """PSD check of E_psi tr(rho psi^a) psi^b against the exponential
    lower bound.

    ``corrected=True`` uses the proof's final line, which carries a
    1/C(a+d-1, a) prefactor; ``corrected=False`` uses the displayed
    statement without it, which fails numerically at d=2, a=b=1.
    The residual is minus the smallest eigenvalue of (mean - bound).
    """
    if rho.dim != d**a:
        raise InvariantViolation(f"input dimension {rho.dim} != d**a = {d ** a}")
    mean = _mean_prepared(rho.mat, a, b, d)
    bound = math.exp(-a * b / d) * sym_projector(b, d) / math.comb(d + b - 1, b)
    if corrected:
        bound = bound / math.comb(a + d - 1, a)
    residual = -float(np.linalg.eigvalsh(mean - bound)[0])
    return CheckReport(
        name="mp_bound" if corrected else "mp_bound_displayed",
        params={"d": d, "a": a, "b": b},
        residual=residual,
        threshold=EXACT_THRESHOLD,
    )


# -- permutation-sum inequality ----------------------------------------------


def _perm_sum(t: int, d: int) -> np.ndarray:
    return sym_projector(t, d) * math.factorial(t)


def check_perm_inequality(
    rho_x: DensityMatrix, rho_y: DensityMatrix, x: int, y: int
) -> CheckReport:
    """tr(rho_x kron rho_y sum_{S_{x+y}} pi) >= product of the marginal
    permutation sums; residual is RHS - LHS."""
    d = round(rho_x.dim ** (1.0 / x))
    if d**x != rho_x.dim or d**y != rho_y.dim:
        raise InvariantViolation("operand dimensions are not powers of a common d")
    joint = np.kron(rho_x.mat, rho_y.mat)
    lhs = np.real(trace_product(joint, _perm_sum(x + y, d).astype(np.complex128)))
    rx = np.real(trace_product(rho_x.mat, _perm_sum(x, d).astype(np.complex128)))
    ry = np.real(trace_product(rho_y.mat, _perm_sum(y, d).astype(np.complex128)))
    residual = float(rx * ry - lhs)
    return CheckReport(
        name="perm_inequality",
        params={"d": d, "x": x, "y": y},
        residual=residual,
        threshold=EXACT_THRESHOLD,
    )


# -- likelihood ratio for a randomly fixed PVM --------------------------------


def likelihood_ratio_closed_form(d: int, ancilla_dim: int, leaf) -> float:
    """prod_y (1+eps)...(1+(b_y-1)eps) / prod_{i<T}(1+i eps/d), eps = 1/ancilla."""
    eps = 1.0 / ancilla_dim
    counts = {}
    for outcome in leaf:
        counts[outcome] = counts.get(outcome, 0) + 1
    num = 1.0
    for b_y in counts.values():
        for i in range(1, b_y):
            num *= 1.0 + i * eps
    den = 1.0
    for i in range(1, len(leaf)):
        den *= 1.0 + i * eps / d
    return num / den


def check_likelihood_ratio(
    d: int,
    ancilla_dim: int,
    t: int,
    leaf,
    n_samples: int,
    rng: np.random.Generator,
) -> CheckReport:
    """MC estimate of d^T E prod_t <x_t|psi|x_t> over induced states vs the
    closed form; residual in MC standard errors."""
    leaf = [int(v) for v in leaf]
    if len(leaf) != t:
        raise InvariantViolation("leaf length must equal t")
    closed = likelihood_ratio_closed_form(d, ancilla_dim, leaf)
    values = np.empty(n_samples)
    done = 0
    while done < n_samples:
        b = min(_MC_CHUNK, n_samples - done)
        g = complex_normals(rng, b * d * ancilla_dim).reshape(b, d, ancilla_dim)
        diag = np.sum(np.abs(g) ** 2, axis=2)
        diag /= diag.sum(axis=1, keepdims=True)
        prod = np.ones(b)
        for outcome in leaf:
            prod = prod * diag[:, outcome]
        values[done : done + b] = prod * float(d) ** t
        done += b
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n_samples))
    residual = _sigma_units(mean - closed, se)
    return CheckReport(
        name="likelihood",
        params={"d": d, "dE": ancilla_dim, "T": t, "leaf": "".join(map(str, leaf))},
        residual=residual,
        threshold=MC_SIGMA_THRESHOLD,
        samples=n_samples,
    )


def check_likelihood_normalization(d: int, ancilla_dim: int, t: int) -> CheckReport:
    """Exact consistency of the closed-form ratio: it must equal d^T q(l)
    with q from the exact induced-state moment, and sum to 1 against the
    uniform leaf distribution."""
    total_dim = d * ancilla_dim
    denom = 1.0
    for i in range(t):
        denom *= total_dim + i
    qdiag = np.zeros(d**t)
    cols = np.arange(d**t)
    for perm in itertools.permutations(range(1, t + 1)):
        fixed = permutation_indices(perm, t, d) == cols
        qdiag[fixed] += float(ancilla_dim) ** cycle_count(perm)
    qdiag /= denom
    worst = 0.0
    total = 0.0
    p_leaf = float(d) ** (-t)
    for idx in range(d**t):
        digits = []
        rem = idx
        for _ in range(t):
            digits.append(rem % d)
            rem //= d
        closed = likelihood_ratio_closed_form(d, ancilla_dim, digits)
        worst = max(worst, abs(closed - qdiag[idx] * float(d) ** t))
        total += p_leaf * closed
    residual = max(worst, abs(total - 1.0))
    return CheckReport(
        name="likelihood_norm",
        params={"d": d, "dE": ancilla_dim, "T": t},
        residual=float(residual),
        threshold=EXACT_THRESHOLD,
    )


# -- Stirling identity --------------------------------------------------------


def check_stirling_identity(t: int, x: int) -> CheckReport:
    """x(x+1)...(x+t-1) = sum over S_t of x^{cycles} (exact integers, t <= 7)."""
    if t > 7:
        raise InvariantViolation("t capped at 7 (enumeration of S_t)")
    lhs = 1
    for i in range(t):
        lhs *= x + i
    rhs = sum(x ** cycle_count(p) for p in itertools.permutations(range(1, t + 1)))
    return CheckReport(
        name="stirling",
        params={"t": t, "x": x},
        residual=float(abs(lhs - rhs)),
        threshold=0.0,
    )


# -- collision moments of uniform draws ---------------------------------------


def check_collision_moments(
    d: int, t: int, n_trials: int, rng: np.random.Generator
) -> CheckReport:
    """Empirical mean/variance of pairwise collisions X and mean of triple
    collisions Y for uniform draws, against C(T,2)/d, (1/d-1/d^2)C(T,2) and
    C(T,3)/d^2; residual in standard-error units."""
    draws = rng.integers(0, d, size=(n_trials, t))
    eq = draws[:, :, None] == draws[:, None, :]
    iu = np.triu_indices(t, k=1)
    x_counts = eq[:, iu[0], iu[1]].sum(axis=1).astype(float)
    y_counts = np.zeros(n_trials)
    for i, j, k in itertools.combinations(range(t), 3):
        y_counts += eq[:, i, j] & eq[:, j, k]
    ex_th = math.comb(t, 2) / d
    varx_th = (1.0 / d - 1.0 / d**2) * math.comb(t, 2)
    ey_th = math.comb(t, 3) / d**2
    n = float(n_trials)
    r_ex = _sigma_units(x_counts.mean() - ex_th, x_counts.std(ddof=1) / math.sqrt(n))
    s2 = x_counts.var(ddof=1)
    m4 = np.mean((x_counts - x_counts.mean()) ** 4)
    se_var = math.sqrt(max(m4 - s2**2, 0.0) / n)
    r_var = _sigma_units(s2 - varx_th, se_var)
    r_ey = _sigma_units(y_counts.mean() - ey_th, y_counts.std(ddof=1) / math.sqrt(n))
    residual = max(r_ex, r_var, r_ey)
    return CheckReport(
        name="collision_moments",
        params={"d": d, "T": t},
        residual=float(residual),
        threshold=MC_SIGMA_THRESHOLD,
        samples=n_trials,
    )


# -- swap-overlap bound for concrete POVMs ------------------------------------


def _bell_basis_columns(n: int) -> np.ndarray:
    """Bell basis on 2n qubits pairing qubit i with qubit n+i."""
    b2 = np.array(
        [[1, 0, 0, 1], [0, 1, 1, 0], [0, 1, -1, 0], [1, 0, 0, -1]], dtype=np.complex128
    ).T / math.sqrt(2.0)
    grouped = b2
    for _ in range(n - 1):
        grouped = np.kron(grouped, b2)
    perm = [0] * (2 * n)
    for w in range(1, 2 * n + 1):
        perm[w - 1] = (w + 1) // 2 if w % 2 == 1 else n + w // 2
    p = permutation_operator(perm, 2 * n, 2)
    return p @ grouped


def check_povm_swap_bound(instance: str, n: int, k: int, rng: np.random.Generator = None) -> CheckReport:
    """Evaluate sum_s tr(F_s SWAP)^2 / tr(F_s) for one concrete rank-1 PVM
    on 2n qubits and assert it stays at or below 2^(k+n).

    Instances: ``computational`` (product basis), ``bell`` (Bell basis on
    paired qubits), ``haar`` (seeded Haar basis).  A spot check of specific
    members, not a supremum over the measurement class.
    """
    dim = 1 << (2 * n)
    swap = swap_operator(n)
    if instance == "computational":
        vals = np.real(np.diagonal(swap))
    elif instance == "bell":
        cols = _bell_basis_columns(n)
        vals = np.real(np.einsum("is,ij,js->s", cols.conj(), swap, cols))
    elif instance == "haar":
        if rng is None:
            raise InvariantViolation("haar instance needs an rng")
        cols = haar_unitary(dim, rng).mat
        vals = np.real(np.einsum("is,ij,js->s", cols.conj(), swap, cols))
    else:
        raise InvariantViolation(f"unknown instance {instance!r}")
    total = float(np.sum(vals**2))
    residual = total - float(2 ** (k + n))
    return CheckReport(
        name="povm_swap_bound",
        params={"instance": instance, "n": n, "k": k},
        residual=residual,
        threshold=EXACT_THRESHOLD,
    )


# -- induced-state purity moments ----------------------------------------------


def induced_purity_mean(n: int, ancilla_dim: int) -> float:
    ds = float(1 << n)
    eps = 1.0 / ancilla_dim
    return (ds * eps + 1.0) / (ds + eps)


def induced_purity_variance(n: int, ancilla_dim: int) -> float:
    ds = float(1 << n)
    eps = 1.0 / ancilla_dim
    big = ds / eps
    return 2.0 * (ds**2 - 1.0) * (1.0 / eps**2 - 1.0) / ((big + 1.0) ** 2 * (big + 2.0) * (big + 3.0))


def check_induced_moments(
    n: int, ancilla_dim: int, n_samples: int, rng: np.random.Generator
) -> CheckReport:
    """Empirical purity mean/variance of random induced states against the
    closed forms; residual in standard-error units."""
    ds = 1 << n
    purities = np.empty(n_samples)
    done = 0
    while done < n_samples:
        b = min(_MC_CHUNK, n_samples - done)
        g = complex_normals(rng, b * ds * ancilla_dim).reshape(b, ds, ancilla_dim)
        if ancilla_dim <= ds:
            gram = np.einsum("bie,bif->bef", g.conj(), g)
        else:
            gram = np.einsum("bie,bje->bij", g, g.conj())
        norm2 = np.sum(np.abs(gram) ** 2, axis=(1, 2))
        tr = np.real(np.trace(gram, axis1=1, axis2=2))
        purities[done : done + b] = norm2 / tr**2
        done += b
    mean_th = induced_purity_mean(n, ancilla_dim)
    var_th = induced_purity_variance(n, ancilla_dim)
    nf = float(n_samples)
    r_mean = _sigma_units(purities.mean() - mean_th, purities.std(ddof=1) / math.sqrt(nf))
    s2 = purities.var(ddof=1)
    if var_th == 0.0:
        r_var = 0.0 if s2 < 1e-20 else math.inf
    else:
        m4 = np.mean((purities - purities.mean()) ** 4)
        se_var = math.sqrt(max(m4 - s2**2, 0.0) / nf)
        r_var = _sigma_units(s2 - var_th, se_var)
    residual = max(r_mean, r_var)
    return CheckReport(
        name="induced_moments",
        params={"n": n, "dE": ancilla_dim},
        residual=float(residual),
        threshold=MC_SIGMA_THRESHOLD,
        samples=n_samples,
    )


# -- suites -------------------------------------------------------------------


def exact_suite(seed: int = 0) -> list:
    """Exact-identity grid: Chiribella, permutation inequality, Stirling,
    likelihood-ratio normalisation.  All cells must pass at 1e-9."""
    from .rng import stream

    gen = stream(seed, 0)
    reports = []
    for d in (2, 3, 4):
        for a in (1, 2, 3):
            for b in (1, 2, 3):
                rho = _seeded_sym_state(d, a, gen)
                reports.append(check_chiribella(d, a, b, rho))
    for d in (2, 3, 4):
        pairs = [(1, 1), (1, 2), (2, 1), (2, 2)]
        if d <= 3:
            pairs += [(1, 3), (3, 1)]
        for x, y in pairs:
            rx = _seeded_state(d**x, gen)
            ry = _seeded_state(d**y, gen)
            reports.append(check_perm_inequality(rx, ry, x, y))
    for t in range(1, 8):
        for x in (1, 2, 3, 4):
            reports.append(check_stirling_identity(t, x))
    for ancilla in (2, 4):
        for t in (1, 2, 3):
            reports.append(check_likelihood_normalization(2, ancilla, t))
    return reports


def mp_suite(seed: int = 0) -> list:
    """Measure-and-prepare bound grid: the corrected form across the grid
    plus the displayed (uncorrected) form at its known failure point."""
    from .rng import stream

    gen = stream(seed, 0)
    reports = []
    for d in (2, 3, 4):
        for a in (1, 2):
            for b in (1, 2):
                rho = _seeded_sym_state(d, a, gen)
                reports.append(check_mp_bound(d, a, b, rho, corrected=True))
    basis = DensityMatrix.basis(2, 0)
    reports.append(check_mp_bound(2, 1, 1, basis, corrected=True))
    reports.append(check_mp_bound(2, 1, 1, basis, corrected=False))
    return reports


def mc_suite(seed: int = 0) -> list:
    """Monte Carlo checks at their documented sample counts."""
    from .rng import stream

    reports = [
        check_haar_moment(2, 1, 100_000, stream(seed, 1)),
        check_haar_moment(4, 2, 200_000, stream(seed, 2)),
        check_haar_moment(2, 3, 200_000, stream(seed, 3)),
        check_collision_moments(4, 2, 100_000, stream(seed, 4)),
        check_collision_moments(16, 6, 100_000, stream(seed, 5)),
        check_induced_moments(1, 2, 100_000, stream(seed, 6)),
        check_induced_moments(2, 4, 100_000, stream(seed, 7)),
        check_povm_swap_bound("computational", 3, 0),
        check_povm_swap_bound("bell", 2, 2),
        check_povm_swap_bound("haar", 2, 0, stream(seed, 8)),
    ]
    sid = 9
    for ancilla in (2, 4):
        for t in (2, 3):
            for leaf in ([0] * t, list(range(t))):
                reports.append(check_likelihood_ratio(4, ancilla, t, leaf, 200_000, stream(seed, sid)))
                sid += 1
    return reports
