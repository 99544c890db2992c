"""Lambda(p) alphabets: exponential-sum norms, additive energy, certificates and search.

An alphabet is a finite set of lattice points in ``[N]^d``.  Its Lambda(p)
constant is the operator norm of ``c -> sum_a c_a e(a.x)`` from l^2 to
L^p([0,1]^d).  We only ever bound that constant from below, by maximising
the ratio over coefficient vectors.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from frlab._lattice import lattice_adjoint, lattice_sum

QUAD_RTOL = 1e-4
QUAD_MAX_POINTS = 1 << 24


class SearchFailure(RuntimeError):
    """Raised when no alphabet under the cap was found; carries the best attempt."""

    def __init__(self, message, alphabet, certificate):
        super().__init__(message)
        self.alphabet = alphabet
        self.certificate = certificate


@dataclass(frozen=True)
class Alphabet:
    dim: int
    modulus: int
    elements: tuple

    def __post_init__(self):
        pts = tuple(sorted(tuple(int(v) for v in e) for e in self.elements))
        object.__setattr__(self, "elements", pts)
        if not pts:
            raise ValueError("alphabet must be nonempty")
        if len(set(pts)) != len(pts):
            raise ValueError("alphabet elements must be distinct")
        for e in pts:
            if len(e) != self.dim:
                raise ValueError(f"element {e} has wrong dimension (expected {self.dim})")
            if any(v < 0 or v >= self.modulus for v in e):
                raise ValueError(f"element {e} outside [0, {self.modulus})^{self.dim}")

    @classmethod
    def from_points(cls, points, modulus=None, dim=None):
        pts = [tuple(np.atleast_1d(np.asarray(p, dtype=np.int64)).tolist()) for p in points]
        if dim is None:
            dim = len(pts[0]) if pts else 1
        if modulus is None:
            modulus = 1 + max(max(p) for p in pts)
        return cls(dim=dim, modulus=modulus, elements=tuple(pts))

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def points(self) -> np.ndarray:
        return np.array(self.elements, dtype=np.int64).reshape(self.size, self.dim)

    def translate(self, v, wrap=True) -> "Alphabet":
        """``v + S``, reduced mod N when ``wrap``; otherwise the modulus grows to fit."""
        pts = self.points + np.asarray(v, dtype=np.int64)
        if wrap:
            return Alphabet.from_points(pts % self.modulus, self.modulus, self.dim)
        if pts.min() < 0:
            raise ValueError("translation leaves the nonnegative orthant")
        return Alphabet.from_points(pts, max(self.modulus, int(pts.max()) + 1), self.dim)

    def to_dict(self):
        return {
            "dim": self.dim,
            "modulus": self.modulus,
            "elements": [list(e) for e in self.elements],
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, doc):
        a = cls(dim=int(doc["dim"]), modulus=int(doc["modulus"]), elements=tuple(map(tuple, doc["elements"])))
        if "size" in doc and int(doc["size"]) != a.size:
            raise ValueError("alphabet document size does not match its elements")
        return a


@dataclass(frozen=True)
class LambdaPCertificate:
    exponent: float
    constant_lower: float
    constant_cap: float
    method: str  # "exact-even-p" or "quadrature"
    grid_spacing: Optional[float]
    iterations: int

    @property
    def exceeds_cap(self) -> bool:
        return self.constant_lower > self.constant_cap

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "constant_lower": self.constant_lower,
            "constant_cap": self.constant_cap,
            "method": self.method,
            "grid_spacing": self.grid_spacing,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            exponent=float(doc["exponent"]),
            constant_lower=float(doc["constant_lower"]),
            constant_cap=float(doc["constant_cap"]),
            method=str(doc["method"]),
            grid_spacing=None if doc.get("grid_spacing") is None else float(doc["grid_spacing"]),
            iterations=int(doc["iterations"]),
        )


@dataclass(frozen=True)
class SequencePlan:
    """Scale sequence ``n_j`` and alphabet sizes ``t_j`` for the Cantor construction.

    ``c0`` and ``c1`` are the realised constants ``min_j`` / ``max_j`` of
    ``t_j / n_j^(2d/p)``, so the sandwich ``c0 n^(2d/p) <= t <= c1 n^(2d/p)``
    holds by construction.
    """

    n_seq: tuple
    t_seq: tuple
    c0: float
    alpha: float
    p: float
    d: int
    c1: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(self, "n_seq", tuple(int(n) for n in self.n_seq))
        object.__setattr__(self, "t_seq", tuple(int(t) for t in self.t_seq))
        if math.isnan(self.c1):
            object.__setattr__(self, "c1", max(self._ratios(), default=1.0))
        problems = self.violations()
        if problems:
            raise ValueError("invalid sequence plan: " + "; ".join(problems))

    def _ratios(self):
        e = 2 * self.d / self.p
        return [t / n**e for n, t in zip(self.n_seq, self.t_seq)]

    def violations(self):
        out = []
        if len(self.n_seq) != len(self.t_seq):
            out.append("n_seq and t_seq lengths differ")
        if any(n < 1 for n in self.n_seq) or any(t < 1 for t in self.t_seq):
            out.append("entries must be positive")
        for j in range(1, len(self.n_seq)):
            a, b = self.n_seq[j - 1], self.n_seq[j]
            if b < a:
                out.append(f"n_seq decreases at level {j + 1}")
            # n_{j+1} / n_j <= (j+1)/j, with j 1-based
            if b * j > a * (j + 1):
                out.append(f"n_{j + 1}/n_{j} exceeds {(j + 1)}/{j}")
        for j, (n, t) in enumerate(zip(self.n_seq, self.t_seq), start=1):
            if t > n**self.d:
                out.append(f"t_{j}={t} exceeds n_{j}^d={n ** self.d}")
        eps = 1e-9
        for j, r in enumerate(self._ratios(), start=1):
            if r < self.c0 * (1 - eps) or r > self.c1 * (1 + eps):
                out.append(f"t_{j} outside [c0, c1] * n_{j}^(2d/p)")
        return out

    @property
    def depth(self) -> int:
        return len(self.n_seq)

    def N(self, k: int) -> int:
        return math.prod(self.n_seq[:k])

    def T(self, k: int) -> int:
        return math.prod(self.t_seq[:k])

    def truncate(self, k: int) -> "SequencePlan":
        return SequencePlan(self.n_seq[:k], self.t_seq[:k], self.c0, self.alpha, self.p, self.d, self.c1)

    def to_dict(self):
        return {
            "n_seq": list(self.n_seq),
            "t_seq": list(self.t_seq),
            "c0": self.c0,
            "c1": self.c1,
            "alpha": self.alpha,
            "p": self.p,
            "d": self.d,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            n_seq=tuple(doc["n_seq"]),
            t_seq=tuple(doc["t_seq"]),
            c0=float(doc["c0"]),
            alpha=float(doc["alpha"]),
            p=float(doc["p"]),
            d=int(doc["d"]),
            c1=float(doc["c1"]),
        )


def _even_half(p) -> Optional[int]:
    """``p/2`` when ``p`` is an even integer, else None."""
    if abs(p - round(p)) < 1e-12 and round(p) % 2 == 0 and round(p) >= 2:
        return int(round(p)) // 2
    return None


def _check_coeffs(S: Alphabet, c):
    c = np.asarray(c, dtype=complex).ravel()
    if c.shape[0] != S.size:
        raise ValueError(f"{c.shape[0]} coefficients for an alphabet of size {S.size}")
    return c


def _coefficient_array(S: Alphabet, c):
    arr = np.zeros((S.modulus,) * S.dim, dtype=complex)
    arr[tuple(S.points.T)] = c
    return arr


def exact_even_norm(S: Alphabet, c, p) -> float:
    """``||sum c_a e(a.x)||_p`` for even ``p = 2m`` via ``||c^{*m}||_2^{2/p}``."""
    m = _even_half(p)
    if m is None:
        raise ValueError(f"p={p} is not an even integer")
    c = _check_coeffs(S, c)
    base = _coefficient_array(S, c)
    conv = base
    for _ in range(m - 1):
        conv = signal.convolve(conv, base, method="direct" if base.size <= 64 else "auto")
    return float(np.sum(np.abs(conv) ** 2) ** (1.0 / p))


def lp_norm_on_grid(S: Alphabet, c, p, m: int) -> float:
    """Midpoint-rule value of ``||sum c_a e(a.x)||_{L^p([0,1]^d)}`` with ``m`` points per axis."""
    c = _check_coeffs(S, c)
    vals = lattice_sum(S.points, c, 1, np.zeros(S.dim), 1, m, sign=+1)
    if math.isinf(p):
        return float(np.abs(vals).max())
    return float(np.mean(np.abs(vals) ** p) ** (1.0 / p))


def quadrature_lp_norm(S: Alphabet, c, p, spacing, rtol=QUAD_RTOL, max_points=QUAD_MAX_POINTS):
    """Midpoint rule with spacing halving until two successive values agree.

    Returns ``(value, spacing_used)``.
    """
    m = max(1, math.ceil(1.0 / spacing - 1e-12))
    prev = lp_norm_on_grid(S, c, p, m)
    while True:
        m2 = 2 * m
        if m2**S.dim > max_points:
            return prev, 1.0 / m
        cur = lp_norm_on_grid(S, c, p, m2)
        if abs(cur - prev) <= rtol * abs(cur):
            return cur, 1.0 / m2
        prev, m = cur, m2


def exp_sum_lp_norm(S: Alphabet, c, p, spacing=None, method="auto") -> float:
    """L^p([0,1]^d) norm of the exponential sum with coefficients ``c`` on ``S``.

    ``method="auto"`` uses the exact convolution identity for even ``p`` and
    ignores ``spacing``; ``"quadrature"`` forces the midpoint rule.
    """
    if S.size == 0:
        raise ValueError("empty alphabet")
    if p < 1:
        raise ValueError("p must be >= 1")
    if spacing is not None and spacing <= 0:
        raise ValueError("spacing must be positive")
    c = _check_coeffs(S, c)
    even = _even_half(p) is not None
    if method == "exact" or (method == "auto" and even):
        return exact_even_norm(S, c, p)
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if spacing is None:
        spacing = default_spacing(S, p)
    return quadrature_lp_norm(S, c, p, spacing)[0]


def default_spacing(S: Alphabet, p) -> float:
    return 1.0 / (2 * math.ceil(p) * S.modulus)


def additive_energy(S: Alphabet) -> int:
    """Number of quadruples (a, b, c, d) in S^4 with a + b = c + d."""
    if S.size == 0:
        raise ValueError("empty alphabet")
    pts = S.elements
    sums = Counter(tuple(x + y for x, y in zip(a, b)) for a in pts for b in pts)
    return sum(r * r for r in sums.values())


def is_sidon(S: Alphabet) -> bool:
    """Brute-force Sidon test: a + b = c + d forces {a, b} = {c, d}."""
    seen = {}
    for i, a in enumerate(S.elements):
        for b in S.elements[i:]:
            s = tuple(x + y for x, y in zip(a, b))
            if s in seen and seen[s] != (a, b):
                return False
            seen[s] = (a, b)
    return True


# -- Lambda(p) certificates --------------------------------------------------


class _PowerIterator:
    """Nonlinear power iteration for max ||sum c_a e(a.x)||_p / ||c||_2 on a grid."""

    def __init__(self, S: Alphabet, p: float, m: int):
        self.S, self.p, self.m = S, p, m
        self.cells = m**S.dim

    def values(self, c):
        return lattice_sum(self.S.points, c, 1, np.zeros(self.S.dim), 1, self.m, sign=+1)

    def ratio(self, c):
        f = self.values(c)
        return float(np.mean(np.abs(f) ** self.p) ** (1 / self.p) / np.linalg.norm(c))

    def run(self, c0, budget, tol):
        """Ascend from ``c0``; returns (best vector, best ratio, iterations used)."""
        c = c0 / np.linalg.norm(c0)
        f = self.values(c)
        best = float(np.mean(np.abs(f) ** self.p) ** (1 / self.p))
        it = 0
        for it in range(1, budget + 1):
            g = np.abs(f) ** (self.p - 2) * f
            nxt = lattice_adjoint(self.S.points, g, 1, np.zeros(self.S.dim), 1, self.m, sign=+1)
            nxt = nxt / np.linalg.norm(nxt)
            f_next = self.values(nxt)
            r = float(np.mean(np.abs(f_next) ** self.p) ** (1 / self.p))
            if r < best * (1 + tol):
                if r > best:
                    c, best = nxt, r
                break
            c, f, best = nxt, f_next, r
        return c, best, it


def _starts(S: Alphabet, n_starts: int, seed: int):
    rng = np.random.default_rng(seed)
    out = [np.ones(S.size, dtype=complex)]
    for _ in range(n_starts - 1):
        out.append(rng.standard_normal(S.size) + 1j * rng.standard_normal(S.size))
    return out


def lambda_p_constant(
    S: Alphabet,
    p: float,
    budget: int = 200,
    seed: int = 0,
    n_starts: int = 8,
    constant_cap: float = math.inf,
    tol: float = 1e-10,
    workers: int = 1,
) -> LambdaPCertificate:
    """Lower bound on the Lambda(p) constant of ``S`` by multi-start power iteration.

    ``budget`` caps the iterations of each start.  For even ``p`` the grid is
    fine enough that both the objective and its gradient are exact, and the
    winning ratio is re-evaluated through the convolution identity; otherwise
    it is re-evaluated by refined quadrature.
    """
    if p <= 2:
        raise ValueError("p must exceed 2")
    if budget < 1:
        raise ValueError("iteration budget must be positive")
    if S.size == 1:
        return LambdaPCertificate(float(p), 1.0, float(constant_cap), _method(p), None, 0)
    N = S.modulus
    even = _even_half(p) is not None
    if even:
        # |f|^p has frequencies in a span of width p(N-1); no aliasing past that
        m = int(round(p)) * (N - 1) + 1
    else:
        m = 2 * math.ceil(p) * N
    it = _PowerIterator(S, p, m)
    starts = _starts(S, max(1, n_starts), seed)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(lambda c: it.run(c, budget, tol), starts))
    else:
        runs = [it.run(c, budget, tol) for c in starts]
    iterations = sum(r[2] for r in runs)
    # deterministic reduction: first start wins ties
    best_c, best_r = runs[0][0], runs[0][1]
    for c, r, _ in runs[1:]:
        if r > best_r:
            best_c, best_r = c, r
    if even:
        value = exact_even_norm(S, best_c, p) / np.linalg.norm(best_c)
        spacing = None
    else:
        val, spacing = quadrature_lp_norm(S, best_c, p, 1.0 / m)
        value = val / np.linalg.norm(best_c)
    return LambdaPCertificate(
        exponent=float(p),
        constant_lower=float(max(1.0, value)),
        constant_cap=float(constant_cap),
        method=_method(p),
        grid_spacing=spacing,
        iterations=int(iterations),
    )


def _method(p):
    return "exact-even-p" if _even_half(p) is not None else "quadrature"


# -- search ---------------------------------------------------------------------


def _ones_ratio(points, N, d, p):
    S = Alphabet(dim=d, modulus=N, elements=tuple(points))
    ones = np.ones(S.size)
    if _even_half(p) is not None:
        val = exact_even_norm(S, ones, p)
    else:
        # fixed grid: only the ranking matters during search
        val = lp_norm_on_grid(S, ones, p, 2 * math.ceil(p) * N)
    return val / math.sqrt(S.size)


def _objective(points, N, d, p):
    if abs(p - 4) < 1e-12:
        return additive_energy(Alphabet(dim=d, modulus=N, elements=tuple(points)))
    return round(_ones_ratio(points, N, d, p), 12)


def search_lambda_p_set(
    N: int,
    d: int,
    p: float,
    target_size: int,
    constant_cap: float,
    seed: int = 0,
    swap_budget: int = 200,
    certify_budget: int = 100,
):
    """Greedy + local-swap search for a Lambda(p) subset of ``[N]^d``.

    The greedy and swap phases minimise additive energy when ``p = 4`` and
    the unit-coefficient ratio otherwise; ties go to the lexicographically
    smallest point.  The result is then certified with
    :func:`lambda_p_constant`.  Returns ``(alphabet, certificate)``; raises
    :class:`SearchFailure` when the certificate exceeds ``constant_cap``.
    """
    if not 1 <= target_size <= N**d:
        raise ValueError(f"target_size must lie in [1, {N ** d}]")
    if constant_cap <= 1:
        raise ValueError("constant_cap must exceed 1")
    candidates = list(itertools.product(range(N), repeat=d))
    chosen = [candidates[0]]
    while len(chosen) < target_size:
        taken = set(chosen)
        best, best_val = None, None
        for x in candidates:
            if x in taken:
                continue
            val = _objective(chosen + [x], N, d, p)
            if best_val is None or val < best_val:
                best, best_val = x, val
        chosen.append(best)

    rng = np.random.default_rng(seed)
    current = _objective(chosen, N, d, p)
    if 1 < target_size < N**d:
        for _ in range(swap_budget):
            i = int(rng.integers(target_size))
            taken = set(chosen)
            outside = [x for x in candidates if x not in taken]
            x = outside[int(rng.integers(len(outside)))]
            trial = chosen[:i] + [x] + chosen[i + 1 :]
            val = _objective(trial, N, d, p)
            if val < current:
                chosen, current = trial, val

    alphabet = Alphabet(dim=d, modulus=N, elements=tuple(chosen))
    cert = lambda_p_constant(alphabet, p, budget=certify_budget, seed=seed, constant_cap=constant_cap)
    if cert.exceeds_cap:
        raise SearchFailure(
            f"best alphabet has certified constant {cert.constant_lower:.4f} > cap {constant_cap}",
            alphabet,
            cert,
        )
    return alphabet, cert


# -- parameter sequences -------------------------------------------------------


def _floor(x: float) -> int:
    # absorbs round-off in n**alpha when the exact value is an integer
    return int(math.floor(x + 1e-9))


def make_sequence_plan(alpha: float, d: int, n1: int, depth: int, c0: float = 1.0) -> SequencePlan:
    """Slowly growing scales ``n_{j+1} = floor(n_j (j+1)/j)`` and sizes ``t_j ~ c0 n_j^alpha``."""
    if not 0 < alpha < d:
        raise ValueError(f"alpha must lie in (0, {d})")
    if n1 < 2:
        raise ValueError("n1 must be at least 2")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    p = 2 * d / alpha
    ns = [n1]
    for j in range(1, depth):
        ns.append((ns[-1] * (j + 1)) // j)
    ts = [min(max(1, _floor(c0 * n ** (2 * d / p))), n**d) for n in ns]
    ratios = [t / n ** (2 * d / p) for n, t in zip(ns, ts)]
    return SequencePlan(tuple(ns), tuple(ts), min(ratios), alpha, p, d, max(ratios))


def mockenhaupt_exponent(d: int, alpha: float, beta: float) -> float:
    """Smallest L^2 -> L^p extension exponent from a ball condition and Fourier decay."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not 0 < alpha < d:
        raise ValueError(f"alpha must lie in (0, {d})")
    return (4 * d - 4 * alpha + 2 * beta) / beta
