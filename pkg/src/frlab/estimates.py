"""Extension norms over stage measures, weighted decoupling and restriction reports.

Functions on the physical side are evaluated either on midpoint grids (via
the lattice FFT in :mod:`frlab._lattice`) or, for integrals against the
sharply peaked weights ``(1 + |x - c| / R)^-100``, on a radial product rule
centred at ``c`` that resolves the weight's 1/100 length scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate, interpolate, special

from frlab._lattice import TWO_PI, box_factor_on_grid, box_hat_nd, lattice_adjoint, lattice_sum, _grid_points
from frlab.alphabet import lambda_p_constant
from frlab.cantor import CantorStage

WEIGHT_EXPONENT = 100
STRATEGIES = ("ones", "random_signs", "knapp_concentrated", "power_iterated")
RESTRICTION_CSV_HEADER = ("k", "p", "strategy", "measured_ratio", "paper_bound", "ratio_over_bound")
RESTRICTION_SCHEMA = "frlab-restriction/1"
MAX_GRID_POINTS = 1 << 24


@dataclass(frozen=True)
class Cube:
    corner: tuple
    side: float

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(c) for c in np.atleast_1d(self.corner)))
        if not self.side > 0:
            raise ValueError("cube side must be positive")

    @property
    def d(self) -> int:
        return len(self.corner)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.corner) + self.side / 2

    @classmethod
    def centered(cls, center, side):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(tuple(c - side / 2), side)


@dataclass
class DensityOnStage:
    """Density ``g`` on the stage support, one complex value per deepest cube."""

    stage: CantorStage
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).ravel()
        if self.values.shape[0] != self.stage.T_k:
            raise ValueError(f"need {self.stage.T_k} values, got {self.values.shape[0]}")

    def l2_norm(self) -> float:
        """``||g||_{L^2(mu_k)}``; each cube carries mass ``1 / T_k``."""
        return float(np.sqrt(np.mean(np.abs(self.values) ** 2)))

    def scaled(self, lam) -> "DensityOnStage":
        return DensityOnStage(self.stage, lam * self.values)

    @classmethod
    def ones(cls, stage):
        return cls(stage, np.ones(stage.T_k))

    @classmethod
    def random_signs(cls, stage, seed=0):
        rng = np.random.default_rng(seed)
        return cls(stage, rng.choice([-1.0, 1.0], size=stage.T_k))

    @classmethod
    def concentrated(cls, stage, node=0):
        """Indicator of the descendants of level-1 node ``node``, scaled to unit L^2(mu) norm."""
        if stage.depth == 0:
            return cls.ones(stage)
        top = np.arange(stage.T(1))
        for j in range(2, stage.depth + 1):
            top = top[stage.parents[j - 1]]
        mask = (top == node).astype(float)
        g = cls(stage, mask)
        return g.scaled(1.0 / g.l2_norm())


# -- extension operator on a grid ----------------------------------------------------


class _ExtensionGrid:
    """The map g -> (g dmu_k)^ sampled at the midpoints of an n^d grid over a cube."""

    def __init__(self, stage: CantorStage, J: Cube, n: int):
        if n**stage.d > MAX_GRID_POINTS:
            raise ValueError(f"quadrature grid of {n}^{stage.d} points exceeds the budget")
        self.stage, self.J, self.n = stage, J, n
        self.h = J.side / n
        m = round(1 / self.h)
        self.m = m if abs(m * self.h - 1) < 1e-12 and abs(J.side * m - n) < 1e-9 else None
        corner = np.asarray(J.corner)
        if self.m is not None:
            self.box = box_factor_on_grid(corner, J.side, self.m, stage.N_k)
        else:
            pts = _grid_points(corner, n, 1 / self.h)
            self.pts = pts
            self.box = box_hat_nd(pts, stage.N_k).reshape((n,) * stage.d)

    def forward(self, g):
        st = self.stage
        w = np.asarray(g, dtype=complex) / st.T_k
        if self.m is not None:
            raw = lattice_sum(st.leaves, w, st.N_k, self.J.corner, self.J.side, self.m, sign=-1)
        else:
            raw = _direct_sum(st.leaves, w, st.N_k, self.pts).reshape((self.n,) * st.d)
        return raw * self.box

    def adjoint(self, F):
        """Sum_x F(x) conj(phi_a(x)); the forward map is Sum_a g_a phi_a / T_k."""
        st = self.stage
        field = np.asarray(F) * np.conj(self.box)
        if self.m is not None:
            return lattice_adjoint(st.leaves, field, st.N_k, self.J.corner, self.J.side, self.m, sign=-1)
        ph = np.exp(1j * TWO_PI * (self.pts @ st.leaves.T.astype(float)) / st.N_k)
        return field.ravel() @ ph

    def lp(self, F, p):
        a = np.abs(F)
        if math.isinf(p):
            return float(a.max())
        return float((np.sum(a**p) * self.h**self.stage.d) ** (1 / p))


def _direct_sum(freqs, w, denom, pts):
    out = np.empty(pts.shape[0], dtype=complex)
    step = max(1, (1 << 22) // max(len(w), 1))
    for s in range(0, pts.shape[0], step):
        out[s : s + step] = np.exp(-1j * TWO_PI * (pts[s : s + step] @ freqs.T.astype(float)) / denom) @ w
    return out


def _check_J(stage, J):
    if J is None:
        return Cube((0.0,) * stage.d, float(stage.N_k))
    if not isinstance(J, Cube):
        J = Cube(*J)
    if J.d != stage.d:
        raise ValueError("cube dimension does not match the stage")
    return J


def extension_norm(
    stage: CantorStage,
    g: DensityOnStage,
    p: float,
    J: Optional[Cube] = None,
    spacing: float = 0.25,
    rtol: float = 1e-3,
) -> float:
    """``||(g dmu_k)^||_{L^p(J)}`` by the midpoint rule, halving the spacing until two levels agree."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if spacing > 0.5:
        raise ValueError("spacing must be at most 1/2")
    J = _check_J(stage, J)
    n = max(1, math.ceil(J.side / spacing - 1e-9))
    grid = _ExtensionGrid(stage, J, n)
    prev = grid.lp(grid.forward(g.values), p)
    while True:
        n *= 2
        grid = _ExtensionGrid(stage, J, n)
        cur = grid.lp(grid.forward(g.values), p)
        if abs(cur - prev) <= rtol * abs(cur):
            return cur
        prev = cur


def power_iterate_extension(stage, p, J, starts, n, budget=60, tol=1e-9):
    """Nonlinear power iteration for max ||(g dmu)^||_p / ||g||_{L^2(mu)} on a fixed grid.

    Each step replaces g by the adjoint applied to |F|^{p-2} F and renormalises;
    the discretised ratio never decreases.  Returns the final g for each start.
    """
    grid = _ExtensionGrid(stage, J, n)
    out = []
    for g0 in starts:
        g = np.asarray(g0, dtype=complex)
        g = g / np.sqrt(np.mean(np.abs(g) ** 2))
        F = grid.forward(g)
        best = grid.lp(F, p)
        for _ in range(budget):
            a = np.abs(F)
            h = grid.adjoint(a ** (p - 2) * F)
            nrm = np.sqrt(np.mean(np.abs(h) ** 2))
            if nrm == 0:
                break
            g_new = h / nrm
            F_new = grid.forward(g_new)
            val = grid.lp(F_new, p)
            if val <= best * (1 + tol):
                if val > best:
                    g, F, best = g_new, F_new, val
                break
            g, F, best = g_new, F_new, val
        out.append(g)
    return out


# -- restriction reports ---------------------------------------------------------------


@dataclass
class RestrictionReport:
    p: float
    k: int
    J: Cube
    measured_norm: float
    measured_ratio: float
    paper_bound: float
    g_kind: str
    C0: float
    scale: float = field(default=float("nan"))

    @property
    def normalized_ratio(self) -> float:
        """measured_ratio / (N_k^{d/p} T_k^{-1/2})."""
        return self.measured_ratio / self.scale

    @property
    def ratio_over_bound(self) -> float:
        return self.measured_ratio / self.paper_bound

    def row(self):
        return (self.k, self.p, self.g_kind, self.measured_ratio, self.paper_bound, self.ratio_over_bound)


_C0_CACHE: dict = {}


def default_C0(stage: CantorStage, p: float) -> float:
    """Largest certified single-scale Lambda(p) constant over the stage alphabets, times 2^d."""
    best = 1.0
    for B in stage.base_sets[: stage.depth]:
        key = (B.dim, B.modulus, B.elements, float(p))
        if key not in _C0_CACHE:
            _C0_CACHE[key] = lambda_p_constant(B, p, budget=100, n_starts=4).constant_lower
        best = max(best, _C0_CACHE[key])
    return best * 2**stage.d


def restriction_report(
    stage: CantorStage,
    p: float,
    J: Optional[Cube] = None,
    strategies: Sequence[str] = STRATEGIES,
    seed: int = 0,
    C0: Optional[float] = None,
    spacing: float = 0.25,
    rtol: float = 1e-3,
    power_budget: int = 60,
) -> list:
    """One :class:`RestrictionReport` per strategy on an N_k-cube ``J`` (default ``[0, N_k]^d``).

    The power-iterated entry starts from every fixed strategy plus two seeded
    complex Gaussians and reports the best measured ratio over all of them,
    so it is a lower bound on the operator norm that dominates the others.
    """
    if not p > 2:
        raise ValueError("restriction reports need p > 2")
    J = _check_J(stage, J)
    if abs(J.side - stage.N_k) > 1e-9:
        raise ValueError(f"J must be an N_k-cube (side {stage.N_k}), got side {J.side}")
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies {sorted(unknown)}")
    if C0 is None:
        C0 = default_C0(stage, p)
    d, k = stage.d, stage.depth
    scale = stage.N_k ** (d / p) * stage.T_k ** -0.5
    bound = C0**k * scale
    rng = np.random.default_rng(seed)
    fixed = {
        "ones": DensityOnStage.ones(stage),
        "random_signs": DensityOnStage.random_signs(stage, int(rng.integers(2**31))),
        "knapp_concentrated": DensityOnStage.concentrated(stage, int(rng.integers(stage.T(1) if k else 1))),
    }

    def measure(g):
        norm = extension_norm(stage, g, p, J, spacing, rtol)
        return norm, norm / g.l2_norm()

    measured = {}
    for name in ("ones", "random_signs", "knapp_concentrated"):
        if name in strategies or "power_iterated" in strategies:
            measured[name] = measure(fixed[name])
    if "power_iterated" in strategies:
        starts = [fixed[s].values for s in ("ones", "random_signs", "knapp_concentrated")]
        starts += [rng.standard_normal(stage.T_k) + 1j * rng.standard_normal(stage.T_k) for _ in range(2)]
        n = max(1, math.ceil(J.side / spacing - 1e-9))
        cands = [measured[s] for s in ("ones", "random_signs", "knapp_concentrated")]
        for g in power_iterate_extension(stage, p, J, starts, n, budget=power_budget):
            cands.append(measure(DensityOnStage(stage, g)))
        measured["power_iterated"] = max(cands, key=lambda t: t[1])
    return [
        RestrictionReport(p, k, J, measured[s][0], measured[s][1], bound, s, C0, scale) for s in strategies
    ]


def write_restriction_csv(path, reports: Iterable[RestrictionReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESTRICTION_CSV_HEADER)
        for r in reports:
            k, p, s, mr, pb, rob = r.row()
            w.writerow([k, repr(float(p)), s, repr(float(mr)), repr(float(pb)), repr(float(rob))])


# -- weights -----------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedNormSpec:
    """Cube I (corner, side R) and norm order p for ``||.||_{L^p_#(w_I)}``."""

    corner: tuple
    side: float
    p: float
    exponent: int = WEIGHT_EXPONENT

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(c) for c in np.atleast_1d(self.corner)))
        if not self.side > 0:
            raise ValueError("cube side must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1")

    @property
    def d(self) -> int:
        return len(self.corner)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.corner) + self.side / 2

    def weight(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x - self.center, axis=-1)
        return (1 + r / self.side) ** (-self.exponent)


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


@lru_cache(maxsize=None)
def weight_integral(d: int, exponent: int = WEIGHT_EXPONENT) -> float:
    """``int_{R^d} (1 + |y|)^-exponent dy`` by adaptive quadrature (cached)."""
    f = lambda r: r ** (d - 1) * (1 + r) ** (-exponent)  # noqa: E731
    # split where the integrand lives; the tail past r = 10 is below 11^-99
    pieces = [0.0, 0.01, 0.05, 0.2, 1.0, 10.0]
    val = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0] for a, b in zip(pieces, pieces[1:]))
    val += integrate.quad(f, 10.0, np.inf, epsabs=0, epsrel=1e-10)[0]
    return _sphere_area(d) * val


def weight_integral_closed_form(d: int, exponent: int = WEIGHT_EXPONENT) -> float:
    """Same integral via the Beta function: |S^{d-1}| B(d, exponent - d)."""
    return _sphere_area(d) * math.exp(special.betaln(d, exponent - d))


@lru_cache(maxsize=64)
def _radial_rule(R: float, d: int, bandwidth: float, exponent: int = WEIGHT_EXPONENT, order: int = 10):
    """Nodes y and weights W with sum W F(y) ~ int F(y) (1 + |y|/R)^-exponent dy.

    Radial panels are graded from R/1000 up to a step of ``min(1/8, R/8)`` and
    run to ``|y| = R``, where the weight has dropped to 2^-exponent.  In two
    dimensions the angle uses the trapezoid rule with enough points to resolve
    ``bandwidth`` oscillations per unit length.
    """
    if d not in (1, 2):
        raise ValueError("weighted norms are implemented for d = 1 and d = 2")
    step = min(0.125, R / 8)
    edges = [0.0]
    r = R / 1000
    while r < step:
        edges.append(r)
        r *= 1.6
    r = edges[-1]
    while r < R:
        r = min(R, r + step)
        edges.append(r)
    xg, wg = np.polynomial.legendre.leggauss(order)
    rs, ws = [], []
    for a, b in zip(edges, edges[1:]):
        rs.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * wg)
    rs, ws = np.concatenate(rs), np.concatenate(ws)
    wr = ws * (1 + rs / R) ** (-exponent)
    if d == 1:
        y = np.concatenate([rs, -rs])[:, None]
        return y, np.concatenate([wr, wr])
    ys, Ws = [], []
    for a, b in zip(edges, edges[1:]):
        sel = (rs >= a) & (rs <= b)
        K = 16 + 4 * math.ceil(bandwidth * TWO_PI * b / 4)
        th = TWO_PI * np.arange(K) / K
        rr = rs[sel][:, None]
        ys.append(np.stack([(rr * np.cos(th)).ravel(), (rr * np.sin(th)).ravel()], axis=1))
        Ws.append(((wr[sel] * rs[sel])[:, None] * np.full(K, TWO_PI / K)).ravel())
    return np.concatenate(ys), np.concatenate(Ws)


def _rule_for(R, d, p, bandwidth=1.0):
    # |f|^p has p times the bandwidth of f; sqrt(d) for diagonal directions
    return _radial_rule(float(R), d, float(math.ceil(p * bandwidth * math.sqrt(d) + 1)))


def weighted_integral(f, center, R, p, bandwidth=1.0) -> float:
    """``int |f|^p (1 + |x - center|/R)^-100 dx`` for a vectorised callable f."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    y, W = _rule_for(R, center.size, p, bandwidth)
    vals = np.abs(f(center + y))
    return float(np.sum(W * vals**p))


@dataclass(frozen=True)
class Grid:
    """Midpoint-free sample grid: values at ``corner + i * spacing`` for i in range(shape)."""

    corner: tuple
    spacing: float
    shape: tuple

    def axes(self):
        return [c + self.spacing * np.arange(n) for c, n in zip(self.corner, self.shape)]


def weighted_lp_norm(f, spec: WeightedNormSpec, grid: Optional[Grid] = None, normalized: bool = True, bandwidth=1.0) -> float:
    """``(|I|^-1 int |f|^p w_I)^{1/p}``, or without the ``|I|^-1`` when ``normalized`` is False.

    ``f`` is either a vectorised callable or an array of samples on ``grid``;
    sampled functions are interpolated by cubic splines and the grid must
    cover the cube dilated by 8 about its centre.
    """
    d = spec.d
    if grid is not None:
        vals = np.asarray(f)
        if vals.shape != tuple(grid.shape):
            raise ValueError("sample array does not match the grid shape")
        lo = spec.center - 4 * spec.side
        hi = spec.center + 4 * spec.side
        axes = grid.axes()
        for ax, a, b in zip(axes, lo, hi):
            if ax[0] > a + 1e-12 or ax[-1] < b - 1e-12:
                raise ValueError("grid does not cover the cube dilated by 8")
        if not np.any(vals):
            return 0.0
        method = "cubic" if min(grid.shape) >= 4 else "linear"
        re = interpolate.RegularGridInterpolator(axes, vals.real, method=method)
        im = interpolate.RegularGridInterpolator(axes, vals.imag, method=method) if np.iscomplexobj(vals) else None
        fun = (lambda x: re(x) + 1j * im(x)) if im is not None else re  # noqa: E731
    else:
        fun = f
    total = weighted_integral(fun, spec.center, spec.side, spec.p, bandwidth)
    if normalized:
        total /= spec.side**d
    return total ** (1 / spec.p)


def weight_overlap_constant(d: int, sides: Sequence[int] = None, spacing: float = 0.125) -> float:
    """Numerical ``C2 = sup_J sup_x sum_{I in tiling(J)} w_I(x) / w_J(x)`` over the given cube sides.

    Sampled on a grid covering J dilated by 3, refined to the unit-cube
    centres; a lower estimate of the true supremum, which is attained near
    the corners of J and grows towards ``(1 + sqrt(d)/2)^100``.
    """
    if sides is None:
        sides = (1, 2, 4, 8, 16, 32) if d == 1 else (1, 2, 4, 8)
    best = 0.0
    for m in sides:
        cJ = np.full(d, m / 2)
        centres = _grid_points(np.zeros(d), m, 1)
        axis = np.arange(-m, 2 * m + spacing / 2, spacing)
        pts = np.stack([g.ravel() for g in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
        pts = np.vstack([pts, centres])
        logwJ = -WEIGHT_EXPONENT * np.log1p(np.linalg.norm(pts - cJ, axis=1) / m)
        acc = np.full(pts.shape[0], -np.inf)
        for s in range(0, centres.shape[0], 256):
            r = np.linalg.norm(pts[:, None, :] - centres[None, s : s + 256, :], axis=2)
            acc = np.logaddexp(acc, special.logsumexp(-WEIGHT_EXPONENT * np.log1p(r), axis=1))
        best = max(best, float(np.exp(np.max(acc - logwJ))))
    return best


# -- decoupling --------------------------------------------------------------------


def bump_transform(y):
    """Inverse transform of the raised cosine sin^2(pi u) on [0, 1]: int_0^1 sin^2(pi u) e(u y) du."""
    y = np.asarray(y, dtype=float)

    def E(s):
        # int_0^1 e(u s) du
        out = np.ones_like(s, dtype=complex)
        nz = np.abs(s) > 1e-12
        out[nz] = (np.exp(1j * TWO_PI * s[nz]) - 1) / (1j * TWO_PI * s[nz])
        return out

    return 0.5 * E(y) - 0.25 * E(y + 1) - 0.25 * E(y - 1)


def _piece_envelope(x, N):
    """N^-d prod_i bump_transform(x_i / N): the transform of one bump on an N^-1 cube at the origin."""
    x = np.atleast_2d(x)
    return np.prod(bump_transform(x / N), axis=1) / N ** x.shape[1]


def decoupled_function(stage: CantorStage, level: int, coeffs):
    """Callable f = sum_a c_a f_a where f_a has a raised-cosine bump on the level cube of a."""
    N = stage.N(level)
    corners = stage.corners[level].astype(float)
    c = np.asarray(coeffs, dtype=complex)
    act = np.nonzero(c)[0]
    A, cA = corners[act], c[act]

    def f(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(x.shape[0], dtype=complex)
        step = max(1, (1 << 21) // max(len(act), 1))
        for s in range(0, x.shape[0], step):
            xs = x[s : s + step]
            out[s : s + step] = (np.exp(1j * TWO_PI * (xs @ A.T) / N) @ cA) * _piece_envelope(xs, N)
        return out

    return f


@dataclass
class DecouplingResult:
    lhs: float
    rhs: float
    ratio: float
    level: int
    p: float
    active: int


def decoupling_check(stage: CantorStage, level: int, coeffs, J: Optional[Cube] = None, p: float = 4.0) -> DecouplingResult:
    """Both sides of the multiscale decoupling inequality for one coefficient assignment.

    lhs = (sum over unit cubes I tiling J of ||f||_{L^p(w_I)}^p)^{1/p},
    rhs = (sum_a ||f_a||_{L^p(w_J)}^2)^{1/2}.  ``J`` defaults to the
    N_j-cube centred at the origin, where the pieces concentrate.
    """
    if not 0 <= level <= stage.depth:
        raise ValueError("level out of range")
    d, N = stage.d, stage.N(level)
    c = np.asarray(coeffs, dtype=complex).ravel()
    if c.shape[0] != stage.T(level):
        raise ValueError(f"need {stage.T(level)} coefficients at level {level}")
    if J is None:
        J = Cube.centered(np.zeros(d), float(N))
    elif not isinstance(J, Cube):
        J = Cube(*J)
    if abs(J.side - N) > 1e-9:
        raise ValueError(f"J must be an N_j-cube (side {N}), got side {J.side}")
    f = decoupled_function(stage, level, c)
    y, W = _rule_for(1.0, d, p)
    centres = _grid_points(np.asarray(J.corner), N, 1)
    lhs_p = 0.0
    for s in range(0, centres.shape[0], 64):
        block = centres[s : s + 64]
        pts = (block[:, None, :] + y[None, :, :]).reshape(-1, d)
        vals = np.abs(f(pts)).reshape(block.shape[0], -1)
        lhs_p += float(np.sum(vals**p @ W))
    # every piece has the same modulus up to |c_a|
    env = weighted_integral(lambda x: _piece_envelope(x, N), J.center, float(N), p) ** (1 / p)
    rhs = float(np.sqrt(np.sum(np.abs(c) ** 2)) * env)
    lhs = lhs_p ** (1 / p)
    return DecouplingResult(lhs, rhs, lhs / rhs if rhs > 0 else math.nan, level, p, int(np.count_nonzero(c)))


def mixed_norm_inequality_check(c, p: float):
    """(lhs, rhs, holds) for sum_i (sum_j c_ij^2)^{p/2} <= (sum_j (sum_i c_ij^p)^{2/p})^{p/2}."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 2:
        raise ValueError("expected a matrix")
    if np.any(c < 0):
        raise ValueError("entries must be nonnegative")
    if not p > 2:
        raise ValueError("p must exceed 2")
    lhs = float(np.sum(np.sum(c**2, axis=1) ** (p / 2)))
    rhs = float(np.sum(np.sum(c**p, axis=0) ** (2 / p)) ** (p / 2))
    return lhs, rhs, lhs <= rhs * (1 + 1e-12)
