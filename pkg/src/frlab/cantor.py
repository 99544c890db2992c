"""Finite-stage random-translate Cantor measures.

Level-``j`` cubes are stored by their integer corners over the denominator
``N_j = n_1 ... n_j``: a corner ``A`` stands for the cube
``A / N_j + [0, 1/N_j]^d``.  Each level-``j`` cube carries mass ``1/T_j``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from frlab.alphabet import Alphabet, SequencePlan

FORMAT_VERSION = 1
DEFAULT_NODE_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CantorStage:
    plan: SequencePlan
    depth: int
    base_sets: tuple
    translations: tuple  # level j -> (T_{j-1}, d) int array
    corners: tuple  # level j = 0..depth -> (T_j, d) int array over N_j
    parents: tuple  # level j = 1..depth -> (T_j,) index into level j-1

    @property
    def d(self) -> int:
        return self.plan.d

    @property
    def N_k(self) -> int:
        return self.plan.N(self.depth)

    @property
    def T_k(self) -> int:
        return self.plan.T(self.depth)

    def N(self, j: int) -> int:
        return self.plan.N(j)

    def T(self, j: int) -> int:
        return self.plan.T(j)

    @property
    def leaves(self) -> np.ndarray:
        return self.corners[self.depth]

    @cached_property
    def _corner_sets(self):
        return [set(map(tuple, c.tolist())) for c in self.corners]

    def has_node(self, level: int, corner) -> bool:
        return tuple(int(v) for v in np.atleast_1d(corner)) in self._corner_sets[level]

    def truncate(self, k: int) -> "CantorStage":
        """The stage-``k`` measure this stage was grown from."""
        if not 0 <= k <= self.depth:
            raise ValueError(f"level {k} outside [0, {self.depth}]")
        return CantorStage(
            plan=self.plan,
            depth=k,
            base_sets=self.base_sets[:k],
            translations=self.translations[:k],
            corners=self.corners[: k + 1],
            parents=self.parents[:k],
        )

    def __eq__(self, other):
        if not isinstance(other, CantorStage):
            return NotImplemented
        return (
            self.plan == other.plan
            and self.depth == other.depth
            and self.base_sets == other.base_sets
            and all(np.array_equal(a, b) for a, b in zip(self.translations, other.translations))
            and all(np.array_equal(a, b) for a, b in zip(self.corners, other.corners))
        )

    __hash__ = None


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _check_alphabets(plan: SequencePlan, alphabets: Sequence[Alphabet], depth: int):
    if depth > plan.depth:
        raise ValueError(f"depth {depth} exceeds plan depth {plan.depth}")
    if len(alphabets) < depth:
        raise ValueError(f"{len(alphabets)} alphabets for depth {depth}")
    for j in range(depth):
        B = alphabets[j]
        if B.dim != plan.d or B.modulus != plan.n_seq[j] or B.size != plan.t_seq[j]:
            raise ValueError(
                f"level {j + 1} alphabet (d={B.dim}, N={B.modulus}, t={B.size}) does not match "
                f"plan (d={plan.d}, n={plan.n_seq[j]}, t={plan.t_seq[j]})"
            )


def _grow(parent_corners, B: Alphabet, n: int, shifts):
    """Children of every parent: ``n * parent + ((shift + B) mod n)``, sorted within each parent."""
    d = B.dim
    S = (shifts[:, None, :] + B.points[None, :, :]) % n
    key = np.zeros(S.shape[:2], dtype=np.int64)
    for ax in range(d):
        key = key * n + S[:, :, ax]
    order = np.argsort(key, axis=1, kind="stable")
    S = np.take_along_axis(S, order[:, :, None], axis=1)
    children = n * parent_corners[:, None, :] + S
    parents = np.repeat(np.arange(parent_corners.shape[0]), B.size)
    return children.reshape(-1, d), parents


def assemble_stage(plan: SequencePlan, alphabets: Sequence[Alphabet], translations) -> CantorStage:
    """Rebuild a stage from explicit per-level translation vectors."""
    depth = len(translations)
    _check_alphabets(plan, alphabets, depth)
    corners = [np.zeros((1, plan.d), dtype=np.int64)]
    parents, shifts_out = [], []
    for j in range(depth):
        v = np.asarray(translations[j], dtype=np.int64).reshape(-1, plan.d)
        if v.shape[0] != corners[-1].shape[0]:
            raise ValueError(f"level {j + 1} needs {corners[-1].shape[0]} translations, got {v.shape[0]}")
        if v.size and (v.min() < 0 or v.max() >= plan.n_seq[j]):
            raise ValueError(f"level {j + 1} translation outside [0, {plan.n_seq[j]})^d")
        ch, par = _grow(corners[-1], alphabets[j], plan.n_seq[j], v)
        corners.append(ch)
        parents.append(par)
        shifts_out.append(v)
    return CantorStage(
        plan=plan,
        depth=depth,
        base_sets=tuple(alphabets[:depth]),
        translations=tuple(_frozen(v) for v in shifts_out),
        corners=tuple(_frozen(c) for c in corners),
        parents=tuple(_frozen(p) for p in parents),
    )


def build_stage(
    plan: SequencePlan,
    alphabets: Sequence[Alphabet],
    depth: int,
    seed: int = 0,
    translate: bool = True,
    node_budget: int = DEFAULT_NODE_BUDGET,
) -> CantorStage:
    """Stage-``depth`` random-translate Cantor measure.

    Translations for level ``j`` are drawn for all level ``j-1`` parents at
    once, levels in order, from one seeded stream; truncating a deeper stage
    therefore gives the shallower stage of the same seed.  ``translate=False``
    forces every translation to zero.
    """
    _check_alphabets(plan, alphabets, depth)
    total = plan.T(depth)
    if total > node_budget:
        raise BudgetExceeded(
            f"T_{depth} = {total} exceeds the node budget {node_budget}; lower depth or n1"
        )
    rng = np.random.default_rng(seed)
    translations = []
    count = 1
    for j in range(depth):
        n = plan.n_seq[j]
        if translate:
            translations.append(rng.integers(0, n, size=(count, plan.d)))
        else:
            translations.append(np.zeros((count, plan.d), dtype=np.int64))
        count *= plan.t_seq[j]
    return assemble_stage(plan, alphabets, translations)


def unit_stage(d: int) -> CantorStage:
    """Stage 0: Lebesgue measure on the unit cube."""
    plan = SequencePlan((), (), 1.0, 0.5 * d, 4.0, d, 1.0)
    return assemble_stage(plan, [], [])


# -- exact bookkeeping ---------------------------------------------------------


def measure_of_cube(stage: CantorStage, level: int, corner) -> Fraction:
    if not 0 <= level <= stage.depth:
        raise ValueError(f"level {level} outside [0, {stage.depth}]")
    if not stage.has_node(level, corner):
        raise KeyError(f"{tuple(np.atleast_1d(corner))} is not a level-{level} node")
    return Fraction(1, stage.T(level))


def level_mass(stage: CantorStage, level: int) -> Fraction:
    return sum((measure_of_cube(stage, level, c) for c in stage.corners[level]), Fraction(0))


def check_nesting(stage: CantorStage) -> bool:
    """Every level-j cube lies in exactly one level-(j-1) cube, namely its recorded parent."""
    for j in range(1, stage.depth + 1):
        n = stage.plan.n_seq[j - 1]
        child, prev = stage.corners[j], stage.corners[j - 1]
        if len({tuple(r) for r in child.tolist()}) != child.shape[0]:
            return False
        host = child // n
        if not np.array_equal(host, prev[stage.parents[j - 1]]):
            return False
        lo, hi = child - n * host, child - n * host + 1
        if lo.min() < 0 or hi.max() > n:
            return False
    return True


def covering_count(stage: CantorStage, level: int, center, radius) -> int:
    """Number of half-open level-``level`` cubes meeting the closed ball B(center, radius)."""
    N = stage.N(level)
    center = np.asarray(center, dtype=float)
    c = stage.corners[level]
    lo_idx = np.floor((center - radius) * N).astype(np.int64)
    hi_idx = np.floor((center + radius) * N).astype(np.int64)
    in_range = np.all((c >= lo_idx) & (c <= hi_idx), axis=1)
    cand = c[in_range]
    if cand.size == 0:
        return 0
    near = np.clip(center, cand / N, (cand + 1) / N)
    dist = np.linalg.norm(near - center, axis=1)
    return int(np.count_nonzero(dist <= radius))


# -- ball masses -----------------------------------------------------------------


def _seg_int(x, r):
    """Antiderivative of sqrt(r^2 - x^2) measured from x = -r (x clipped to [-r, r])."""
    x = np.clip(x, -r, r)
    with np.errstate(invalid="ignore", divide="ignore"):
        asin = np.where(r > 0, np.arcsin(np.where(r > 0, x / np.where(r > 0, r, 1), 0.0)), 0.0)
    return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0)) + r * r * asin) + 0.25 * np.pi * r * r


def _quadrant_area(X, Y, r):
    """Area of the disk of radius r at the origin intersected with {x <= X, y <= Y}."""
    X = np.clip(X, -r, r)
    Yc = np.clip(Y, -r, r)
    w = np.sqrt(np.maximum(r * r - Yc * Yc, 0.0))
    S = lambda x: _seg_int(x, r)  # noqa: E731
    mid_lo = -w
    mid_hi = np.clip(X, -w, w)
    middle = np.where(X > -w, Yc * (mid_hi - mid_lo) + S(mid_hi) - S(mid_lo), 0.0)
    left = 2.0 * S(np.minimum(X, -w))
    right = np.where(X > w, 2.0 * (S(X) - S(w)), 0.0)
    return np.where(Yc >= 0, left + middle + right, middle)


def _disk_rect_area(cx, cy, r, x0, x1, y0, y1):
    x0, x1, y0, y1 = x0 - cx, x1 - cx, y0 - cy, y1 - cy
    area = (
        _quadrant_area(x1, y1, r)
        - _quadrant_area(x0, y1, r)
        - _quadrant_area(x1, y0, r)
        + _quadrant_area(x0, y0, r)
    )
    return np.maximum(area, 0.0)


def ball_box_volume(center, radius, lo, hi) -> float:
    """Volume of B(center, radius) intersected with the box [lo, hi] (d <= 3)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = center.size
    if radius <= 0:
        return 0.0
    near = np.clip(center, lo, hi)
    if np.linalg.norm(near - center) >= radius:
        return 0.0
    far = np.maximum(np.abs(center - lo), np.abs(center - hi))
    if np.linalg.norm(far) <= radius:
        return float(np.prod(hi - lo))
    if d == 1:
        return float(max(0.0, min(hi[0], center[0] + radius) - max(lo[0], center[0] - radius)))
    if d == 2:
        return float(_disk_rect_area(center[0], center[1], radius, lo[0], hi[0], lo[1], hi[1]))
    if d == 3:
        a = max(lo[0], center[0] - radius)
        b = min(hi[0], center[0] + radius)

        def slab(x):
            rr = math.sqrt(max(radius * radius - (x - center[0]) ** 2, 0.0))
            return float(_disk_rect_area(center[1], center[2], rr, lo[1], hi[1], lo[2], hi[2]))

        pts = [x for x in (center[0],) if a < x < b]
        for k in (1, 2):
            for e in (lo[k], hi[k]):
                gap = radius * radius - (e - center[k]) ** 2
                if gap > 0:
                    pts += [x for x in (center[0] - math.sqrt(gap), center[0] + math.sqrt(gap)) if a < x < b]
        val, _ = integrate.quad(slab, a, b, points=sorted(set(pts)) or None, epsabs=0, epsrel=1e-10, limit=200)
        return float(val)
    raise ValueError("ball geometry is implemented for d <= 3 only")


def ball_mass(stage: CantorStage, center, radius) -> float:
    """mu_k(B(center, radius)) with closed cubes and uniform density on each cube."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = stage.d
    center = np.broadcast_to(np.asarray(center, dtype=float), (d,))
    N = stage.N_k
    lo = stage.leaves / N
    hi = lo + 1.0 / N
    near = np.clip(center, lo, hi)
    touched = np.linalg.norm(near - center, axis=1) < radius
    far = np.maximum(np.abs(center - lo), np.abs(center - hi))
    full = touched & (np.linalg.norm(far, axis=1) <= radius)
    partial = touched & ~full
    vol = float(np.count_nonzero(full)) * N ** (-d)
    if np.any(partial):
        if d == 1:
            l, h = lo[partial, 0], hi[partial, 0]
            vol += float(np.sum(np.clip(np.minimum(h, center[0] + radius) - np.maximum(l, center[0] - radius), 0, None)))
        elif d == 2:
            l, h = lo[partial], hi[partial]
            vol += float(np.sum(_disk_rect_area(center[0], center[1], radius, l[:, 0], h[:, 0], l[:, 1], h[:, 1])))
        else:
            vol += sum(ball_box_volume(center, radius, l, h) for l, h in zip(lo[partial], hi[partial]))
    # each cube has Lebesgue volume N^-d and mass 1/T
    return min(1.0, vol * N**d / stage.T_k)


@dataclass(frozen=True)
class BallConditionReport:
    gamma: float
    sup_ratio: float
    argmax_center: tuple
    argmax_radius: float
    samples: int


def ball_condition_sup(
    stage: CantorStage,
    gamma: float,
    samples: int = 256,
    seed: int = 0,
    n_radii: int = 24,
    max_node_centers: int = 2048,
) -> BallConditionReport:
    """Sup of ``mu(B(x, r)) / r^gamma`` over sampled centers and a geometric radius grid.

    Centers are the leaf corners and leaf-cube midpoints (subsampled beyond
    ``max_node_centers``) plus ``samples`` uniform random points; radii run
    geometrically over ``[1/(4 N_k), 2 sqrt(d)]``.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    alpha = stage.plan.alpha if stage.depth else stage.d
    if stage.depth and gamma >= alpha:
        warnings.warn(f"gamma={gamma} >= alpha={alpha}: the ratio may grow with depth", stacklevel=2)
    rng = np.random.default_rng(seed)
    d, N = stage.d, stage.N_k
    nodes = np.concatenate([stage.leaves / N, (stage.leaves + 0.5) / N])
    if nodes.shape[0] > max_node_centers:
        nodes = nodes[np.sort(rng.choice(nodes.shape[0], max_node_centers, replace=False))]
    centers = np.concatenate([nodes, rng.random((samples, d))])
    radii = np.geomspace(0.25 / N, 2.0 * math.sqrt(d), n_radii)
    best = (-1.0, None, None)
    for x in centers:
        for r in radii:
            val = ball_mass(stage, x, r) / r**gamma
            if val > best[0]:
                best = (val, tuple(float(v) for v in x), float(r))
    return BallConditionReport(gamma, best[0], best[1], best[2], int(centers.shape[0] * radii.size))


# -- martingale property -----------------------------------------------------------


@dataclass(frozen=True)
class MartingaleResult:
    empirical_mean: float
    reference: float
    z_score: float
    trials: int
    point: tuple
    perturbation: tuple


def _off_boundary(x, N, rng):
    x = np.array(x, dtype=float)
    shift = np.zeros_like(x)
    for _ in range(64):
        scaled = x * N
        if not np.any(np.abs(scaled - np.round(scaled)) < 1e-9):
            return x, shift
        step = rng.uniform(-0.25, 0.25, size=x.shape) / N
        step = np.where(np.abs(scaled - np.round(scaled)) < 1e-9, step, 0.0)
        x = np.clip(x + step, 0.0, np.nextafter(1.0, 0.0))
        shift = shift + step
    raise RuntimeError("could not move the point off the cube boundaries")


def _parent_index(stage: CantorStage, level: int, x):
    """Index of the half-open level cube containing x, or None."""
    cell = np.floor(np.asarray(x) * stage.N(level)).astype(np.int64)
    hits = np.flatnonzero(np.all(stage.corners[level] == cell, axis=1))
    return int(hits[0]) if hits.size else None


def density(stage: CantorStage, x) -> float:
    """Value of the stage density at x (half-open cubes)."""
    idx = _parent_index(stage, stage.depth, x)
    if idx is None:
        return 0.0
    return stage.N_k**stage.d / stage.T_k


def martingale_check(
    plan: SequencePlan,
    alphabets: Sequence[Alphabet],
    level: int,
    x,
    trials: int,
    seed: int = 0,
) -> MartingaleResult:
    """Monte-Carlo test of E[mu_k(x) | stage k-1] = mu_{k-1}(x).

    The stage-(k-1) skeleton is built from ``seed``; each trial redraws the
    level-k translations.  Only the translation of the parent cube holding
    ``x`` affects the density at ``x``, so each trial draws just that one.
    """
    if level < 1:
        raise ValueError("level must be at least 1")
    if trials < 1:
        raise ValueError("need at least one trial")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]^d")
    trial_seed, jitter_seed = np.random.SeedSequence(seed).spawn(2)
    skeleton = build_stage(plan, alphabets, level - 1, seed=seed)
    n = plan.n_seq[level - 1]
    Nk = plan.N(level)
    xp, shift = _off_boundary(np.minimum(x, np.nextafter(1.0, 0.0)), Nk, np.random.default_rng(jitter_seed))
    reference = density(skeleton, xp)
    pidx = _parent_index(skeleton, level - 1, xp)
    if pidx is None:
        return MartingaleResult(0.0, reference, 0.0, trials, tuple(xp), tuple(shift))
    d = plan.d
    u = np.floor(xp * Nk).astype(np.int64) - n * skeleton.corners[level - 1][pidx]
    rng = np.random.default_rng(trial_seed)
    v = rng.integers(0, n, size=(trials, d))
    offset = (u[None, :] - v) % n
    B = alphabets[level - 1]
    member = np.zeros((n,) * d, dtype=bool)
    member[tuple(B.points.T)] = True
    inside = member[tuple(offset.T)]
    value = Nk**d / plan.T(level)
    samples = inside * value
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    if se > 0:
        z = (mean - reference) / se
    else:
        z = 0.0 if math.isclose(mean, reference, rel_tol=1e-12, abs_tol=1e-12) else math.inf
    return MartingaleResult(mean, reference, float(z), trials, tuple(xp), tuple(shift))


def exact_translate_average(plan: SequencePlan, alphabets, level: int, x, skeleton: Optional[CantorStage] = None):
    """Exact E[mu_k(x)] over all n_k^d translations of the parent holding x, as a Fraction.

    Returns ``(average, reference)``; ``x`` must be off the level-k cube boundaries.
    """
    if skeleton is None:
        skeleton = build_stage(plan, alphabets, level - 1, translate=False)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Nk = plan.N(level)
    scaled = x * Nk
    if np.any(np.abs(scaled - np.round(scaled)) < 1e-12):
        raise ValueError("x lies on a level-k cube boundary")
    ref_idx = _parent_index(skeleton, level - 1, x)
    reference = Fraction(0) if ref_idx is None else Fraction(plan.N(level - 1) ** plan.d, plan.T(level - 1))
    if ref_idx is None:
        return Fraction(0), reference
    n, d = plan.n_seq[level - 1], plan.d
    u = np.floor(scaled).astype(np.int64) - n * skeleton.corners[level - 1][ref_idx]
    B = set(alphabets[level - 1].elements)
    hits = 0
    for v in np.ndindex(*(n,) * d):
        if tuple(int(w) for w in (u - np.array(v)) % n) in B:
            hits += 1
    value = Fraction(Nk**d, plan.T(level))
    return value * Fraction(hits, n**d), reference


# -- persistence -------------------------------------------------------------------


def stage_to_dict(stage: CantorStage, config_hash: Optional[str] = None) -> dict:
    doc = {
        "format": "frlab-cantor-stage",
        "format_version": FORMAT_VERSION,
        "plan": stage.plan.to_dict(),
        "depth": stage.depth,
        "alphabets": [B.to_dict() for B in stage.base_sets],
        "translations": [v.tolist() for v in stage.translations],
        "N_k": stage.N_k,
        "T_k": stage.T_k,
    }
    if config_hash is not None:
        doc["config_hash"] = config_hash
    return doc


def stage_from_dict(doc: dict) -> CantorStage:
    if doc.get("format") != "frlab-cantor-stage":
        raise ValueError("not a Cantor stage document")
    if int(doc.get("format_version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported stage format version {doc.get('format_version')}")
    plan = SequencePlan.from_dict(doc["plan"])
    alphabets = [Alphabet.from_dict(a) for a in doc["alphabets"]]
    stage = assemble_stage(plan, alphabets, doc["translations"])
    if stage.depth != int(doc["depth"]) or stage.N_k != int(doc["N_k"]) or stage.T_k != int(doc["T_k"]):
        raise ValueError("stage document is internally inconsistent")
    return stage


def dumps_stage(stage: CantorStage, config_hash: Optional[str] = None) -> str:
    return json.dumps(stage_to_dict(stage, config_hash), sort_keys=True, separators=(",", ":")) + "\n"


def save_stage(path, stage: CantorStage, config_hash: Optional[str] = None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_stage(stage, config_hash))


def load_stage(path) -> CantorStage:
    with open(path) as fh:
        return stage_from_dict(json.load(fh))
