"""Fourier transforms of stage measures, decay profiles and L^p growth."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from frlab._lattice import TWO_PI, box_factor_on_grid, box_hat_nd, lattice_sum
from frlab.cantor import CantorStage

CSV_HEADER = ("radius", "sup_abs_muhat")
PROFILE_SCHEMA = "frlab-spectral-profile/1"


def _as_batch(xi, d):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi.reshape(1, 1)
    elif xi.ndim == 1:
        xi = xi.reshape(1, d) if xi.size == d else xi.reshape(-1, 1)
    if xi.shape[1] != d:
        raise ValueError(f"frequencies must have {d} coordinates")
    return xi


def _tree_sum(stage: CantorStage, xi):
    """Mean of e(-a.xi) over leaf corners a, accumulating phases level by level."""
    phase = np.ones((1, xi.shape[0]), dtype=complex)
    for j in range(1, stage.depth + 1):
        n = stage.plan.n_seq[j - 1]
        par = stage.parents[j - 1]
        local = stage.corners[j] - n * stage.corners[j - 1][par]
        step = np.exp(-1j * TWO_PI * (local @ xi.T) / stage.N(j))
        phase = phase[par] * step
    return phase.mean(axis=0)


def _mu_hat_rows(stage, xi):
    return _tree_sum(stage, xi) * box_hat_nd(xi, stage.N_k)


def mu_hat(stage: CantorStage, xi) -> complex:
    """Fourier transform of the stage measure at one frequency."""
    return complex(_mu_hat_rows(stage, _as_batch(xi, stage.d))[0])


def mu_hat_batch(stage: CantorStage, xis, workers: int = 1, chunk: int = 512) -> np.ndarray:
    """Vectorised :func:`mu_hat`; output order matches input order for any ``workers``."""
    xi = _as_batch(xis, stage.d) if np.ndim(xis) else _as_batch([xis], stage.d)
    if xi.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    # keep each chunk's phase table near 4M entries
    chunk = max(1, min(chunk, (1 << 22) // max(stage.T_k, 1)))
    pieces = [xi[s : s + chunk] for s in range(0, xi.shape[0], chunk)]
    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda b: _mu_hat_rows(stage, b), pieces))
    else:
        parts = [_mu_hat_rows(stage, b) for b in pieces]
    return np.concatenate(parts)


def mu_hat_flat(stage: CantorStage, xis) -> np.ndarray:
    """Reference evaluation: one full phase per leaf, no shared prefixes."""
    xi = _as_batch(xis, stage.d)
    a = stage.leaves.astype(float) / stage.N_k
    return np.exp(-1j * TWO_PI * (xi @ a.T)).mean(axis=1) * box_hat_nd(xi, stage.N_k)


def product_formula(plan, alphabets, depth, xis) -> np.ndarray:
    """Closed form for zero translations: prod_j mean_{b in B_j} e(-b.xi/N_j) times the box factor."""
    xi = _as_batch(xis, plan.d)
    out = np.ones(xi.shape[0], dtype=complex)
    for j in range(1, depth + 1):
        B = alphabets[j - 1].points.astype(float)
        out *= np.exp(-1j * TWO_PI * (xi @ B.T) / plan.N(j)).mean(axis=1)
    return out * box_hat_nd(xi, plan.N(depth))


# -- decay profile -------------------------------------------------------------------


@dataclass
class SpectralProfile:
    frequencies: np.ndarray
    values: np.ndarray
    annuli: list
    annulus_sup: np.ndarray
    fitted_beta: float
    fit_range: tuple
    residual: float
    seed: int = 0
    fit_mask: np.ndarray = field(default=None, repr=False)

    def rows(self):
        return [(lo, float(s)) for (lo, _), s in zip(self.annuli, self.annulus_sup)]

    def header(self) -> dict:
        return {
            "schema": PROFILE_SCHEMA,
            "fitted_beta": self.fitted_beta,
            "fit_range": list(self.fit_range),
            "residual": self.residual,
            "seed": self.seed,
            "annuli": [list(a) for a in self.annuli],
        }

    def write(self, csv_path, json_path, extra: Optional[dict] = None) -> None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r, s in self.rows():
                w.writerow([repr(float(r)), repr(s)])
        doc = self.header()
        if extra:
            doc.update(extra)
        with open(json_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _annuli(r_max):
    out, m = [], 0
    while 2.0**m < r_max:
        out.append((2.0**m, min(2.0 ** (m + 1), float(r_max))))
        m += 1
    return out


def _directions(rng, count, d):
    if d == 1:
        return rng.choice([-1.0, 1.0], size=(count, 1))
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _refine(stage, x0, lo, hi):
    """Local maximisation of |mu_hat| near x0, constrained to the annulus."""
    d = stage.d
    f = lambda x: -abs(mu_hat(stage, x))  # noqa: E731
    if d == 1:
        s = math.copysign(1.0, x0[0])
        a, b = max(lo, abs(x0[0]) - 0.5), min(hi, abs(x0[0]) + 0.5)
        res = optimize.minimize_scalar(lambda r: f([s * r]), bounds=(a, b), method="bounded", options={"xatol": 1e-6})
        return np.array([s * res.x]), -res.fun
    res = optimize.minimize(f, x0, method="Nelder-Mead", options={"xatol": 1e-5, "fatol": 1e-12, "maxiter": 400})
    x = res.x
    r = np.linalg.norm(x)
    if not lo <= r < hi:
        x = x * (np.clip(r, lo, np.nextafter(hi, lo)) / r)
    return x, abs(mu_hat(stage, x))


def decay_profile(
    stage: CantorStage,
    r_max: float,
    per_annulus: int = 64,
    seed: int = 0,
    refine: bool = True,
    workers: int = 1,
) -> SpectralProfile:
    """Annulus suprema of |mu_hat| over [2^m, 2^(m+1)) and a least-squares decay exponent.

    The exponent is fitted on annuli inside ``[4, min(r_max, N_k)]``; past
    ``N_k`` the cube factor alone forces |xi|^-1 decay.  At depth 0 the
    measure is the cube itself and the cap is not applied.
    """
    if r_max < 4:
        raise ValueError("r_max must be at least 4")
    if per_annulus < 16:
        raise ValueError("per_annulus must be at least 16")
    d = stage.d
    upper = float(r_max) if stage.depth == 0 else float(min(r_max, stage.N_k))
    annuli = _annuli(r_max)
    fit_mask = np.array([lo >= 4 and hi <= upper for lo, hi in annuli])
    if fit_mask.sum() < 3:
        raise ValueError(f"only {int(fit_mask.sum())} annuli inside the fit range [4, {upper}]")
    rng = np.random.default_rng(seed)
    freqs, vals, sups = [], [], []
    for lo, hi in annuli:
        radii = rng.uniform(lo, hi, size=per_annulus)
        pts = _directions(rng, per_annulus, d) * radii[:, None]
        v = mu_hat_batch(stage, pts, workers=workers)
        best = int(np.argmax(np.abs(v)))
        sup = float(np.abs(v[best]))
        if refine:
            x, val = _refine(stage, pts[best], lo, hi)
            if val > sup:
                sup = val
                pts = np.vstack([pts, x])
                v = np.append(v, mu_hat(stage, x))
        freqs.append(pts)
        vals.append(v)
        sups.append(sup)
    values = np.concatenate(vals)
    if np.abs(values).max() > 1 + 1e-9:
        raise RuntimeError("|mu_hat| exceeded 1; the stage is not a probability measure")
    sups = np.array(sups)
    lo_edges = np.array([a for a, _ in annuli])
    x = np.log(lo_edges[fit_mask])
    y = np.log(sups[fit_mask])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return SpectralProfile(
        frequencies=np.concatenate(freqs),
        values=values,
        annuli=annuli,
        annulus_sup=sups,
        fitted_beta=float(-slope),
        fit_range=(4.0, upper),
        residual=resid,
        seed=seed,
        fit_mask=fit_mask,
    )


# -- L^p growth on cubes ---------------------------------------------------------


def _muhat_grid(stage: CantorStage, R: float, m: int):
    corner = np.full(stage.d, -float(R))
    side = 2.0 * R
    w = np.full(stage.T_k, 1.0 / stage.T_k)
    vals = lattice_sum(stage.leaves, w, stage.N_k, corner, side, m, sign=-1)
    return vals * box_factor_on_grid(corner, side, m, stage.N_k)


def _lp_from_grid(vals, p, m, d):
    a = np.abs(vals)
    if math.isinf(p):
        return float(a.max())
    return float((np.sum(a**p) * m ** (-d)) ** (1.0 / p))


def _sub_box(arr, offset, n):
    sl = tuple(slice(offset, offset + n) for _ in range(arr.ndim))
    return arr[sl]


def lp_growth_of_muhat(
    stage: CantorStage,
    p: float,
    R_list: Sequence[float],
    spacing: float = 0.25,
    rtol: float = 1e-3,
    max_halvings: int = 4,
) -> list:
    """``||mu_hat||_{L^p([-R, R]^d)}`` for each R by the midpoint rule.

    Starts at ``spacing`` and halves until successive values agree within
    ``rtol``; the finer value is returned.  ``p = inf`` gives the sup.
    """
    R_list = [float(R) for R in R_list]
    if not R_list:
        raise ValueError("R_list is empty")
    if p < 1:
        raise ValueError("p must be >= 1")
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be increasing")
    d = stage.d
    m = max(1, math.ceil(1.0 / spacing - 1e-12))

    def evaluate(m):
        Rmax = R_list[-1]
        big = _muhat_grid(stage, Rmax, m)
        out = []
        for R in R_list:
            off = (Rmax - R) * m
            if abs(off - round(off)) < 1e-9:
                sub = _sub_box(big, int(round(off)), int(round(2 * R * m)))
            else:
                sub = _muhat_grid(stage, R, m)
            out.append(_lp_from_grid(sub, p, m, d))
        return np.array(out)

    if math.isinf(p):
        # the grid misses the origin, where |mu_hat| = 1 is attained
        at_zero = abs(mu_hat(stage, np.zeros(d)))
        return [max(v, at_zero) for v in evaluate(m)]
    prev = evaluate(m)
    for _ in range(max_halvings):
        m *= 2
        cur = evaluate(m)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur)):
            return cur.tolist()
        prev = cur
    return prev.tolist()


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
