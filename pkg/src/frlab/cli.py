"""Command-line front end: ``frl <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from frlab import __version__
from frlab.alphabet import (
    Alphabet,
    SearchFailure,
    SequencePlan,
    make_sequence_plan,
    search_lambda_p_set,
)
from frlab.cantor import BudgetExceeded, build_stage, load_stage, save_stage
from frlab.config import ConfigError, build_config, read_config_file
from frlab.estimates import default_C0, restriction_report, write_restriction_csv
from frlab.spectral import decay_profile, loglog_slope, lp_growth_of_muhat

log = logging.getLogger("frlab")

EXIT_OK, EXIT_CHECK, EXIT_VALIDATION, EXIT_BUDGET, EXIT_SEARCH = 0, 1, 2, 3, 4
SHARPNESS_CSV_HEADER = ("p", "R", "lp_norm")
GROWTH_CSV_HEADER = ("k", "strategy", "measured_ratio", "normalized_ratio", "growth_factor")


class StageMismatch(ValueError):
    pass


# -- helpers -------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


class Run:
    """Collects input/output digests and timings for one command's manifest."""

    def __init__(self, cfg, command):
        self.cfg, self.command = cfg, command
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs, self.outputs, self.timings = {}, {}, {}
        self._t0 = time.perf_counter()

    def path(self, name) -> Path:
        return self.out / name

    def used(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def wrote(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def time(self, label, t0):
        self.timings[label] = round(time.perf_counter() - t0, 6)

    def finish(self):
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        write_json(
            self.path(f"manifest-{self.command}.json"),
            {
                "command": self.command,
                "config_hash": self.cfg.hash(),
                "stage_key": self.cfg.stage_key(),
                "version": __version__,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "timings": self.timings,
            },
        )


def plan_for(cfg) -> SequencePlan:
    if cfg.depth == 0:
        return SequencePlan((), (), cfg.c0, cfg.alpha, 2 * cfg.d / cfg.alpha, cfg.d)
    return make_sequence_plan(cfg.alpha, cfg.d, cfg.n1, cfg.depth, cfg.c0)


def search_plan_alphabets(cfg, plan=None):
    """One Lambda(p) alphabet per level of the plan; level j uses seed + j."""
    plan = plan or plan_for(cfg)
    alphabets, certs = [], []
    for j in range(plan.depth):
        B, cert = search_lambda_p_set(
            plan.n_seq[j], cfg.d, cfg.search_p, plan.t_seq[j], cfg.constant_cap, seed=cfg.seed + j
        )
        alphabets.append(B)
        certs.append(cert)
    return plan, alphabets, certs


def _alphabet_doc(cfg, plan, alphabets, certs):
    return {
        "format": "frlab-alphabets",
        "config_hash": cfg.hash(),
        "stage_key": cfg.stage_key(),
        "plan": plan.to_dict() if plan is not None else None,
        "levels": [{"alphabet": B.to_dict(), "certificate": c.to_dict()} for B, c in zip(alphabets, certs)],
    }


def _load_stage_checked(cfg, path, run):
    with open(path) as fh:
        doc = json.load(fh)
    key = doc.get("config_hash")
    if key is not None and key != cfg.stage_key():
        raise StageMismatch(f"{path} was built under a different configuration (stage key {key[:12]})")
    run.used(path)
    return load_stage(path)


# -- commands -------------------------------------------------------------------------


def cmd_search_alphabet(cfg, args) -> int:
    run = Run(cfg, "search-alphabet")
    t0 = time.perf_counter()
    target = run.path("alphabets.json")
    try:
        if args.N is not None:
            size = args.size if args.size is not None else 1
            B, cert = search_lambda_p_set(args.N, cfg.d, cfg.search_p, size, cfg.constant_cap, seed=cfg.seed)
            doc = _alphabet_doc(cfg, None, [B], [cert])
        else:
            plan, alphabets, certs = search_plan_alphabets(cfg)
            doc = _alphabet_doc(cfg, plan, alphabets, certs)
    except SearchFailure as exc:
        doc = _alphabet_doc(cfg, None, [exc.alphabet], [exc.certificate])
        doc["failed"] = str(exc)
        write_json(target, doc)
        run.wrote(target)
        run.finish()
        log.error("%s", exc)
        return EXIT_SEARCH
    write_json(target, doc)
    run.wrote(target)
    run.time("search", t0)
    for lv in doc["levels"]:
        a, c = lv["alphabet"], lv["certificate"]
        print(f"N={a['modulus']} size={a['size']} constant={c['constant_lower']:.6f} method={c['method']}")
    run.finish()
    return EXIT_OK


def _read_alphabets(path, run):
    with open(path) as fh:
        doc = json.load(fh)
    run.used(path)
    return [Alphabet.from_dict(lv["alphabet"]) for lv in doc["levels"]]


def cmd_build(cfg, args) -> int:
    run = Run(cfg, "build")
    t0 = time.perf_counter()
    plan = plan_for(cfg)
    if args.alphabets:
        alphabets = _read_alphabets(args.alphabets, run)
    else:
        _, alphabets, _ = search_plan_alphabets(cfg, plan)
    stage = build_stage(plan, alphabets, cfg.depth, seed=cfg.seed, node_budget=cfg.node_budget)
    target = run.path("stage.json")
    save_stage(target, stage, config_hash=cfg.stage_key())
    run.wrote(target)
    run.time("build", t0)
    print(f"k={stage.depth} N_k={stage.N_k} T_k={stage.T_k}")
    e = 2 * cfg.d / plan.p
    for j, (n, t) in enumerate(zip(plan.n_seq, plan.t_seq), start=1):
        lo, hi = plan.c0 * n**e, plan.c1 * n**e
        ok = lo - 1e-9 <= t <= hi + 1e-9
        print(f"level {j}: n={n} t={t} sandwich [{lo:.4f}, {hi:.4f}] {'ok' if ok else 'VIOLATED'}")
    run.finish()
    return EXIT_OK


def cmd_decay(cfg, args) -> int:
    run = Run(cfg, "decay")
    stage = _load_stage_checked(cfg, args.stage, run)
    t0 = time.perf_counter()
    r_max = cfg.r_max if cfg.r_max is not None else max(stage.N_k, 32)
    prof = decay_profile(stage, r_max, cfg.per_annulus, seed=cfg.seed, workers=cfg.threads)
    run.time("decay", t0)
    csv_path, json_path = run.path("decay.csv"), run.path("decay.json")
    prof.write(csv_path, json_path, extra={"config_hash": cfg.hash(), "k": stage.depth, "alpha": cfg.alpha})
    run.wrote(csv_path)
    run.wrote(json_path)
    print(f"fitted_beta={prof.fitted_beta:.4f} residual={prof.residual:.4f} fit_range={prof.fit_range}")
    run.finish()
    if cfg.alpha >= 0.2 and stage.depth >= 2 and prof.fitted_beta <= 0:
        log.error("fitted decay exponent is not positive")
        return EXIT_CHECK
    return EXIT_OK


def restriction_table(stage, cfg, C0=None):
    """Reports for every sub-stage k' = 0..k plus the per-strategy growth of the normalised ratio."""
    if C0 is None:
        C0 = default_C0(stage, cfg.p)
    rows, reports = [], []
    prev = {}
    for k in range(stage.depth + 1):
        sub = stage.truncate(k)
        reps = restriction_report(
            sub, cfg.p, strategies=cfg.strategies, seed=cfg.seed, C0=C0, spacing=cfg.spacing, rtol=cfg.quad_rtol
        )
        for r in reps:
            g = r.normalized_ratio / prev[r.g_kind] if r.g_kind in prev else math.nan
            rows.append((k, r.g_kind, r.measured_ratio, r.normalized_ratio, g))
            prev[r.g_kind] = r.normalized_ratio
        reports.extend(reps)
    return reports, rows


def cmd_restrict(cfg, args) -> int:
    run = Run(cfg, "restrict")
    stage = _load_stage_checked(cfg, args.stage, run)
    for w in cfg.warnings():
        log.warning("%s", w)
    t0 = time.perf_counter()
    C0 = cfg.C0 if cfg.C0 is not None else default_C0(stage, cfg.p)
    reports, rows = restriction_table(stage, cfg, C0)
    run.time("restrict", t0)
    rep_path, growth_path = run.path("restriction.csv"), run.path("restriction-growth.csv")
    write_restriction_csv(rep_path, reports)
    with open(growth_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROWTH_CSV_HEADER)
        for k, s, mr, nr, g in rows:
            w.writerow([k, s, repr(float(mr)), repr(float(nr)), repr(float(g))])
    meta = run.path("restriction.json")
    write_json(meta, {"schema": "frlab-restriction/1", "config_hash": cfg.hash(), "C0": C0, "p": cfg.p, "seed": cfg.seed})
    for p in (rep_path, growth_path, meta):
        run.wrote(p)
    print(f"C0={C0:.4f}")
    for k, s, mr, nr, g in rows:
        print(f"k={k} {s:<20} ratio={mr:.6g} normalized={nr:.6g} growth={g:.4g}")
    run.finish()
    return EXIT_OK


def sharpness_p_values(cfg):
    if cfg.sharpness_p:
        return [float(p) for p in cfg.sharpness_p]
    pc = cfg.critical_p
    return [max(pc - 1, 1.0), pc + 1]


def sharpness_table(stage, p_values, R_list, rtol=1e-3):
    out = {}
    for p in p_values:
        norms = lp_growth_of_muhat(stage, p, R_list, rtol=rtol)
        out[p] = (norms, loglog_slope(R_list, norms))
    return out


def cmd_sharpness(cfg, args) -> int:
    run = Run(cfg, "sharpness")
    stage = _load_stage_checked(cfg, args.stage, run)
    t0 = time.perf_counter()
    table = sharpness_table(stage, sharpness_p_values(cfg), cfg.R_list, cfg.quad_rtol)
    run.time("sharpness", t0)
    csv_path, json_path = run.path("sharpness.csv"), run.path("sharpness.json")
    _write_sharpness(csv_path, table, cfg.R_list)
    write_json(json_path, {"config_hash": cfg.hash(), "slopes": {repr(p): s for p, (_, s) in table.items()}})
    run.wrote(csv_path)
    run.wrote(json_path)
    for p, (_, s) in table.items():
        print(f"p={p:g} slope={s:.4f}")
    run.finish()
    return EXIT_OK


def _write_sharpness(path, table, R_list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHARPNESS_CSV_HEADER)
        for p, (norms, _) in table.items():
            for R, v in zip(R_list, norms):
                w.writerow([repr(float(p)), repr(float(R)), repr(float(v))])


def ternary_stage(depth):
    """Zero-translation stage with alphabet {0, 2} in base 3 at every level."""
    alpha = math.log(2) / math.log(3)
    plan = SequencePlan((3,) * depth, (2,) * depth, 1.0, alpha, 2 / alpha, 1)
    B = Alphabet.from_points([[0], [2]], 3)
    return build_stage(plan, [B] * depth, depth, translate=False)


def compare_ternary(cfg, p_values=(4.0, 6.0, 8.0)):
    """Sharpness slopes of the ternary stage and of a random stage at the same alpha."""
    alpha = math.log(2) / math.log(3)
    tern = ternary_stage(cfg.depth)
    rcfg = build_config(
        {k: v for k, v in cfg.to_dict().items() if k not in ("alpha", "d", "p", "search_p")},
        {"alpha": alpha, "d": 1},
        env={},
    )
    plan, alphabets, _ = search_plan_alphabets(rcfg)
    rand = build_stage(plan, alphabets, cfg.depth, seed=cfg.seed, node_budget=cfg.node_budget)
    return {
        "alpha_ternary": tern.plan.alpha,
        "alpha_random": plan.alpha,
        "ternary": sharpness_table(tern, p_values, cfg.R_list, cfg.quad_rtol),
        "random": sharpness_table(rand, p_values, cfg.R_list, cfg.quad_rtol),
    }


def cmd_compare_ternary(cfg, args) -> int:
    run = Run(cfg, "compare-ternary")
    t0 = time.perf_counter()
    res = compare_ternary(cfg)
    run.time("compare", t0)
    print(f"alpha ternary={res['alpha_ternary']:.6f} random={res['alpha_random']:.6f}")
    doc = {"config_hash": cfg.hash(), "alpha": res["alpha_ternary"], "slopes": {}}
    for branch in ("ternary", "random"):
        path = run.path(f"sharpness-{branch}.csv")
        _write_sharpness(path, res[branch], cfg.R_list)
        run.wrote(path)
        doc["slopes"][branch] = {repr(p): s for p, (_, s) in res[branch].items()}
    for p in res["ternary"]:
        st, sr = res["ternary"][p][1], res["random"][p][1]
        print(f"p={p:g} slope ternary={st:.4f} random={sr:.4f} difference={st - sr:.4f}")
    path = run.path("compare-ternary.json")
    write_json(path, doc)
    run.wrote(path)
    run.finish()
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------


def _common(parser):
    g = parser.add_argument_group("experiment")
    g.add_argument("--config", help="TOML or JSON config file")
    g.add_argument("--alpha", type=float)
    g.add_argument("--d", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--depth", type=int)
    g.add_argument("--n1", type=int)
    g.add_argument("--c0", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--node-budget", dest="node_budget", type=int)
    g.add_argument("--constant-cap", dest="constant_cap", type=float)
    g.add_argument("--search-p", dest="search_p", type=float)
    g.add_argument("--quad-rtol", dest="quad_rtol", type=float)
    g.add_argument("--output-dir", dest="output_dir")
    g.add_argument("--threads", type=int)
    g.add_argument("-v", "--verbose", action="store_true")


CONFIG_FLAGS = (
    "alpha", "d", "p", "depth", "n1", "c0", "seed", "node_budget", "constant_cap", "search_p",
    "quad_rtol", "output_dir", "threads", "r_max", "per_annulus", "R_list", "sharpness_p",
    "strategies", "C0",
)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frl", description="Random Cantor measures: spectra and restriction experiments")
    parser.add_argument("--version", action="version", version=f"frl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search-alphabet", help="search Lambda(p) alphabets for each level of the plan")
    _common(p)
    p.add_argument("--N", type=int, help="search one alphabet in [N]^d instead of the plan levels")
    p.add_argument("--size", type=int, help="target size for --N")
    p.set_defaults(func=cmd_search_alphabet)

    p = sub.add_parser("build", help="build and save a Cantor stage")
    _common(p)
    p.add_argument("--alphabets", help="alphabets file from search-alphabet")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("decay", help="profile |mu_hat| over annuli and fit the decay exponent")
    _common(p)
    p.add_argument("stage")
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--per-annulus", dest="per_annulus", type=int)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("restrict", help="restriction ratios over the nested sub-stages")
    _common(p)
    p.add_argument("stage")
    p.add_argument("--C0", type=float)
    p.add_argument("--strategies", nargs="+")
    p.set_defaults(func=cmd_restrict)

    p = sub.add_parser("sharpness", help="L^p growth of mu_hat on [-R, R]^d")
    _common(p)
    p.add_argument("stage")
    p.add_argument("--R", dest="R_list", type=float, nargs="+")
    p.add_argument("--sharpness-p", dest="sharpness_p", type=float, nargs="+")
    p.set_defaults(func=cmd_sharpness)

    p = sub.add_parser("compare-ternary", help="contrast the ternary measure with a random stage")
    _common(p)
    p.add_argument("--R", dest="R_list", type=float, nargs="+")
    p.set_defaults(func=cmd_compare_ternary)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in CONFIG_FLAGS if hasattr(args, k)}
        cfg = build_config(file_values, flags)
        for w in cfg.warnings():
            if args.command != "restrict":
                log.warning("%s", w)
        return args.func(cfg, args)
    except (ConfigError, StageMismatch, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except BudgetExceeded as exc:
        log.error("%s", exc)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
