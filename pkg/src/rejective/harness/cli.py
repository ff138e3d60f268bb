"""Command line: sample, estimate, simulate, oracle, ldist."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..balance import draw_tprs
from ..errors import RejectiveError
from ..ldist import chisq_cdf, chisq_quantile, v_pgamma
from .config import PopulationSpec, fast_variant, load_config
from .experiment import _estimate, _write, replicate_rng, run_experiment
from .oracle import enumerate_two_phase, identity_checks
from .three_phase import load_three_phase_config, run_api_style_three_phase

log = logging.getLogger("rejective")


def _split(text):
    return tuple(c.strip() for c in text.split(",") if c.strip()) if text else ()


def _load(args):
    """Experiment config with command-line overrides applied."""
    cfg = load_config(args.config)
    if getattr(args, "fast", False):
        cfg = fast_variant(cfg)
    if getattr(args, "data", None):
        pop = PopulationSpec(source="file", path=args.data, x_cols=_split(args.x_cols), z_cols=_split(args.z_cols),
                             y_col=args.y_col)
        cfg = replace(cfg, population=pop, base_dir=None)
    bal = dict(cfg.balance)
    if getattr(args, "ridge", None) is not None:
        bal["ridge"] = args.ridge
    return cfg.with_overrides(
        base_seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
        approx_joint=True if getattr(args, "approx_joint", False) else None,
        keep_replicates=True if getattr(args, "keep_replicates", False) else None,
        balance=bal,
    )


def _emit(text: str, out):
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)


def _one_chain(cfg, args):
    pop = cfg.population.build(cfg.base_dir)
    cfg.check_columns(pop)
    gamma = args.gamma if args.gamma is not None else next((g for g in cfg.gamma_sq), math.inf)
    designs = cfg.designs()
    rng = replicate_rng(cfg.base_seed, args.replicate)
    chain = draw_tprs(rng, pop, designs[0], designs[1], cfg.criterion(gamma))
    return pop, chain


def cmd_sample(args):
    cfg = _load(args)
    pop, chain = _one_chain(cfg, args)
    ids = pop.unit_ids
    out = {
        "gamma_sq": "inf" if math.isinf(chain.gamma_sq[0]) else chain.gamma_sq[0],
        "phase_I_units": [ids[i] if ids is not None else int(i) for i in chain.units[0]],
        "phase_II_units": [ids[i] if ids is not None else int(i) for i in chain.units[1]],
        "q": chain.q_stats[1],
        "draws_attempted": chain.draws_attempted[1],
        "sizes": chain.sizes(),
    }
    _emit(json.dumps(out, default=_json_default, indent=1) + "\n", args.out_json)


def cmd_estimate(args):
    cfg = _load(args)
    _, chain = _one_chain(cfg, args)
    rows = []
    for spec in cfg.estimators:
        rep, _ = _estimate(chain, spec, cfg)
        rows.append({"estimator": spec.name, "estimate": rep.estimate, "variance": rep.variance,
                     "ci_low": rep.ci_low, "ci_high": rep.ci_high, **rep.diagnostics})
    _emit(json.dumps(rows, default=_json_default, indent=1) + "\n", args.out_json)


def cmd_simulate(args):
    if args.three_phase:
        cfg3 = load_three_phase_config(args.config)
        cfg3 = replace(cfg3, **{k: v for k, v in (("base_seed", args.seed), ("out", args.out)) if v is not None})
        res = run_api_style_three_phase(cfg3)
        if not cfg3.out:
            sys.stdout.write(res.summary_csv())
        return
    cfg = _load(args)
    if args.keep_replicates and not cfg.replicates_out:
        base = Path(cfg.out) if cfg.out else Path("replicates")
        cfg = replace(cfg, replicates_out=str(base.with_name(base.stem + "_replicates.csv")))
    res = run_experiment(cfg)
    if not cfg.out:
        sys.stdout.write(res.summary_csv())


def cmd_oracle(args):
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(args.n_units)
    y = 1.0 + x + rng.standard_normal(args.n_units)
    enum = enumerate_two_phase(x, args.n_I, args.n_II)
    checks = identity_checks(enum, y, x, y)
    out = {"pairs": int(enum.accepted.size), **checks}
    if args.gamma is not None:
        rej = enumerate_two_phase(x, args.n_I, args.n_II, args.gamma)
        out["acceptance_rate"] = rej.acceptance_rate()
        _, ybar_II = rej.means(y)
        out["rejective_mean_ybar_II"] = rej.expectation(ybar_II)
        out["frame_mean"] = float(y.mean())
    sys.stdout.write(json.dumps(out, indent=1) + "\n")


def cmd_ldist(args):
    ps = [int(p) for p in _split(args.p)]
    gammas = [float(g) for g in _split(args.gamma_sq)]
    lines = ["p,gamma_sq,v,acceptance_prob"]
    for p in ps:
        for g in gammas:
            lines.append(f"{p},{g:g},{v_pgamma(p, g):.6f},{_accept(p, g):.6f}")
    if args.quantiles:
        lines.append("")
        lines.append("p,alpha,chisq_quantile")
        for p in ps:
            for a in (0.01, 0.05, 0.1):
                lines.append(f"{p},{a:g},{chisq_quantile(p, a):.6f}")
    _emit("\n".join(lines) + "\n", args.out)


def _accept(p, g):
    return chisq_cdf(p, g)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(type(o))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rejective", description="Rejective multi-phase sampling tools.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def frame_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--fast", action="store_true", help="desk scale: N = 2e4, n_I = 1000, n_II = 200")
        p.add_argument("--data", help="delimited frame file replacing the configured population")
        p.add_argument("--x-cols")
        p.add_argument("--z-cols")
        p.add_argument("--y-col")
        p.add_argument("--ridge", type=float)
        p.add_argument("--approx-joint", action="store_true")

    for name, fn, helptext in (("sample", cmd_sample, "draw one chain and print indices and diagnostics"),
                               ("estimate", cmd_estimate, "draw one chain and run the configured estimators")):
        p = sub.add_parser(name, help=helptext)
        frame_flags(p)
        p.add_argument("--gamma", type=float, help="threshold (default: first configured)")
        p.add_argument("--replicate", type=int, default=0)
        p.add_argument("--out", dest="out_json")
        p.set_defaults(func=fn)

    p = sub.add_parser("simulate", help="Monte Carlo run of a config")
    frame_flags(p)
    p.add_argument("--out")
    p.add_argument("--keep-replicates", action="store_true")
    p.add_argument("--three-phase", action="store_true", help="config describes the three-phase study")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="exact enumeration checks on a random tiny frame")
    p.add_argument("--n-units", type=int, default=6)
    p.add_argument("--n-I", type=int, default=4)
    p.add_argument("--n-II", type=int, default=2)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("ldist", help="variance factors of the truncated law")
    p.add_argument("--p", default="1,2,3")
    p.add_argument("--gamma-sq", default="0.01,0.05,0.1")
    p.add_argument("--quantiles", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ldist)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except RejectiveError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0
