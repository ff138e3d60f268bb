"""Two-phase SRS simulation table for beta in {0.5, 1, 2}: Bias, Var, MSE, VE (x 1e-3), Cvg and VarRed."""

import argparse
from dataclasses import replace
from pathlib import Path

from rejective.harness import fast_variant, load_config, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, help="override n_replicates")
    ap.add_argument("--fast", action="store_true")
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()
    for tag in ("0p5", "1", "2"):
        cfg = load_config(CONFIGS / f"srs_beta{tag}.toml")
        if args.fast:
            cfg = fast_variant(cfg)
        cfg = replace(cfg, out=str(Path(args.out_dir) / f"srs_beta{tag}.csv"),
                      n_replicates=args.reps or cfg.n_replicates)
        res = run_experiment(cfg)
        print(f"beta = {cfg.population.beta}")
        print(f"{'gamma^2':>8} {'estimator':>12} {'Bias':>7} {'Var':>7} {'MSE':>7} {'VE':>7} {'Cvg':>6} {'VarRed':>7}")
        for r in res.rows:
            vr = r.get("varred")
            print(f"{r['gamma_sq']:>8g} {r['estimator']:>12} {1e3 * r['bias']:7.2f} {1e3 * r['var']:7.2f} "
                  f"{1e3 * r['mse']:7.2f} {1e3 * r['mean_ve']:7.2f} {r['coverage']:6.1f} "
                  f"{'' if vr is None else format(vr, '7.1f'):>7}")
        print()


if __name__ == "__main__":
    main()
