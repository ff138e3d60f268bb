"""Three-phase study: variance and coverage of the two- and three-phase estimators."""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from rejective.harness import load_three_phase_config, run_api_style_three_phase

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "api_three_phase.toml"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--reps", type=int)
    ap.add_argument("--out", default="results/api_three_phase.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_three_phase_config(args.config)
    cfg = replace(cfg, out=args.out, n_replicates=args.reps or cfg.n_replicates)
    res = run_api_style_three_phase(cfg)
    print(f"{'estimator':>10} {'bias':>8} {'var':>8} {'mean VE':>8} {'Cvg':>6}")
    for r in res.rows:
        print(f"{r['estimator']:>10} {r['bias']:8.3f} {r['var']:8.3f} {r['mean_ve']:8.3f} {r['coverage']:6.1f}")


if __name__ == "__main__":
    main()
