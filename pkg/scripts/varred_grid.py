"""Asymptotic percentage variance reduction over R^2 and gamma^2 for p = 1, n_II/n_I = 0.04, n_I/N = 0.05."""

import argparse

from rejective import v_pgamma
from rejective.harness import theoretical_varred


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--f-II-I", type=float, default=200 / 5000)
    ap.add_argument("--f-I-0", type=float, default=5000 / 100_000)
    ap.add_argument("--p", type=int, default=1)
    args = ap.parse_args()
    gammas = (0.01, 0.05, 0.1)
    print(f"{'':>8}" + "".join(f"{g:>10g}" for g in gammas))
    print(f"{'v':>8}" + "".join(f"{v_pgamma(args.p, g):>10.3f}" for g in gammas))
    for r2 in (0.2, 0.5, 0.8):
        print(f"{'R2=' + format(r2, 'g'):>8}" +
              "".join(f"{theoretical_varred(args.f_II_I, args.f_I_0, args.p, g, r2):>10.1f}" for g in gammas))


if __name__ == "__main__":
    main()
