#!/usr/bin/env python3
"""Attention-work scaling: score evaluations vs scene size at fixed density,
with linear and quadratic fits and per-size latency percentiles."""
import argparse

from fcw import model as md
from fcw import pipeline as pl


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-grid", default="10,20,40,60,80,100,120")
    ap.add_argument("--density", type=float, default=0.005, help="vehicles per m^2")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    config = md.HstanConfig(
        d_h=16, k_heads=2, l_s=2, gru_hidden=16, gru_layers=1, m_heads=2,
        decoder_hidden=(16,),
    )
    model = md.init_model(config, seed=args.seed)
    grid = [int(n) for n in args.n_grid.split(",")]
    report = pl.run_bench(
        model, n_grid=grid, repeats=args.repeats, density=args.density, seed=args.seed
    )
    print(report.to_text(), end="")


if __name__ == "__main__":
    main()
