"""Neighbourhood-size sensitivity: 10-fold CV and a raster for each m.

    python scripts/m_sweep.py --m 5 10 30 --out runs/m_sweep
"""

import argparse
import logging

from sdbinterp import pipeline, synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, nargs="+", default=[5, 10, 30])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cells", type=int, default=50)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("-k", type=int, default=10)
    ap.add_argument("--format", choices=("grid", "pgm"), default="pgm")
    ap.add_argument("--out", default="m_sweep")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    field = synthetic.porosity_field(args.cells, seed=args.seed)
    obs = synthetic.sample_field(field, args.samples, seed=args.seed)
    cfg = pipeline.PipelineConfig(seed=args.seed)
    cfg.grid = pipeline.GridSpec(0, args.cells, 0, args.cells, args.cells, args.cells)
    result = pipeline.sweep_m(obs, cfg, args.m, args.k)
    print(result.to_csv(), end="")
    for path in pipeline.write_sweep(result, args.out, args.format):
        print("wrote", path)


if __name__ == "__main__":
    main()
