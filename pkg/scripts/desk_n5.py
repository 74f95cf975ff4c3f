"""Desk-scale run for level 5, even parity: every CLI stage, then a summary.

    python scripts/desk_n5.py [--cache DIR]

Defaults are M = 40, D_max = 1.6e6 and a 2^-100 elliptic table.  A fresh
run takes about ten minutes on one core, most of it class data and traces.
"""

import argparse
import time

from maassverify import cli
from maassverify.spectral import load_forms

ARGS = ["--level", "5", "-M", "40", "--dmax", "1600000", "--nmax", "40", "--parity", "even"]
STAGES = ("classdata", "testfunc", "trace", "spectrum", "verify", "hecke", "signs")
HEJHAL_R = 4.132404215063  # scripts/hejhal_oracle.py --R 4.13 --w 1


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", default="maass_cache")
    args = ap.parse_args()
    for stage in STAGES:
        t0 = time.time()
        rc = cli.main(["--cache", args.cache, stage, *ARGS])
        print(f"{stage:10s} {time.time() - t0:7.1f}s")
        if rc:
            raise SystemExit(rc)
    cfg = cli.make_config(cli._parser().parse_args(["verify", *ARGS]))
    cfg.cache = args.cache
    fp = cli._paths(cfg)["forms"]["even"]
    meta = cli.read_json(cli.meta_path(fp))["params"]
    forms = load_forms(fp)
    print(f"\n{len(forms)} intervals, B_rem = {meta['B_rem']['mid'][:12]}, lambda* = {float(meta['lam_star']):.4f}")
    print(f"{'R':>12s} {'eps':>9s} {'delta':>9s} {'cmpl':>5s} {'a(2)':>22s} {'a(3)':>22s}  w")
    for f in forms:
        a2 = f.coeffs[2].str(8) if 2 in f.coeffs else "-"
        a3 = f.coeffs[3].str(8) if 3 in f.coeffs else "-"
        delta = f"{f.delta:9.4f}" if f.delta is not None else "        -"
        w = f"{f.fricke_w:+d}" if f.signs_rigorous else "?"
        print(f"{float(f.R.mid()):12.8f} {f.eps:9.2e} {delta} {str(f.complete):>5s} {a2:>22s} {a3:>22s}  {w}")
    low = forms[0]
    print(f"\nlowest R - Hejhal value: {float(low.R.mid()) - HEJHAL_R:+.2e} (eps = {low.eps:.1e})")


if __name__ == "__main__":
    main()
