#!/usr/bin/env python3
"""Print the footprint table of the handcrafted baseline designs.

Usage:
    python3 scripts/baseline_footprints.py [--pdk amf aim]
"""
import argparse

from ptcsearch.cli import BASELINE_COUNTS, baseline_footprint


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pdk", nargs="+", default=["amf", "aim"])
    args = parser.parse_args()

    print("design,size,pdk,n_blk,n_dc,n_cr,footprint_um2,footprint_kum2")
    for pdk in args.pdk:
        for (name, size), (n_blk, n_dc, n_cr) in sorted(BASELINE_COUNTS.items()):
            area, rounded = baseline_footprint(name, size, pdk)
            print(f"{name},{size},{pdk},{n_blk},{n_dc},{n_cr},"
                  f"{area:.1f},{rounded}")


if __name__ == "__main__":
    main()
