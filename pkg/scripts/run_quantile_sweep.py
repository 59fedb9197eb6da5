#!/usr/bin/env python3
"""Run the sparse quantile regression sigma sweep at full scale.

Defaults reproduce the d=2000, n=1000 experiment (four sigmas, 500
iterations); pass --help for the knobs. Traces land in --out as
quantile_sigma<value>.csv with per-iterate and running-average loss columns.
"""

import sys

from ncadmm.cli import main

if __name__ == "__main__":
    args = ["run", "--experiment", "quantile"] + sys.argv[1:]
    sys.exit(main(args))
