"""Deviation statistics for the stochastic-contagion design, log a_t an AR(1)
with persistence 0.99 and innovation sd 0.01.

    python scripts/run_stochastic_design.py --replications 20 --workers 8 --out runs/log_ar1
"""
import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from run_constant_design import main  # noqa: E402

if __name__ == "__main__":
    main(design="log_ar1", rho_a=0.99, sigma=0.01)
