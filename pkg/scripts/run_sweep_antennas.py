"""Antenna-count sweep (computation rate vs receive array size) to CSV.

Usage: python scripts/run_sweep_antennas.py [OUT_CSV] [REALIZATIONS]
"""

import sys

from starmec import SweepSpec, SystemConfig, run_sweep, summarize
from starmec.experiments import write_rows_csv, write_summary_csv

out = sys.argv[1] if len(sys.argv) > 1 else "sweep_antennas.csv"
realizations = int(sys.argv[2]) if len(sys.argv) > 2 else 50

spec = SweepSpec(
    variable="antennas",
    values=[6, 8, 10, 12],
    realizations=realizations,
    schemes=["es", "ms", "conventional_ris", "zero_forcing",
             "equal_energy", "equal_time"],
    base_config=SystemConfig(n_elements=30, t_users=4, r_users=4),
    master_seed=4050,
)
rows = run_sweep(spec)
write_rows_csv(rows, out)
write_summary_csv(summarize(rows), out.replace(".csv", "_summary.csv"))
for s in summarize(rows):
    print(f"{s.scheme:18s} N={s.value:3d}  mean {s.mean:.4e}  ±{s.ci95_half:.2e}")
