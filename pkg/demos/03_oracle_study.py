"""
A small Monte Carlo study with the nuisance known
=================================================

With g fixed at the true log-hazard profile only theta is estimated, so
Wald coverage checks the inference layer by itself.  The full pipeline
(``mode="full"``) is the same call but takes minutes per replication.
"""

from flexihaz import FitConfig, SimConfig, replicate

report = replicate(SimConfig(n=1000, seed=10), FitConfig(grid_size=256), reps=40, mode="oracle")
print(report.to_table())
