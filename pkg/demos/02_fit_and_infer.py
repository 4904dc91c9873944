"""
Fitting theta and g, then Wald intervals
========================================

A small network keeps this under a couple of minutes; the study defaults
(depth 5, width 20) are what the replication harness uses.
"""

import numpy as np

from flexihaz import FitConfig, SimConfig, cross_fit_residuals, information, simulate, train, wald_ci

data = simulate(SimConfig(n=600, seed=3))
config = FitConfig(depth=2, width=16, learning_rate=5e-3, grid_size=128, max_epochs=200)

result = train(data, config)
print("Cox warm start:   ", np.round(result.theta_initial, 3))
print("after training:   ", np.round(result.trained_state.theta, 3))
print("after refinement: ", np.round(result.theta, 3))
print(f"epochs run {result.epochs_run}, best epoch {result.best_epoch}")

# each fold is predicted by projection networks trained on the other four;
# censored subjects contribute zero residual rows
resid = cross_fit_residuals(data, folds=5, config=config, time_scale=result.state.time_scale)
est = information(resid, data.n)
print("standard errors:", np.round(est.standard_errors, 4))
for level in (0.90, 0.95):
    ci = wald_ci(result.theta, est, level)
    print(f"{level:.0%} intervals:", np.round(ci, 3).tolist())
