"""Uncertainty statistics: moments, KDE, the rank test and LDA projection.

Run: python3 demos/05_uq_statistics.py
"""

import numpy as np

from robust_surrogate.uq import kde_curves, lda_project, mann_whitney_u, moments, per_sample_se, relative_error

rng = np.random.default_rng(3)
truth = rng.normal(size=(200, 8, 8))
pred = truth + 0.05 * rng.normal(size=truth.shape)

# %% Per-sample SE (mean over entries) and moment relative errors
se = per_sample_se(pred, truth)
print("mean SE", se.se.mean().round(5))
m_true, m_pred = moments(truth), moments(pred)
print("RE first moment", round(relative_error(m_pred.m1, m_true.m1), 4))
print("RE second moment", round(relative_error(m_pred.m2, m_true.m2), 4))

# %% Densities of log(SE) on one shared grid, each integrating to one
worse = per_sample_se(truth + 0.08 * rng.normal(size=truth.shape), truth)
f_a, f_b = kde_curves([se.log_se, worse.log_se])
print("bandwidths", round(f_a.bandwidth, 4), round(f_b.bandwidth, 4), "integrals", f_a.integral(), f_b.integral())

# %% One-sided rank test: are the second errors stochastically larger?
r = mann_whitney_u(worse.se, se.se)
print("U", r.u_statistic, "p", f"{r.p_value:.2e}", r.method)
print("exact small case p:", mann_whitney_u([3, 4], [1, 2]).p_value)

# %% LDA onto two axes with SE terciles as classes
features = truth.reshape(len(truth), -1)
coords = lda_project(features, se)
print("LDA coordinates", coords.shape)
