"""Exposure mappings: raw indices, coarsened states, and two-date states.

A network plus the adoption vector gives each unit-period a raw spillover
index (the weighted count or share of adopted neighbors), which a coarsening
map turns into a finite labeled state with a numeric dose score.
"""
import numpy as np

from spilldid import (
    ExposureConfig, NetworkSpec, PanelDataset, build_exposure, line_network,
    two_date_state,
)
from spilldid.panel import NEVER

# ---------------------------------------------------------------------------
# A ten-unit panel on an open line, adopting in staggered cohorts
# ---------------------------------------------------------------------------
cohort = np.array([3, NEVER, 4, NEVER, 5, 3, NEVER, NEVER, 4, NEVER])
ds = PanelDataset(
    outcome=np.zeros((10, 6)), cohort=cohort, weight=np.ones(10),
    stratum=np.zeros(10, dtype=int), stratum_labels=("all",),
)

# Row-normalized nearest-neighbor weights: the raw index is the adopted share
net = line_network(10)
cfg = ExposureConfig.three_state()          # (0, 0.5] -> low, (0.5, 1] -> high
path = build_exposure(ds, net, cfg)

print("raw adopted-neighbor share, one row per unit:")
print(np.round(path.raw, 2))
print("\ncoarsened states (0 / low / high):")
print(path.label_matrix())
print("\ndose scores q(H):")
print(path.dose_matrix())

# ---------------------------------------------------------------------------
# Two-date states: the pair (state at g+l, state at the baseline g-1)
# ---------------------------------------------------------------------------
pairs = two_date_state(path, g=4, l=1, delta=0)
print("\ntwo-date state codes for the cohort-4 comparison at l=1 (t=5, t0=3):")
for i in range(10):
    print(f"  unit {i}: H_t={path.labels[pairs[i, 0]]:<5} H_t0={path.labels[pairs[i, 1]]}")

# ---------------------------------------------------------------------------
# Distance-cutoff rule: unweighted neighbor counts (application style)
# ---------------------------------------------------------------------------
rng = np.random.default_rng(0)
pts = rng.uniform(0, 100, size=(10, 2))
d = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(axis=2))
np.fill_diagonal(d, 0.0)
net50 = NetworkSpec(distances=d, cutoff=30.0)
binary = ExposureConfig.binary()
path50 = build_exposure(ds, net50, binary)
print("\ndistance-cutoff raw counts at the final period:")
print(path50.raw[:, -1])
print("binary states:", list(path50.label_matrix()[:, -1]))
