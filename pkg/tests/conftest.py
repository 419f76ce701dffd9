import numpy as np
import pytest

from spilldid.exposure import ExposureConfig, ExposurePath, build_exposure, line_network
from spilldid.panel import NEVER, PanelDataset


def make_panel(outcome, cohort, weight=None, stratum=None, stratum_labels=None,
               basis=None, anticipation=0, exposure_only=None):
    outcome = np.asarray(outcome, dtype=float)
    n = outcome.shape[0]
    return PanelDataset(
        outcome=outcome,
        cohort=np.asarray(cohort, dtype=np.int64),
        weight=np.ones(n) if weight is None else np.asarray(weight, dtype=float),
        stratum=np.zeros(n, dtype=np.int64) if stratum is None else np.asarray(stratum),
        stratum_labels=tuple(stratum_labels) if stratum_labels else ("all",),
        basis=basis,
        anticipation=anticipation,
        exposure_only=exposure_only,
    )


def zero_exposure(ds):
    """Exposure path with every unit in the zero state in every period."""
    cfg = ExposureConfig.three_state()
    shape = (ds.n_units, ds.n_periods)
    return ExposurePath(
        raw=np.zeros(shape),
        state=np.zeros(shape, dtype=np.int64),
        labels=cfg.all_labels,
        dose_values=cfg.dose_vector(),
    )


def random_panel(rng, n=60, t=5, weighted=False, strata=0, basis_cols=0):
    """Random staggered panel on a line network with three-state exposure."""
    cohort = rng.choice([NEVER, 2, 3, 4], size=n, p=[0.4, 0.2, 0.2, 0.2])
    cohort = np.where(cohort > t, NEVER, cohort)
    outcome = rng.normal(size=(n, t)).cumsum(axis=1)
    weight = rng.uniform(0.5, 2.0, size=n) if weighted else np.ones(n)
    if strata:
        stratum = rng.integers(0, strata, size=n)
        labels = tuple(f"s{k}" for k in range(strata))
    else:
        stratum = np.zeros(n, dtype=np.int64)
        labels = ("all",)
    basis = rng.normal(size=(n, basis_cols)) if basis_cols else None
    ds = PanelDataset(
        outcome=outcome, cohort=cohort, weight=weight,
        stratum=stratum, stratum_labels=labels, basis=basis,
    )
    path = build_exposure(ds, line_network(n), ExposureConfig.three_state())
    return ds, path


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
