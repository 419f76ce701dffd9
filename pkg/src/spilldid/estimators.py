"""Cohort-event-time estimators: switching, spillover, and total effects.

For a treated cohort g observed at event time l (calendar t = g + l, baseline
t0 = g - delta - 1), three effects are estimated on retained support:

* DSE, the switching effect, from saturated long-difference comparisons
  between cohort g and never-treated units within cells of covariate stratum
  and the two-date exposure state (H_t, H_t0);
* CSE, the spillover effect in the no-own-adoption state, by fitting an
  exposure-response contrast on never-treated units (saturated cell means or
  a structured binary-positive regression) and evaluating the fitted contrast
  over cohort g's realized exposure distribution;
* DTE, their post-estimation sum on the same cells.

Support is governed by a minimum cell count m_N: admissibility uses raw
counts, point estimates use the analysis weights.  Inadmissible cells are
reported as explicit not-reported records, never as zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exposure import ExposurePath
from .panel import PanelDataset, baseline_period, long_difference

DSE = "DSE"
CSE = "CSE"
DTE = "DTE"
LOCAL_PDE = "localPDE"
DID_BENCH = "DIDbench"
CS_BENCH = "CSbench"
CSE_NEVER = "CSEneverT"
CSE_NEVER_CHANGE = "dCSEneverT"

PROPOSED = (DSE, CSE, DTE)


class EstimationError(ValueError):
    """Raised on genuine estimation errors (empty groups, bad inputs)."""


# ---------------------------------------------------------------------------
# Support and estimate containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellRecord:
    """One retained two-date cell: key, raw counts, weighted masses."""

    key: tuple
    n_g: int
    n_inf: int
    w_g: float
    w_inf: float


@dataclass(frozen=True)
class RetainedSupport:
    """Cells retained by the minimum-count rule for one (g, l) comparison.

    ``all_mass_retained`` is True exactly when every cell in the weighted
    cohort-g support passed the count rule, which is the reporting condition
    for the DSE.
    """

    g: int
    l: int
    t: int
    t0: int
    m_n: int
    cells: tuple
    all_mass_retained: bool
    retained_mass: float
    codes: np.ndarray = field(repr=False, default=None)
    dropped: tuple = ()


@dataclass(frozen=True)
class ComponentEstimate:
    """A single reported (or explicitly not-reported) component value."""

    component: str
    value: Optional[float]
    admissible: bool
    g: Optional[int] = None
    l: Optional[int] = None
    t: Optional[int] = None
    support: Optional[RetainedSupport] = None
    target_mass_retained: float = 0.0
    cohort_mass: float = 0.0
    n_cohort: int = 0


@dataclass(frozen=True)
class EventTimeEstimate:
    """Event-time aggregate over the admissible cohort set."""

    component: str
    l: int
    value: Optional[float]
    admissible: bool
    cohorts: tuple
    weights: tuple


# ---------------------------------------------------------------------------
# Cell machinery
# ---------------------------------------------------------------------------

def _two_date_codes(ds: PanelDataset, path: ExposurePath, t: int, t0: int) -> np.ndarray:
    """Integer cell code per unit for (stratum, H_t, H_t0)."""
    s = path.n_states
    return (ds.stratum * s + path.state[:, t - 1]) * s + path.state[:, t0 - 1]


def _decode_two_date(code: int, ds: PanelDataset, path: ExposurePath) -> tuple:
    s = path.n_states
    h0 = code % s
    ht = (code // s) % s
    x = code // (s * s)
    return (ds.stratum_labels[x], path.labels[ht], path.labels[h0])


def _group_stats(codes, mask, w, values=None):
    """Per-cell counts, weights, and (optionally) weighted sums for a subset."""
    keys, inv = np.unique(codes[mask], return_inverse=True)
    n = np.bincount(inv)
    wsum = np.bincount(inv, weights=w[mask])
    if values is None:
        return keys, n, wsum, None
    vsum = np.bincount(inv, weights=(w * values)[mask])
    return keys, n, wsum, vsum


def _masks(ds: PanelDataset, g: int):
    cohort = (ds.cohort == g) & ~ds.exposure_only
    never = ds.is_never
    return cohort, never


# ---------------------------------------------------------------------------
# DSE
# ---------------------------------------------------------------------------

def dse_support(ds: PanelDataset, path: ExposurePath, g: int, l: int, m_n: int) -> RetainedSupport:
    """Retained two-date support for the (g, l) switching comparison.

    Cell universe is the realized cohort-g support of (stratum, H_t, H_t0);
    a cell is retained when both the cohort count and the never-treated count
    reach ``m_n``.  All cohort-g weighted mass must be retained for the DSE
    to be reported.
    """
    t = g + l
    t0 = baseline_period(g, ds.anticipation)
    if t > ds.n_periods:
        raise EstimationError(f"period g+l={t} is beyond T={ds.n_periods}")
    cohort, never = _masks(ds, g)
    if not cohort.any():
        raise EstimationError(f"empty cohort {g}")
    if not never.any():
        raise EstimationError("empty never-treated pool")
    codes = _two_date_codes(ds, path, t, t0)
    keys, n_g, w_g, _ = _group_stats(codes, cohort, ds.weight)
    nkeys, n_inf_all, w_inf_all, _ = _group_stats(codes, never, ds.weight)
    inf_n = dict(zip(nkeys.tolist(), n_inf_all.tolist()))
    inf_w = dict(zip(nkeys.tolist(), w_inf_all.tolist()))

    cells = []
    dropped = []
    retained_codes = []
    retained_w = 0.0
    for k, ng, wg in zip(keys.tolist(), n_g.tolist(), w_g.tolist()):
        ni = inf_n.get(k, 0)
        record = CellRecord(_decode_two_date(k, ds, path), ng, ni, wg, inf_w.get(k, 0.0))
        if ng >= m_n and ni >= m_n:
            cells.append(record)
            retained_codes.append(k)
            retained_w += wg
        else:
            dropped.append(record)
    total_w = float(w_g.sum())
    all_retained = not dropped
    return RetainedSupport(
        g=g, l=l, t=t, t0=t0, m_n=m_n,
        cells=tuple(cells),
        all_mass_retained=all_retained,
        retained_mass=1.0 if all_retained else retained_w / total_w,
        codes=np.asarray(retained_codes, dtype=np.int64),
        dropped=tuple(dropped),
    )


def estimate_dse(ds: PanelDataset, path: ExposurePath, g: int, l: int,
                 support: RetainedSupport) -> ComponentEstimate:
    """Saturated switching-effect estimate on the retained support.

    value = sum_z pi(z) * (weighted mean long difference of cohort g in z
    minus the same for never-treated units in z), with pi(z) the weighted
    cohort-g share of cell z.
    """
    cohort, never = _masks(ds, g)
    w_g_total = float(ds.weight[cohort].sum())
    n_cohort = int(cohort.sum())
    if not support.all_mass_retained:
        return ComponentEstimate(
            component=DSE, value=None, admissible=False, g=g, l=l, t=support.t,
            support=support, target_mass_retained=support.retained_mass,
            cohort_mass=w_g_total, n_cohort=n_cohort,
        )
    delta = long_difference(ds, support.t, support.t0)
    codes = _two_date_codes(ds, path, support.t, support.t0)
    value = 0.0
    for code in support.codes:
        in_cell = codes == code
        gm = in_cell & cohort
        im = in_cell & never
        w_cell = float(ds.weight[gm].sum())
        mean_g = float(np.dot(ds.weight[gm], delta[gm]) / w_cell)
        mean_i = float(np.dot(ds.weight[im], delta[im]) / ds.weight[im].sum())
        value += (w_cell / w_g_total) * (mean_g - mean_i)
    return ComponentEstimate(
        component=DSE, value=value, admissible=True, g=g, l=l, t=support.t,
        support=support, target_mass_retained=1.0,
        cohort_mass=w_g_total, n_cohort=n_cohort,
    )


def dse_by_saturated_wls(ds: PanelDataset, path: ExposurePath, g: int, l: int,
                         support: RetainedSupport) -> float:
    """Weighted-least-squares route to the DSE, as an independent check.

    Regresses the long difference on cell indicators and their interactions
    with cohort membership over the retained comparison sample, then averages
    the interaction coefficients over the weighted cohort-g cell shares.
    Numerically identical to :func:`estimate_dse` up to solver round-off.
    """
    if not support.all_mass_retained:
        raise EstimationError("WLS route requires an admissible support")
    cohort, never = _masks(ds, g)
    delta = long_difference(ds, support.t, support.t0)
    codes = _two_date_codes(ds, path, support.t, support.t0)
    keep = (cohort | never) & np.isin(codes, support.codes)
    k = len(support.codes)
    rows = np.flatnonzero(keep)
    col = {c: j for j, c in enumerate(support.codes.tolist())}
    x = np.zeros((rows.size, 2 * k))
    for r, i in enumerate(rows):
        j = col[int(codes[i])]
        x[r, j] = 1.0
        if cohort[i]:
            x[r, k + j] = 1.0
    sw = np.sqrt(ds.weight[rows])
    beta, *_ = np.linalg.lstsq(x * sw[:, None], delta[rows] * sw, rcond=None)
    w_g_total = float(ds.weight[cohort].sum())
    pi = np.array([rec.w_g for rec in support.cells]) / w_g_total
    return float(np.dot(pi, beta[k:]))


# ---------------------------------------------------------------------------
# CSE first stage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstStageFit:
    """Fitted control-state spillover response from never-treated units.

    ``kind`` is "saturated" (cell means per (t, stratum, state)) or
    "structured" (pooled weighted least squares with a baseline trend in the
    covariate basis plus a binary-positive exposure response).  Both kinds
    carry the raw never-treated cell counts used by the admissibility rules.
    """

    kind: str
    m_n: int
    counts: np.ndarray = field(repr=False)          # (T+1, X, S) raw never counts
    masses: np.ndarray = field(repr=False)          # (T+1, X, S) weighted masses
    mu: Optional[np.ndarray] = field(repr=False, default=None)   # saturated means
    coef: Optional[np.ndarray] = field(repr=False, default=None)
    columns: tuple = ()
    dropped: tuple = ()
    spline_df: int = 0
    spline_knots: tuple = ()
    n_source: int = 0

    def contrast(self, ds: PanelDataset, path: ExposurePath, t: int,
                 idx: Optional[np.ndarray] = None) -> np.ndarray:
        """Fitted contrast c_t(., H_it) per unit; NaN where not estimable."""
        if idx is None:
            idx = np.arange(ds.n_units)
        h = path.state[idx, t - 1]
        if self.kind == "saturated":
            base = self.mu[t, ds.stratum[idx], 0]
            c = self.mu[t, ds.stratum[idx], h] - base
            c[h == 0] = 0.0
            return c
        x = _structured_design(ds, path, t, idx, self.columns,
                               self.spline_knots)
        c = np.zeros(idx.size)
        exposed = h != 0
        for j, colspec in enumerate(self.columns):
            if colspec[0] == "b":
                c += x[:, j] * self.coef[j]
        c[~exposed] = 0.0
        return c

    def cell_available(self, t: int, x: int, h: int) -> bool:
        if h == 0:
            return self.counts[t, x, 0] >= self.m_n
        return (self.counts[t, x, h] >= self.m_n) and (self.counts[t, x, 0] >= self.m_n)


def fit_cse_saturated(ds: PanelDataset, path: ExposurePath, m_n: int = 1) -> FirstStageFit:
    """Saturated first stage: weighted cell means of Y_it - Y_i1 per
    (period, stratum, exposure state) among never-treated units.

    The implied contrast is c_t(x, h) = mu_t(x, h) - mu_t(x, 0) with
    c_t(x, 0) = 0 identically; cells with fewer than ``m_n`` source units are
    marked unavailable.
    """
    never = ds.is_never
    if not never.any():
        raise EstimationError("empty never-treated pool")
    t_max = ds.n_periods
    n_x = len(ds.stratum_labels)
    n_s = path.n_states
    mu = np.full((t_max + 1, n_x, n_s), np.nan)
    counts = np.zeros((t_max + 1, n_x, n_s), dtype=np.int64)
    masses = np.zeros((t_max + 1, n_x, n_s))
    w = ds.weight
    r_full = ds.outcome - ds.outcome[:, [0]]
    for t in range(2, t_max + 1):
        cell = ds.stratum * n_s + path.state[:, t - 1]
        keys, n, wsum, vsum = _group_stats(cell, never, w, r_full[:, t - 1])
        for k, nn, ww, vv in zip(keys.tolist(), n.tolist(), wsum.tolist(), vsum.tolist()):
            x, h = divmod(k, n_s)
            counts[t, x, h] = nn
            masses[t, x, h] = ww
            mu[t, x, h] = vv / ww
    return FirstStageFit(
        kind="saturated", m_n=m_n, counts=counts, masses=masses, mu=mu,
        n_source=int(never.sum()),
    )


def natural_spline_basis(x: np.ndarray, knots) -> np.ndarray:
    """Natural cubic spline basis (no intercept column).

    With K knots (two boundary, K - 2 interior) the basis has K - 1 columns:
    the identity plus the K - 2 natural truncated-cubic contrasts, linear
    beyond the boundary knots.
    """
    x = np.asarray(x, dtype=float)
    kn = np.asarray(knots, dtype=float)
    k_last = kn[-1]
    k_prev = kn[-2]

    def d(j):
        num = np.maximum(x - kn[j], 0.0) ** 3 - np.maximum(x - k_last, 0.0) ** 3
        return num / (k_last - kn[j])

    cols = [x]
    d_ref = d(len(kn) - 2)
    for j in range(len(kn) - 2):
        cols.append(d(j) - d_ref)
    return np.column_stack(cols)


def _spline_knots(t_max: int, df: int) -> tuple:
    """Boundary knots at the period range ends, df - 1 interior knots at
    equally spaced quantiles."""
    if df < 1:
        raise EstimationError("spline_df must be >= 1")
    probs = np.arange(1, df) / df
    interior = np.quantile(np.arange(1.0, t_max + 1.0), probs)
    return tuple(np.concatenate([[1.0], interior, [float(t_max)]]))


def _structured_columns(ds: PanelDataset, t_max: int, spline_df: int) -> tuple:
    """Column spec list: ('a'|'b', name, payload).

    Baseline-trend columns ('a'): intercept, basis main effects, calendar-time
    spline.  Exposure-response columns ('b'): period indicators for t = 2..T
    and basis interactions, each multiplied by the positive-exposure
    indicator.
    """
    cols = [("a", "intercept", None)]
    names = ds.basis_names or tuple(f"v{j + 1}" for j in range(ds.basis.shape[1]))
    for j, name in enumerate(names):
        cols.append(("a", name, j))
    for j in range(spline_df):
        cols.append(("a", f"spline{j + 1}", j))
    for t in range(2, t_max + 1):
        cols.append(("b", f"exposed_t{t}", t))
    for j, name in enumerate(names):
        cols.append(("b", f"exposed_{name}", j))
    return tuple(cols)


def _structured_design(ds: PanelDataset, path: ExposurePath, t, idx: np.ndarray,
                       columns: tuple, knots: tuple) -> np.ndarray:
    """Design rows for the structured first stage at period(s) t.

    ``t`` is scalar here; the pooled fit stacks calls over t = 1..T.
    """
    n = idx.size
    p_it = (path.state[idx, t - 1] != 0).astype(float)
    spline = natural_spline_basis(np.full(n, float(t)), knots)
    x = np.zeros((n, len(columns)))
    for j, (side, _name, payload) in enumerate(columns):
        if side == "a":
            if _name == "intercept":
                x[:, j] = 1.0
            elif _name.startswith("spline"):
                x[:, j] = spline[:, payload]
            else:
                x[:, j] = ds.basis[idx, payload]
        else:
            if _name.startswith("exposed_t"):
                x[:, j] = p_it * (1.0 if t == payload else 0.0)
            else:
                x[:, j] = p_it * ds.basis[idx, payload]
    return x


def _greedy_independent(xw: np.ndarray, tol: float = 1e-9):
    """Indices of a maximal independent column set, scanning left to right."""
    kept = []
    q = None
    for j in range(xw.shape[1]):
        col = xw[:, j]
        norm = np.linalg.norm(col)
        if norm < tol:
            continue
        if q is None:
            kept.append(j)
            q = (col / norm)[:, None]
            continue
        resid = col - q @ (q.T @ col)
        if np.linalg.norm(resid) > tol * max(1.0, norm):
            kept.append(j)
            q = np.column_stack([q, resid / np.linalg.norm(resid)])
    return kept


def fit_cse_structured(ds: PanelDataset, path: ExposurePath, spline_df: int = 4,
                       m_n: int = 1) -> FirstStageFit:
    """Structured binary-positive first stage on stacked never-treated rows.

    Pools rows (i, t) for t = 1..T and fits, by weighted least squares,
    Y_it - Y_i1 on a baseline trend (basis main effects plus a calendar-time
    natural spline) and a positive-exposure response (period indicators plus
    basis interactions).  Period-1 rows have zero outcome and zero exposure:
    they anchor the trend and contribute no exposure-response contrast.
    Aliased columns are dropped in input order and reported in ``dropped``.
    """
    if ds.basis is None:
        raise EstimationError("structured first stage requires basis columns")
    never = ds.is_never
    if not never.any():
        raise EstimationError("empty never-treated pool")
    t_max = ds.n_periods
    knots = _spline_knots(t_max, spline_df)
    columns = _structured_columns(ds, t_max, spline_df)
    idx = np.flatnonzero(never)

    blocks = [_structured_design(ds, path, t, idx, columns, knots)
              for t in range(1, t_max + 1)]
    x = np.vstack(blocks)
    r = np.concatenate([(ds.outcome[idx, t - 1] - ds.outcome[idx, 0])
                        for t in range(1, t_max + 1)])
    w = np.tile(ds.weight[idx], t_max)
    sw = np.sqrt(w)
    xw = x * sw[:, None]

    kept = _greedy_independent(xw)
    dropped = tuple(columns[j][1] for j in range(len(columns)) if j not in kept)
    beta_kept, *_ = np.linalg.lstsq(xw[:, kept], r * sw, rcond=None)
    coef = np.zeros(len(columns))
    coef[kept] = beta_kept

    sat = fit_cse_saturated(ds, path, m_n=m_n)
    return FirstStageFit(
        kind="structured", m_n=m_n, counts=sat.counts, masses=sat.masses,
        coef=coef, columns=columns, dropped=dropped, spline_df=spline_df,
        spline_knots=knots, n_source=int(never.sum()),
    )


# ---------------------------------------------------------------------------
# CSE, diagnostics, DTE
# ---------------------------------------------------------------------------

def _cse_admissible(fit: FirstStageFit, ds: PanelDataset, path: ExposurePath,
                    t: int, mask: np.ndarray) -> bool:
    """Count rule: every (stratum, state) cell realized in ``mask`` at t must
    have m_n never-treated units, and so must its zero-exposure cell."""
    strata = ds.stratum[mask]
    states = path.state[mask, t - 1]
    for x, h in set(zip(strata.tolist(), states.tolist())):
        if not fit.cell_available(t, x, h):
            return False
    return True


def estimate_cse(fit: FirstStageFit, ds: PanelDataset, path: ExposurePath,
                 g: int, l: int) -> ComponentEstimate:
    """Transported plug-in spillover estimate for cohort g at event time l:
    the weighted cohort average of the fitted contrast at t = g + l."""
    t = g + l
    if not (2 <= t <= ds.n_periods):
        raise EstimationError(f"CSE needs 2 <= g+l <= T, got t={t}")
    cohort, _ = _masks(ds, g)
    if not cohort.any():
        raise EstimationError(f"empty cohort {g}")
    w_g = float(ds.weight[cohort].sum())
    n_cohort = int(cohort.sum())
    if not _cse_admissible(fit, ds, path, t, cohort):
        return ComponentEstimate(
            component=CSE, value=None, admissible=False, g=g, l=l, t=t,
            cohort_mass=w_g, n_cohort=n_cohort,
        )
    idx = np.flatnonzero(cohort)
    c = fit.contrast(ds, path, t, idx)
    value = float(np.dot(ds.weight[idx], c) / w_g)
    return ComponentEstimate(
        component=CSE, value=value, admissible=True, g=g, l=l, t=t,
        target_mass_retained=1.0, cohort_mass=w_g, n_cohort=n_cohort,
    )


def estimate_cse_never_treated(fit: FirstStageFit, ds: PanelDataset,
                               path: ExposurePath, t: int) -> ComponentEstimate:
    """Spillover diagnostic on the never-treated source population at t.

    Reported only when the retained source support carries the full weighted
    never-treated mass, so the target is evaluated on the support that
    identified the response.
    """
    if not (2 <= t <= ds.n_periods):
        raise EstimationError(f"diagnostic needs 2 <= t <= T, got {t}")
    never = ds.is_never
    if not never.any():
        raise EstimationError("empty never-treated pool")
    w_inf = float(ds.weight[never].sum())
    if not _cse_admissible(fit, ds, path, t, never):
        return ComponentEstimate(
            component=CSE_NEVER, value=None, admissible=False, t=t,
            cohort_mass=w_inf, n_cohort=int(never.sum()),
        )
    idx = np.flatnonzero(never)
    c = fit.contrast(ds, path, t, idx)
    value = float(np.dot(ds.weight[idx], c) / w_inf)
    return ComponentEstimate(
        component=CSE_NEVER, value=value, admissible=True, t=t,
        target_mass_retained=1.0, cohort_mass=w_inf, n_cohort=int(never.sum()),
    )


def cse_never_treated_change(fit: FirstStageFit, ds: PanelDataset,
                             path: ExposurePath, g: int) -> ComponentEstimate:
    """Change of the never-treated spillover diagnostic from t0(g) to g."""
    t0 = baseline_period(g, ds.anticipation)
    if t0 < 2:
        raise EstimationError(f"diagnostic change needs t0(g) >= 2, got {t0}")
    at_g = estimate_cse_never_treated(fit, ds, path, g)
    at_t0 = estimate_cse_never_treated(fit, ds, path, t0)
    if not (at_g.admissible and at_t0.admissible):
        return ComponentEstimate(component=CSE_NEVER_CHANGE, value=None,
                                 admissible=False, g=g, t=g)
    return ComponentEstimate(
        component=CSE_NEVER_CHANGE, value=at_g.value - at_t0.value,
        admissible=True, g=g, t=g, target_mass_retained=1.0,
        cohort_mass=at_g.cohort_mass, n_cohort=at_g.n_cohort,
    )


def estimate_dte(dse: ComponentEstimate, cse: ComponentEstimate) -> ComponentEstimate:
    """Total effect as the post-estimation sum of DSE and CSE at one (g, l)."""
    if dse.g != cse.g or dse.l != cse.l:
        raise EstimationError(
            f"mismatched cells: DSE at ({dse.g},{dse.l}), CSE at ({cse.g},{cse.l})"
        )
    if not (dse.admissible and cse.admissible):
        return ComponentEstimate(
            component=DTE, value=None, admissible=False, g=dse.g, l=dse.l,
            t=dse.t, cohort_mass=dse.cohort_mass, n_cohort=dse.n_cohort,
        )
    return ComponentEstimate(
        component=DTE, value=dse.value + cse.value, admissible=True,
        g=dse.g, l=dse.l, t=dse.t, support=dse.support,
        target_mass_retained=min(dse.target_mass_retained, cse.target_mass_retained),
        cohort_mass=dse.cohort_mass, n_cohort=dse.n_cohort,
    )


# ---------------------------------------------------------------------------
# Local PDE and spillover-ignorant benchmarks
# ---------------------------------------------------------------------------

def estimate_local_pde(ds: PanelDataset, path: ExposurePath, g: int, l: int,
                       m_n: int) -> ComponentEstimate:
    """Own-adoption effect on isolated zero-exposure support.

    Long-difference DID restricted to units with zero exposure at both the
    baseline and target dates; inadmissible when either isolated cell is
    smaller than ``m_n``.  Only this local object is offered: away from
    isolated support the zero-exposure effect is not point-identified.
    """
    t = g + l
    t0 = baseline_period(g, ds.anticipation)
    if t > ds.n_periods:
        raise EstimationError(f"period g+l={t} is beyond T={ds.n_periods}")
    cohort, never = _masks(ds, g)
    isolated = (path.state[:, t - 1] == 0) & (path.state[:, t0 - 1] == 0)
    gm = cohort & isolated
    im = never & isolated
    w_g = float(ds.weight[cohort].sum())
    if gm.sum() < m_n or im.sum() < m_n:
        return ComponentEstimate(
            component=LOCAL_PDE, value=None, admissible=False, g=g, l=l, t=t,
            cohort_mass=w_g, n_cohort=int(cohort.sum()),
        )
    delta = long_difference(ds, t, t0)
    mean_g = float(np.dot(ds.weight[gm], delta[gm]) / ds.weight[gm].sum())
    mean_i = float(np.dot(ds.weight[im], delta[im]) / ds.weight[im].sum())
    mass = float(ds.weight[gm].sum() / w_g)
    return ComponentEstimate(
        component=LOCAL_PDE, value=mean_g - mean_i, admissible=True,
        g=g, l=l, t=t, target_mass_retained=mass,
        cohort_mass=w_g, n_cohort=int(cohort.sum()),
    )


def pde_no_interaction_alias(dse: ComponentEstimate) -> ComponentEstimate:
    """Relabel a switching estimate as the zero-exposure own-adoption effect.

    Valid only under the substantive no-interaction restriction that own
    treatment and spillover exposure enter additively, in which case the two
    coincide.  The global zero-exposure effect is not point-identified
    otherwise; this is a labeled convenience alias, not a separate estimator.
    """
    if dse.component != DSE:
        raise EstimationError("the no-interaction alias applies to DSE estimates")
    return ComponentEstimate(
        component="PDEnoInteraction", value=dse.value, admissible=dse.admissible,
        g=dse.g, l=dse.l, t=dse.t, support=dse.support,
        target_mass_retained=dse.target_mass_retained,
        cohort_mass=dse.cohort_mass, n_cohort=dse.n_cohort,
    )


def did_benchmark(ds: PanelDataset, g: int, l: int) -> ComponentEstimate:
    """Exposure-ignorant cohort-vs-never long-difference DID at (g, l)."""
    t = g + l
    t0 = baseline_period(g, ds.anticipation)
    if t > ds.n_periods:
        raise EstimationError(f"period g+l={t} is beyond T={ds.n_periods}")
    cohort, never = _masks(ds, g)
    if not cohort.any() or not never.any():
        raise EstimationError("both a treated cohort and never-treated units are required")
    delta = long_difference(ds, t, t0)
    w_g = float(ds.weight[cohort].sum())
    mean_g = float(np.dot(ds.weight[cohort], delta[cohort]) / w_g)
    mean_i = float(np.dot(ds.weight[never], delta[never]) / ds.weight[never].sum())
    return ComponentEstimate(
        component=DID_BENCH, value=mean_g - mean_i, admissible=True,
        g=g, l=l, t=t, target_mass_retained=1.0,
        cohort_mass=w_g, n_cohort=int(cohort.sum()),
    )


def cs_att_benchmark(ds: PanelDataset, g: int, l: int) -> ComponentEstimate:
    """Unconditional group-time ATT with never-treated controls.

    The point value coincides with :func:`did_benchmark` by construction; the
    two differ in interval construction (influence-function sandwich vs.
    spatial HAC), which inference handles downstream.
    """
    did = did_benchmark(ds, g, l)
    return ComponentEstimate(
        component=CS_BENCH, value=did.value, admissible=True, g=g, l=l, t=did.t,
        target_mass_retained=1.0, cohort_mass=did.cohort_mass,
        n_cohort=did.n_cohort,
    )


# ---------------------------------------------------------------------------
# Event-time aggregation
# ---------------------------------------------------------------------------

def admissible_cohorts(estimates: dict, l: int) -> tuple:
    """Cohorts where both the DSE and the CSE rules hold at event time l."""
    out = []
    for (comp, g, ll), est in estimates.items():
        if comp == DSE and ll == l and est.admissible:
            cse = estimates.get((CSE, g, l))
            if cse is not None and cse.admissible:
                out.append(g)
    return tuple(sorted(out))


def aggregate_event_time(estimates: list, l: int) -> dict:
    """Aggregate per-cohort estimates at event time l over the admissible set.

    DSE, CSE, and DTE share the identical admissible cohort set and weighted
    cohort-mass weights, so the total is exactly the sum of its components.
    Benchmarks, when present, aggregate over the same set with the same
    weights.  The local PDE aggregates over its own admissible set.
    """
    table = {(e.component, e.g, e.l): e for e in estimates if e.g is not None}
    g_star = admissible_cohorts(table, l)
    out = {}
    shared = (DSE, CSE, DTE, DID_BENCH, CS_BENCH)
    if g_star:
        masses = np.array([table[(DSE, g, l)].cohort_mass for g in g_star])
        weights = masses / masses.sum()
        for comp in shared:
            vals = [table.get((comp, g, l)) for g in g_star]
            if any(v is None or not v.admissible for v in vals):
                if comp in (DID_BENCH, CS_BENCH):
                    continue
                raise EstimationError(f"{comp} missing on the admissible set at l={l}")
            value = float(np.dot(weights, [v.value for v in vals]))
            out[comp] = EventTimeEstimate(comp, l, value, True, g_star, tuple(weights))
    else:
        for comp in shared:
            out[comp] = EventTimeEstimate(comp, l, None, False, (), ())
    pde = [table[k] for k in table if k[0] == LOCAL_PDE and k[2] == l and table[k].admissible]
    if pde:
        masses = np.array([e.cohort_mass for e in pde])
        weights = masses / masses.sum()
        out[LOCAL_PDE] = EventTimeEstimate(
            LOCAL_PDE, l, float(np.dot(weights, [e.value for e in pde])), True,
            tuple(e.g for e in pde), tuple(weights),
        )
    else:
        out[LOCAL_PDE] = EventTimeEstimate(LOCAL_PDE, l, None, False, (), ())
    return out


# ---------------------------------------------------------------------------
# One-call estimation over all cells
# ---------------------------------------------------------------------------

@dataclass
class EstimationResults:
    """Every per-cell estimate, diagnostic, and event-time aggregate."""

    ds: PanelDataset
    path: ExposurePath
    fit: FirstStageFit
    m_n: int
    event_times: tuple
    cells: list                 # ComponentEstimate records, all components
    aggregates: dict            # (component, l) -> EventTimeEstimate
    diagnostics: list           # CSE_NEVER and CSE_NEVER_CHANGE records
    g_star: dict                # l -> admissible cohort tuple

    def cell(self, component: str, g: int, l: int) -> Optional[ComponentEstimate]:
        for e in self.cells:
            if e.component == component and e.g == g and e.l == l:
                return e
        return None


def estimate_components(
    ds: PanelDataset,
    path: ExposurePath,
    m_n: int = 5,
    event_times=(0, 1, 2),
    first_stage: str = "saturated",
    spline_df: int = 4,
    pre_period_cse: bool = True,
    diagnostics: bool = True,
) -> EstimationResults:
    """Run the full component pipeline over every calendar-valid (g, l) cell.

    Fits the first stage once, estimates DSE/CSE/DTE, the local PDE, and both
    spillover-ignorant benchmarks per cell, adds never-treated diagnostics,
    and aggregates by event time over the common admissible cohort sets.
    """
    if first_stage == "saturated":
        fit = fit_cse_saturated(ds, path, m_n=m_n)
    elif first_stage == "structured":
        fit = fit_cse_structured(ds, path, spline_df=spline_df, m_n=m_n)
    else:
        raise EstimationError(f"unknown first stage {first_stage!r}")

    cohorts = ds.target_cohorts.tolist()
    cells = []
    for g in cohorts:
        for l in event_times:
            if g + l > ds.n_periods or g - ds.anticipation - 1 < 1:
                continue
            support = dse_support(ds, path, g, l, m_n)
            dse = estimate_dse(ds, path, g, l, support)
            cse = estimate_cse(fit, ds, path, g, l)
            cells.extend([
                dse, cse, estimate_dte(dse, cse),
                estimate_local_pde(ds, path, g, l, m_n),
                did_benchmark(ds, g, l), cs_att_benchmark(ds, g, l),
            ])
        if pre_period_cse and g - 1 >= 2:
            cells.append(estimate_cse(fit, ds, path, g, -1))

    diag = []
    if diagnostics:
        for t in range(2, ds.n_periods + 1):
            diag.append(estimate_cse_never_treated(fit, ds, path, t))
        for g in cohorts:
            if baseline_period(g, ds.anticipation) >= 2:
                diag.append(cse_never_treated_change(fit, ds, path, g))

    aggregates = {}
    g_star = {}
    for l in event_times:
        for comp, agg in aggregate_event_time(cells, l).items():
            aggregates[(comp, l)] = agg
        g_star[l] = aggregates[(DSE, l)].cohorts
    return EstimationResults(
        ds=ds, path=path, fit=fit, m_n=m_n, event_times=tuple(event_times),
        cells=cells, aggregates=aggregates, diagnostics=diag, g_star=g_star,
    )
