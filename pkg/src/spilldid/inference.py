"""Joint inference from stacked estimating equations with spatial HAC.

The component estimators are represented as the solution of a stacked,
just-identified system of per-unit moment rows: never-treated source-cell
means, the spillover first stage, the switching and spillover targets, the
never-treated spillover diagnostics, and the weighted cohort masses used in
event-time aggregation.  Linearizing the stack gives a per-unit influence row
for every reported event-time path; total-effect rows are the sum of the
switching and spillover rows, so their covariance is retained.  Covariance is
the uncentered spatial HAC double sum with a compact-support kernel, which is
asymptotically conservative for the finite-population variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .estimators import (
    CSE, CSE_NEVER, CSE_NEVER_CHANGE, DSE, DTE,
    EstimationResults, FirstStageFit, _two_date_codes,
)
from .panel import PanelDataset, long_difference


class InferenceError(RuntimeError):
    """Raised when the stacked system cannot deliver valid inference."""


# ---------------------------------------------------------------------------
# Spatial HAC configuration
# ---------------------------------------------------------------------------

def bartlett_kernel(u: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - u)


def uniform_kernel(u: np.ndarray) -> np.ndarray:
    return (u <= 1.0).astype(float)


_KERNELS = {"bartlett": bartlett_kernel, "uniform": uniform_kernel}


@dataclass(frozen=True)
class ShacConfig:
    """Kernel, bandwidth, and pairwise-distance source for spatial HAC.

    Exactly one of ``positions`` (scalar locations, e.g. line positions),
    ``coords`` (rows of coordinates), or ``matrix`` (precomputed distances)
    must be provided.  ``kernel`` is "bartlett" (default, positive
    semidefinite), "uniform" (flagged non-PSD), or a tabulated callable
    K(u); every kernel is truncated to K(u) = 0 for u > 1 and must satisfy
    K(0) = 1.
    """

    bandwidth: float
    kernel: object = "bartlett"
    positions: Optional[np.ndarray] = None
    coords: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise InferenceError("bandwidth must be positive")
        given = [x is not None for x in (self.positions, self.coords, self.matrix)]
        if sum(given) != 1:
            raise InferenceError("provide exactly one distance source")
        fn = self.kernel_fn()
        if abs(float(fn(np.zeros(1))[0]) - 1.0) > 1e-12:
            raise InferenceError("kernel must satisfy K(0) = 1")

    def kernel_fn(self) -> Callable:
        if isinstance(self.kernel, str):
            try:
                return _KERNELS[self.kernel]
            except KeyError:
                raise InferenceError(f"unknown kernel {self.kernel!r}") from None
        base = self.kernel
        return lambda u: np.asarray(base(u), dtype=float) * (np.asarray(u) <= 1.0)

    def distance_rows(self, i_block: np.ndarray, n: int) -> np.ndarray:
        """Distances from the units in ``i_block`` to every unit."""
        if self.matrix is not None:
            return np.asarray(self.matrix, dtype=float)[i_block]
        if self.positions is not None:
            p = np.asarray(self.positions, dtype=float)
            return np.abs(p[i_block][:, None] - p[None, :])
        c = np.asarray(self.coords, dtype=float)
        diff = c[i_block][:, None, :] - c[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))

def line_shac(n: int, bandwidth: float, kernel: object = "bartlett") -> ShacConfig:
    """SHAC over integer line positions 0..n-1."""
    return ShacConfig(bandwidth=bandwidth, kernel=kernel,
                      positions=np.arange(n, dtype=float))


def cuberoot_bandwidth(n: int) -> int:
    """Default bandwidth rule ceil(N^(1/3)); 6 at N = 200, 8 at N = 500."""
    b = int(np.ceil(n ** (1.0 / 3.0)))
    # guard the float cube root against representation error at perfect cubes
    if (b - 1) ** 3 >= n:
        b -= 1
    return b


# ---------------------------------------------------------------------------
# Covariance containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceEstimate:
    """Spatial HAC covariance of sqrt(N)-scaled event-time estimators."""

    matrix: np.ndarray
    labels: tuple
    n_units: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.matrix), 0.0) / self.n_units)


def shac_cross_covariance(rows_a: np.ndarray, rows_b: np.ndarray,
                          cfg: ShacConfig, chunk: int = 512) -> np.ndarray:
    """(1/N) sum_ij K(rho_ij / b) a_i b_j' for row matrices (N, La), (N, Lb).

    Computed in fixed-order chunks over i so results are deterministic for a
    given input; the compact kernel support prunes pairs with rho > b.
    """
    a = np.atleast_2d(np.asarray(rows_a, dtype=float))
    b = np.atleast_2d(np.asarray(rows_b, dtype=float))
    if a.shape[0] != b.shape[0]:
        raise InferenceError("row matrices must share the unit dimension")
    if a.ndim != 2:
        a = a.reshape(a.shape[0], -1)
    n = a.shape[0]
    fn = cfg.kernel_fn()
    out = np.zeros((a.shape[1], b.shape[1]))
    for start in range(0, n, chunk):
        i_block = np.arange(start, min(start + chunk, n))
        d = cfg.distance_rows(i_block, n)
        u = d / cfg.bandwidth
        w = fn(u)
        w[u > 1.0] = 0.0
        out += a[i_block].T @ (w @ b)
    return out / n


def shac_covariance(rows: np.ndarray, labels, cfg: ShacConfig) -> CovarianceEstimate:
    """Uncentered spatial HAC covariance for one family of influence rows."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    gamma = shac_cross_covariance(rows, rows, cfg)
    gamma = 0.5 * (gamma + gamma.T)
    if np.any(np.diag(gamma) < 0):
        warnings.warn(
            "negative variance under a non positive-semidefinite kernel; "
            "the bartlett kernel is recommended",
            RuntimeWarning,
        )
    return CovarianceEstimate(matrix=gamma, labels=tuple(labels), n_units=rows.shape[0])


def iid_covariance(rows: np.ndarray, labels) -> CovarianceEstimate:
    """Heteroskedasticity-only sandwich (1/N) sum_i phi_i phi_i'."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    gamma = rows.T @ rows / rows.shape[0]
    return CovarianceEstimate(matrix=gamma, labels=tuple(labels), n_units=rows.shape[0])


def pointwise_ci(values: np.ndarray, cov: CovarianceEstimate, alpha: float = 0.05):
    """Normal pointwise interval value +- z_(1-alpha/2) sqrt(gamma_ll / N)."""
    if np.any(np.diag(cov.matrix) < -1e-12):
        raise InferenceError("negative variance; cannot form intervals")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    se = cov.se
    values = np.asarray(values, dtype=float)
    return se, values - z * se, values + z * se


def simultaneous_band(values: np.ndarray, cov: CovarianceEstimate,
                      alpha: float = 0.05, n_draws: int = 2000,
                      seed: int = 0):
    """Gaussian simultaneous band over the reported event times.

    Simulates Z ~ N(0, Gamma) with a counter-based generator keyed by the
    seed, takes the (1 - alpha) quantile of max_l |Z_l| / sqrt(Gamma_ll), and
    widens the pointwise interval by that multiplier.  Negative eigenvalues
    are projected to zero with a warning.
    """
    gamma = np.asarray(cov.matrix, dtype=float)
    sd = np.sqrt(np.maximum(np.diag(gamma), 0.0))
    if not np.any(sd > 0):
        raise InferenceError("all-zero covariance; no band to simulate")
    evals, evecs = np.linalg.eigh(0.5 * (gamma + gamma.T))
    if evals.min() < -1e-10 * max(1.0, evals.max()):
        warnings.warn("covariance not PSD; negative eigenvalues projected to 0",
                      RuntimeWarning)
    evals = np.maximum(evals, 0.0)
    root = evecs * np.sqrt(evals)[None, :]
    rng = np.random.Generator(np.random.Philox(key=seed))
    draws = rng.standard_normal((int(n_draws), gamma.shape[0]))
    z = draws @ root.T
    keep = sd > 0
    stat = np.abs(z[:, keep]) / sd[keep][None, :]
    multiplier = float(np.quantile(stat.max(axis=1), 1.0 - alpha))
    values = np.asarray(values, dtype=float)
    se = cov.se
    return multiplier, values - multiplier * se, values + multiplier * se


# ---------------------------------------------------------------------------
# Stacked estimating-equation system
# ---------------------------------------------------------------------------

@dataclass
class StackedSystem:
    """Stacked per-unit moments, parameter vector, and analytic Jacobian.

    Parameter blocks, in order: DSE source-cell means, the first stage, DSE
    targets, CSE targets, never-treated spillover diagnostics, cohort masses.
    The Jacobian is block lower-triangular in that order, and each block is
    just identified, so block-wise sample moments vanish at the estimates.
    """

    labels: list
    theta: np.ndarray
    q: np.ndarray = field(repr=False)
    jac: np.ndarray = field(repr=False)
    n_units: int
    block: dict
    meta: dict = field(repr=False)
    moments_fn: Callable = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.theta.size

    def index(self, block: str, key) -> int:
        return self.block[block]["index"][key]

    def mean_moments(self, theta: Optional[np.ndarray] = None) -> np.ndarray:
        if theta is None:
            return self.q.mean(axis=0)
        return self.moments_fn(theta).mean(axis=0)


def jacobian(system: StackedSystem) -> np.ndarray:
    """Analytic block Jacobian (1/N) sum_i grad q_i evaluated at theta-hat."""
    return system.jac


def jacobian_fd(system: StackedSystem, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the stacked mean moments, for checks."""
    p = system.dim
    out = np.zeros((p, p))
    for j in range(p):
        step = eps * max(1.0, abs(system.theta[j]))
        up = system.theta.copy()
        dn = system.theta.copy()
        up[j] += step
        dn[j] -= step
        out[:, j] = (system.mean_moments(up) - system.mean_moments(dn)) / (2 * step)
    return out


def build_stacked_system(ds: PanelDataset, path, fit: FirstStageFit,
                         results: EstimationResults,
                         include_diagnostics: bool = True) -> StackedSystem:
    """Assemble the stacked system from fitted components.

    Blocks cover every DSE-admissible cell, every CSE-admissible cell, the
    reported never-treated diagnostics, and the cohort masses; all blocks are
    just identified so the stack reproduces the closed-form point estimates.
    """
    n = ds.n_units
    w = ds.weight
    never = ds.is_never
    wc = w * never

    dse_cells = [(e.g, e.l) for e in results.cells
                 if e.component == DSE and e.admissible]
    cse_cells = [(e.g, e.l) for e in results.cells
                 if e.component == CSE and e.admissible]
    diag_ts = []
    if include_diagnostics:
        diag_ts = sorted(e.t for e in results.diagnostics
                         if e.component == CSE_NEVER and e.admissible)
    if not dse_cells and not cse_cells:
        raise InferenceError("no admissible cells; nothing to stack")

    cohorts = sorted({g for g, _ in dse_cells} | {g for g, _ in cse_cells})

    # precompute per-cell data
    delta = {}
    codes = {}
    for g, l in dse_cells:
        est = results.cell(DSE, g, l)
        sup = est.support
        delta[(g, l)] = long_difference(ds, sup.t, sup.t0)
        codes[(g, l)] = _two_date_codes(ds, path, sup.t, sup.t0)

    cohort_mask = {g: (ds.cohort == g) & ~ds.exposure_only for g in cohorts}
    r_full = ds.outcome - ds.outcome[:, [0]]
    n_states = path.n_states

    # ---- parameter labels, block by block ---------------------------------
    labels = []
    block = {}

    def add_block(name, keys):
        start = len(labels)
        labels.extend((name, k) for k in keys)
        block[name] = {
            "slice": slice(start, len(labels)),
            "index": {k: start + j for j, k in enumerate(keys)},
            "keys": list(keys),
        }

    src_keys = []
    for g, l in dse_cells:
        sup = results.cell(DSE, g, l).support
        src_keys.extend((g, l, int(z)) for z in sup.codes)
    add_block("dse_src", src_keys)

    saturated = fit.kind == "saturated"
    if saturated:
        fs_keys = set()
        for g, l in cse_cells:
            t = g + l
            cm = cohort_mask[g]
            for x, h in set(zip(ds.stratum[cm].tolist(),
                                path.state[cm, t - 1].tolist())):
                fs_keys.add((t, x, h))
                fs_keys.add((t, x, 0))
        for t in diag_ts:
            for x, h in set(zip(ds.stratum[never].tolist(),
                                path.state[never, t - 1].tolist())):
                fs_keys.add((t, x, h))
                fs_keys.add((t, x, 0))
        fs_keys = sorted(fs_keys)
        add_block("first_stage", fs_keys)
    else:
        kept = [j for j, c in enumerate(fit.columns) if c[1] not in fit.dropped]
        add_block("first_stage", [fit.columns[j][1] for j in kept])

    add_block("dse_tgt", dse_cells)
    add_block("cse_tgt", cse_cells)
    add_block("cse_inf", diag_ts)
    add_block("share", cohorts)
    p = len(labels)

    # ---- structured first-stage design tensors ----------------------------
    if not saturated:
        from .estimators import _structured_design
        never_idx = np.flatnonzero(never)
        t_max = ds.n_periods
        design = np.stack([
            _structured_design(ds, path, t, never_idx, fit.columns, fit.spline_knots)[:, kept]
            for t in range(1, t_max + 1)
        ], axis=1)                                     # (n_never, T, p_kept)
        resp = np.stack([ds.outcome[never_idx, t - 1] - ds.outcome[never_idx, 0]
                         for t in range(1, t_max + 1)], axis=1)
        bmask = np.array([fit.columns[j][0] == "b" for j in kept], dtype=float)

        def cdesign_rows(g_or_mask, t):
            idx = np.flatnonzero(g_or_mask)
            rows = _structured_design(ds, path, t, idx, fit.columns, fit.spline_knots)[:, kept]
            return idx, rows * bmask[None, :]
    else:
        design = resp = bmask = None

    # ---- theta-hat ---------------------------------------------------------
    theta = np.zeros(p)
    for g, l, z in block["dse_src"]["keys"]:
        sup = results.cell(DSE, g, l).support
        cell_mask = never & (codes[(g, l)] == z)
        theta[block["dse_src"]["index"][(g, l, z)]] = (
            np.dot(w[cell_mask], delta[(g, l)][cell_mask]) / w[cell_mask].sum()
        )
    if saturated:
        for t, x, h in block["first_stage"]["keys"]:
            theta[block["first_stage"]["index"][(t, x, h)]] = fit.mu[t, x, h]
    else:
        theta[block["first_stage"]["slice"]] = fit.coef[kept]
    for g, l in dse_cells:
        theta[block["dse_tgt"]["index"][(g, l)]] = results.cell(DSE, g, l).value
    for g, l in cse_cells:
        theta[block["cse_tgt"]["index"][(g, l)]] = results.cell(CSE, g, l).value
    for t in diag_ts:
        est = next(e for e in results.diagnostics
                   if e.component == CSE_NEVER and e.t == t)
        theta[block["cse_inf"]["index"][t]] = est.value
    for g in cohorts:
        theta[block["share"]["index"][g]] = float(w[cohort_mask[g]].sum()) / n

    # ---- moment matrix as a function of theta ------------------------------
    def moments(th: np.ndarray) -> np.ndarray:
        q = np.zeros((n, p))
        for g, l, z in block["dse_src"]["keys"]:
            j = block["dse_src"]["index"][(g, l, z)]
            m = th[j]
            cell = never & (codes[(g, l)] == z)
            q[cell, j] = w[cell] * (delta[(g, l)][cell] - m)
        if saturated:
            for t, x, h in block["first_stage"]["keys"]:
                j = block["first_stage"]["index"][(t, x, h)]
                cell = never & (ds.stratum == x) & (path.state[:, t - 1] == h)
                q[cell, j] = w[cell] * (r_full[cell, t - 1] - th[j])
        else:
            eta = th[block["first_stage"]["slice"]]
            resid = resp - design @ eta
            rows = np.einsum("itp,it->ip", design, resid)
            q[np.flatnonzero(never), block["first_stage"]["slice"]] = (
                rows * w[np.flatnonzero(never)][:, None]
            )

        def c_values(mask, t):
            """Fitted contrast per unit in mask at period t under theta."""
            idx = np.flatnonzero(mask)
            if saturated:
                fsi = block["first_stage"]["index"]
                h = path.state[idx, t - 1]
                x = ds.stratum[idx]
                c = np.zeros(idx.size)
                for r, (xx, hh) in enumerate(zip(x.tolist(), h.tolist())):
                    if hh != 0:
                        c[r] = th[fsi[(t, xx, hh)]] - th[fsi[(t, xx, 0)]]
                return idx, c
            eta = th[block["first_stage"]["slice"]]
            idx2, rows = cdesign_rows(mask, t)
            return idx2, rows @ eta

        for g, l in dse_cells:
            j = block["dse_tgt"]["index"][(g, l)]
            cm = cohort_mask[g]
            m_of_z = np.zeros(n)
            for gg, ll, z in block["dse_src"]["keys"]:
                if (gg, ll) == (g, l):
                    m_of_z[codes[(g, l)] == z] = th[block["dse_src"]["index"][(g, l, z)]]
            q[cm, j] = w[cm] * (delta[(g, l)][cm] - m_of_z[cm] - th[j])
        for g, l in cse_cells:
            j = block["cse_tgt"]["index"][(g, l)]
            idx, c = c_values(cohort_mask[g], g + l)
            q[idx, j] = w[idx] * (c - th[j])
        for t in diag_ts:
            j = block["cse_inf"]["index"][t]
            idx, c = c_values(never, t)
            q[idx, j] = w[idx] * (c - th[j])
        for g in cohorts:
            j = block["share"]["index"][g]
            q[:, j] = w * cohort_mask[g] - th[j]
        return q

    q = moments(theta)

    # ---- analytic Jacobian --------------------------------------------------
    jac = np.zeros((p, p))
    for g, l, z in block["dse_src"]["keys"]:
        j = block["dse_src"]["index"][(g, l, z)]
        cell = never & (codes[(g, l)] == z)
        jac[j, j] = -w[cell].sum() / n
    if saturated:
        for t, x, h in block["first_stage"]["keys"]:
            j = block["first_stage"]["index"][(t, x, h)]
            cell = never & (ds.stratum == x) & (path.state[:, t - 1] == h)
            jac[j, j] = -w[cell].sum() / n
    else:
        sl = block["first_stage"]["slice"]
        gram = np.einsum("i,itp,itq->pq", w[np.flatnonzero(never)], design, design)
        jac[sl, sl] = -gram / n
    for g, l in dse_cells:
        j = block["dse_tgt"]["index"][(g, l)]
        cm = cohort_mask[g]
        for gg, ll, z in block["dse_src"]["keys"]:
            if (gg, ll) == (g, l):
                cell = cm & (codes[(g, l)] == z)
                jac[j, block["dse_src"]["index"][(g, l, z)]] = -w[cell].sum() / n
        jac[j, j] = -w[cm].sum() / n
    for mask_name, cells_list, tgt_block, mask_of in (
        ("cohort", cse_cells, "cse_tgt", lambda g: cohort_mask[g]),
        ("never", [(None, t) for t in diag_ts], "cse_inf", lambda _g: never),
    ):
        for g, l_or_t in cells_list:
            t = (g + l_or_t) if tgt_block == "cse_tgt" else l_or_t
            key = (g, l_or_t) if tgt_block == "cse_tgt" else l_or_t
            j = block[tgt_block]["index"][key]
            mask = mask_of(g)
            if saturated:
                fsi = block["first_stage"]["index"]
                strata = ds.stratum[mask]
                states = path.state[mask, t - 1]
                ww = w[mask]
                for (xx, hh), wsum in _weighted_cells(strata, states, ww).items():
                    if hh != 0:
                        jac[j, fsi[(t, xx, hh)]] += wsum / n
                        jac[j, fsi[(t, xx, 0)]] -= wsum / n
            else:
                idx2, rows = cdesign_rows(mask, t)
                jac[j, block["first_stage"]["slice"]] = (
                    (rows * w[idx2][:, None]).sum(axis=0) / n
                )
            jac[j, j] = -w[mask].sum() / n
    for g in cohorts:
        j = block["share"]["index"][g]
        jac[j, j] = -1.0

    meta = {
        "dse_cells": dse_cells, "cse_cells": cse_cells, "diag_ts": diag_ts,
        "cohorts": cohorts, "g_star": results.g_star,
        "event_times": results.event_times,
        "anticipation": ds.anticipation,
    }
    return StackedSystem(labels=labels, theta=theta, q=q, jac=jac, n_units=n,
                         block=block, meta=meta, moments_fn=moments)


def _weighted_cells(strata, states, w):
    out = {}
    for x, h, ww in zip(strata.tolist(), states.tolist(), w.tolist()):
        out[(x, h)] = out.get((x, h), 0.0) + ww
    return out


# ---------------------------------------------------------------------------
# Influence rows
# ---------------------------------------------------------------------------

@dataclass
class InfluenceRows:
    """Per-unit influence rows, one column per reported map."""

    labels: list                 # (component, key) per column
    rows: np.ndarray = field(repr=False)
    values: np.ndarray
    n_units: int

    def columns(self, component: str):
        """(keys, values, rows) for one component, in label order."""
        keep = [j for j, (c, _k) in enumerate(self.labels) if c == component]
        keys = [self.labels[j][1] for j in keep]
        return keys, self.values[keep], self.rows[:, keep]


def _aggregation_maps(system: StackedSystem):
    """Event-time, per-cell, and diagnostic maps with analytic gradients."""
    theta = system.theta
    p = system.dim
    maps = []

    def share(g):
        return theta[system.index("share", g)]

    # per-cell coordinate maps
    for comp, blockname in ((DSE, "dse_tgt"), (CSE, "cse_tgt")):
        for key in system.block[blockname]["keys"]:
            grad = np.zeros(p)
            grad[system.index(blockname, key)] = 1.0
            maps.append(((comp, ("cell",) + key), theta[system.index(blockname, key)], grad))
    dse_set = set(system.block["dse_tgt"]["keys"])
    for key in system.block["cse_tgt"]["keys"]:
        if key in dse_set:
            grad = np.zeros(p)
            grad[system.index("dse_tgt", key)] = 1.0
            grad[system.index("cse_tgt", key)] = 1.0
            value = (theta[system.index("dse_tgt", key)]
                     + theta[system.index("cse_tgt", key)])
            maps.append(((DTE, ("cell",) + key), value, grad))

    # event-time maps over the common admissible sets
    for l, g_star in sorted(system.meta["g_star"].items()):
        if not g_star:
            continue
        s = np.array([share(g) for g in g_star])
        s_total = s.sum()
        omega = s / s_total
        for comp in (DSE, CSE, DTE):
            grad = np.zeros(p)
            vals = []
            for g, om in zip(g_star, omega):
                v = 0.0
                if comp in (DSE, DTE):
                    jdx = system.index("dse_tgt", (g, l))
                    grad[jdx] += om
                    v += theta[jdx]
                if comp in (CSE, DTE):
                    jdx = system.index("cse_tgt", (g, l))
                    grad[jdx] += om
                    v += theta[jdx]
                vals.append(v)
            value = float(np.dot(omega, vals))
            for g, v in zip(g_star, vals):
                grad[system.index("share", g)] = (v - value) / s_total
            maps.append(((comp, ("event", l)), value, grad))

    # never-treated spillover diagnostics and their change across t0(g) -> g
    for t in system.meta["diag_ts"]:
        grad = np.zeros(p)
        grad[system.index("cse_inf", t)] = 1.0
        maps.append(((CSE_NEVER, ("t", t)), theta[system.index("cse_inf", t)], grad))
    diag_set = set(system.meta["diag_ts"])
    for g in system.meta["cohorts"]:
        t0 = g - system.meta["anticipation"] - 1
        if g in diag_set and t0 in diag_set:
            grad = np.zeros(p)
            grad[system.index("cse_inf", g)] = 1.0
            grad[system.index("cse_inf", t0)] = -1.0
            value = (theta[system.index("cse_inf", g)]
                     - theta[system.index("cse_inf", t0)])
            maps.append(((CSE_NEVER_CHANGE, ("g", g)), value, grad))
    return maps


def influence_rows(system: StackedSystem,
                   weighting: Optional[np.ndarray] = None) -> InfluenceRows:
    """Influence rows phi_i = -grad(a)' (R'PR)^(-1) R'P q_i for every map.

    With the default identity weighting and the just-identified stack this is
    the exact linearization of the closed-form estimators; total-effect rows
    equal the sum of the switching and spillover rows by construction.
    """
    maps = _aggregation_maps(system)
    if not maps:
        raise InferenceError("no reported maps; nothing to linearize")
    r = system.jac
    try:
        if weighting is None:
            m = np.linalg.solve(r, np.eye(system.dim))
        else:
            rtp = r.T @ weighting
            m = np.linalg.solve(rtp @ r, rtp)
    except np.linalg.LinAlgError as exc:
        raise InferenceError(
            f"singular stacked Jacobian ({system.dim} parameters); "
            "support may be too thin for inference"
        ) from exc
    grads = np.stack([g for (_lab, _v, g) in maps], axis=0)
    rows = -(system.q @ m.T) @ grads.T
    return InfluenceRows(
        labels=[lab for (lab, _v, _g) in maps],
        rows=rows,
        values=np.array([v for (_lab, v, _g) in maps]),
        n_units=system.n_units,
    )


# ---------------------------------------------------------------------------
# Benchmark systems (exposure-ignorant DID / group-time ATT)
# ---------------------------------------------------------------------------

def benchmark_influence_rows(ds: PanelDataset, cells: list,
                             event_sets: dict) -> InfluenceRows:
    """Influence rows for the exposure-ignorant DID benchmark.

    ``cells`` lists (g, l) pairs; ``event_sets`` maps l to the cohort tuple
    over which the benchmark is aggregated (the proposal's admissible set).
    The benchmark is a two-group weighted-mean contrast, stacked with the
    cohort-mass equations so aggregation error propagates.
    """
    n = ds.n_units
    w = ds.weight
    never = ds.is_never
    cohorts = sorted({g for g, _ in cells})
    cohort_mask = {g: (ds.cohort == g) & ~ds.exposure_only for g in cohorts}

    labels = []
    for g, l in cells:
        labels.append(("mu_g", (g, l)))
        labels.append(("mu_inf", (g, l)))
    for g in cohorts:
        labels.append(("share", g))
    index = {lab: j for j, lab in enumerate(labels)}
    p = len(labels)

    theta = np.zeros(p)
    q = np.zeros((n, p))
    jac = np.zeros((p, p))
    deltas = {}
    for g, l in cells:
        t0 = g - ds.anticipation - 1
        deltas[(g, l)] = long_difference(ds, g + l, t0)
        cm = cohort_mask[g]
        jg = index[("mu_g", (g, l))]
        ji = index[("mu_inf", (g, l))]
        theta[jg] = np.dot(w[cm], deltas[(g, l)][cm]) / w[cm].sum()
        theta[ji] = np.dot(w[never], deltas[(g, l)][never]) / w[never].sum()
        q[cm, jg] = w[cm] * (deltas[(g, l)][cm] - theta[jg])
        q[never, ji] = w[never] * (deltas[(g, l)][never] - theta[ji])
        jac[jg, jg] = -w[cm].sum() / n
        jac[ji, ji] = -w[never].sum() / n
    for g in cohorts:
        j = index[("share", g)]
        theta[j] = w[cohort_mask[g]].sum() / n
        q[:, j] = w * cohort_mask[g] - theta[j]
        jac[j, j] = -1.0

    maps = []
    for g, l in cells:
        grad = np.zeros(p)
        grad[index[("mu_g", (g, l))]] = 1.0
        grad[index[("mu_inf", (g, l))]] = -1.0
        value = theta[index[("mu_g", (g, l))]] - theta[index[("mu_inf", (g, l))]]
        maps.append((("DIDbench", ("cell", g, l)), value, grad))
    for l, g_star in sorted(event_sets.items()):
        g_star = [g for g in g_star if (g, l) in deltas]
        if not g_star:
            continue
        s = np.array([theta[index[("share", g)]] for g in g_star])
        omega = s / s.sum()
        grad = np.zeros(p)
        vals = []
        for g, om in zip(g_star, omega):
            grad[index[("mu_g", (g, l))]] += om
            grad[index[("mu_inf", (g, l))]] -= om
            vals.append(theta[index[("mu_g", (g, l))]] - theta[index[("mu_inf", (g, l))]])
        value = float(np.dot(omega, vals))
        for g, v in zip(g_star, vals):
            grad[index[("share", g)]] = (v - value) / s.sum()
        maps.append((("DIDbench", ("event", l)), value, grad))

    try:
        m = np.linalg.solve(jac, np.eye(p))
    except np.linalg.LinAlgError as exc:
        raise InferenceError("singular benchmark system") from exc
    grads = np.stack([g for (_lab, _v, g) in maps], axis=0)
    rows = -(q @ m.T) @ grads.T
    return InfluenceRows(
        labels=[lab for (lab, _v, _g) in maps],
        rows=rows,
        values=np.array([v for (_lab, v, _g) in maps]),
        n_units=n,
    )
