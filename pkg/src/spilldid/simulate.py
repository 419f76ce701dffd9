"""Monte Carlo designs with known finite-population effects.

Three designs on an open line network with a three-state exposure coarsening:
an additively separable design (no own-treatment/exposure interaction), the
main interaction design, and a support-stress variant whose line assignment
makes some exposure states faced by treated cohorts rare among never-treated
units.  Potential-outcome schedules are stored explicitly, so switching,
spillover, and total effects are exact finite-population averages per
replication and every estimator can be scored against its retained-support
target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .estimators import (
    CS_BENCH, CSE, DID_BENCH, DSE, DTE,
    EstimationError, estimate_components,
)
from .exposure import ExposureConfig, build_exposure, line_network
from .inference import (
    InferenceError, ShacConfig, benchmark_influence_rows, build_stacked_system,
    cuberoot_bandwidth, iid_covariance, influence_rows, pointwise_ci,
    shac_covariance,
)
from .panel import NEVER, PanelDataset, baseline_period

DESIGN_KAPPA = {"dgp1": 0.0, "dgp2": 0.4, "dgp3": 0.4}

#: Length-32 line pattern for the main designs (0 = never), tiled across the
#: line with one seed-drawn global rotation per replication.  The pattern is
#: built so that every neighbor-pair configuration realized by a treated unit
#: is also realized by never-treated units (so every two-date exposure cell a
#: cohort occupies has a well-populated never-treated counterpart at any
#: sample size), while a run of never-treated units preserves a zero-exposure
#: reservoir in every period.
TILED32_PATTERN = (4, 0, 0, 0, 0, 0, 5, 0, 4, 0, 3, 0, 5, 4, 3, 5,
                   4, 3, 3, 5, 4, 4, 5, 3, 3, 5, 4, 4, 5, 3, 3, 5)

#: Support-stress line assignment (0 = never): a 24-cycle of two balanced
#: 12-blocks, tiled with a seed-drawn half-cycle offset, in which most
#: never-treated units sit next to adopters (strong comparison-group
#: contamination) while a short never-treated run keeps a thin zero-exposure
#: reservoir.  Each replication then re-rotates a random subset of 12-blocks
#: in place: the disturbed block boundaries produce treated-cohort exposure
#: states that are rare or absent among never-treated units, so admissibility
#: fails in a minority of cells.
BLOCK12_CYCLE = (3, 5, 4, 5, 3, 0, 4, 5, 4, 3, 0, 0,
                 0, 0, 4, 3, 5, 3, 3, 5, 4, 0, 5, 4)
BLOCK12_DISTURB_PROB = 0.15


@dataclass(frozen=True)
class DgpConfig:
    """One simulation design cell."""

    design: str = "dgp1"
    n: int = 200
    seed: int = 0
    m_n: int = 5
    event_times: tuple = (0, 1, 2)
    noise_scale: float = 1.0
    n_periods: int = 6
    cohorts: tuple = (3, 4, 5)
    assignment: str = ""
    alpha: float = 0.05

    def __post_init__(self):
        if self.design not in DESIGN_KAPPA:
            raise ValueError(f"unknown design {self.design!r}")
        if not self.assignment:
            default = "block12_balanced" if self.design == "dgp3" else "tiled_mirrored"
            object.__setattr__(self, "assignment", default)
        if self.design == "dgp3" and self.assignment != "block12_balanced":
            raise ValueError("dgp3 requires the block12_balanced assignment")

    @property
    def kappa(self) -> float:
        return DESIGN_KAPPA[self.design]


@dataclass(frozen=True)
class PotentialOutcomes:
    """Realized potential-outcome schedules for one replication.

    The four arrays evaluate both adoption states (own cohort vs. never) at
    both exposure states (realized H vs. zero); the observed outcome equals
    ``y_own_h`` by consistency.
    """

    cohort: np.ndarray
    dose: np.ndarray            # q(H_it), realized
    y_inf_h: np.ndarray         # untreated at realized exposure
    y_inf_0: np.ndarray         # untreated, zero exposure (pure control)
    y_own_h: np.ndarray         # own adoption path at realized exposure
    y_own_0: np.ndarray         # own adoption path at zero exposure
    kappa: float
    rho: np.ndarray
    tau_profile: np.ndarray


def _tau_profile(t_max: int) -> np.ndarray:
    """Own-treatment effect by event time: 1, 1.5, then 2 from l = 2 on."""
    out = np.full(t_max, 2.0)
    out[0] = 1.0
    if t_max > 1:
        out[1] = 1.5
    return out


def _assign_cohorts(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    values = np.array(list(cfg.cohorts) + [NEVER], dtype=np.int64)
    if cfg.assignment == "iid_equal":
        return rng.choice(values, size=cfg.n)
    if cfg.assignment == "tiled_mirrored":
        pattern = np.array(TILED32_PATTERN, dtype=np.int64)
        offset = int(rng.integers(0, pattern.size))
        reps = -(-cfg.n // pattern.size)
        return np.tile(np.roll(pattern, offset), reps)[: cfg.n]
    if cfg.assignment == "block12_balanced":
        cycle = np.array(BLOCK12_CYCLE, dtype=np.int64)
        base = int(rng.integers(0, 2)) * 12       # half-cycle offsets keep
        reps = -(-cfg.n // cycle.size)            # every 12-block balanced
        out = np.tile(np.roll(cycle, base), reps)[: cfg.n]
        n_blocks = -(-cfg.n // 12)
        for k in range(n_blocks):
            if rng.uniform() < BLOCK12_DISTURB_PROB:
                sl = slice(12 * k, min(12 * k + 12, cfg.n))
                out[sl] = np.roll(out[sl], int(rng.integers(1, 12)))
        return out
    raise ValueError(f"unknown assignment {cfg.assignment!r}")


def generate_dgp(cfg: DgpConfig, replication_seed=None):
    """Draw one replication: returns (PanelDataset, ExposurePath, PotentialOutcomes).

    Untreated outcomes are alpha_i + lambda_t + 0.5 X_i + rho_t q(H_it) + eps;
    adoption adds the event-time profile and, in the interaction designs, an
    extra kappa * q(H_it) from the adoption date on.  lambda_t = 0.2 (t - 1);
    the spillover slope rho_t is 0 before period 3 and 0.3 after.
    """
    seed = cfg.seed if replication_seed is None else replication_seed
    rng = np.random.default_rng(seed)
    n, t_max = cfg.n, cfg.n_periods
    cohort = _assign_cohorts(cfg, rng)
    x = rng.standard_normal(n)
    alpha = rng.standard_normal(n)
    eps = rng.standard_normal((n, t_max)) * cfg.noise_scale

    # the two open-line endpoints have a single neighbor with weight one, so
    # their exposure paths have no interior counterpart; they stay in the
    # network but out of the estimation pools
    exposure_only = np.zeros(n, dtype=bool)
    exposure_only[[0, n - 1]] = True

    ds0 = PanelDataset(
        outcome=np.zeros((n, t_max)), cohort=cohort, weight=np.ones(n),
        stratum=np.zeros(n, dtype=np.int64), stratum_labels=("all",),
        exposure_only=exposure_only,
    )
    path = build_exposure(ds0, line_network(n), ExposureConfig.three_state())
    q_real = path.dose_matrix()

    t_grid = np.arange(1, t_max + 1)
    lam = 0.2 * (t_grid - 1)
    rho = np.where(t_grid >= 3, 0.3, 0.0)
    tau = _tau_profile(t_max)

    base = alpha[:, None] + lam[None, :] + 0.5 * x[:, None] + eps
    y_inf_0 = base
    y_inf_h = base + rho[None, :] * q_real

    treated = cohort != NEVER
    post = treated[:, None] & (t_grid[None, :] >= cohort[:, None])
    lag = np.clip(t_grid[None, :] - cohort[:, None], 0, t_max - 1)
    own = np.where(post, tau[lag], 0.0)
    y_own_0 = y_inf_0 + own
    y_own_h = y_inf_h + own + np.where(post, cfg.kappa * q_real, 0.0)

    ds = PanelDataset(
        outcome=y_own_h, cohort=cohort, weight=np.ones(n),
        stratum=np.zeros(n, dtype=np.int64), stratum_labels=("all",),
        exposure_only=exposure_only,
    )
    po = PotentialOutcomes(
        cohort=cohort, dose=q_real, y_inf_h=y_inf_h, y_inf_0=y_inf_0,
        y_own_h=y_own_h, y_own_0=y_own_0, kappa=cfg.kappa, rho=rho,
        tau_profile=tau,
    )
    return ds, path, po


# ---------------------------------------------------------------------------
# Finite-population truths and identity checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruthTable:
    """Per-cell and retained-support event-time truths for one replication."""

    cells: dict                 # (component, g, l) -> float
    events: dict                # (component, l) -> float (retained support)


def finite_population_truth(po: PotentialOutcomes, ds: PanelDataset,
                            results) -> TruthTable:
    """Replication truths: weighted cohort averages of the realized
    potential-outcome contrasts, and event-time aggregates over the same
    retained cohort sets and weights the estimator reported."""
    cells = {}
    w = ds.weight
    for g in ds.target_cohorts:
        gm = (ds.cohort == g) & ~ds.exposure_only
        wg = w[gm].sum()
        for l in results.event_times:
            t = g + l
            if t > ds.n_periods:
                continue
            dse = np.dot(w[gm], (po.y_own_h - po.y_inf_h)[gm, t - 1]) / wg
            cse = np.dot(w[gm], (po.y_inf_h - po.y_inf_0)[gm, t - 1]) / wg
            cells[(DSE, int(g), l)] = float(dse)
            cells[(CSE, int(g), l)] = float(cse)
            cells[(DTE, int(g), l)] = float(dse + cse)
    events = {}
    for (comp, l), agg in results.aggregates.items():
        if comp not in (DSE, CSE, DTE) or not agg.admissible:
            continue
        events[(comp, l)] = float(
            sum(wt * cells[(comp, g, l)] for g, wt in zip(agg.cohorts, agg.weights))
        )
    return TruthTable(cells=cells, events=events)


def verify_unit_taxonomy(po: PotentialOutcomes) -> float:
    """Max residual of the unit-level effect identities on treated unit-periods.

    total = switch(H) + control-state spill(H) = pure + treated-side spill(H)
    must hold exactly for every treated unit-period.
    """
    t_grid = np.arange(1, po.y_inf_h.shape[1] + 1)
    post = (po.cohort != NEVER)[:, None] & (t_grid[None, :] >= po.cohort[:, None])
    total = po.y_own_h - po.y_inf_0
    switch = po.y_own_h - po.y_inf_h
    spill_c = po.y_inf_h - po.y_inf_0
    pure = po.y_own_0 - po.y_inf_0
    spill_t = po.y_own_h - po.y_own_0
    r1 = np.abs(total - switch - spill_c)[post]
    r2 = np.abs(total - pure - spill_t)[post]
    if r1.size == 0:
        return 0.0
    return float(max(r1.max(), r2.max()))


def verify_did_decomposition(po: PotentialOutcomes, ds: PanelDataset, g: int) -> float:
    """Residual of the conventional-DID decomposition for cohort g.

    The observed cohort-vs-never long difference at the adoption date must
    equal the sum of the pure effect, the treated-side spillover, minus the
    baseline exposure contamination, minus the never-treated spillover level
    at g plus its level at the baseline, plus the pure-control trend gap, with
    every term computed as a sample mean over the same fixed groups.
    """
    t0 = baseline_period(g, ds.anticipation)
    gm = (ds.cohort == g) & ~ds.exposure_only
    nm = ds.is_never
    if not gm.any() or not nm.any():
        raise EstimationError("need both cohort g and never-treated units")
    w = ds.weight

    def gmean(arr):
        return np.dot(w[gm], arr[gm]) / w[gm].sum()

    def nmean(arr):
        return np.dot(w[nm], arr[nm]) / w[nm].sum()

    t_i, t0_i = g - 1, t0 - 1
    observed = ds.outcome
    lhs = (gmean(observed[:, t_i] - observed[:, t0_i])
           - nmean(observed[:, t_i] - observed[:, t0_i]))

    pde = gmean(po.y_own_0[:, t_i] - po.y_inf_0[:, t_i])
    ast = gmean(po.y_own_h[:, t_i] - po.y_own_0[:, t_i])
    b_base = gmean(po.y_inf_h[:, t0_i] - po.y_inf_0[:, t0_i])
    cse_inf_g = nmean(po.y_inf_h[:, t_i] - po.y_inf_0[:, t_i])
    cse_inf_t0 = nmean(po.y_inf_h[:, t0_i] - po.y_inf_0[:, t0_i])
    b_pt = (gmean(po.y_inf_0[:, t_i] - po.y_inf_0[:, t0_i])
            - nmean(po.y_inf_0[:, t_i] - po.y_inf_0[:, t0_i]))
    rhs = pde + ast - b_base - cse_inf_g + cse_inf_t0 + b_pt
    return float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

PROPOSED_METHODS = {DSE: "Proposed DSE", CSE: "Proposed CSE", DTE: "Proposed DTE"}
BENCH_METHODS = {DID_BENCH: "Standard DID", CS_BENCH: "CS group-time ATT"}


@dataclass
class McReport:
    """Aggregated Monte Carlo metrics plus the raw per-replication records."""

    design: str
    n_units: int
    n_reps: int
    seed: int
    rows: list                  # dicts: estimator/event_time/bias/rmse/...
    failures: list = field(default_factory=list)
    records: Optional[list] = None

    def row(self, estimator: str, event_time="pooled") -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["event_time"] == event_time:
                return r
        raise KeyError((estimator, event_time))


def _replicate(cfg: DgpConfig, seed, shac: ShacConfig):
    """One replication: estimates, intervals, truths.  Returns records."""
    ds, path, po = generate_dgp(cfg, seed)
    res = estimate_components(
        ds, path, m_n=cfg.m_n, event_times=cfg.event_times,
        first_stage="saturated", pre_period_cse=False, diagnostics=False,
    )
    truth = finite_population_truth(po, ds, res)

    records = []
    system = build_stacked_system(ds, path, res.fit, res, include_diagnostics=False)
    rows = influence_rows(system)
    for comp in (DSE, CSE, DTE):
        keys, values, mat = rows.columns(comp)
        event_cols = [(j, k[1]) for j, k in enumerate(keys) if k[0] == "event"]
        if not event_cols:
            continue
        cols = [j for j, _l in event_cols]
        ls = [l for _j, l in event_cols]
        cov = shac_covariance(mat[:, cols], ls, shac)
        se, lo, hi = pointwise_ci(values[cols], cov, alpha=cfg.alpha)
        for j, l in enumerate(ls):
            tr = truth.events[(comp, l)]
            records.append({
                "estimator": PROPOSED_METHODS[comp], "event_time": l,
                "error": values[cols[j]] - tr, "hit": bool(lo[j] <= tr <= hi[j]),
                "se": float(se[j]),
            })

    bench_cells = sorted({(g, l) for l, gs in res.g_star.items() for g in gs})
    if bench_cells:
        brows = benchmark_influence_rows(ds, bench_cells, res.g_star)
        keys, values, mat = brows.columns(DID_BENCH)
        event_cols = [(j, k[1]) for j, k in enumerate(keys) if k[0] == "event"]
        cols = [j for j, _l in event_cols]
        ls = [l for _j, l in event_cols]
        cov_shac = shac_covariance(mat[:, cols], ls, shac)
        cov_iid = iid_covariance(mat[:, cols], ls)
        for name, cov in ((DID_BENCH, cov_shac), (CS_BENCH, cov_iid)):
            se, lo, hi = pointwise_ci(values[cols], cov, alpha=cfg.alpha)
            for j, l in enumerate(ls):
                tr = truth.events[(DTE, l)]
                records.append({
                    "estimator": BENCH_METHODS[name], "event_time": l,
                    "error": values[cols[j]] - tr, "hit": bool(lo[j] <= tr <= hi[j]),
                    "se": float(se[j]),
                })
    return records


def run_monte_carlo(cfg: DgpConfig, n_reps: int, keep_records: bool = False) -> McReport:
    """Run the design for ``n_reps`` replications and aggregate.

    Bias, RMSE, and coverage are computed conditional on availability against
    each estimator's retained-support target (benchmarks against the total
    effect); availability is the share of replication-by-event-time cells
    with a reported interval.  A master seed spawns one stream per
    replication, so replications are order-independent and the report is
    deterministic for a fixed configuration.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    shac = ShacConfig(bandwidth=float(cuberoot_bandwidth(cfg.n)), kernel="bartlett",
                      positions=np.arange(cfg.n, dtype=float))
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_reps)
    all_records = []
    failures = []
    for rep, seed in enumerate(seeds):
        try:
            recs = _replicate(cfg, seed, shac)
        except (EstimationError, InferenceError) as exc:
            failures.append({"replication": rep, "error": str(exc)})
            recs = []
        for r in recs:
            r["replication"] = rep
        all_records.extend(recs)

    methods = list(PROPOSED_METHODS.values()) + list(BENCH_METHODS.values())
    rows = []
    event_levels = list(cfg.event_times)
    for est in methods:
        per_l = {}
        for l in event_levels:
            errs = np.array([r["error"] for r in all_records
                             if r["estimator"] == est and r["event_time"] == l])
            hits = np.array([r["hit"] for r in all_records
                             if r["estimator"] == est and r["event_time"] == l])
            per_l[l] = (errs, hits)
            rows.append(_metric_row(est, l, errs, hits, n_reps))
        errs = np.concatenate([per_l[l][0] for l in event_levels])
        hits = np.concatenate([per_l[l][1] for l in event_levels])
        rows.append(_metric_row(est, "pooled", errs, hits,
                                n_reps * len(event_levels)))
    return McReport(
        design=cfg.design, n_units=cfg.n, n_reps=n_reps, seed=cfg.seed,
        rows=rows, failures=failures,
        records=all_records if keep_records else None,
    )


def _metric_row(est, event_time, errs, hits, n_possible):
    available = errs.size
    return {
        "estimator": est,
        "event_time": event_time,
        "bias": float(errs.mean()) if available else float("nan"),
        "rmse": float(np.sqrt((errs ** 2).mean())) if available else float("nan"),
        "coverage": float(hits.mean()) if available else float("nan"),
        "availability": available / n_possible if n_possible else 0.0,
        "n_obs": int(available),
    }


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def mc_report_to_csv(report: McReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "n_units", "n_reps", "estimator", "event_time",
                         "bias", "rmse", "coverage", "availability", "n_obs"])
        for r in report.rows:
            writer.writerow([
                report.design, report.n_units, report.n_reps,
                r["estimator"], r["event_time"],
                _fmt(r["bias"]), _fmt(r["rmse"]), _fmt(r["coverage"]),
                _fmt(r["availability"]), r["n_obs"],
            ])


def _fmt(x) -> str:
    return "" if x != x else f"{x:.6f}"


def format_mc_tables(report: McReport) -> str:
    """Two text blocks: benchmark deviations from the total-effect target on
    retained support, then the proposed estimators against their own targets."""
    lines = [
        f"Design {report.design}, N={report.n_units}, R={report.n_reps}, "
        f"seed={report.seed}",
        "",
        "Spillover-ignorant benchmarks, deviation from the DTE target",
        f"{'Method':<20}{'Bias':>10}{'RMSE':>10}{'Coverage':>10}{'Avail':>8}",
    ]
    for est in BENCH_METHODS.values():
        r = report.row(est)
        lines.append(f"{est:<20}{r['bias']:>10.3f}{r['rmse']:>10.3f}"
                     f"{r['coverage']:>10.3f}{r['availability']:>8.3f}")
    lines += [
        "",
        "Proposed estimators, bias against retained-support targets",
        f"{'Method':<20}{'Bias':>10}{'RMSE':>10}{'Coverage':>10}{'Avail':>8}",
    ]
    for est in PROPOSED_METHODS.values():
        r = report.row(est)
        lines.append(f"{est:<20}{r['bias']:>10.3f}{r['rmse']:>10.3f}"
                     f"{r['coverage']:>10.3f}{r['availability']:>8.3f}")
    if report.failures:
        lines += ["", f"Replication failures: {len(report.failures)}"]
        for f in report.failures[:10]:
            lines.append(f"  rep {f['replication']}: {f['error']}")
    lines.append("")
    return "\n".join(lines)


def noise_scaling_errors(cfg: DgpConfig, scales, seed: int = 0) -> dict:
    """Absolute event-time errors of the proposed estimators as the noise
    scale shrinks, holding every other draw fixed via a common seed.

    Returns {component: array of max-abs errors, one per scale}; used by the
    vanishing-noise oracle, whose log-log slope against the scales must be 1.
    """
    out = {DSE: [], CSE: [], DTE: []}
    for s in scales:
        cfg_s = replace(cfg, noise_scale=float(s))
        ds, path, po = generate_dgp(cfg_s, np.random.SeedSequence(seed))
        res = estimate_components(ds, path, m_n=cfg.m_n,
                                  event_times=cfg.event_times,
                                  pre_period_cse=False, diagnostics=False)
        truth = finite_population_truth(po, ds, res)
        for comp in (DSE, CSE, DTE):
            errs = [abs(res.aggregates[(comp, l)].value - truth.events[(comp, l)])
                    for l in cfg.event_times
                    if res.aggregates[(comp, l)].admissible]
            out[comp].append(max(errs))
    return {k: np.array(v) for k, v in out.items()}
