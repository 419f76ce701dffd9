"""Command-line front end: estimate | simulate | benchmark | exposure.

Configuration comes from an optional TOML file (sections mirroring the module
names) with full flag override; flags win over the file.  Every run writes a
``run.json`` echoing the effective configuration and seed, and rerunning from
that file reproduces all artifacts bitwise in single-threaded mode.

Exit codes: 0 success, 2 validation error, 3 inference failure (singular
system or empty admissible support), 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .estimators import (
    CS_BENCH, CSE, CSE_NEVER, CSE_NEVER_CHANGE, DID_BENCH, DSE, DTE, LOCAL_PDE,
    EstimationError, estimate_components,
)
from .exposure import (
    ExposureConfig, ExposureError, NetworkSpec, build_exposure, line_network,
    read_network_csv,
)
from .inference import (
    InferenceError, ShacConfig, benchmark_influence_rows, build_stacked_system,
    cuberoot_bandwidth, iid_covariance, influence_rows, pointwise_ci,
    shac_covariance, simultaneous_band,
)
from .panel import PanelError, load_panel
from .simulate import (
    DgpConfig, format_mc_tables, mc_report_to_csv, run_monte_carlo,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFERENCE = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(code, kind, message):
    raise CliError(code, kind, message)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

DEFAULTS = {
    "panel": {"path": "", "delta": 0, "schema": {}},
    "network": {"path": "", "rule": "auto", "cutoff": 0.0, "row_normalize": False},
    "exposure": {"kernel": {}, "bins": [], "doses": {}},
    "estimation": {"min_cell": 5, "event_max": 2, "first_stage": "saturated",
                   "spline_df": 4, "pre_period_cse": True, "diagnostics": True},
    "inference": {"kernel": "bartlett", "bandwidth": "n_cuberoot", "alpha": 0.05,
                  "band_draws": 2000, "seed": 0, "distance": "line",
                  "coordinates": ""},
    "simulate": {"design": "dgp1", "n": 200, "reps": 1000, "seed": 0,
                 "min_cell": 5, "keep_records": False},
    "threads": 1,
}


def _load_config_file(path):
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as exc:
            _fail(EXIT_IO, "config_unreadable", f"cannot read config {path}: {exc}")
        except ValueError as exc:
            _fail(EXIT_VALIDATION, "config_invalid", f"bad JSON config: {exc}")
        return payload.get("config", payload)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        _fail(EXIT_IO, "config_unreadable", f"cannot read config {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        _fail(EXIT_VALIDATION, "config_invalid", f"bad TOML config: {exc}")


def _merge(base, extra):
    out = dict(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def effective_config(args) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    if args.config:
        if not os.path.exists(args.config):
            _fail(EXIT_VALIDATION, "config_not_found", f"config not found: {args.config}")
        cfg = _merge(cfg, _load_config_file(args.config))
    flag_map = [
        ("panel", "panel", "path"), ("network", "network", "path"),
        ("delta", "panel", "delta"), ("min_cell", "estimation", "min_cell"),
        ("event_max", "estimation", "event_max"),
        ("first_stage", "estimation", "first_stage"),
        ("alpha", "inference", "alpha"), ("bandwidth", "inference", "bandwidth"),
        ("kernel", "inference", "kernel"), ("seed", "inference", "seed"),
        ("design", "simulate", "design"), ("n", "simulate", "n"),
        ("reps", "simulate", "reps"),
    ]
    for flag, section, key in flag_map:
        value = getattr(args, flag, None)
        if value is not None:
            cfg[section][key] = value
    if getattr(args, "seed", None) is not None:
        cfg["simulate"]["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg["threads"] = args.threads
    if getattr(args, "min_cell", None) is not None:
        cfg["simulate"]["min_cell"] = args.min_cell
    return cfg


def _validate_common(cfg, need_panel=True, need_network=True):
    if need_panel:
        if not cfg["panel"]["path"]:
            _fail(EXIT_VALIDATION, "panel_missing", "no panel file given (--panel)")
        if not os.path.exists(cfg["panel"]["path"]):
            _fail(EXIT_VALIDATION, "panel_not_found",
                  f"panel not found: {cfg['panel']['path']}")
    if need_network:
        if not cfg["network"]["path"]:
            _fail(EXIT_VALIDATION, "network_missing", "no network file given (--network)")
        if not os.path.exists(cfg["network"]["path"]):
            _fail(EXIT_VALIDATION, "network_not_found",
                  f"network not found: {cfg['network']['path']}")
    if not (0 < cfg["inference"]["alpha"] < 1):
        _fail(EXIT_VALIDATION, "bad_alpha", "alpha must lie in (0, 1)")
    if cfg["estimation"]["min_cell"] < 1:
        _fail(EXIT_VALIDATION, "bad_min_cell", "min cell count must be >= 1")


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------

def _exposure_config(cfg) -> ExposureConfig:
    section = cfg["exposure"]
    bins = section.get("bins") or []
    if not bins:
        return ExposureConfig.binary()
    try:
        thresholds = tuple(float(b[0]) for b in bins)
        labels = tuple(str(b[1]) for b in bins)
        return ExposureConfig(
            thresholds=thresholds, labels=labels,
            doses=section.get("doses") or {},
            kernel=section.get("kernel") or None,
        )
    except (TypeError, IndexError):
        _fail(EXIT_VALIDATION, "bad_bins",
              'exposure.bins must be [[threshold, "label"], ...]')


def _load_network(cfg, ds) -> NetworkSpec:
    section = cfg["network"]
    cutoff = float(section.get("cutoff") or 0) or None
    try:
        return read_network_csv(
            section["path"], kind=section.get("rule", "auto"),
            cutoff=cutoff, row_normalize=bool(section.get("row_normalize")),
            unit_ids=ds.unit_ids,
        )
    except ExposureError as exc:
        _fail(EXIT_VALIDATION, "bad_network", str(exc))


def _shac_config(cfg, ds, net) -> ShacConfig:
    inf = cfg["inference"]
    bw = inf["bandwidth"]
    if isinstance(bw, str):
        if bw != "n_cuberoot":
            _fail(EXIT_VALIDATION, "bad_bandwidth",
                  'bandwidth must be a number or "n_cuberoot"')
        bw = float(cuberoot_bandwidth(ds.n_units))
    source = inf.get("distance", "line")
    if source == "line":
        positions = (net.positions if net is not None and net.positions is not None
                     else np.arange(ds.n_units, dtype=float))
        return ShacConfig(bandwidth=bw, kernel=inf["kernel"], positions=positions)
    if source == "matrix":
        if net is None or net.distances is None:
            _fail(EXIT_VALIDATION, "no_distance_matrix",
                  "inference.distance = 'matrix' needs a distance-matrix network")
        return ShacConfig(bandwidth=bw, kernel=inf["kernel"], matrix=net.distances)
    if source == "coordinates":
        path = inf.get("coordinates", "")
        if not path or not os.path.exists(path):
            _fail(EXIT_VALIDATION, "coordinates_not_found",
                  "inference.distance = 'coordinates' needs inference.coordinates")
        coords = _read_coordinates(path, ds.unit_ids)
        return ShacConfig(bandwidth=bw, kernel=inf["kernel"], coords=coords)
    _fail(EXIT_VALIDATION, "bad_distance", f"unknown distance source {source!r}")


def _read_coordinates(path, unit_ids):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    table = {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}
    missing = [u for u in unit_ids if str(u) not in table]
    if missing:
        _fail(EXIT_VALIDATION, "coordinates_incomplete",
              f"coordinates missing for units {missing[:5]}")
    return np.array([table[str(u)] for u in unit_ids])


def _write_run_json(out_dir, command, cfg):
    payload = {"command": command, "config": cfg, "version": __version__}
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(cfg, out_dir) -> int:
    _validate_common(cfg)
    est_cfg = cfg["estimation"]
    ds = load_panel(cfg["panel"]["path"], schema=cfg["panel"].get("schema") or None,
                    anticipation=int(cfg["panel"]["delta"]))
    if est_cfg["first_stage"] == "structured" and ds.basis is None:
        _fail(EXIT_VALIDATION, "basis_missing",
              "structured first stage requires basis columns (v1..vk) in the panel")
    net = _load_network(cfg, ds)
    exp_cfg = _exposure_config(cfg)
    path = build_exposure(ds, net, exp_cfg)
    event_times = tuple(range(0, int(est_cfg["event_max"]) + 1))
    results = estimate_components(
        ds, path, m_n=int(est_cfg["min_cell"]), event_times=event_times,
        first_stage=est_cfg["first_stage"], spline_df=int(est_cfg["spline_df"]),
        pre_period_cse=bool(est_cfg["pre_period_cse"]),
        diagnostics=bool(est_cfg["diagnostics"]),
    )

    shac = _shac_config(cfg, ds, net)
    inf = cfg["inference"]
    interval = {}
    band = {}
    try:
        system = build_stacked_system(ds, path, results.fit, results,
                                      include_diagnostics=bool(est_cfg["diagnostics"]))
        rows = influence_rows(system)
        for comp in (DSE, CSE, DTE, CSE_NEVER, CSE_NEVER_CHANGE):
            keys, values, mat = rows.columns(comp)
            if not keys:
                continue
            cov = shac_covariance(mat, keys, shac)
            se, lo, hi = pointwise_ci(values, cov, alpha=inf["alpha"])
            for j, key in enumerate(keys):
                interval[(comp, key)] = (float(se[j]), float(lo[j]), float(hi[j]))
            event_cols = [j for j, k in enumerate(keys) if k[0] == "event"]
            if comp in (DSE, CSE, DTE) and event_cols:
                sub = shac_covariance(mat[:, event_cols],
                                      [keys[j] for j in event_cols], shac)
                if np.any(np.diag(sub.matrix) > 0):
                    mult, blo, bhi = simultaneous_band(
                        values[event_cols], sub, alpha=inf["alpha"],
                        n_draws=int(inf["band_draws"]), seed=int(inf["seed"]))
                    for i, j in enumerate(event_cols):
                        band[(comp, keys[j])] = (float(blo[i]), float(bhi[i]))
    except InferenceError as exc:
        _fail(EXIT_INFERENCE, "inference_failed", str(exc))

    _write_estimates_csv(os.path.join(out_dir, "estimates.csv"), results,
                         interval, band)
    _write_support_csv(os.path.join(out_dir, "support.csv"), results)
    _write_run_json(out_dir, "estimate", cfg)
    return EXIT_OK


def _estimate_rows(results, interval, band):
    rows = []

    def row(component, scope, g, l, t, value, admissible, key=None, extra=None):
        se = lo = hi = blo = bhi = None
        if key is not None and key in interval:
            se, lo, hi = interval[key]
        if key is not None and key in band:
            blo, bhi = band[key]
        payload = {
            "component": component, "scope": scope,
            "g": "" if g is None else g, "l": "" if l is None else l,
            "t": "" if t is None else t,
            "value": value, "admissible": int(bool(admissible)),
            "se": se, "ci_lo": lo, "ci_hi": hi, "band_lo": blo, "band_hi": bhi,
        }
        payload.update(extra or {})
        rows.append(payload)

    for est in results.cells:
        key = (est.component, ("cell", est.g, est.l))
        row(est.component, "cell", est.g, est.l, est.t, est.value,
            est.admissible, key,
            {"target_mass_retained": est.target_mass_retained,
             "cohort_mass": est.cohort_mass, "n_cohort": est.n_cohort})
    for (comp, l), agg in sorted(results.aggregates.items(),
                                 key=lambda kv: (kv[0][1], kv[0][0])):
        row(comp, "event", None, l, None, agg.value, agg.admissible,
            (comp, ("event", l)),
            {"cohorts": "|".join(str(g) for g in agg.cohorts)})
    for est in results.diagnostics:
        if est.component == CSE_NEVER:
            key = (CSE_NEVER, ("t", est.t))
        else:
            key = (CSE_NEVER_CHANGE, ("g", est.g))
        row(est.component, "diagnostic", est.g, None, est.t, est.value,
            est.admissible, key)
    return rows


ESTIMATE_FIELDS = ["component", "scope", "g", "l", "t", "value", "admissible",
                   "se", "ci_lo", "ci_hi", "band_lo", "band_hi",
                   "target_mass_retained", "cohort_mass", "n_cohort", "cohorts"]


def _write_estimates_csv(path, results, interval, band):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ESTIMATE_FIELDS, restval="")
        writer.writeheader()
        for payload in _estimate_rows(results, interval, band):
            writer.writerow({k: _fmt(v) for k, v in payload.items()})


def _write_support_csv(path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "l", "stratum", "state_target", "state_base",
                         "n_cohort", "n_never", "w_cohort", "w_never",
                         "retained", "all_mass_retained", "retained_mass"])
        for est in results.cells:
            if est.component != DSE or est.support is None:
                continue
            sup = est.support
            for retained, cells in ((1, sup.cells), (0, sup.dropped)):
                for c in cells:
                    writer.writerow([
                        sup.g, sup.l, c.key[0], c.key[1], c.key[2],
                        c.n_g, c.n_inf, repr(c.w_g), repr(c.w_inf), retained,
                        int(sup.all_mass_retained), repr(sup.retained_mass),
                    ])


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def cmd_benchmark(cfg, out_dir) -> int:
    _validate_common(cfg)
    est_cfg = cfg["estimation"]
    ds = load_panel(cfg["panel"]["path"], schema=cfg["panel"].get("schema") or None,
                    anticipation=int(cfg["panel"]["delta"]))
    net = _load_network(cfg, ds)
    path = build_exposure(ds, net, _exposure_config(cfg))
    event_times = tuple(range(0, int(est_cfg["event_max"]) + 1))
    results = estimate_components(
        ds, path, m_n=int(est_cfg["min_cell"]), event_times=event_times,
        first_stage=est_cfg["first_stage"], spline_df=int(est_cfg["spline_df"]),
        pre_period_cse=False, diagnostics=False,
    )
    cells = sorted({(g, l) for l, gs in results.g_star.items() for g in gs})
    if not cells:
        _fail(EXIT_INFERENCE, "no_admissible_cells",
              "no cohort-event cells pass the admissibility rules")
    shac = _shac_config(cfg, ds, net)
    alpha = cfg["inference"]["alpha"]
    try:
        rows = benchmark_influence_rows(ds, cells, results.g_star)
    except InferenceError as exc:
        _fail(EXIT_INFERENCE, "inference_failed", str(exc))
    keys, values, mat = rows.columns(DID_BENCH)
    cov_shac = shac_covariance(mat, keys, shac)
    cov_iid = iid_covariance(mat, keys)

    with open(os.path.join(out_dir, "benchmarks.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "scope", "g", "l", "value", "se",
                         "ci_lo", "ci_hi", "dte", "gap"])
        for comp, cov in ((DID_BENCH, cov_shac), (CS_BENCH, cov_iid)):
            se, lo, hi = pointwise_ci(values, cov, alpha=alpha)
            for j, key in enumerate(keys):
                if key[0] == "cell":
                    scope, g, l = "cell", key[1], key[2]
                    dte = results.cell(DTE, g, l)
                    dte_value = dte.value if dte and dte.admissible else None
                else:
                    scope, g, l = "event", "", key[1]
                    agg = results.aggregates.get((DTE, key[1]))
                    dte_value = agg.value if agg and agg.admissible else None
                gap = None if dte_value is None else values[j] - dte_value
                writer.writerow([comp, scope, g, l, repr(float(values[j])),
                                 repr(float(se[j])), repr(float(lo[j])),
                                 repr(float(hi[j])),
                                 "" if dte_value is None else repr(float(dte_value)),
                                 "" if gap is None else repr(float(gap))])
    _write_run_json(out_dir, "benchmark", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# exposure
# ---------------------------------------------------------------------------

def cmd_exposure(cfg, out_dir) -> int:
    _validate_common(cfg)
    ds = load_panel(cfg["panel"]["path"], schema=cfg["panel"].get("schema") or None,
                    anticipation=int(cfg["panel"]["delta"]))
    net = _load_network(cfg, ds)
    path = build_exposure(ds, net, _exposure_config(cfg))
    with open(os.path.join(out_dir, "exposure.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "period", "raw", "state", "dose"])
        for i in range(ds.n_units):
            for t in range(1, ds.n_periods + 1):
                code = path.state[i, t - 1]
                writer.writerow([
                    ds.unit_ids[i], ds.period_labels[t - 1],
                    repr(float(path.raw[i, t - 1])),
                    path.labels[code], repr(float(path.dose_values[code])),
                ])
    _write_run_json(out_dir, "exposure", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, out_dir) -> int:
    sim = cfg["simulate"]
    if int(sim["reps"]) < 1:
        _fail(EXIT_VALIDATION, "bad_reps", "--reps must be >= 1")
    try:
        dgp = DgpConfig(design=sim["design"], n=int(sim["n"]),
                        seed=int(sim["seed"]), m_n=int(sim["min_cell"]),
                        alpha=float(cfg["inference"]["alpha"]))
    except ValueError as exc:
        _fail(EXIT_VALIDATION, "bad_design", str(exc))
    report = run_monte_carlo(dgp, int(sim["reps"]),
                             keep_records=bool(sim["keep_records"]))
    mc_report_to_csv(report, os.path.join(out_dir, "mc_report.csv"))
    with open(os.path.join(out_dir, "mc_tables.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_mc_tables(report))
    if sim["keep_records"] and report.records is not None:
        with open(os.path.join(out_dir, "mc_records.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["replication", "estimator", "event_time",
                             "error", "hit", "se"])
            for r in report.records:
                writer.writerow([r["replication"], r["estimator"],
                                 r["event_time"], repr(r["error"]),
                                 int(r["hit"]), repr(r["se"])])
    _write_run_json(out_dir, "simulate", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spilldid",
        description="Staggered DID with network spillovers: switching, "
                    "spillover, and total effects with spatial HAC inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "estimate DSE/CSE/DTE with intervals and bands"),
        ("simulate", "run a Monte Carlo design and emit report tables"),
        ("benchmark", "exposure-ignorant DID and group-time ATT benchmarks"),
        ("exposure", "write the raw index, state, and dose per unit-period"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--panel", help="long-format panel CSV")
        p.add_argument("--network", help="network CSV (edge list or distance matrix)")
        p.add_argument("--config", help="TOML config file (or a run.json to replay)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="seed for bands / simulation")
        p.add_argument("--threads", type=int, help="worker count (1 = reference mode)")
        p.add_argument("--alpha", type=float, help="interval level (default 0.05)")
        p.add_argument("--bandwidth", help='spatial HAC bandwidth or "n_cuberoot"')
        p.add_argument("--kernel", help="spatial HAC kernel (bartlett | uniform)")
        p.add_argument("--min-cell", dest="min_cell", type=int,
                       help="minimum cell count for admissibility")
        p.add_argument("--delta", type=int, help="anticipation window")
        p.add_argument("--event-max", dest="event_max", type=int,
                       help="largest event time to report")
        p.add_argument("--first-stage", dest="first_stage",
                       choices=("saturated", "structured"))
        if name == "simulate":
            p.add_argument("--design", choices=("dgp1", "dgp2", "dgp3"))
            p.add_argument("--n", type=int, help="units per replication")
            p.add_argument("--reps", type=int, help="replication count")
    return parser


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "exposure": cmd_exposure,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        try:
            bw = cfg["inference"]["bandwidth"]
            if isinstance(bw, str) and bw != "n_cuberoot":
                cfg["inference"]["bandwidth"] = float(bw)
        except ValueError:
            _fail(EXIT_VALIDATION, "bad_bandwidth",
                  'bandwidth must be a number or "n_cuberoot"')
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg, out_dir)
    except CliError as exc:
        json.dump({"error": exc.kind, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return exc.code
    except (PanelError, ExposureError, EstimationError) as exc:
        json.dump({"error": "validation", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_VALIDATION
    except InferenceError as exc:
        json.dump({"error": "inference", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_INFERENCE
    except OSError as exc:
        json.dump({"error": "io", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
