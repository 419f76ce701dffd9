"""Balanced panel container with adoption cohorts, analysis weights, and strata.

The panel is the base object for every estimator in this package: a balanced
unit-by-period outcome matrix, a per-unit adoption time (``cohort``), positive
analysis weights, an optional finite covariate stratum, and an optional
continuous covariate basis used by the structured spillover first stage.

Periods are always remapped to consecutive integers ``1..T`` in ascending
calendar order; cohorts are remapped through the same mapping.  Never-treated
units carry the sentinel ``NEVER``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Cohort sentinel for never-treated units (no real cohort can be < 2).
NEVER = 0

CANONICAL_COLUMNS = ("unit", "period", "outcome", "cohort", "weight", "stratum")


class PanelError(ValueError):
    """Raised when a panel file or array violates the panel contract."""


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of a panel validation pass.

    ``errors`` is empty exactly when the dataset satisfies all invariants.
    Each entry is ``(code, where, message)`` with ``where`` a unit/period hint.
    """

    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class PanelDataset:
    """Immutable balanced panel.

    Attributes
    ----------
    outcome : (N, T) float array
        ``outcome[i, t-1]`` is Y_it for remapped periods t = 1..T.
    cohort : (N,) int array
        First treated period per unit; ``NEVER`` (= 0) for never-treated.
    weight : (N,) float array
        Positive analysis weights.
    stratum : (N,) int array
        Codes into ``stratum_labels``; a single degenerate stratum by default.
    basis : (N, k) float array or None
        Covariate basis for the structured first stage.
    anticipation : int
        Anticipation window delta >= 0; baseline period is g - delta - 1.
    exposure_only : (N,) bool array
        Units that contribute to exposure construction but are excluded from
        target cohorts and from the never-treated comparison pool.
    """

    outcome: np.ndarray
    cohort: np.ndarray
    weight: np.ndarray
    stratum: np.ndarray
    stratum_labels: tuple
    basis: Optional[np.ndarray] = None
    basis_names: tuple = ()
    anticipation: int = 0
    exposure_only: Optional[np.ndarray] = None
    unit_ids: tuple = ()
    period_labels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=float))
        object.__setattr__(self, "cohort", np.asarray(self.cohort, dtype=np.int64))
        object.__setattr__(self, "weight", np.asarray(self.weight, dtype=float))
        object.__setattr__(self, "stratum", np.asarray(self.stratum, dtype=np.int64))
        if self.basis is not None:
            object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        if self.exposure_only is None:
            object.__setattr__(
                self, "exposure_only", np.zeros(self.outcome.shape[0], dtype=bool)
            )
        else:
            object.__setattr__(
                self, "exposure_only", np.asarray(self.exposure_only, dtype=bool)
            )
        if not self.unit_ids:
            object.__setattr__(
                self, "unit_ids", tuple(range(1, self.outcome.shape[0] + 1))
            )
        if not self.period_labels:
            object.__setattr__(
                self, "period_labels", tuple(range(1, self.outcome.shape[1] + 1))
            )
        report = validate(self)
        if not report.ok:
            code, where, msg = report.errors[0]
            raise PanelError(f"{code} at {where}: {msg}")

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[1]

    @property
    def is_never(self) -> np.ndarray:
        """Never-treated comparison pool (excludes exposure-only units)."""
        return (self.cohort == NEVER) & ~self.exposure_only

    @property
    def target_cohorts(self) -> np.ndarray:
        """Sorted adoption periods present among non-exposure-only units."""
        g = self.cohort[(self.cohort != NEVER) & ~self.exposure_only]
        return np.unique(g)

    def treatment_matrix(self) -> np.ndarray:
        """D_it = 1{t >= G_i}, zero for never-treated units."""
        t_grid = np.arange(1, self.n_periods + 1)
        treated = self.cohort != NEVER
        d = (t_grid[None, :] >= self.cohort[:, None]) & treated[:, None]
        return d.astype(np.int64)


def validate(ds: PanelDataset) -> ValidationReport:
    """Check the PanelDataset invariants without raising."""
    errors = []
    warnings = []
    n, t_max = ds.outcome.shape
    if n == 0 or t_max == 0:
        errors.append(("empty", "panel", "no units or no periods"))
        return ValidationReport(errors, warnings)
    if not np.all(np.isfinite(ds.outcome)):
        bad = np.argwhere(~np.isfinite(ds.outcome))[0]
        errors.append(
            ("non_numeric_outcome", f"unit {bad[0]}, period {bad[1] + 1}",
             "outcome is missing or not finite")
        )
    if np.any(ds.weight <= 0) or not np.all(np.isfinite(ds.weight)):
        i = int(np.argmin(ds.weight))
        errors.append(("bad_weight", f"unit {i}", "weights must be positive"))
    treated = ds.cohort != NEVER
    if np.any(treated & ((ds.cohort < 2) | (ds.cohort > t_max))):
        i = int(np.argmax(treated & ((ds.cohort < 2) | (ds.cohort > t_max))))
        errors.append(
            ("bad_cohort", f"unit {i}",
             f"cohort must be NEVER or in 2..{t_max} (no unit treated at t=1)")
        )
    if len(ds.weight) != n or len(ds.cohort) != n or len(ds.stratum) != n:
        errors.append(("shape", "panel", "per-unit fields must have length N"))
    if ds.basis is not None and ds.basis.shape[0] != n:
        errors.append(("shape", "basis", "basis must have one row per unit"))
    return ValidationReport(errors, warnings)


def baseline_period(g: int, delta: int = 0) -> int:
    """Baseline period for cohort ``g`` with anticipation window ``delta``.

    Returns g - delta - 1 and refuses baselines before the first period.
    """
    if g == NEVER:
        raise ValueError("baseline_period is undefined for never-treated units")
    t0 = g - delta - 1
    if t0 < 1:
        raise ValueError(
            f"baseline period {t0} for cohort {g} with delta={delta} is before period 1"
        )
    return t0


def long_difference(ds: PanelDataset, t: int, t0: int) -> np.ndarray:
    """Per-unit long difference Y_it - Y_it0 for 1 <= t0 < t <= T."""
    if not (1 <= t0 < t <= ds.n_periods):
        raise ValueError(f"need 1 <= t0 < t <= {ds.n_periods}, got t={t}, t0={t0}")
    return ds.outcome[:, t - 1] - ds.outcome[:, t0 - 1]


# ---------------------------------------------------------------------------
# Canonical long-format CSV input/output
# ---------------------------------------------------------------------------

_NEVER_SENTINELS = {"", "never", "inf", "nan", "na", "."}


def _parse_number(text: str, what: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise PanelError(f"non-numeric {what} at {where}: {text!r}") from None


def load_panel(path, schema: Optional[dict] = None, anticipation: int = 0) -> PanelDataset:
    """Load a balanced long-format CSV into a :class:`PanelDataset`.

    The canonical schema has columns ``unit, period, outcome, cohort`` plus
    optional ``weight``, ``stratum``, ``exposure_only``, and basis columns
    ``v1..vk``.  ``schema`` can rename any role, e.g.
    ``{"unit": "fips", "outcome": "mortality", "basis": ["pop", "docs"]}``.

    Cohort cells that are blank, "never", or a value after the last period are
    coded never-treated.  A missing weight column gives every unit weight 1.
    Periods (and cohorts with them) are remapped to 1..T in calendar order.
    """
    roles = {
        "unit": "unit", "period": "period", "outcome": "outcome",
        "cohort": "cohort", "weight": "weight", "stratum": "stratum",
        "exposure_only": "exposure_only",
    }
    basis_cols: Optional[Sequence[str]] = None
    if schema:
        basis_cols = schema.get("basis")
        roles.update({k: v for k, v in schema.items() if k in roles})

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise PanelError(f"unreadable file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PanelError(f"{path}: missing header row")
        header = list(reader.fieldnames)
        for role in ("unit", "period", "outcome", "cohort"):
            if roles[role] not in header:
                raise PanelError(f"{path}: required column {roles[role]!r} not found")
        if basis_cols is None:
            basis_cols = sorted(
                (c for c in header if c.startswith("v") and c[1:].isdigit()),
                key=lambda c: int(c[1:]),
            )
        rows = list(reader)
    if not rows:
        raise PanelError(f"{path}: no data rows")

    unit_col, period_col = roles["unit"], roles["period"]
    period_values = sorted({_parse_number(r[period_col], "period", r[unit_col]) for r in rows})
    period_map = {p: i + 1 for i, p in enumerate(period_values)}
    t_max = len(period_values)

    units = sorted({r[unit_col] for r in rows}, key=lambda u: (len(u), u))
    unit_map = {u: i for i, u in enumerate(units)}
    n = len(units)

    outcome = np.full((n, t_max), np.nan)
    seen = np.zeros((n, t_max), dtype=bool)
    cohort_raw = [None] * n
    weight = np.ones(n)
    stratum_raw = [None] * n
    exposure_only = np.zeros(n, dtype=bool)
    basis = np.zeros((n, len(basis_cols))) if basis_cols else None

    has_weight = roles["weight"] in header
    has_stratum = roles["stratum"] in header
    has_flag = roles["exposure_only"] in header

    for r in rows:
        i = unit_map[r[unit_col]]
        t = period_map[_parse_number(r[period_col], "period", r[unit_col])]
        if seen[i, t - 1]:
            raise PanelError(f"duplicate (unit, period) row: ({r[unit_col]}, {r[period_col]})")
        seen[i, t - 1] = True
        outcome[i, t - 1] = _parse_number(r[roles["outcome"]], "outcome", r[unit_col])
        cohort_raw[i] = r[roles["cohort"]].strip()
        if has_weight:
            weight[i] = _parse_number(r[roles["weight"]], "weight", r[unit_col])
        if has_stratum:
            stratum_raw[i] = r[roles["stratum"]].strip()
        if has_flag:
            exposure_only[i] = r[roles["exposure_only"]].strip() in {"1", "true", "True"}
        if basis_cols:
            for j, c in enumerate(basis_cols):
                basis[i, j] = _parse_number(r[c], f"basis column {c}", r[unit_col])

    if not seen.all():
        i, t = np.argwhere(~seen)[0]
        raise PanelError(f"unbalanced panel: unit {units[i]} missing period index {t + 1}")

    cohort = np.zeros(n, dtype=np.int64)
    for i, raw in enumerate(cohort_raw):
        if raw is None or raw.lower() in _NEVER_SENTINELS:
            cohort[i] = NEVER
            continue
        value = _parse_number(raw, "cohort", units[i])
        if value > period_values[-1]:
            cohort[i] = NEVER
        elif value in period_map:
            cohort[i] = period_map[value]
        else:
            raise PanelError(
                f"cohort {raw!r} of unit {units[i]} does not match any period"
            )

    if has_stratum:
        labels = sorted({s for s in stratum_raw if s not in (None, "")})
        label_map = {s: k for k, s in enumerate(labels)}
        stratum = np.array([label_map.get(s, 0) for s in stratum_raw], dtype=np.int64)
        stratum_labels = tuple(labels) if labels else ("all",)
    else:
        stratum = np.zeros(n, dtype=np.int64)
        stratum_labels = ("all",)

    return PanelDataset(
        outcome=outcome,
        cohort=cohort,
        weight=weight,
        stratum=stratum,
        stratum_labels=stratum_labels,
        basis=basis,
        basis_names=tuple(basis_cols or ()),
        anticipation=anticipation,
        exposure_only=exposure_only,
        unit_ids=tuple(units),
        period_labels=tuple(period_values),
    )


def _label_text(v) -> str:
    """Render a period label, collapsing integral floats to plain integers."""
    if isinstance(v, float) and v.is_integer():
        return repr(int(v))
    return repr(v)


def save_panel(ds: PanelDataset, path) -> None:
    """Write the canonical long-format CSV; floats use repr for exact round trips."""
    has_stratum = len(ds.stratum_labels) > 1
    has_flag = bool(ds.exposure_only.any())
    # canonical basis headers are always v1..vk; display names stay in memory
    basis_cols = [
        f"v{j + 1}" for j in range(0 if ds.basis is None else ds.basis.shape[1])
    ]
    header = ["unit", "period", "outcome", "cohort", "weight"]
    if has_stratum:
        header.append("stratum")
    if has_flag:
        header.append("exposure_only")
    header.extend(basis_cols)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_units):
            g = ds.cohort[i]
            cohort_text = "never" if g == NEVER else _label_text(ds.period_labels[g - 1])
            for t in range(1, ds.n_periods + 1):
                row = [
                    ds.unit_ids[i],
                    _label_text(ds.period_labels[t - 1]),
                    repr(float(ds.outcome[i, t - 1])),
                    cohort_text,
                    repr(float(ds.weight[i])),
                ]
                if has_stratum:
                    row.append(ds.stratum_labels[ds.stratum[i]])
                if has_flag:
                    row.append(int(ds.exposure_only[i]))
                if ds.basis is not None:
                    row.extend(repr(float(v)) for v in ds.basis[i])
                writer.writerow(row)
