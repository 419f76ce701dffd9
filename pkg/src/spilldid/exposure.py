"""Exposure construction: raw spillover indices, coarsened states, two-date states.

A network (dense weights, or distances plus a cutoff rule) and the adoption
vector define a raw exposure index per unit-period,

    raw[i, t] = sum_{j != i} w_ij * psi(t - G_j) * 1{t >= G_j},

which a coarsening map turns into a finite labeled state per unit-period with
label "0" reserved for exactly-zero exposure.  A dose score q(label), with
q("0") = 0, attaches a numeric dose to each state for simulation designs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .panel import NEVER, PanelDataset

ZERO_LABEL = "0"


class ExposureError(ValueError):
    """Raised on invalid network, coarsening, or dose configuration."""


# ---------------------------------------------------------------------------
# Network specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkSpec:
    """Spillover network, given directly as weights or as distances + cutoff.

    Exactly one of ``weights`` and ``distances`` is set.  With distances, the
    rule is: neighbors are units within ``cutoff``; weights are the 0/1
    neighbor indicators, row-normalized to shares when ``row_normalize``.
    ``positions`` optionally carries scalar locations (used for line networks
    and available to spatial-HAC distance construction).
    """

    weights: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None
    cutoff: Optional[float] = None
    row_normalize: bool = False
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.weights is None) == (self.distances is None):
            raise ExposureError("provide exactly one of weights or distances")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ExposureError("weights must be a square matrix")
            if np.any(np.diag(w) != 0):
                raise ExposureError("self-weights w[i][i] must be zero")
            object.__setattr__(self, "weights", w)
        else:
            d = np.asarray(self.distances, dtype=float)
            if d.ndim != 2 or d.shape[0] != d.shape[1]:
                raise ExposureError("distances must be a square matrix")
            if np.any(np.diag(d) != 0):
                raise ExposureError("distances must have a zero diagonal")
            if not np.allclose(d, d.T):
                raise ExposureError("distances must be symmetric")
            if self.cutoff is None or self.cutoff <= 0:
                raise ExposureError("distance networks need a cutoff > 0")
            object.__setattr__(self, "distances", d)
        if self.positions is not None:
            object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))

    @property
    def n_units(self) -> int:
        m = self.weights if self.weights is not None else self.distances
        return m.shape[0]

    def effective_weights(self) -> np.ndarray:
        """Dense weight matrix after applying any distance-cutoff rule."""
        if self.weights is not None:
            return self.weights
        w = (self.distances <= self.cutoff).astype(float)
        np.fill_diagonal(w, 0.0)
        if self.row_normalize:
            rowsum = w.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore"):
                w = np.where(rowsum > 0, w / rowsum, 0.0)
        return w


def line_network(n: int) -> NetworkSpec:
    """Open line on integer positions 1..n, nearest neighbors, row-normalized.

    Interior units split weight 0.5/0.5 between their two neighbors; the two
    endpoints put weight 1 on their single neighbor, so the raw index is the
    adopted share of neighbors in every position.
    """
    if n < 2:
        raise ExposureError("line network needs at least 2 units")
    w = np.zeros((n, n))
    idx = np.arange(n - 1)
    w[idx, idx + 1] = 1.0
    w[idx + 1, idx] = 1.0
    rowsum = w.sum(axis=1, keepdims=True)
    return NetworkSpec(weights=w / rowsum, positions=np.arange(1, n + 1, dtype=float))


# ---------------------------------------------------------------------------
# Coarsening and dose configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExposureConfig:
    """Temporal kernel, coarsening bins, and dose scores.

    ``thresholds``/``labels`` partition (0, top] into left-open right-closed
    bins: with thresholds (0.5, 1.0) and labels ("low", "high"), values in
    (0, 0.5] map to "low" and (0.5, 1] to "high".  A final threshold of
    ``inf`` makes the top bin unbounded.  Zero raw exposure always maps to the
    reserved label "0".  ``kernel`` is None for psi == 1, or a lag -> value
    table (missing lags contribute 0).  ``doses`` maps labels to scores and
    must satisfy q("0") = 0.
    """

    thresholds: tuple
    labels: tuple
    doses: dict = field(default_factory=dict)
    kernel: Optional[dict] = None

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if len(th) != len(self.labels):
            raise ExposureError("one label per threshold required")
        if len(th) == 0:
            raise ExposureError("at least one coarsening bin is required")
        if any(b <= a for a, b in zip(th, th[1:])) or th[0] <= 0:
            raise ExposureError("thresholds must be positive and strictly increasing")
        if len(set(self.labels)) != len(self.labels) or ZERO_LABEL in self.labels:
            raise ExposureError('labels must be distinct and must not include "0"')
        doses = {ZERO_LABEL: 0.0}
        for lab, q in (self.doses or {}).items():
            doses[str(lab)] = float(q)
        if doses[ZERO_LABEL] != 0.0:
            raise ExposureError('the dose of label "0" must be 0')
        unknown = set(doses) - set(self.labels) - {ZERO_LABEL}
        if unknown:
            raise ExposureError(f"doses given for unknown labels: {sorted(unknown)}")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "doses", doses)
        if self.kernel is not None:
            object.__setattr__(
                self, "kernel", {int(k): float(v) for k, v in self.kernel.items()}
            )

    @classmethod
    def three_state(cls) -> "ExposureConfig":
        """0 / low / high states on (0, 0.5], (0.5, 1] with doses 0, 1, 2."""
        return cls(thresholds=(0.5, 1.0), labels=("low", "high"),
                   doses={"low": 1.0, "high": 2.0})

    @classmethod
    def binary(cls, label: str = "positive", dose: float = 1.0) -> "ExposureConfig":
        """0 / positive states: any positive raw exposure is one state."""
        return cls(thresholds=(np.inf,), labels=(label,), doses={label: dose})

    @property
    def all_labels(self) -> tuple:
        return (ZERO_LABEL,) + self.labels

    def dose_vector(self) -> np.ndarray:
        """Dose scores indexed by state code (code 0 is the zero state)."""
        return np.array([self.doses.get(lab, 0.0) for lab in self.all_labels])

    def psi(self, lag: np.ndarray) -> np.ndarray:
        """Temporal kernel evaluated at nonnegative event-time lags."""
        lag = np.asarray(lag)
        if self.kernel is None:
            return np.ones(lag.shape)
        out = np.zeros(lag.shape, dtype=float)
        for k, v in self.kernel.items():
            out[lag == k] = v
        return out


def dose(label: str, cfg: ExposureConfig) -> float:
    """Dose score q(label); unknown labels raise."""
    if label not in cfg.doses:
        raise ExposureError(f"unknown exposure label {label!r}")
    return cfg.doses[label]


# ---------------------------------------------------------------------------
# Exposure paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExposurePath:
    """Raw index and coarsened state per unit-period.

    ``state`` holds integer codes into ``labels`` (code 0 = zero exposure);
    ``label_matrix`` materializes the string labels when needed.
    """

    raw: np.ndarray
    state: np.ndarray
    labels: tuple
    dose_values: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def label_matrix(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=object)[self.state]

    def dose_matrix(self) -> np.ndarray:
        return self.dose_values[self.state]


def raw_exposure(ds: PanelDataset, net: NetworkSpec, cfg: ExposureConfig) -> np.ndarray:
    """Raw index raw[i, t] = sum_j w_ij psi(t - G_j) 1{t >= G_j}.

    Exposure-only units contribute through their own adoption time; units with
    no treated neighbors have exactly zero exposure in every period.
    """
    if net.n_units != ds.n_units:
        raise ExposureError(
            f"network has {net.n_units} units, panel has {ds.n_units}"
        )
    w = net.effective_weights()
    t_grid = np.arange(1, ds.n_periods + 1)
    treated = ds.cohort != NEVER
    # phi[j, t] = psi(t - G_j) 1{t >= G_j}; never-treated rows stay zero
    lag = t_grid[None, :] - ds.cohort[:, None]
    on = treated[:, None] & (lag >= 0)
    phi = np.zeros((ds.n_units, ds.n_periods))
    phi[on] = cfg.psi(lag[on])
    return w @ phi


def coarsen(raw: np.ndarray, cfg: ExposureConfig) -> np.ndarray:
    """Map the raw index to state codes: 0 iff raw == 0, else the bin index.

    Raises when a value exceeds the top threshold and the bins do not cover
    (0, inf).
    """
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < 0):
        raise ExposureError("raw exposure must be nonnegative")
    top = cfg.thresholds[-1]
    if np.isfinite(top) and np.any(raw > top * (1 + 1e-12)):
        raise ExposureError(
            f"raw exposure {raw.max():g} exceeds the top bin edge {top:g}"
        )
    # side='left' puts values equal to a threshold in the lower bin: (a, b]
    state = np.searchsorted(np.asarray(cfg.thresholds), raw, side="left") + 1
    state[raw == 0] = 0
    return np.minimum(state, len(cfg.labels)).astype(np.int64)


def build_exposure(ds: PanelDataset, net: NetworkSpec, cfg: ExposureConfig) -> ExposurePath:
    """Construct the full exposure path (raw index plus coarsened states)."""
    raw = raw_exposure(ds, net, cfg)
    state = coarsen(raw, cfg)
    return ExposurePath(
        raw=raw, state=state, labels=cfg.all_labels, dose_values=cfg.dose_vector()
    )


def two_date_state(
    path_or_state, g: int, l: int, delta: int = 0
) -> np.ndarray:
    """Per-unit pair (H[i, g+l], H[i, t0(g)]) as an (N, 2) code array."""
    state = path_or_state.state if isinstance(path_or_state, ExposurePath) else path_or_state
    t = g + l
    t0 = g - delta - 1
    t_max = state.shape[1]
    if not (1 <= t <= t_max) or not (1 <= t0 <= t_max):
        raise ExposureError(
            f"two-date state needs 1 <= t0={t0} and g+l={t} <= {t_max}"
        )
    return np.stack([state[:, t - 1], state[:, t0 - 1]], axis=1)


# ---------------------------------------------------------------------------
# Network CSV input
# ---------------------------------------------------------------------------

def read_network_csv(
    path,
    kind: str = "auto",
    cutoff: Optional[float] = None,
    row_normalize: bool = False,
    unit_ids: Optional[tuple] = None,
) -> NetworkSpec:
    """Read a network from CSV: an (i, j, weight) edge list or a dense
    distance matrix whose header row carries the unit ids.

    Edge lists become symmetric-as-given weight matrices (missing direction
    stays 0); matrices become distance networks and need ``cutoff``.  When
    ``unit_ids`` is given, rows/columns are aligned to that unit order.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ExposureError(f"unreadable network file {path}: {exc}") from exc
    if not rows:
        raise ExposureError(f"{path}: empty network file")
    header = [c.strip() for c in rows[0]]
    if kind == "auto":
        kind = "edges" if len(header) == 3 and header[0].lower() in {"i", "unit", "from"} else "matrix"

    if kind == "edges":
        ids = unit_ids
        if ids is None:
            seen = []
            for r in rows[1:]:
                for u in (r[0], r[1]):
                    if u not in seen:
                        seen.append(u)
            ids = tuple(sorted(seen, key=lambda u: (len(u), u)))
        index = {str(u): k for k, u in enumerate(ids)}
        n = len(ids)
        w = np.zeros((n, n))
        for r in rows[1:]:
            if len(r) < 3:
                raise ExposureError(f"{path}: edge rows need (i, j, weight)")
            i, j = index.get(r[0].strip()), index.get(r[1].strip())
            if i is None or j is None:
                raise ExposureError(f"{path}: edge references unknown unit {r[0]!r} or {r[1]!r}")
            w[i, j] = float(r[2])
        np.fill_diagonal(w, 0.0)
        return NetworkSpec(weights=w)

    # dense matrix: header = [unit, id1..idn], body rows = [id, d1..dn]
    ids = tuple(header[1:])
    n = len(ids)
    mat = np.zeros((n, n))
    row_ids = []
    for r in rows[1:]:
        if len(r) != n + 1:
            raise ExposureError(f"{path}: matrix rows need a row id plus {n} values")
        row_ids.append(r[0].strip())
        mat[len(row_ids) - 1, :] = [float(x) for x in r[1:]]
    if len(row_ids) != n:
        raise ExposureError(f"{path}: matrix must be {n}x{n} to match the header ids")
    if unit_ids is not None:
        want = [str(u) for u in unit_ids]
        have = [str(u) for u in ids]
        if have != want:
            if sorted(have) != sorted(want):
                raise ExposureError(f"{path}: matrix unit ids do not match the panel")
            order = [have.index(u) for u in want]
            mat = mat[np.ix_(order, order)]
    return NetworkSpec(distances=mat, cutoff=cutoff, row_normalize=row_normalize)
