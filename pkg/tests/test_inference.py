import numpy as np
import pytest

from spilldid.estimators import CSE, CSE_NEVER, DSE, DTE, estimate_components
from spilldid.inference import (
    CovarianceEstimate, InferenceError, ShacConfig, benchmark_influence_rows,
    build_stacked_system, cuberoot_bandwidth, iid_covariance, influence_rows,
    jacobian, jacobian_fd, line_shac, pointwise_ci, shac_covariance,
    shac_cross_covariance, simultaneous_band,
)
from spilldid.panel import NEVER

from conftest import make_panel, random_panel, zero_exposure


def fitted_system(rng, n=120, t=5, weighted=False, strata=0, first_stage="saturated",
                  basis_cols=0, m_n=2, diagnostics=True):
    ds, path = random_panel(rng, n=n, t=t, weighted=weighted, strata=strata,
                            basis_cols=basis_cols)
    res = estimate_components(ds, path, m_n=m_n, event_times=(0, 1),
                              first_stage=first_stage, pre_period_cse=False,
                              diagnostics=diagnostics)
    system = build_stacked_system(ds, path, res.fit, res,
                                  include_diagnostics=diagnostics)
    return ds, path, res, system


# ---------------------------------------------------------------------------
# Stacked system
# ---------------------------------------------------------------------------

def test_sample_moments_vanish_at_estimates(rng):
    for weighted in (False, True):
        _ds, _path, _res, system = fitted_system(rng, weighted=weighted)
        assert np.abs(system.mean_moments()).max() <= 1e-10


def test_sample_moments_vanish_structured(rng):
    _ds, _path, _res, system = fitted_system(
        rng, n=150, first_stage="structured", basis_cols=2, diagnostics=False)
    assert np.abs(system.mean_moments()).max() <= 1e-10


def test_system_dimension_bookkeeping(rng):
    _ds, _path, res, system = fitted_system(rng)
    n_src = sum(len(res.cell(DSE, g, l).support.codes)
                for (g, l) in system.meta["dse_cells"])
    n_fs = len(system.block["first_stage"]["keys"])
    n_tgt = len(system.meta["dse_cells"]) + len(system.meta["cse_cells"])
    n_diag = len(system.meta["diag_ts"])
    n_share = len(system.meta["cohorts"])
    assert system.dim == n_src + n_fs + n_tgt + n_diag + n_share


def test_analytic_jacobian_matches_finite_differences(rng):
    for kwargs in ({}, {"weighted": True, "strata": 2},
                   {"first_stage": "structured", "basis_cols": 1,
                    "diagnostics": False, "n": 150}):
        _ds, _path, _res, system = fitted_system(rng, **kwargs)
        a = jacobian(system)
        f = jacobian_fd(system)
        rel = np.abs(a - f) / np.maximum(1.0, np.abs(a))
        assert rel.max() <= 1e-6


def test_jacobian_share_and_target_entries(rng):
    ds, _path, res, system = fitted_system(rng)
    for g in system.meta["cohorts"]:
        j = system.index("share", g)
        assert system.jac[j, j] == -1.0
    for (g, l) in system.meta["dse_cells"]:
        j = system.index("dse_tgt", (g, l))
        w_g = ds.weight[(ds.cohort == g)].sum()
        np.testing.assert_allclose(system.jac[j, j], -w_g / ds.n_units, rtol=1e-12)


def test_perturbing_target_moves_only_its_block(rng):
    _ds, _path, _res, system = fitted_system(rng)
    (g, l) = system.meta["dse_cells"][0]
    j = system.index("dse_tgt", (g, l))
    theta = system.theta.copy()
    eps = 0.37
    theta[j] += eps
    base = system.mean_moments()
    moved = system.mean_moments(theta)
    delta = moved - base
    expected = system.jac[j, j] * eps
    np.testing.assert_allclose(delta[j], expected, rtol=1e-10)
    mask = np.ones_like(delta, dtype=bool)
    mask[j] = False
    assert np.abs(delta[mask]).max() <= 1e-12


def test_block_lower_triangular_jacobian(rng):
    _ds, _path, _res, system = fitted_system(rng)
    order = ["dse_src", "first_stage", "dse_tgt", "cse_tgt", "cse_inf", "share"]
    for hi, hi_name in enumerate(order):
        for lo_name in order[hi + 1:]:
            block = system.jac[system.block[hi_name]["slice"],
                               system.block[lo_name]["slice"]]
            assert not block.size or np.all(block == 0.0)


# ---------------------------------------------------------------------------
# Influence rows
# ---------------------------------------------------------------------------

def test_influence_rows_mean_zero(rng):
    _ds, _path, _res, system = fitted_system(rng, weighted=True)
    rows = influence_rows(system)
    assert np.abs(rows.rows.mean(axis=0)).max() <= 1e-10


def test_dte_row_is_sum_of_parts(rng):
    _ds, _path, _res, system = fitted_system(rng)
    rows = influence_rows(system)
    _, _, dse = rows.columns(DSE)
    keys_c, _, cse = rows.columns(CSE)
    keys_t, _, dte = rows.columns(DTE)
    # align on the event columns
    for comp_keys, comp_rows in ((keys_t, dte),):
        for j, key in enumerate(comp_keys):
            if key[0] != "event":
                continue
            jd = [k for k in range(len(keys_c)) if keys_c[k] == key]
            np.testing.assert_allclose(
                comp_rows[:, j],
                dse[:, [k for k, kk in enumerate(rows.columns(DSE)[0]) if kk == key][0]]
                + cse[:, jd[0]],
                atol=1e-12,
            )


def test_textbook_did_influence_function():
    # one cohort, one cell, unit weights: the DSE event row must reduce to
    # (N/n_g) D (delta - mean_g) - (N/n_inf) C (delta - mean_inf)
    rng = np.random.default_rng(5)
    n = 40
    cohort = np.array([2] * 15 + [NEVER] * 25)
    y = np.zeros((n, 2))
    y[:, 1] = rng.normal(size=n) + 0.8 * (cohort == 2)
    ds = make_panel(y, cohort)
    path = zero_exposure(ds)
    res = estimate_components(ds, path, m_n=1, event_times=(0,),
                              pre_period_cse=False, diagnostics=False)
    system = build_stacked_system(ds, path, res.fit, res, include_diagnostics=False)
    rows = influence_rows(system)
    keys, values, mat = rows.columns(DSE)
    j = keys.index(("event", 0))
    delta = y[:, 1] - y[:, 0]
    d = (cohort == 2).astype(float)
    c = (cohort == NEVER).astype(float)
    mean_g = delta[cohort == 2].mean()
    mean_i = delta[cohort == NEVER].mean()
    textbook = (n / 15) * d * (delta - mean_g) - (n / 25) * c * (delta - mean_i)
    np.testing.assert_allclose(mat[:, j], textbook, atol=1e-10)
    np.testing.assert_allclose(values[j], mean_g - mean_i, rtol=1e-12)


def test_singular_system_raises():
    bad = np.zeros((3, 3))
    from spilldid.inference import StackedSystem
    system = StackedSystem(labels=[("share", 2)] * 3, theta=np.zeros(3),
                           q=np.zeros((5, 3)), jac=bad, n_units=5,
                           block={"dse_tgt": {"keys": [], "index": {}},
                                  "cse_tgt": {"keys": [], "index": {}},
                                  "share": {"keys": [2], "index": {2: 0}}},
                           meta={"g_star": {0: (2,)}, "diag_ts": [],
                                 "cohorts": [2], "event_times": (0,),
                                 "anticipation": 0})
    system.block["dse_tgt"] = {"keys": [(2, 0)], "index": {(2, 0): 1}, "slice": slice(1, 2)}
    system.block["cse_tgt"] = {"keys": [(2, 0)], "index": {(2, 0): 2}, "slice": slice(2, 3)}
    with pytest.raises(InferenceError, match="singular"):
        influence_rows(system)


# ---------------------------------------------------------------------------
# Spatial HAC covariance
# ---------------------------------------------------------------------------

def test_shac_bandwidth_to_zero_is_self_pair_sandwich(rng):
    rows = rng.normal(size=(80, 3))
    cfg = line_shac(80, bandwidth=1e-9)
    cov = shac_covariance(rows, ("a", "b", "c"), cfg)
    np.testing.assert_array_equal(cov.matrix, iid_covariance(rows, "abc").matrix)


def test_shac_matches_direct_double_sum_oracle(rng):
    n = 35
    rows = rng.normal(size=(n, 2))
    pos = np.sort(rng.uniform(0, 30, size=n))
    cfg = ShacConfig(bandwidth=5.0, kernel="bartlett", positions=pos)
    cov = shac_covariance(rows, ("x", "y"), cfg)
    oracle = np.zeros((2, 2))
    for i in range(n):
        for j in range(n):
            u = abs(pos[i] - pos[j]) / 5.0
            k = max(0.0, 1.0 - u)
            oracle += k * np.outer(rows[i], rows[j])
    np.testing.assert_allclose(cov.matrix, oracle / n, rtol=1e-10)


def test_uniform_kernel_big_bandwidth_is_all_pairs(rng):
    n = 50
    rows = rng.normal(size=(n, 2))
    rows -= rows.mean(axis=0)           # mean-zero rows
    cfg = line_shac(n, bandwidth=10 * n, kernel="uniform")
    cov = shac_covariance(rows, ("x", "y"), cfg)
    # all-pairs sum of mean-zero rows: N * outer(mean, mean) + ... = 0
    total = rows.sum(axis=0)
    np.testing.assert_allclose(cov.matrix, np.outer(total, total) / n, atol=1e-10)


def test_shac_symmetry_and_cross_identity(rng):
    a = rng.normal(size=(60, 3))
    b = rng.normal(size=(60, 2))
    cfg = line_shac(60, bandwidth=4.0)
    cov = shac_covariance(a, ("1", "2", "3"), cfg)
    np.testing.assert_array_equal(cov.matrix, cov.matrix.T)
    cross = shac_cross_covariance(a, b, cfg)
    cross_t = shac_cross_covariance(b, a, cfg)
    np.testing.assert_allclose(cross, cross_t.T, rtol=1e-12)


def test_dte_variance_decomposition(rng):
    _ds, _path, _res, system = fitted_system(rng, n=100)
    rows = influence_rows(system)
    keys_d, _, mat_d = rows.columns(DSE)
    keys_c, _, mat_c = rows.columns(CSE)
    keys_t, _, mat_t = rows.columns(DTE)
    ev = [k for k in keys_t if k[0] == "event"]
    jd = [keys_d.index(k) for k in ev]
    jc = [keys_c.index(k) for k in ev]
    jt = [keys_t.index(k) for k in ev]
    cfg = line_shac(system.n_units, bandwidth=5.0)
    g_d = shac_covariance(mat_d[:, jd], ev, cfg).matrix
    g_c = shac_covariance(mat_c[:, jc], ev, cfg).matrix
    g_t = shac_covariance(mat_t[:, jt], ev, cfg).matrix
    cross = shac_cross_covariance(mat_d[:, jd], mat_c[:, jc], cfg)
    for i in range(len(ev)):
        lhs = g_t[i, i]
        rhs = g_d[i, i] + g_c[i, i] + 2.0 * cross[i, i]
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_iid_rows_bartlett_close_to_self_pair(rng):
    # independent rows: the kernel cross terms average ~0, so the bartlett
    # variance stays within Monte Carlo error of the self-pair variance
    reps, n = 300, 150
    cfg = line_shac(n, bandwidth=5.0)
    ratios = []
    for _ in range(reps):
        rows = rng.normal(size=(n, 1))
        ratios.append(shac_covariance(rows, ("x",), cfg).matrix[0, 0]
                      / iid_covariance(rows, ("x",)).matrix[0, 0])
    mean_ratio = np.mean(ratios)
    se = np.std(ratios) / np.sqrt(reps)
    assert abs(mean_ratio - 1.0) <= 2.5 * se + 0.01


def test_cuberoot_bandwidth_values():
    assert cuberoot_bandwidth(200) == 6
    assert cuberoot_bandwidth(500) == 8
    assert cuberoot_bandwidth(8) == 2


# ---------------------------------------------------------------------------
# Intervals and bands
# ---------------------------------------------------------------------------

def test_pointwise_ci_quantile_and_degenerate():
    cov = CovarianceEstimate(matrix=np.diag([4.0, 0.0]), labels=("a", "b"), n_units=100)
    se, lo, hi = pointwise_ci(np.array([1.0, 2.0]), cov, alpha=0.05)
    np.testing.assert_allclose(se, [0.2, 0.0])
    np.testing.assert_allclose(hi[0] - 1.0, 1.959964 * 0.2, atol=1e-6)
    assert lo[1] == hi[1] == 2.0


def test_band_single_coordinate_matches_z(rng):
    cov = CovarianceEstimate(matrix=np.array([[2.0]]), labels=("a",), n_units=50)
    mult, lo, hi = simultaneous_band(np.array([0.0]), cov, alpha=0.05,
                                     n_draws=400_000, seed=11)
    assert abs(mult - 1.959964) < 0.015
    assert mult >= 0.0 and lo[0] < 0.0 < hi[0]


def test_band_five_independent_coordinates(rng):
    # oracle: direct Monte Carlo of max |N(0,1)| over 5 coordinates
    oracle_draws = np.abs(rng.standard_normal((400_000, 5))).max(axis=1)
    oracle = np.quantile(oracle_draws, 0.95)
    cov = CovarianceEstimate(matrix=np.eye(5), labels=tuple("abcde"), n_units=100)
    mult, _lo, _hi = simultaneous_band(np.zeros(5), cov, alpha=0.05,
                                       n_draws=400_000, seed=3)
    assert abs(mult - oracle) < 0.02
    assert 2.5 < mult < 2.65          # known value ~ 2.57
    assert mult >= 1.959964           # dominates the pointwise quantile


def test_band_rejects_all_zero_covariance():
    cov = CovarianceEstimate(matrix=np.zeros((2, 2)), labels=("a", "b"), n_units=10)
    with pytest.raises(InferenceError, match="all-zero"):
        simultaneous_band(np.zeros(2), cov)


def test_band_reproducible_for_fixed_seed():
    cov = CovarianceEstimate(matrix=np.eye(3), labels=("a", "b", "c"), n_units=10)
    m1 = simultaneous_band(np.zeros(3), cov, n_draws=5000, seed=42)[0]
    m2 = simultaneous_band(np.zeros(3), cov, n_draws=5000, seed=42)[0]
    assert m1 == m2


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

def test_benchmark_rows_reproduce_point_values(rng):
    ds, path, res, _system = fitted_system(rng, n=100)
    cells = sorted({(g, l) for l, gs in res.g_star.items() for g in gs})
    if not cells:
        pytest.skip("no admissible cells in this draw")
    rows = benchmark_influence_rows(ds, cells, res.g_star)
    keys, values, mat = rows.columns("DIDbench")
    from spilldid.estimators import did_benchmark
    for j, key in enumerate(keys):
        if key[0] == "cell":
            g, l = key[1], key[2]
            np.testing.assert_allclose(values[j], did_benchmark(ds, g, l).value,
                                       rtol=1e-12)
    assert np.abs(mat.mean(axis=0)).max() <= 1e-10


def test_diagnostic_rows_present_when_reported(rng):
    _ds, _path, res, system = fitted_system(rng, diagnostics=True)
    rows = influence_rows(system)
    keys, _values, _mat = rows.columns(CSE_NEVER)
    reported = [e.t for e in res.diagnostics
                if e.component == CSE_NEVER and e.admissible]
    assert [k[1] for k in keys] == reported
