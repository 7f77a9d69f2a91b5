"""Acceptance suite.

One test per criterion; ``conftest.py`` prints a PASS/FAIL line for each
at the end of the run. The slow criteria (4 to 6 and 9) take a few
minutes in total.
"""
import time

import numpy as np
import pytest

from oracles import gauss_logpdf, glasso_grid_2x2, hmm_enumerate
from tagm import cli, io, metrics
from tagm.core import fit_em, forward_backward
from tagm.extensions import incremental as inc
from tagm.extensions import memory as mem
from tagm.glasso import kkt_residual, solve_glasso
from tagm.params import FitConfig, InitConfig, ModelParams
from tagm.selection import count_free_params, select_k
from tagm.synthgen import GeneratorConfig, generate


def _spd(rng, d, floor=0.3):
    M = rng.normal(size=(d, d))
    return M @ M.T / d + floor * np.eye(d)


def _uniform_fixture(K, seed, n_obs=2000, dim=10):
    return generate(GeneratorConfig(n_obs=n_obs, n_states=K, dim=dim, mean_mode="uniform",
                                    mean_low=-10, mean_high=10, cov_mode="degree_bounded",
                                    max_degree=3, transition_mode="sudden", seed=seed))


# 1 --------------------------------------------------------------------------------

@pytest.mark.criterion(1, "forward-backward equals path enumeration")
def test_criterion_01_forward_backward(record_property):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        N, K, d = int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        pi = rng.dirichlet(np.ones(K))
        A = rng.dirichlet(np.ones(K), size=K)
        means = rng.normal(scale=1.5, size=(K, d))
        covs = np.stack([_spd(rng, d) for _ in range(K)])
        X = means[rng.integers(0, K, size=N)] + rng.normal(size=(N, d))
        params = ModelParams(pi, A, means, np.linalg.inv(covs))

        log_b = np.array([[gauss_logpdf(x, means[k], covs[k]) for k in range(K)] for x in X])
        gamma, xi, p_x = hmm_enumerate(pi, A, log_b)
        e = forward_backward(params, X)
        np.testing.assert_allclose(e.gamma, gamma, rtol=1e-10, atol=0)
        np.testing.assert_allclose(e.xi, xi, rtol=1e-10, atol=0)
        np.testing.assert_allclose(np.exp(e.loglik), p_x, rtol=1e-10, atol=0)
        rel = np.abs(e.gamma - gamma) / np.abs(gamma)
        worst = max(worst, float(np.nanmax(rel)))
    elapsed = time.perf_counter() - t0
    record_property("max_rel_gamma", f"{worst:.1e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert elapsed < 10


# 2 --------------------------------------------------------------------------------

@pytest.mark.criterion(2, "graphical lasso optimality")
def test_criterion_02_glasso(record_property):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_kkt = worst_inv = worst_grid = 0.0
    for i in range(20):
        d = 2 if i < 5 else int(rng.integers(2, 7))
        Z = rng.normal(size=(3 * d + 5, d))
        S = np.cov(Z.T, bias=True) + 0.05 * np.eye(d)
        for lam in (0.0, 0.05, 0.2):
            theta = solve_glasso(S, lam).theta
            worst_kkt = max(worst_kkt, kkt_residual(S, theta, lam))
            if lam == 0.0:
                worst_inv = max(worst_inv, float(np.abs(theta - np.linalg.inv(S)).max()))
            if d == 2:
                ref = glasso_grid_2x2(S, lam)
                worst_grid = max(worst_grid, float(np.abs(theta - ref).max()))
    elapsed = time.perf_counter() - t0
    record_property("kkt", f"{worst_kkt:.1e}")
    record_property("inverse_err", f"{worst_inv:.1e}")
    record_property("grid_err", f"{worst_grid:.1e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst_kkt <= 1e-6
    assert worst_inv <= 1e-5
    assert worst_grid <= 1e-3
    assert elapsed < 30


# 3 --------------------------------------------------------------------------------

@pytest.mark.criterion(3, "EM penalized log-likelihood is monotone")
def test_criterion_03_monotone(record_property):
    worst = 0.0
    iters = []
    for i in range(10):
        K, d = (2, 3)[i % 2], (5, 10)[(i // 2) % 2]
        ds = generate(GeneratorConfig(n_obs=1000, n_states=K, dim=d, seed=100 + i))
        fit = fit_em(ds.X, FitConfig(n_states=K, lam=float(1 + i), init=InitConfig(seed=i)))
        steps = np.diff(fit.trace)
        worst = min(worst, float(steps.min()) if steps.size else 0.0)
        iters.append(fit.n_iter)
    record_property("largest_decrease", f"{max(0.0, -worst):.1e}")
    record_property("iterations", f"{min(iters)}..{max(iters)}")
    assert worst >= -1e-8


# 4, 5 -----------------------------------------------------------------------------

# The penalty is not fixed by the criteria; 50 sits in the range where
# recovery is insensitive to it (see README).
RECOVERY_LAMBDA = 50.0


@pytest.fixture(scope="module")
def recovery_runs():
    t0 = time.perf_counter()
    runs = []
    for seed in range(5):
        ds = _uniform_fixture(3, seed)
        fit = fit_em(ds.X, FitConfig(n_states=3, lam=RECOVERY_LAMBDA, n_init=5,
                                     init=InitConfig(seed=seed)))
        runs.append((metrics.v_measure(ds.labels, fit.labels),
                     metrics.network_score(ds.true_params, ds.labels, fit)))
    return runs, time.perf_counter() - t0


@pytest.mark.criterion(4, "cluster recovery, K=3 d=10")
def test_criterion_04_cluster_recovery(recovery_runs, record_property):
    runs, elapsed = recovery_runs
    v = [r[0] for r in runs]
    record_property("v_measure", [round(x, 3) for x in v])
    record_property("seconds", f"{elapsed:.0f}")
    assert sum(x >= 0.9 for x in v) >= 4
    assert elapsed < 300


@pytest.mark.criterion(5, "network recovery, mean mapped MCC")
def test_criterion_05_network_recovery(recovery_runs, record_property):
    runs, elapsed = recovery_runs
    m = [r[1] for r in runs]
    record_property("mcc", [round(x, 3) for x in m])
    assert sum(x >= 0.5 for x in m) >= 4
    assert elapsed < 300


# 6 --------------------------------------------------------------------------------

@pytest.mark.criterion(6, "BIC selects K=5 over 3..8")
def test_criterion_06_select_k(record_property):
    t0 = time.perf_counter()
    chosen = []
    for seed in range(5):
        ds = _uniform_fixture(5, seed)
        cfg = FitConfig(n_states=5, lam=20.0, n_init=3, init=InitConfig(seed=seed))
        k, _, _ = select_k(ds.X, range(3, 9), 20.0, cfg)
        chosen.append(int(k))
    elapsed = time.perf_counter() - t0
    record_property("selected", chosen)
    record_property("seconds", f"{elapsed:.0f}")
    assert sum(k == 5 for k in chosen) >= 4
    assert elapsed < 900


# 7 --------------------------------------------------------------------------------

@pytest.mark.criterion(7, "free-parameter count")
def test_criterion_07_free_params():
    K, d = 5, 10
    dense = ModelParams(np.full(K, 1 / K), np.full((K, K), 1 / K), np.zeros((K, d)),
                        np.stack([np.eye(d) + 0.05 * (np.ones((d, d)) - np.eye(d))] * K))
    assert count_free_params(dense) == 349
    single = ModelParams(np.ones(1), np.ones((1, 1)), np.zeros((1, 1)), np.full((1, 1, 1), 2.0))
    assert count_free_params(single) == 2
    diag = ModelParams(np.full(2, 0.5), np.full((2, 2), 0.5), np.zeros((2, 3)),
                       np.stack([np.diag([1.0, 2.0, 3.0])] * 2))
    assert count_free_params(diag) == 15


# 8 --------------------------------------------------------------------------------

@pytest.mark.criterion(8, "higher-order model reduces to the first-order one")
def test_criterion_08_memory(record_property):
    worst = 0.0
    for seed in range(5):
        ds = generate(GeneratorConfig(n_obs=400, n_states=2 + seed % 2, dim=3,
                                      mean_mode="uniform", mean_low=-4, mean_high=4, seed=seed))
        cfg = FitConfig(n_states=2 + seed % 2, lam=2.0, n_init=2, init=InitConfig(seed=seed))
        a = fit_em(ds.X, cfg)
        b = mem.mem_fit(ds.X, cfg, mem.MemConfig(1, 1))
        pairs = [(a.posteriors.gamma, b.posteriors.gamma), (a.posteriors.xi, b.posteriors.xi),
                 (a.posteriors.loglik, b.posteriors.loglik)]
        pairs += [(getattr(a.params, f), getattr(b.params, f))
                  for f in ("pi", "trans", "means", "precisions")]
        for x, y in pairs:
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
            worst = max(worst, float(np.max(np.abs(np.asarray(x) - np.asarray(y)))))
    record_property("max_abs_diff", f"{worst:.1e}")

    ds = generate(GeneratorConfig(n_obs=400, n_states=2, dim=3, mean_mode="uniform",
                                  mean_low=-4, mean_high=4, seed=11))
    fit = mem.mem_fit(ds.X, FitConfig(n_states=2, lam=2.0, init=InitConfig(seed=0)),
                      mem.MemConfig(2, 2))
    allowed = mem.allowed_mask(2, 2)
    assert (~allowed).sum() == 8
    np.testing.assert_array_equal(fit.params.trans[~allowed], 0.0)
    assert np.all(fit.params.trans[allowed] > 0)


# 9 --------------------------------------------------------------------------------

@pytest.mark.criterion(9, "incremental fit approaches the batch fit")
def test_criterion_09_incremental(record_property):
    t0 = time.perf_counter()
    ds = _uniform_fixture(5, 0)
    cfg = FitConfig(n_states=5, lam=RECOVERY_LAMBDA, n_init=3, init=InitConfig(seed=0))
    base = metrics.v_measure(ds.labels, fit_em(ds.X, cfg).labels)
    ratios = []
    for fraction in (1.0, 0.9, 0.75, 0.5):
        labels, _ = inc.online_labels(ds.X, cfg, fraction)
        ratios.append(metrics.v_measure(ds.labels, labels) / base)
    elapsed = time.perf_counter() - t0
    record_property("ratios", [round(r, 4) for r in ratios])
    record_property("seconds", f"{elapsed:.0f}")
    assert ratios[0] == 1.0
    assert all(b <= a + 0.05 for a, b in zip(ratios, ratios[1:]))
    assert elapsed < 600


# 10 -------------------------------------------------------------------------------

@pytest.mark.criterion(10, "sliding window identities")
def test_criterion_10_window():
    ds = generate(GeneratorConfig(n_obs=600, n_states=3, dim=4, mean_mode="uniform",
                                  mean_low=-5, mean_high=5, seed=3))
    a = inc.inc_init(ds.X[:300], FitConfig(n_states=3, lam=2.0), windowed=True)
    b = a.copy()
    for x in ds.X[300:]:
        inc.inc_update(a, x)
        inc.slide_update(b, x, len(ds.X))
        for f in ("pi", "trans", "means", "precisions"):
            assert np.array_equal(getattr(a.params, f), getattr(b.params, f))
        assert np.array_equal(a.last_gamma, b.last_gamma)
        assert inc.current_label(a) == inc.current_label(b)
        assert np.array_equal(inc.predict(a), inc.predict(b))

    rng = np.random.default_rng(5)
    x = rng.normal(loc=3.0, size=80)
    W = 9
    state = inc.inc_init(x[:20, None], FitConfig(n_states=1, lam=0.1), windowed=True)
    for n in range(20, 80):
        inc.slide_update(state, [x[n]], W)
        sma = sum(x[n - W + 1: n + 1]) / W
        assert abs(state.params.means[0, 0] - sma) <= 1e-10


# 11 -------------------------------------------------------------------------------

@pytest.mark.criterion(11, "metric unit examples")
def test_criterion_11_metrics():
    truth = [0, 0, 1, 1, 2, 2]
    assert metrics.v_measure(truth, truth) == 1.0
    assert metrics.v_measure([0, 0, 1, 1], [0, 0, 0, 0]) == 0.0
    assert metrics.v_measure(truth, [2, 2, 0, 0, 1, 1]) == 1.0

    assert metrics.map_clusters(truth, truth) == {0: 0, 1: 1, 2: 2}
    assert metrics.map_clusters([0, 0, 1, 1], [1, 1, 0, 0]) == {0: 1, 1: 0}
    assert metrics.map_clusters([0, 0, 0, 1, 1, 1], [0] * 6) == {0: 0}

    g = np.zeros((4, 4), dtype=bool)
    g[0, 1] = g[1, 0] = g[1, 3] = g[3, 1] = True
    assert metrics.mcc(g, g) == 1.0
    comp = ~g
    np.fill_diagonal(comp, False)
    assert metrics.mcc(g, comp) == -1.0
    t3 = np.zeros((3, 3), dtype=bool)
    t3[0, 1] = t3[1, 0] = True
    p3 = t3.copy()
    p3[0, 2] = p3[2, 0] = True
    assert metrics.mcc(t3, p3) == 0.5

    assert not metrics.graph_from_precision(np.diag([1.0, 2.0, 3.0])).any()
    assert metrics.graph_from_precision([[1.0, 0.5], [0.5, 1.0]]).sum() == 2
    assert not metrics.graph_from_precision([[1.0, 1e-12], [1e-12, 1.0]], 1e-8).any()

    X = np.arange(6.0).reshape(3, 2)
    assert metrics.mae(X, X) == 0.0
    assert metrics.mae([[0.0, 0.0]], [[1.0, 3.0]]) == 2.0
    assert metrics.mae(X, X + 0.5) == 0.5

    P = np.stack([np.eye(3), np.eye(3)])
    P[0, 0, 1] = P[0, 1, 0] = 0.4
    P[1, 1, 2] = P[1, 2, 1] = -0.3
    labels = [0, 0, 1, 1]
    assert metrics.network_report(P, labels, P, labels).mcc_mean == 1.0
    assert metrics.network_report(P, labels, np.stack([np.eye(3)] * 2), labels).mcc_mean == 0.0
    assert metrics.network_report(P, labels, P[::-1], [1, 1, 0, 0]).mcc_mean == 1.0


# 12 -------------------------------------------------------------------------------

def _pipeline(root):
    data, model, ev = root / "data", root / "model", root / "eval"
    assert cli.main(["generate", "--n", "1000", "--k", "3", "--d", "5", "--means", "uniform:-10,10",
                     "--cov", "degree_bounded:2", "--seed", "13", "--out", str(data)]) == 0
    assert cli.main(["fit", str(data / "observations.csv"), "--k", "3", "--lambda", "10",
                     "--n-init", "3", "--seed", "13", "--out", str(model)]) == 0
    assert cli.main(["evaluate", "--model", str(model / "model.json"),
                     "--data", str(data / "observations.csv"),
                     "--truth", str(data / "truth.json"),
                     "--labels", str(data / "labels.csv"), "--mae", "--out", str(ev)]) == 0
    return {p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}


@pytest.mark.criterion(12, "generate, fit, evaluate are byte-identical across runs")
def test_criterion_12_determinism(tmp_path, record_property):
    first = _pipeline(tmp_path / "run1")
    second = _pipeline(tmp_path / "run2")
    assert first.keys() == second.keys() and len(first) >= 6
    assert first == second
    record_property("files", len(first))
    metrics_doc = io.read_json(tmp_path / "run1" / "eval" / "metrics.json")
    record_property("v_measure", round(metrics_doc["v_measure"], 4))
