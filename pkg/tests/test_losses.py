import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from veil import losses as L
from veil.errors import ConfigurationError
from veil.numeric import finite_diff_grad

SEEDS = range(20)


def assert_grad(analytic, f, x):
    fd = finite_diff_grad(f, x)
    assert analytic.shape == fd.shape
    assert np.allclose(analytic, fd, rtol=1e-4, atol=1e-7), np.max(np.abs(analytic - fd))


def brute_pairwise(psi, w):
    n = psi.shape[0]
    return sum(w[i, j] * np.sum((psi[i] - psi[j]) ** 2) for i in range(n) for j in range(n) if i != j)


# ---------------------------------------------------------------- weights

def test_loss_weights_defaults_valid():
    assert L.LossWeights().violations() == []


def test_loss_weights_reports_every_violation():
    v = L.LossWeights(lambda_recon=-1, lambda_repr=0, lambda_pred=0, sigma=0, tau=0, delta=-1, k=0, sym_mode="x").violations()
    assert len(v) == 7
    with pytest.raises(ConfigurationError):
        L.LossWeights(lambda_repr=0, lambda_pred=0).validate()


def test_loss_weights_allows_plain_autoencoder():
    assert L.LossWeights(lambda_recon=1, lambda_repr=0, lambda_pred=0, lambda_reg=0).violations() == []


# ---------------------------------------------------------------- regression losses

def test_ols_examples():
    x = np.array([[1.0, -2.0]])
    assert L.ols_loss(x, x)[0] == 0.0
    assert L.ols_loss([[0.0, 0.0]], [[3.0, 4.0]])[0] == pytest.approx(12.5)
    with pytest.raises(ConfigurationError):
        L.ols_loss(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.parametrize("seed", SEEDS)
def test_ols_gradient(seed):
    r = np.random.default_rng(seed)
    x, xh = r.standard_normal((5, 3)), r.standard_normal((5, 3))
    assert_grad(L.ols_loss(x, xh)[1], lambda v: L.ols_loss(x, v)[0], xh)


def test_mae_examples():
    assert L.mae_loss([[1.0]], [[1.0]])[0] == 0.0
    assert L.mae_loss([[0.0], [0.0]], [[1.0], [-3.0]])[0] == pytest.approx(2.0)
    # exact tie: subgradient 0
    assert L.mae_loss([[2.0]], [[2.0]])[1][0, 0] == 0.0
    with pytest.raises(ConfigurationError):
        L.mae_loss(np.ones(3), np.ones(4))


@pytest.mark.parametrize("seed", SEEDS)
def test_mae_gradient_away_from_ties(seed):
    r = np.random.default_rng(seed)
    y = r.standard_normal((6, 2))
    yh = y + r.choice([-1, 1], size=y.shape) * r.uniform(0.1, 2, size=y.shape)
    val, g = L.mae_loss(y, yh)
    assert np.array_equal(np.abs(g), np.full(y.shape, 1 / 6))
    assert_grad(g, lambda v: L.mae_loss(y, v)[0], yh)


def test_huber_examples():
    assert L.huber_loss([[0.0]], [[0.0]])[0] == 0.0
    assert L.huber_loss([[0.0]], [[0.5]], 1.0)[0] == pytest.approx(0.125)
    assert L.huber_loss([[0.0]], [[2.0]], 1.0)[0] == pytest.approx(1.5)
    with pytest.raises(ConfigurationError):
        L.huber_loss([[0.0]], [[0.0]], 0.0)


@pytest.mark.parametrize("delta", [0.3, 1.0, 2.5])
def test_huber_gradient_continuous_at_knee(delta):
    eps = 1e-7
    g_in = L.huber_loss([[0.0]], [[delta - eps]], delta)[1][0, 0]
    g_out = L.huber_loss([[0.0]], [[delta + eps]], delta)[1][0, 0]
    assert abs(g_in - g_out) < 1e-6
    v_in = L.huber_loss([[0.0]], [[delta - eps]], delta)[0]
    v_out = L.huber_loss([[0.0]], [[delta + eps]], delta)[0]
    assert abs(v_in - v_out) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_huber_gradient(seed):
    r = np.random.default_rng(seed)
    y, yh = r.standard_normal((6, 1)), 2 * r.standard_normal((6, 1))
    # keep residuals off the knee so central differences stay on one branch
    yh[np.abs(np.abs(yh - y) - 1.0) < 1e-3] += 0.01
    assert_grad(L.huber_loss(y, yh, 1.0)[1], lambda v: L.huber_loss(y, v, 1.0)[0], yh)


# ---------------------------------------------------------------- classification losses

def test_cross_entropy_examples():
    big = np.array([[50.0, -50.0]])
    assert L.cross_entropy_loss([0], big)[0] == pytest.approx(0.0, abs=1e-12)
    assert L.cross_entropy_loss([1], np.zeros((1, 2)))[0] == pytest.approx(np.log(2))
    assert L.cross_entropy_from_probs([0], [[1.0, 0.0]]) == 0.0
    assert L.cross_entropy_from_probs([1], [[0.5, 0.5]]) == pytest.approx(0.6931, abs=1e-4)


def test_cross_entropy_clamps_zero_probability(caplog):
    with caplog.at_level(logging.WARNING):
        v = L.cross_entropy_from_probs([1], [[1.0, 0.0]])
    assert v == pytest.approx(-np.log(1e-12))
    assert "clamped" in caplog.text
    with caplog.at_level(logging.WARNING):
        v = L.cross_entropy_loss([1], [[0.0, -1e4]])[0]
    assert np.isfinite(v)


def test_cross_entropy_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        L.cross_entropy_from_probs([0], [[0.7, 0.7]])
    with pytest.raises(ConfigurationError):
        L.cross_entropy_loss([2], np.zeros((1, 2)))


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient(seed):
    r = np.random.default_rng(seed)
    logits = 2 * r.standard_normal((5, 4))
    lab = r.integers(0, 4, 5)
    assert_grad(L.cross_entropy_loss(lab, logits)[1], lambda v: L.cross_entropy_loss(lab, v)[0], logits)


def test_hinge_examples():
    assert L.hinge_loss([[3.0, 0.0, 1.9]], [0])[0] == 0.0
    assert L.hinge_loss([[0.5, 2.0]], [1])[0] == 0.0
    assert L.hinge_loss([[1.5, 2.0]], [1])[0] == pytest.approx(0.5)
    with pytest.raises(ConfigurationError):
        L.hinge_loss([[0.0, 1.0]], [2])
    with pytest.raises(ConfigurationError):
        L.hinge_loss([[0.0]], [0])


@pytest.mark.parametrize("seed", SEEDS)
def test_hinge_gradient_away_from_kinks(seed):
    r = np.random.default_rng(seed)
    while True:
        s = r.standard_normal((4, 3))
        lab = r.integers(0, 3, 4)
        m = 1 + s - s[np.arange(4), lab][:, None]
        m[np.arange(4), lab] = 5.0
        if np.min(np.abs(m)) > 1e-3:
            break
    assert_grad(L.hinge_loss(s, lab)[1], lambda v: L.hinge_loss(v, lab)[0], s)


# ---------------------------------------------------------------- centre loss

def test_center_loss_examples():
    c = L.ClassCenters(np.zeros((1, 2)))
    assert L.center_loss([[1.0, 1.0]], [0], c)[0] == pytest.approx(1.0)
    c2 = L.ClassCenters(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert L.center_loss(c2.centers[[1, 0, 1]], [1, 0, 1], c2)[0] == 0.0


def test_center_loss_unseen_label():
    c = L.ClassCenters.from_data(np.ones((3, 2)), [0, 0, 0], 2)
    with pytest.raises(ConfigurationError):
        L.center_loss(np.ones((1, 2)), [1], c)
    with pytest.raises(ConfigurationError):
        L.center_loss(np.ones((1, 2)), [5], c)


@pytest.mark.parametrize("seed", SEEDS)
def test_center_loss_gradient(seed):
    r = np.random.default_rng(seed)
    c = L.ClassCenters(r.standard_normal((3, 4)))
    psi, lab = r.standard_normal((6, 4)), r.integers(0, 3, 6)
    assert_grad(L.center_loss(psi, lab, c)[1], lambda v: L.center_loss(v, lab, c)[0], psi)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_center_loss_argmin_is_centre(seed):
    r = np.random.default_rng(seed)
    c = L.ClassCenters(r.standard_normal((3, 2)))
    lab = r.integers(0, 3, 7)
    at = c.centers[lab]
    assert L.center_loss(at, lab, c)[0] == 0.0
    assert L.center_loss(at + 1e-3 * r.standard_normal(at.shape), lab, c)[0] > 0.0


def test_update_centers():
    c = L.ClassCenters(np.zeros((2, 2)))
    psi = np.array([[1.0, 2.0], [3.0, 4.0]])
    full = L.update_centers(c, psi, [0, 0], 1.0)
    assert np.allclose(full.centers[0], [2.0, 3.0])
    assert np.array_equal(full.centers[1], [0.0, 0.0])  # absent class unchanged
    assert np.array_equal(L.update_centers(c, psi, [0, 0], 0.0).centers, c.centers)
    assert np.array_equal(c.centers, np.zeros((2, 2)))  # input not mutated
    with pytest.raises(ConfigurationError):
        L.update_centers(c, psi, [0, 0], 1.5)


def test_update_centers_geometric_convergence():
    # fixed point oracle: distance to the batch mean shrinks by (1 - alpha) per step
    c = L.ClassCenters(np.array([[10.0, -4.0]]))
    psi = np.array([[1.0, 1.0], [3.0, -1.0]])
    mean = psi.mean(axis=0)
    d0 = np.linalg.norm(c.centers[0] - mean)
    c1 = L.update_centers(c, psi, [0, 0], 0.5)
    c2 = L.update_centers(c1, psi, [0, 0], 0.5)
    assert np.linalg.norm(c1.centers[0] - mean) == pytest.approx(0.5 * d0)
    assert np.linalg.norm(c2.centers[0] - mean) == pytest.approx(0.25 * d0)


# ---------------------------------------------------------------- PCA cosine loss

def test_pca_cosine_examples(caplog):
    a = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert L.pca_cosine_loss(3 * a, a)[0] == pytest.approx(0.0, abs=1e-12)
    assert L.pca_cosine_loss(-a, a)[0] == pytest.approx(2.0)
    with caplog.at_level(logging.WARNING):
        v, g = L.pca_cosine_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert v == pytest.approx(0.5)
    assert np.array_equal(g[0], [0.0, 0.0])
    assert "zero-norm" in caplog.text


@pytest.mark.parametrize("seed", SEEDS)
def test_pca_cosine_gradient(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((6, 2)), r.standard_normal((6, 2))
    assert_grad(L.pca_cosine_loss(a, b)[1], lambda v: L.pca_cosine_loss(v, b)[0], a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_pca_cosine_range(seed):
    r = np.random.default_rng(seed)
    v = L.pca_cosine_loss(r.standard_normal((5, 2)), r.standard_normal((5, 2)))[0]
    assert 0.0 <= v <= 2.0


# ---------------------------------------------------------------- kernel and sigma

def test_similarity_kernel_examples():
    assert L.similarity_kernel(0.3, 0.3, 0.7) == 1.0
    assert L.similarity_kernel([0.0, 0.0], [0.6, 0.8], 1.0) == pytest.approx(0.36788, abs=1e-5)
    with pytest.raises(ConfigurationError):
        L.similarity_kernel(0, 1, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.floats(0, 10))
def test_similarity_kernel_range_and_monotone(a, b, sigma, extra):
    g = L.similarity_kernel(a, b, sigma)
    assert 0.0 <= g <= 1.0
    d = abs(a - b)
    assert L.similarity_kernel(0.0, d + extra, sigma) <= g + 1e-15


def test_sigma_auto_normal_sample():
    y = np.random.default_rng(0).standard_normal(100_000)
    assert L.sigma_auto(y) == pytest.approx(0.5 * 1.349, abs=0.05)


def test_sigma_auto_quantile_oracle():
    y = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 3.0])
    z = (y - y.mean()) / y.std()
    q = np.sort(z)
    # linear interpolation by hand: positions 0.25*(n-1) and 0.75*(n-1)
    def quant(p):
        pos = p * (len(q) - 1)
        lo = int(np.floor(pos))
        return q[lo] + (pos - lo) * (q[lo + 1] - q[lo])
    assert L.sigma_auto(y) == pytest.approx(0.5 * (quant(0.75) - quant(0.25)), rel=1e-12)


def test_sigma_auto_constant_falls_back(caplog):
    with caplog.at_level(logging.WARNING):
        assert L.sigma_auto(np.full(10, 3.0)) == 1.0
    assert "fall" in caplog.text
    with pytest.raises(ConfigurationError):
        L.sigma_auto([1.0, 2.0, 3.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100), st.floats(0.1, 100))
def test_sigma_auto_affine_invariant(seed, shift, scale):
    y = np.random.default_rng(seed).standard_normal(50)
    assert L.sigma_auto(scale * y + shift) == pytest.approx(L.sigma_auto(y), rel=1e-9)


# ---------------------------------------------------------------- graphs

def test_dense_graph():
    g = L.build_dense_graph([0.0, 1.0], 1.0)
    assert g.n_edges == 2
    assert all(i != j for i, j, _ in g.edges)
    g = L.build_dense_graph(np.full(5, 2.0), 0.5)
    assert g.n_edges == 20 and np.all(g.weight == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.integers(0, 2**31))
def test_dense_graph_counts_and_range(n, seed):
    y = np.random.default_rng(seed).standard_normal(n)
    g = L.build_dense_graph(y, 0.5)
    assert g.n_edges == n * (n - 1)
    assert np.all((g.weight > 0) & (g.weight <= 1))


def edge_set(g):
    return {(i, j) for i, j, _ in g.edges}


def test_knn_hand_example():
    y = [0.0, 1.0, 10.0]
    assert edge_set(L.build_knn_graph(y, 1.0, 1, "directed")) == {(0, 1), (1, 0), (2, 1)}
    assert edge_set(L.build_knn_graph(y, 1.0, 1, "mutual")) == {(0, 1), (1, 0)}
    assert edge_set(L.build_knn_graph(y, 1.0, 1, "union")) == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_knn_ties_prefer_smaller_index():
    # node 1 sits at distance 1 from both 0 and 2
    assert L.knn_lists([0.0, 1.0, 2.0], 1)[1, 0] == 0
    assert list(L.knn_lists([5.0, 5.0, 5.0, 5.0], 2)[3]) == [0, 1]
    assert list(L.knn_lists(np.zeros((4, 2)), 2)[3]) == [0, 1]


def test_knn_complete_graph_matches_dense():
    y = np.random.default_rng(3).standard_normal(7)
    dense = edge_set(L.build_dense_graph(y, 1.0))
    for mode in L.SYM_MODES:
        assert edge_set(L.build_knn_graph(y, 1.0, 6, mode)) == dense


def test_knn_errors():
    with pytest.raises(ConfigurationError):
        L.build_knn_graph([0.0, 1.0, 2.0], 1.0, 3)
    with pytest.raises(ConfigurationError):
        L.build_knn_graph([0.0, 1.0, 2.0], 1.0, 1, "both")


def test_knn_empty_mutual_graph_is_error(monkeypatch):
    n = 4
    monkeypatch.setattr(L, "knn_lists", lambda y, k: np.array([[1], [2], [3], [0]]))
    with pytest.raises(ConfigurationError, match="increase k"):
        L.build_knn_graph(np.arange(n, dtype=float), 1.0, 1, "mutual")


def brute_knn(y, k):
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    n = len(y)
    out = []
    for i in range(n):
        cand = sorted((np.sum((y[i] - y[j]) ** 2), j) for j in range(n) if j != i)
        out.append([j for _, j in cand[:k]])
    return np.array(out)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 30), st.integers(0, 2**31), st.booleans(), st.integers(1, 2))
def test_knn_lists_match_brute_force(n, seed, rounded, dim):
    r = np.random.default_rng(seed)
    y = r.standard_normal((n, dim)) if dim > 1 else r.standard_normal(n)
    if rounded:
        y = np.round(y, 0)  # plenty of exact ties
    k = int(r.integers(1, n))
    assert np.array_equal(L.knn_lists(y, k), brute_knn(y, k))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 30), st.integers(0, 2**31))
def test_knn_symmetrisation_ordering(n, seed):
    r = np.random.default_rng(seed)
    y = r.standard_normal(n)
    k = int(r.integers(1, n))
    directed = L.build_knn_graph(y, 0.7, k, "directed")
    union = L.build_knn_graph(y, 0.7, k, "union")
    assert directed.n_edges == k * n
    assert np.all(np.bincount(directed.src, minlength=n) == k)
    assert union.n_edges <= 2 * k * n
    try:
        mutual = L.build_knn_graph(y, 0.7, k, "mutual")
    except ConfigurationError:
        return
    assert edge_set(mutual) <= edge_set(directed) <= edge_set(union)
    assert np.all((union.weight > 0) & (union.weight <= 1))


# ---------------------------------------------------------------- Laplacian losses

def test_laplacian_dense_examples():
    g = L.build_dense_graph([0.0, 0.0], 1.0)
    psi = np.array([[0.0], [2.0]])
    assert L.laplacian_loss_dense(psi, g)[0] == pytest.approx(2.0)
    assert L.laplacian_loss_dense(np.ones((2, 1)), g)[0] == 0.0
    assert L.laplacian_loss_trace(psi, g) == pytest.approx(0.5 * 8 / 2)
    with pytest.raises(ConfigurationError):
        L.laplacian_loss_dense(psi, L.build_knn_graph([0.0, 1.0], 1.0, 1))


@pytest.mark.parametrize("seed", SEEDS)
def test_laplacian_dense_gradient_and_brute_value(seed):
    r = np.random.default_rng(seed)
    n = 7
    y, psi = r.standard_normal(n), r.standard_normal((n, 3))
    g = L.build_dense_graph(y, 0.8)
    val, grad = L.laplacian_loss_dense(psi, g)
    assert val == pytest.approx(brute_pairwise(psi, g.weight_matrix()) / (2 * n * (n - 1)), rel=1e-12)
    assert_grad(grad, lambda v: L.laplacian_loss_dense(v, g)[0], psi)
    # closed form of the exact derivative for a symmetric kernel
    w = g.weight_matrix()
    closed = 2.0 / (n * (n - 1)) * (w.sum(axis=1)[:, None] * psi - w @ psi)
    assert np.allclose(grad, closed, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**31))
def test_trace_identity(n, seed):
    r = np.random.default_rng(seed)
    y, psi = r.standard_normal((n, 2)), r.standard_normal((n, 3))
    g = L.build_dense_graph(y, 1.3)
    pair = brute_pairwise(psi, g.weight_matrix()) if n <= 20 else L._pair_energy(psi, g)[0]
    assert L.laplacian_loss_trace(psi, g) == pytest.approx(pair / (2 * n), rel=1e-8, abs=1e-8)
    assert L.laplacian_loss_trace(psi, g) == pytest.approx((n - 1) * L.laplacian_loss_dense(psi, g)[0], rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("mode", L.SYM_MODES)
def test_laplacian_sparse_gradient(seed, mode):
    r = np.random.default_rng(seed)
    n, k = 9, 3
    y, psi = r.standard_normal(n), r.standard_normal((n, 2))
    try:
        g = L.build_knn_graph(y, 0.9, k, mode)
    except ConfigurationError:
        pytest.skip("empty mutual graph")
    val, grad = L.laplacian_loss_sparse(psi, g)
    assert val == pytest.approx(brute_pairwise(psi, g.weight_matrix()) / (2 * k * n), rel=1e-12)
    assert_grad(grad, lambda v: L.laplacian_loss_sparse(v, g)[0], psi)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_sparse_complete_graph_equals_dense(n, seed):
    r = np.random.default_rng(seed)
    y, psi = r.standard_normal(n), r.standard_normal((n, 2))
    dense = L.laplacian_loss_dense(psi, L.build_dense_graph(y, 1.0))
    sparse = L.laplacian_loss_sparse(psi, L.build_knn_graph(y, 1.0, n - 1, "directed"))
    assert sparse[0] == pytest.approx(dense[0], rel=1e-10, abs=1e-14)
    assert np.allclose(sparse[1], dense[1], rtol=1e-10, atol=1e-14)


def test_laplacian_sparse_collapse_and_form():
    g = L.build_knn_graph([0.0, 1.0, 3.0], 1.0, 1)
    assert L.laplacian_loss_sparse(np.ones((3, 2)), g)[0] == 0.0
    with pytest.raises(ConfigurationError):
        L.laplacian_loss_sparse(np.ones((3, 2)), L.build_dense_graph([0.0, 1.0, 3.0], 1.0))


# ---------------------------------------------------------------- contrastive losses

def test_cosine_sim_scaled():
    a = np.array([1.0, 2.0, -1.0])
    assert L.cosine_sim_scaled(a, a, 1.0) == pytest.approx(1.0)
    assert L.cosine_sim_scaled([1.0, 0.0], [0.0, 3.0], 1.0) == 0.0
    b = np.array([0.3, -1.0, 2.0])
    assert L.cosine_sim_scaled(a, b, 0.5) == pytest.approx(2 * L.cosine_sim_scaled(a, b, 1.0))
    with pytest.raises(ConfigurationError):
        L.cosine_sim_scaled([0.0, 0.0], a[:2], 1.0)


def brute_nce(psi, w, tau):
    n = psi.shape[0]
    total = 0.0
    for i in range(n):
        num = den = 0.0
        for j in range(n):
            if j == i:
                continue
            e = np.exp(L.cosine_sim_scaled(psi[i], psi[j], tau))
            num += w[i, j] * e
            den += e
        if num > 0:
            total -= np.log(num / den)
    return total / n


def test_info_nce_single_class_is_zero():
    psi = np.random.default_rng(0).standard_normal((5, 3))
    assert L.info_nce_loss(psi, np.zeros(5), 0.5)[0] == pytest.approx(0.0, abs=1e-12)


def test_info_nce_perturbation_oracle():
    psi = np.array([[1.0, 0.2], [0.6, 1.0], [-1.0, 0.3], [-0.2, -1.0]])
    lab = [0, 0, 1, 1]
    base = L.info_nce_loss(psi, lab, 0.5)[0]
    closer = psi.copy()
    closer[1] = [0.9, 0.5]  # rotate row 1 toward its partner, row 0
    closer[3] = [-0.9, -0.2]  # and row 3 toward row 2
    assert L.info_nce_loss(closer, lab, 0.5)[0] < base


def test_info_nce_skips_singletons(caplog):
    psi = np.random.default_rng(1).standard_normal((4, 2))
    lab = np.array([0, 0, 1, 2])
    with caplog.at_level(logging.WARNING):
        v, g = L.info_nce_loss(psi, lab, 0.7)
    assert "without a positive partner" in caplog.text
    w = (lab[:, None] == lab[None, :]).astype(float)
    assert v == pytest.approx(brute_nce(psi, w, 0.7), rel=1e-12)
    assert_grad(g, lambda x: L.info_nce_loss(x, lab, 0.7)[0], psi)


@pytest.mark.parametrize("seed", SEEDS)
def test_info_nce_value_and_gradient(seed):
    r = np.random.default_rng(seed)
    psi, lab = r.standard_normal((6, 3)), np.array([0, 0, 1, 1, 2, 2])
    v, g = L.info_nce_loss(psi, lab, 0.5)
    w = (lab[:, None] == lab[None, :]).astype(float)
    assert v >= 0
    assert v == pytest.approx(brute_nce(psi, w, 0.5), rel=1e-12)
    assert_grad(g, lambda x: L.info_nce_loss(x, lab, 0.5)[0], psi)


def test_info_nce_zero_row():
    with pytest.raises(ConfigurationError):
        L.info_nce_loss(np.zeros((3, 2)), [0, 0, 0], 1.0)


def test_r_nce_equal_targets_zero():
    psi = np.random.default_rng(2).standard_normal((6, 4))
    assert abs(L.r_nce_loss(psi, np.full(6, 1.5), 0.5, 0.3)[0]) <= 1e-12


@pytest.mark.parametrize("seed", SEEDS)
def test_r_nce_value_and_gradient(seed):
    r = np.random.default_rng(seed)
    psi, y = r.standard_normal((6, 3)), r.standard_normal(6)
    v, g = L.r_nce_loss(psi, y, 0.8, 0.5)
    assert v >= 0
    assert v == pytest.approx(brute_nce(psi, L.kernel_matrix(y, 0.8), 0.5), rel=1e-10)
    assert_grad(g, lambda x: L.r_nce_loss(x, y, 0.8, 0.5)[0], psi)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31), st.floats(0.05, 2.0))
def test_r_nce_non_negative(n, seed, tau):
    r = np.random.default_rng(seed)
    assert L.r_nce_loss(r.standard_normal((n, 3)), r.standard_normal(n), 0.5, tau)[0] >= -1e-12
