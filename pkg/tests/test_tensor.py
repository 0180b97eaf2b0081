import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnnplan import tensor as T
from gnnplan.errors import InputError


def val(t):
    return np.asarray(t.data)


class TestElementwise:
    def test_dense_identity(self):
        x = np.array([[1.0, -2.0, 3.0]])
        assert np.array_equal(val(T.dense(x, np.eye(3), np.zeros(3))), x)

    def test_dense_shape_mismatch(self):
        with pytest.raises(InputError):
            T.dense(np.ones((1, 3)), np.ones((2, 2)))

    def test_relu(self):
        assert val(T.relu(np.array([-1.0, 2.0]))).tolist() == [0.0, 2.0]

    def test_leaky_relu(self):
        assert float(val(T.leaky_relu(np.array(-2.0), 0.2))) == pytest.approx(-0.4)

    def test_tanh(self):
        assert float(val(T.tanh(np.array(0.5)))) == pytest.approx(math.tanh(0.5))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(val(T.softmax(np.zeros(3))), [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        s = val(T.softmax(np.array([1000.0, 0.0])))
        assert np.all(np.isfinite(s))
        assert s[0] == pytest.approx(1.0) and s[1] == pytest.approx(0.0, abs=1e-300)

    def test_logs(self):
        s = val(T.softmax(np.log([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(s, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_empty(self):
        with pytest.raises(InputError):
            T.softmax(np.zeros(0))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 10_000), elements=st.floats(-1e3, 1e3)))
    def test_sums_to_one(self, v):
        s = val(T.softmax(v))
        assert abs(s.sum() - 1.0) < 1e-12
        assert np.all(s >= 0)


class TestLayerNorm:
    def test_constant(self):
        np.testing.assert_allclose(val(T.layer_norm(np.full(4, 3.0), np.ones(4), np.zeros(4))), 0.0)

    def test_pair(self):
        np.testing.assert_allclose(val(T.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))),
                                   [1.0, -1.0], atol=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-100, 100)), st.floats(-5, 5))
    def test_mean_equals_bias(self, x, b):
        n = x.size
        y = val(T.layer_norm(x, np.full(n, 2.0), np.full(n, b)))
        assert y.mean() == pytest.approx(b, abs=1e-6)

    def test_too_short(self):
        with pytest.raises(InputError):
            T.layer_norm(np.ones(1), np.ones(1), np.zeros(1))


class TestAttention:
    def test_single_key(self):
        Q = np.random.default_rng(0).normal(size=(4, 3))
        out = val(T.attention(Q, np.ones((1, 3)), np.array([[2.0, -1.0]])))
        np.testing.assert_allclose(out, np.tile([2.0, -1.0], (4, 1)))

    def test_saturation(self):
        K = 50.0 * np.eye(3)
        V = np.arange(6.0).reshape(3, 2)
        np.testing.assert_allclose(val(T.attention(K, K, V)), V, atol=1e-6)

    def test_hand_oracle(self):
        out = val(T.attention([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]))
        e1, e0 = math.exp(1 / math.sqrt(2)), 1.0
        np.testing.assert_allclose(out, [[e1 / (e1 + e0), e0 / (e1 + e0)]], atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            T.attention(np.ones((1, 2)), np.ones((2, 3)), np.ones((2, 1)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_convex_combination(self, seed):
        r = np.random.default_rng(seed)
        Q, K, V = r.normal(size=(3, 4)) * 5, r.normal(size=(6, 4)) * 5, r.normal(size=(6, 2))
        out = val(T.attention(Q, K, V))
        assert np.all(out >= V.min(axis=0) - 1e-12) and np.all(out <= V.max(axis=0) + 1e-12)


def random_symmetric(rng, n, p=0.4):
    A = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return A + A.T


class TestGraphLayers:
    def test_gcn_isolated(self):
        H = np.array([[-1.0, 2.0]])
        np.testing.assert_allclose(val(T.gcn_forward(H, [[]], np.eye(2))), [[0.0, 2.0]])

    def test_gcn_two_nodes(self):
        out = val(T.gcn_forward([[1.0], [0.0]], [[1], [0]], [[1.0]]))
        # D^-1/2 (A+I) D^-1/2 = [[.5,.5],[.5,.5]]
        np.testing.assert_allclose(out, [[0.5], [0.5]], atol=1e-6)

    def test_gcn_matrix_oracle(self):
        rng = np.random.default_rng(0)
        A = random_symmetric(rng, 6)
        H, W = rng.normal(size=(6, 3)), rng.normal(size=(3, 4))
        At = A + np.eye(6)
        d = At.sum(axis=1)
        want = np.maximum(np.diag(d ** -0.5) @ At @ np.diag(d ** -0.5) @ H @ W, 0)
        np.testing.assert_allclose(val(T.gcn_forward(H, A, W)), want, atol=1e-12)

    def test_gat_single_node(self):
        H, W = np.array([[1.0, -2.0]]), np.array([[1.0, 0.5], [0.5, 1.0]])
        out = val(T.gat_forward(H, [[]], W, np.ones(4)))
        np.testing.assert_allclose(out, np.maximum(H @ W, 0))

    def test_gat_zero_attention_is_mean(self):
        rng = np.random.default_rng(1)
        A = random_symmetric(rng, 7)
        H, W = rng.normal(size=(7, 3)), rng.normal(size=(3, 2))
        At = A + np.eye(7)
        want = np.maximum((At / At.sum(axis=1, keepdims=True)) @ H @ W, 0)
        np.testing.assert_allclose(val(T.gat_forward(H, A, W, np.zeros(4))), want, atol=1e-6)

    def test_gat_scalar_oracle(self):
        # two nodes, 1D features, W=[[1]], a=(1, 2)
        H = [[1.0], [-1.0]]
        out = val(T.gat_forward(H, [[1], [0]], [[1.0]], np.array([1.0, 2.0]), 0.2))

        def lrelu(z):
            return z if z > 0 else 0.2 * z
        rows = []
        for i, hi in enumerate([1.0, -1.0]):
            e = [lrelu(hi + 2 * hj) for hj in (1.0, -1.0)]
            w = np.exp(e) / np.exp(e).sum()
            rows.append([max(w[0] * 1.0 + w[1] * -1.0, 0.0)])
        np.testing.assert_allclose(out, rows, atol=1e-6)

    def test_gat_bad_attention_shape(self):
        with pytest.raises(InputError):
            T.gat_forward(np.ones((2, 2)), [[1], [0]], np.eye(2), np.ones(3))

    @pytest.mark.parametrize("layer", ["gcn", "gat"])
    def test_permutation_equivariance(self, layer):
        rng = np.random.default_rng(2)
        n = 8
        A = random_symmetric(rng, n)
        H, W, a = rng.normal(size=(n, 3)), rng.normal(size=(3, 4)), rng.normal(size=8)
        perm = rng.permutation(n)
        P = np.eye(n)[perm]

        def run(HH, AA):
            if layer == "gcn":
                return val(T.gcn_forward(HH, AA, W))
            return val(T.gat_forward(HH, AA, W, a))
        np.testing.assert_allclose(run(P @ H, P @ A @ P.T), P @ run(H, A), atol=1e-9)


class TestConv:
    def test_zero_grid(self):
        rng = np.random.default_rng(0)
        k = [rng.normal(size=(4, 1, 3, 3)), rng.normal(size=(4, 4, 3, 3))]
        out = val(T.conv_forward(np.zeros((8, 8)), k, [np.zeros(4), np.zeros(4)]))
        assert np.all(out == 0)

    def test_unit_kernel_identity(self):
        g = np.random.default_rng(0).random((5, 5))
        out = val(T.conv(g[None], np.ones((1, 1, 1, 1)), stride=1))
        np.testing.assert_array_equal(out[0], g)

    def test_window_sums(self):
        g = np.arange(9.0).reshape(3, 3)
        out = val(T.conv(g[None], np.ones((1, 1, 2, 2)), stride=1))[0]
        want = [[0 + 1 + 3 + 4, 1 + 2 + 4 + 5], [3 + 4 + 6 + 7, 4 + 5 + 7 + 8]]
        np.testing.assert_array_equal(out, want)

    def test_stride_two(self):
        g = np.arange(16.0).reshape(4, 4)
        out = val(T.conv(g[None], np.ones((1, 1, 2, 2)), stride=2))[0]
        np.testing.assert_array_equal(out, [[10, 18], [42, 50]])

    def test_cover_reaches_last_cell(self):
        g = np.zeros((1, 8, 8))
        g[0, 7, 7] = 1.0
        k = np.ones((1, 1, 3, 3))
        assert val(T.conv(g, k, stride=2)).sum() == 0.0
        out = val(T.conv(g, k, stride=2, cover=True))
        assert out.shape == (1, 4, 4) and out[0, 3, 3] == 1.0

    def test_cover_pad_sizes(self):
        assert T.cover_pad(16, 3, 2) == 1
        assert T.cover_pad(9, 3, 2) == 0
        assert T.cover_pad(5, 3, 1) == 0

    def test_3d(self):
        g = np.ones((4, 4, 4))
        out = val(T.conv(g[None], np.ones((1, 1, 2, 2, 2)), stride=2))
        assert out.shape == (1, 2, 2, 2) and np.all(out == 8)

    def test_kernel_too_big(self):
        with pytest.raises(InputError):
            T.conv(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))


class TestRnn:
    def test_zero_weights(self):
        h = T.rnn_encode(np.ones((4, 2)), np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(3))
        assert np.all(val(h) == 0)

    def test_single_step(self):
        Wx, b, x = np.array([[0.3], [-0.2]]), np.array([0.1]), np.array([1.0, 2.0])
        h = T.rnn_step(np.zeros(1), x, Wx, np.zeros((1, 1)), b)
        assert float(val(h)[0]) == pytest.approx(math.tanh(0.3 - 0.4 + 0.1))

    def test_two_step_scalar(self):
        h = T.rnn_encode(np.array([[0.5], [0.5]]), [[1.0]], [[1.0]], [0.0])
        assert float(val(h)[0]) == pytest.approx(math.tanh(0.5 + math.tanh(0.5)), abs=1e-12)
        # tanh(0.5 + 0.46212) = 0.74522
        assert float(val(h)[0]) == pytest.approx(0.74522, abs=1e-5)

    def test_empty_sequence(self):
        h = T.rnn_encode(np.zeros((0, 2)), np.ones((2, 3)), np.ones((3, 3)), np.ones(3))
        assert val(h).tolist() == [0.0, 0.0, 0.0]


class TestCrossEntropy:
    def test_uniform(self):
        assert float(val(T.cross_entropy(np.zeros(2), 0))) == pytest.approx(math.log(2))

    def test_confident(self):
        want = -math.log(1 / (1 + math.exp(-10)))
        assert float(val(T.cross_entropy(np.array([10.0, 0.0]), 0))) == pytest.approx(want, rel=1e-9)
        assert want == pytest.approx(4.54e-5, rel=1e-3)

    def test_shift_invariant(self):
        s = np.array([0.3, -1.2, 2.0])
        a = float(val(T.cross_entropy(s, 1)))
        b = float(val(T.cross_entropy(s + 17.0, 1)))
        assert a == pytest.approx(b, abs=1e-12)

    def test_singleton_zero(self):
        assert float(val(T.cross_entropy(np.array([3.7]), 0))) == 0.0

    def test_bad_target(self):
        with pytest.raises(InputError):
            T.cross_entropy(np.zeros(3), 3)


class TestSgd:
    def test_zero_grad_no_decay(self):
        ps = T.ParamSet({"w": np.array([1.0, 2.0])})
        ps["w"].grad = np.zeros(2)
        T.sgd_step(ps, 0.1, 0.0)
        assert ps["w"].data.tolist() == [1.0, 2.0]

    def test_plain_step(self):
        ps = T.ParamSet({"w": np.array(1.0)})
        ps["w"].grad = np.array(1.0)
        T.sgd_step(ps, 0.1, 0.0)
        assert float(ps["w"].data) == pytest.approx(0.9)
        assert ps["w"].grad is None

    def test_decay_only(self):
        ps = T.ParamSet({"w": np.array(1.0)})
        ps["w"].grad = np.array(0.0)
        T.sgd_step(ps, 0.1, 0.5)
        assert float(ps["w"].data) == pytest.approx(0.95)

    def test_zero_lr_bit_identical(self):
        w = np.random.default_rng(0).normal(size=(3, 3))
        ps = T.ParamSet({"w": w})
        ps["w"].grad = np.ones((3, 3))
        T.sgd_step(ps, 0.0, 0.3)
        assert np.array_equal(ps["w"].data, w)

    def test_shape_mismatch(self):
        ps = T.ParamSet({"w": np.ones(3)})
        ps["w"].grad = np.ones(2)
        with pytest.raises(InputError):
            T.sgd_step(ps, 0.1)

    def test_non_finite_param_rejected(self):
        with pytest.raises(InputError):
            T.ParamSet({"w": np.array([np.nan])})


def _probe(rng, shape):
    return rng.normal(size=shape)


OPS = {
    "dense": (lambda p: T.dense(p["x"], p["W"], p["b"]), {"x": (3, 4), "W": (4, 2), "b": (2,)}),
    "relu": (lambda p: T.relu(p["x"]), {"x": (5,)}),
    "leaky_relu": (lambda p: T.leaky_relu(p["x"], 0.2), {"x": (5,)}),
    "tanh": (lambda p: T.tanh(p["x"]), {"x": (5,)}),
    "softmax": (lambda p: T.softmax(p["x"]), {"x": (6,)}),
    "log_softmax": (lambda p: T.log_softmax(p["x"]), {"x": (6,)}),
    "layer_norm": (lambda p: T.layer_norm(p["x"], p["g"], p["b"]), {"x": (3, 5), "g": (5,), "b": (5,)}),
    "attention": (lambda p: T.attention(p["Q"], p["K"], p["V"]), {"Q": (2, 3), "K": (4, 3), "V": (4, 2)}),
    "gcn": (lambda p: T.gcn_forward(p["H"], [[1, 2], [0], [0, 3], [2]], p["W"]), {"H": (4, 3), "W": (3, 2)}),
    "gat": (lambda p: T.gat_forward(p["H"], [[1, 2], [0], [0, 3], [2]], p["W"], p["a"]),
            {"H": (4, 3), "W": (3, 2), "a": (4,)}),
    "conv": (lambda p: T.conv(p["x"], p["k"], p["b"], stride=2), {"x": (2, 6, 6), "k": (3, 2, 3, 3), "b": (3,)}),
    "conv_cover": (lambda p: T.conv(p["x"], p["k"], p["b"], stride=2, cover=True),
                   {"x": (2, 6, 6), "k": (3, 2, 3, 3), "b": (3,)}),
    "conv3d": (lambda p: T.conv(p["x"], p["k"], None, stride=1), {"x": (1, 4, 4, 4), "k": (2, 1, 2, 2, 2)}),
    "rnn": (lambda p: T.rnn_encode(p["s"], p["Wx"], p["Wh"], p["b"]),
            {"s": (3, 2), "Wx": (2, 4), "Wh": (4, 4), "b": (4,)}),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_operation_gradients(name):
    fn, shapes = OPS[name]
    for point in range(10):
        rng = np.random.default_rng([point, len(name)])
        ps = T.ParamSet({k: _probe(rng, s) for k, s in shapes.items()})
        out_shape = fn(ps).shape
        weights = rng.normal(size=out_shape)

        def forward():
            return T.sum(T.mul(fn(ps), weights))
        report = T.grad_check(forward, ps)
        assert report.passed, (point, report.lines())


def test_cross_entropy_gradient():
    ps = T.ParamSet({"s": np.array([0.2, -0.5, 1.0, 0.1])})
    assert T.grad_check(lambda: T.cross_entropy(ps["s"], 2), ps).passed


class TestGradCheck:
    def test_linear_exact(self):
        ps = T.ParamSet({"w": np.array([1.7])})
        report = T.grad_check(lambda: T.sum(T.mul(ps["w"], 3.0)), ps)
        assert report.max_error < 1e-8

    def test_corrupted_gradient_detected(self):
        ps = T.ParamSet({"w": np.array([1.7, -0.3])})
        report = T.grad_check(lambda: T.sum(T.mul(T.mul(ps["w"], ps["w"]), 3.0)), ps,
                              analytic={"w": np.array([0.0, 5.0])})
        assert report.max_error > 0.1
        assert not report.passed

    def test_scalar_required(self):
        ps = T.ParamSet({"w": np.ones(2)})
        with pytest.raises(InputError):
            T.grad_check(lambda: T.mul(ps["w"], 2.0), ps)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ps = T.ParamSet({"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=(5,)) / 3})
    T.save_checkpoint(ps, tmp_path / "c.json", {"seed": 7})
    back, meta = T.load_checkpoint(tmp_path / "c.json")
    assert back.names() == ps.names() and meta == {"seed": 7}
    for k in ps:
        assert np.array_equal(back[k].data, ps[k].data)


def test_checkpoint_bad_header(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(InputError):
        T.load_checkpoint(tmp_path / "x.json")


def test_no_grad_builds_no_graph():
    w = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(w, 2.0)
    assert not y.requires_grad
