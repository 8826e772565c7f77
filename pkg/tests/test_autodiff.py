import numpy as np
import pytest

from tncse import autodiff as ad
from tncse.autodiff import RngStreams, Tensor
from tncse.gradcheck import check_gradients


def rand(rng, *shape):
    return rng.standard_normal(shape)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        A = rand(rng, 3, 3)
        out = ad.matmul(Tensor(A), Tensor(np.eye(3)))
        np.testing.assert_allclose(out.data, A)

    def test_hand_evaluated(self):
        A = Tensor([[1.0, 2.0], [3.0, 4.0]])
        B = Tensor([[1.0], [1.0]])
        np.testing.assert_allclose(ad.matmul(A, B).data, [[3.0], [7.0]])

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(1)
        check_gradients(lambda a, b: ad.sum_(ad.matmul(a, b)),
                        [rand(rng, 4, 3), rand(rng, 3, 5)], rtol=1e-6)

    def test_batched_gradient(self):
        rng = np.random.default_rng(2)
        check_gradients(lambda a, b: ad.sum_(ad.matmul(a, b)),
                        [rand(rng, 2, 3, 4, 3), rand(rng, 2, 3, 3, 2)], rtol=1e-6)


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = Tensor(np.full((2, 4), 3.7))
        out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-3)

    def test_two_point_row(self):
        out = ad.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)),
                            Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_beta_is_a_shift(self):
        rng = np.random.default_rng(3)
        x = rand(rng, 5, 8)
        g = np.ones(8)
        b = rng.standard_normal(8)
        base = ad.layer_norm(Tensor(x), Tensor(g), Tensor(np.zeros(8))).data
        shifted = ad.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
        np.testing.assert_allclose(shifted, base + b, rtol=1e-12)

    def test_rejects_width_one(self):
        with pytest.raises(ValueError):
            ad.layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        check_gradients(
            lambda x, g, b: ad.sum_(ad.mul(ad.layer_norm(x, g, b),
                                           Tensor(rand(np.random.default_rng(9), 3, 6)))),
            [rand(rng, 3, 6), 1.0 + 0.1 * rand(rng, 6), 0.1 * rand(rng, 6)],
            rtol=1e-6)


class TestNormAndCosine:
    def test_l2_norm_hand_value(self):
        assert ad.l2_norm(Tensor([3.0, 4.0])).item() == pytest.approx(5.0)

    def test_l2_norm_zero_vector(self):
        assert ad.l2_norm(Tensor([0.0, 0.0])).item() == 0.0

    def test_l2_norm_homogeneity(self):
        rng = np.random.default_rng(5)
        x = rand(rng, 7)
        for c in (-2.5, 0.3, 10.0):
            assert ad.l2_norm(Tensor(c * x)).item() == pytest.approx(
                abs(c) * ad.l2_norm(Tensor(x)).item())

    def test_cosine_orthogonal(self):
        assert ad.cosine_sim(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_cosine_self(self):
        rng = np.random.default_rng(6)
        x = rand(rng, 9)
        assert ad.cosine_sim(Tensor(x), Tensor(x)).item() == pytest.approx(1.0)

    def test_cosine_hand_value(self):
        got = ad.cosine_sim(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item()
        assert got == pytest.approx(0.7071068, abs=1e-6)

    def test_cosine_rejects_zero_norm(self):
        with pytest.raises(ValueError):
            ad.cosine_sim(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(np.arange(6.0))
        out = ad.dropout(x, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, x.data)

    def test_fixed_seed_replays_identically(self):
        x = Tensor(np.ones((4, 8)))
        streams = RngStreams(42)
        a = ad.dropout(x, 0.3, streams.get("s")).data
        streams.reset()
        b = ad.dropout(x, 0.3, streams.get("s")).data
        np.testing.assert_array_equal(a, b)

    def test_mean_preserving(self):
        # Monte-Carlo: E[dropout(x)] == x
        x = Tensor(np.ones(100_000))
        out = ad.dropout(x, 0.1, np.random.default_rng(7))
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_invalid_p_rejected(self):
        for p in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                ad.dropout(Tensor([1.0]), p, np.random.default_rng(0))


class TestEngineContracts:
    def test_double_backward_rejected(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.sum_(ad.mul(x, x))
        y.backward()
        with pytest.raises(RuntimeError):
            y.backward()

    def test_forward_determinism(self):
        def run():
            streams = RngStreams(3)
            x = Tensor(np.linspace(-1, 1, 24).reshape(4, 6))
            h = ad.tanh(ad.matmul(x, Tensor(np.ones((6, 6)))))
            h = ad.dropout(h, 0.2, streams.get("d"))
            return ad.softmax(h, axis=-1).data
        np.testing.assert_array_equal(run(), run())

    def test_grad_accumulates_over_shared_use(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = ad.sum_(ad.add(ad.mul(x, x), x))  # x^2 + x
        y.backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ad.mul(x, x).backward()

    def test_finite_grads_on_deep_graph(self):
        rng = np.random.default_rng(8)
        x = Tensor(rand(rng, 4, 8), requires_grad=True)
        h = x
        for _ in range(5):
            h = ad.tanh(ad.matmul(h, Tensor(rand(rng, 8, 8))))
        ad.sum_(ad.mul(h, h)).backward()
        assert np.all(np.isfinite(x.grad))


PRIMITIVE_CASES = {
    "add": (lambda a, b: ad.sum_(ad.add(a, b)), lambda r: [r.standard_normal((3, 4)), r.standard_normal(4)]),
    "mul": (lambda a, b: ad.sum_(ad.mul(a, b)), lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))]),
    "div": (lambda a, b: ad.sum_(ad.div(a, b)), lambda r: [r.standard_normal((3, 4)), 1.5 + r.random((3, 4))]),
    "scale": (lambda a: ad.sum_(ad.scale(a, -1.7)), lambda r: [r.standard_normal((3, 4))]),
    "tanh": (lambda a: ad.sum_(ad.tanh(a)), lambda r: [r.standard_normal((3, 4))]),
    "exp": (lambda a: ad.sum_(ad.exp(a)), lambda r: [r.standard_normal((3, 4))]),
    "log": (lambda a: ad.sum_(ad.log(a)), lambda r: [0.5 + r.random((3, 4))]),
    "sqrt": (lambda a: ad.sum_(ad.sqrt(a)), lambda r: [0.5 + r.random((3, 4))]),
    "softmax": (lambda a: ad.sum_(ad.mul(ad.softmax(a, temperature=0.7),
                                         Tensor(np.arange(12.0).reshape(3, 4)))),
                lambda r: [r.standard_normal((3, 4))]),
    "mean": (lambda a: ad.mean(ad.mul(a, a)), lambda r: [r.standard_normal((5, 2))]),
    "getitem": (lambda a: ad.sum_(ad.getitem(a, (slice(None), 0))), lambda r: [r.standard_normal((3, 4))]),
    "reshape": (lambda a: ad.sum_(ad.mul(ad.reshape(a, (2, 6)), ad.reshape(a, (2, 6)))),
                lambda r: [r.standard_normal((3, 4))]),
    "transpose": (lambda a: ad.sum_(ad.mul(ad.transpose(a, (1, 0)), ad.transpose(a, (1, 0)))),
                  lambda r: [r.standard_normal((3, 4))]),
    "l2_norm": (lambda a: ad.sum_(ad.l2_norm(a, axis=-1)), lambda r: [1.0 + r.random((3, 4))]),
    "cosine_sim": (lambda a, b: ad.cosine_sim(a, b),
                   lambda r: [1.0 + r.random(5), -1.0 - r.random(5)]),
    "embedding": (lambda t: ad.sum_(ad.mul(ad.embedding(t, np.array([0, 2, 2, 1])),
                                           Tensor(np.arange(12.0).reshape(4, 3)))),
                  lambda r: [r.standard_normal((3, 3))]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    f, make = PRIMITIVE_CASES[name]
    for trial in range(5):
        rng = np.random.default_rng(1000 + 17 * trial)
        check_gradients(f, make(rng), rtol=1e-6)
