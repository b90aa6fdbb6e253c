import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbor import autodiff as ad
from arbor.autodiff import ShapeError, Tape, TapeError, Tensor


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=float), requires_grad=grad)


def check_op(build, params, tol=1e-6, seed=0, coords=40):
    report = ad.grad_check(build, params, rng=np.random.default_rng(seed),
                           total_coords=coords, tol=tol)
    assert report.passed, report.worst
    return report


class TestForwardValues:
    def test_softmax_symmetry(self):
        out = ad.softmax(t([0.0, 0.0]))
        assert np.allclose(out.data, [0.5, 0.5])

    def test_elu_definition(self):
        out = ad.elu(t([-1e9, 2.0, 0.0, -0.5]))
        assert out.data[0] == pytest.approx(-1.0)
        assert out.data[1] == 2.0
        assert out.data[2] == 0.0
        assert out.data[3] == pytest.approx(np.expm1(-0.5))

    def test_softmax_is_distribution(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = t(rng.standard_normal(int(rng.integers(1, 9))) * 10)
            y = ad.softmax(x).data
            assert (y >= 0).all()
            assert abs(y.sum() - 1.0) < 1e-9

    def test_log_softmax_matches_log_of_softmax(self):
        x = t(np.random.default_rng(1).standard_normal(7))
        assert np.allclose(ad.log_softmax(x).data, np.log(ad.softmax(x).data))

    def test_bias_add_broadcast(self):
        out = ad.add(t(np.ones((2, 3))), t([1.0, 2.0, 3.0]))
        assert np.allclose(out.data, [[2, 3, 4], [2, 3, 4]])

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            ad.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_matmul_shapes(self):
        a, b = t(np.ones((2, 3))), t(np.ones((3, 4)))
        assert ad.matmul(a, b).shape == (2, 4)
        assert ad.matmul(a, t(np.ones(3))).shape == (2,)
        assert ad.matmul(t(np.ones(2)), a).shape == (3,)
        assert ad.matmul(t(np.ones(3)), t(np.ones(3))).shape == ()
        with pytest.raises(ShapeError):
            ad.matmul(a, t(np.ones((2, 2))))

    def test_dropout_inverted_scaling(self):
        rng = np.random.default_rng(0)
        x = t(np.ones(10000))
        out = ad.dropout(x, 0.25, train=True, rng=rng)
        kept = out.data[out.data > 0]
        assert np.allclose(kept, 1 / 0.75)
        assert abs(len(kept) / 10000 - 0.75) < 0.02
        # eval mode is the identity
        assert ad.dropout(x, 0.25, train=False) is x

    def test_embedding_gather_bounds(self):
        table = t(np.arange(12.0).reshape(4, 3))
        with pytest.raises(IndexError):
            ad.embedding_gather(table, [4])


class TestBackward:
    def test_sum_softmax_grad_is_zero(self):
        x = t([0.3, -1.0, 2.0])
        with Tape() as tape:
            loss = ad.sum_all(ad.softmax(x))
        tape.backward(loss)
        assert np.allclose(x.grad, 0.0)

    def test_unused_tensor_gets_no_grad(self):
        x, y = t([1.0, 2.0]), t([3.0, 4.0])
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(x, x))
        tape.backward(loss)
        assert y.grad is None

    def test_gradients_accumulate_over_shared_use(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            loss = ad.add(ad.sum_all(x), ad.sum_all(x))
        tape.backward(loss)
        assert np.allclose(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, 2.0)
            with pytest.raises(ShapeError, match="scalar"):
                tape.backward(y)

    def test_double_backward_rejected(self):
        x = t([1.0])
        with Tape() as tape:
            loss = ad.sum_all(x)
        tape.backward(loss)
        with pytest.raises(TapeError, match="consumed"):
            tape.backward(loss)

    def test_no_tape_means_no_recording(self):
        x = t([1.0, 2.0])
        y = ad.mul(x, x)
        assert not y.requires_grad

    def test_matmul_grad_outer_structure(self):
        rng = np.random.default_rng(0)
        w = t(rng.standard_normal((3, 4)))
        x = t(rng.standard_normal(4), grad=False)
        with Tape() as tape:
            loss = ad.sum_all(ad.matmul(w, x))
        tape.backward(loss)
        assert np.allclose(w.grad, np.broadcast_to(x.data, (3, 4)))


PRIMITIVES = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "maximum": lambda a, b: ad.maximum(a, b),
    "minimum": lambda a, b: ad.minimum(a, b),
}


class TestPrimitiveGradients:
    @pytest.mark.parametrize("name", sorted(PRIMITIVES))
    def test_binary_elementwise(self, name):
        rng = np.random.default_rng(sum(ord(c) for c in name))
        for trial in range(20):
            shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 3))))
            a, b = t(rng.standard_normal(shape)), t(rng.standard_normal(shape))
            op = PRIMITIVES[name]
            check_op(lambda: ad.sum_all(op(a, b)), [("a", a), ("b", b)], coords=8,
                     seed=trial)

    @pytest.mark.parametrize("unary", ["log", "exp", "tanh", "sigmoid", "elu",
                                       "softmax", "log_softmax"])
    def test_unary(self, unary):
        rng = np.random.default_rng(sum(ord(c) for c in unary))
        op = getattr(ad, unary)
        for trial in range(20):
            x = rng.standard_normal(int(rng.integers(1, 7)))
            if unary == "log":
                x = np.abs(x) + 0.5
            xt = t(x)
            weights = ad.constant(rng.standard_normal(x.shape))
            check_op(lambda: ad.sum_all(ad.mul(op(xt), weights)), [("x", xt)],
                     coords=8, seed=trial)

    def test_matmul_all_rank_combos(self):
        rng = np.random.default_rng(42)
        cases = [((3, 4), (4, 2)), ((3, 4), (4,)), ((3,), (3, 5)), ((4,), (4,))]
        for sa, sb in cases:
            a, b = t(rng.standard_normal(sa)), t(rng.standard_normal(sb))
            check_op(lambda: ad.sum_all(ad.matmul(a, b)) if ad.matmul(a, b).ndim
                     else ad.matmul(a, b), [("a", a), ("b", b)], coords=16)

    def test_concat_narrow_reshape_stack(self):
        rng = np.random.default_rng(7)
        a, b = t(rng.standard_normal((2, 3))), t(rng.standard_normal((2, 2)))
        v = t(rng.standard_normal(4))

        def build():
            cat = ad.concat([a, b], axis=1)  # (2, 5)
            sl = ad.narrow(cat, 1, 1, 4)  # (2, 3)
            flat = ad.reshape(sl, (6,))
            stacked = ad.stack_rows([flat, flat])  # (2, 6)
            return ad.add(ad.sum_all(stacked), ad.element(v, 2))

        check_op(build, [("a", a), ("b", b), ("v", v)], coords=24)

    def test_amax_and_repeat_rows(self):
        rng = np.random.default_rng(9)
        x = t(rng.standard_normal((4, 3)))
        v = t(rng.standard_normal(5))

        def build():
            pooled = ad.amax(x, axis=0)  # (3,)
            tiled = ad.repeat_rows(v, 3)  # (3, 5)
            return ad.add(ad.sum_all(pooled), ad.sum_all(tiled))

        check_op(build, [("x", x), ("v", v)], coords=27)

    def test_embedding_gather_scatter_adds(self):
        table = t(np.random.default_rng(3).standard_normal((5, 2)))
        with Tape() as tape:
            rows = ad.embedding_gather(table, [1, 1, 4])
            loss = ad.sum_all(rows)
        tape.backward(loss)
        expected = np.zeros((5, 2))
        expected[1] = 2.0
        expected[4] = 1.0
        assert np.allclose(table.grad, expected)

    def test_sum_axis_and_transpose(self):
        rng = np.random.default_rng(11)
        x = t(rng.standard_normal((3, 4)))
        check_op(lambda: ad.sum_all(ad.mul(ad.sum_axis(x, 0), ad.sum_axis(x, 0))),
                 [("x", x)], coords=12)
        check_op(lambda: ad.sum_all(ad.matmul(ad.transpose(x), x)), [("x", x)], coords=12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_random_composites_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        w = t(rng.standard_normal((m, n)))
        x = t(rng.standard_normal(n))
        b = t(rng.standard_normal(m))

        def build():
            h = ad.elu(ad.add(ad.matmul(w, x), b))
            p = ad.softmax(h)
            return ad.add(ad.sum_all(ad.mul(p, ad.tanh(h))),
                          ad.sum_all(ad.minimum(h, ad.exp(h))))

        report = ad.grad_check(build, [("w", w), ("x", x), ("b", b)],
                               rng=rng, total_coords=12, tol=1e-5)
        assert report.passed, report.worst


class TestGradCheckReport:
    def test_detects_wrong_gradient(self):
        x = t([1.0, 2.0, 3.0])

        calls = {"n": 0}

        def build():
            # deliberately inconsistent objective: value changes between
            # analytic and numeric passes
            calls["n"] += 1
            scale = 1.0 if calls["n"] == 1 else 1.5
            return ad.sum_all(ad.mul(x, scale))

        report = ad.grad_check(build, [("x", x)], total_coords=3, tol=1e-4)
        assert not report.passed
        assert report.failures
