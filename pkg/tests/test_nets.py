import numpy as np
import pytest

from bicl.errors import ContractViolation
from bicl.nets import (Adam, Mlp, apply_update, gradient_check, load_net,
                       save_net)
from bicl.nets.mlp import SNAPSHOT_MAGIC

from .oracles import numeric_param_gradients


def linear_net(w, b, head="identity"):
    """Single-layer net with given weight matrix and bias."""
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    net = Mlp((w.shape[0], w.shape[1]), head=head)
    net.weights[0][:] = w
    net.biases[0][:] = b
    return net


class TestForward:
    def test_zero_weights_identity_head_returns_bias(self):
        net = linear_net(np.zeros((2, 3)), [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(net.forward([5.0, -4.0]), [1.0, 2.0, 3.0])

    def test_identity_weight_matrix_passes_input_through(self):
        net = linear_net(np.eye(3), np.zeros(3))
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(net.forward(x), x)

    def test_softmax_on_equal_logits_is_uniform(self):
        net = linear_net(np.zeros((2, 2)), [0.0, 0.0], head="softmax")
        np.testing.assert_allclose(net.forward([1.0, 1.0]), [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self):
        net = Mlp((3, 8, 4), head="softmax", seed=3)
        out = net.forward_batch(np.random.default_rng(0).normal(size=(16, 3)))
        np.testing.assert_allclose(out.sum(axis=1), np.ones(16), atol=1e-9)

    def test_tanh_head_bounded(self):
        net = Mlp((2, 16, 3), head="tanh", seed=1)
        out = net.forward_batch(np.random.default_rng(1).normal(size=(32, 2)) * 9)
        assert np.all(np.abs(out) < 1.0)

    def test_relu_hidden_layer_hand_computed(self):
        net = Mlp((2, 2, 1), head="identity", seed=0)
        net.weights[0][:] = [[1.0, -1.0], [0.0, 1.0]]
        net.biases[0][:] = [0.0, 0.0]
        net.weights[1][:] = [[2.0], [3.0]]
        net.biases[1][:] = [0.5]
        # hidden = relu([x0, x1 - x0]); out = 2 h0 + 3 h1 + 0.5
        assert net.forward([1.0, 3.0])[0] == pytest.approx(2.0 + 6.0 + 0.5)
        assert net.forward([2.0, 1.0])[0] == pytest.approx(4.0 + 0.0 + 0.5)

    def test_dimension_mismatch_rejected(self):
        net = Mlp((3, 2), seed=0)
        with pytest.raises(ContractViolation):
            net.forward([1.0, 2.0])
        with pytest.raises(ContractViolation):
            net.forward_batch(np.zeros((4, 2)))

    def test_forward_deterministic(self):
        net = Mlp((3, 5, 2), seed=9)
        x = np.array([0.1, 0.2, 0.3])
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_bad_sizes_and_head(self):
        with pytest.raises(ContractViolation):
            Mlp((3,))
        with pytest.raises(ContractViolation):
            Mlp((3, 0))
        with pytest.raises(ContractViolation):
            Mlp((3, 2), head="softplus")

    def test_seed_determinism_of_init(self):
        a, b = Mlp((4, 6, 2), seed=11), Mlp((4, 6, 2), seed=11)
        for pa, pb in zip(a.param_arrays(), b.param_arrays()):
            np.testing.assert_array_equal(pa, pb)


class TestBackward:
    def test_zero_upstream_zero_grads(self):
        net = Mlp((3, 4, 2), seed=2)
        grads = net.backward(np.array([0.4, -0.2, 1.0]), np.zeros(2))
        for dw, db in grads:
            assert not dw.any()
            assert not db.any()

    def test_one_layer_linear_product_rule(self):
        net = linear_net(np.array([[2.0], [3.0]]), [0.0])
        x = np.array([0.7, -1.3])
        (dw, db), = net.backward(x, np.array([2.0]))
        np.testing.assert_allclose(dw, 2.0 * x[:, None])
        np.testing.assert_allclose(db, [2.0])

    @pytest.mark.parametrize("head", ["identity", "tanh", "softmax"])
    def test_matches_finite_differences(self, head):
        rng = np.random.default_rng(hash(head) % 2 ** 31)
        net = Mlp((3, 5, 4, 2), head=head, seed=int(rng.integers(1000)))
        x = rng.normal(size=3)
        probe = rng.normal(size=2)

        def loss_of(out):
            return float(probe @ out)

        analytic = net.backward(x, probe)
        numeric = numeric_param_gradients(net, x, loss_of)
        for (adw, adb), (ndw, ndb) in zip(analytic, numeric):
            np.testing.assert_allclose(adw, ndw, atol=1e-6)
            np.testing.assert_allclose(adb, ndb, atol=1e-6)

    def test_fused_xent_equals_softmax_jacobian_path(self):
        # dLoss/dlogits = probs - onehot must agree with pushing
        # dLoss/dprobs = -onehot/probs through the softmax activation.
        rng = np.random.default_rng(5)
        net = Mlp((4, 6, 3), head="softmax", seed=4)
        x = rng.normal(size=4)
        cls = 1
        probs = net.forward(x)
        fused_up = probs.copy()
        fused_up[cls] -= 1.0
        fused = net.backward(x, fused_up, from_logits=True)
        chain_up = np.zeros(3)
        chain_up[cls] = -1.0 / probs[cls]
        chained = net.backward(x, chain_up)
        for (fdw, fdb), (cdw, cdb) in zip(fused, chained):
            np.testing.assert_allclose(fdw, cdw, atol=1e-12)
            np.testing.assert_allclose(fdb, cdb, atol=1e-12)

    def test_upstream_shape_mismatch(self):
        net = Mlp((2, 3), seed=0)
        acts = net.forward_cached(np.zeros((4, 2)))
        with pytest.raises(ContractViolation):
            net.backward_batch(acts, np.zeros((4, 2)))

    def test_want_dx_returns_input_gradient(self):
        net = linear_net(np.array([[2.0], [3.0]]), [0.0])
        acts = net.forward_cached(np.array([[1.0, 1.0]]))
        _, dx = net.backward_batch(acts, np.ones((1, 1)), want_dx=True,
                                   want_params=False)
        np.testing.assert_allclose(dx, [[2.0, 3.0]])


class TestGradientCheck:
    def test_linear_quadratic_is_tiny(self):
        net = Mlp((2, 3), head="identity", seed=8)
        err = gradient_check(net, [0.5, -0.25], "quadratic", seed=1)
        assert err < 1e-8

    def test_relu_net_dot_loss(self):
        net = Mlp((3, 6, 4), head="identity", seed=13)
        assert gradient_check(net, [0.3, 0.9, -0.6], "dot", seed=2) < 1e-4

    def test_tanh_head(self):
        net = Mlp((3, 5, 2), head="tanh", seed=21)
        assert gradient_check(net, [0.2, -0.8, 0.5], "quadratic", seed=3) < 1e-4

    def test_xent_needs_softmax(self):
        net = Mlp((2, 2), head="identity", seed=0)
        with pytest.raises(ContractViolation):
            gradient_check(net, [0.1, 0.2], "xent")

    def test_unknown_tag(self):
        net = Mlp((2, 2), seed=0)
        with pytest.raises(ContractViolation):
            gradient_check(net, [0.1, 0.2], "hinge")


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        net = Mlp((2, 3, 2), seed=6)
        before = [p.copy() for p in net.param_arrays()]
        opt = Adam(net, lr=0.1)
        grads = [(np.zeros_like(w), np.zeros_like(b))
                 for w, b in zip(net.weights, net.biases)]
        apply_update(net, grads, opt)
        for p, q in zip(net.param_arrays(), before):
            np.testing.assert_array_equal(p, q)

    def test_single_step_hand_trace(self):
        # Loss w^2 at w=1: grad 2. Bias-corrected Adam moves by
        # lr * g / (|g| + eps) on the first step regardless of magnitude.
        net = linear_net([[1.0]], [0.0])
        opt = Adam(net, lr=0.1)
        opt.step(net, [(np.array([[2.0]]), np.array([0.0]))])
        w = net.weights[0][0, 0]
        assert w == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
        assert abs(w) < 1.0

    def test_determinism(self):
        def run():
            net = Mlp((2, 4, 1), seed=3)
            opt = Adam(net, lr=0.01)
            g = [(np.full_like(w, 0.1), np.full_like(b, -0.2))
                 for w, b in zip(net.weights, net.biases)]
            for _ in range(5):
                opt.step(net, g)
            return [p.copy() for p in net.param_arrays()]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_bad_lr_and_mismatched_grads(self):
        net = Mlp((2, 2), seed=0)
        with pytest.raises(ContractViolation):
            Adam(net, lr=0.0)
        opt = Adam(net, lr=0.1)
        with pytest.raises(ContractViolation):
            opt.step(net, [])

    def test_repeated_steps_descend_quadratic(self):
        net = linear_net([[2.0]], [0.0])
        opt = Adam(net, lr=0.05)
        for _ in range(200):
            w = net.weights[0][0, 0]
            opt.step(net, [(np.array([[2.0 * w]]), np.array([0.0]))])
        assert abs(net.weights[0][0, 0]) < 0.05


class TestSnapshots:
    def test_roundtrip(self, tmp_path):
        net = Mlp((3, 7, 2), head="tanh", seed=17)
        path = tmp_path / "net.bin"
        save_net(net, path)
        loaded = load_net(path, head="tanh")
        assert loaded.sizes == net.sizes
        assert loaded.head == "tanh"
        for a, b in zip(net.param_arrays(), loaded.param_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_magic_prefix(self, tmp_path):
        path = tmp_path / "net.bin"
        save_net(Mlp((2, 2), seed=0), path)
        assert path.read_bytes()[:8] == SNAPSHOT_MAGIC

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "net.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ContractViolation):
            load_net(path)

    def test_truncated_body_rejected(self, tmp_path):
        path = tmp_path / "net.bin"
        save_net(Mlp((3, 4), seed=0), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ContractViolation):
            load_net(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "net.bin"
        save_net(Mlp((3, 4), seed=0), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ContractViolation):
            load_net(path)

    def test_loaded_net_forwards_identically(self, tmp_path):
        net = Mlp((4, 8, 3), head="softmax", seed=23)
        path = tmp_path / "net.bin"
        save_net(net, path)
        loaded = load_net(path, head="softmax")
        x = np.random.default_rng(2).normal(size=(5, 4))
        np.testing.assert_array_equal(net.forward_batch(x),
                                      loaded.forward_batch(x))


class TestBackendParity:
    def test_pure_and_compiled_kernels_agree(self):
        try:
            from bicl.nets import _ckernels
        except ImportError:
            pytest.skip("compiled kernels not built")
        from bicl.nets import _pykernels
        rng = np.random.default_rng(31)
        x = rng.normal(size=(8, 5))
        w = rng.normal(size=(5, 4))
        b = rng.normal(size=4)
        for code in (_pykernels.IDENTITY, _pykernels.RELU, _pykernels.TANH,
                     _pykernels.SOFTMAX):
            fc = _ckernels.linear_act_forward(x, w, b, code)
            fp = _pykernels.linear_act_forward(x, w, b, code)
            np.testing.assert_allclose(fc, fp, rtol=1e-12, atol=1e-15)
            g = rng.normal(size=fc.shape)
            dc = _ckernels.act_backward(g, fc, code)
            dp = _pykernels.act_backward(g, fp, code)
            np.testing.assert_allclose(dc, dp, rtol=1e-12, atol=1e-15)
        delta = rng.normal(size=(8, 4))
        for want_dx, want_params in ((True, True), (True, False), (False, True)):
            rc = _ckernels.linear_backward(delta, x, w, want_dx, want_params)
            rp = _pykernels.linear_backward(delta, x, w, want_dx, want_params)
            for ac, ap in zip(rc, rp):
                if ac is None or ap is None:
                    assert ac is None and ap is None
                    continue
                np.testing.assert_allclose(ac, ap, rtol=1e-12, atol=1e-15)

    def test_adam_kernels_agree(self):
        try:
            from bicl.nets import _ckernels
        except ImportError:
            pytest.skip("compiled kernels not built")
        from bicl.nets import _pykernels
        rng = np.random.default_rng(37)
        args = [rng.normal(size=12) for _ in range(2)]
        state_c = [a.copy() for a in args] + [np.zeros(12), np.zeros(12)]
        state_p = [a.copy() for a in args] + [np.zeros(12), np.zeros(12)]
        for t in range(1, 4):
            bc1, bc2 = 1 - 0.9 ** t, 1 - 0.999 ** t
            _ckernels.adam_step(*state_c, 0.01, 0.9, 0.999, 1e-8, bc1, bc2)
            _pykernels.adam_step(*state_p, 0.01, 0.9, 0.999, 1e-8, bc1, bc2)
        for a, b in zip(state_c, state_p):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
