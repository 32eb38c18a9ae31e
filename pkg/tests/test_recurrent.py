import numpy as np
import pytest

from helpers import fd_grad, rel_err
from mature.autodiff import Tensor, grad_check, mse, zero_grads
from mature.errors import ContractError, DimensionError
from mature.recurrent import (
    LstmState,
    init_lstm_params,
    lstm_gates,
    lstm_init,
    lstm_step,
    lstm_unroll,
)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def ref_lstm_step(p, h, c, x):
    """Straight-line numpy mirror of the six cell equations (no tape)."""
    i = _sig(p["W_i"] @ x + p["U_i"] @ h + p["b_i"])
    f = _sig(p["W_f"] @ x + p["U_f"] @ h + p["b_f"])
    o = _sig(p["W_o"] @ x + p["U_o"] @ h + p["b_o"])
    g = np.tanh(p["W_g"] @ x + p["U_g"] @ h + p["b_g"])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def numpy_view(params):
    return {name.split(".")[-1]: p.data for name, p in
            ((q.name, q) for q in params.parameters())}


def zeroed_params(n_in, n_hidden):
    p = init_lstm_params("lstm", n_in, n_hidden, seed=0)
    for q in p.parameters():
        q.data[...] = 0.0
    return p


class TestLstmStep:
    def test_zero_weights_closed_form(self):
        p = zeroed_params(2, 3)
        st = lstm_init(3)
        i, f, o, g, c = lstm_gates(p, st, Tensor([5.0, -7.0]))
        np.testing.assert_array_equal(i.data, [0.5] * 3)
        np.testing.assert_array_equal(f.data, [0.5] * 3)
        np.testing.assert_array_equal(o.data, [0.5] * 3)
        np.testing.assert_array_equal(g.data, [0.0] * 3)
        np.testing.assert_array_equal(c.data, [0.0] * 3)
        out = lstm_step(p, st, Tensor([5.0, -7.0]))
        np.testing.assert_array_equal(out.h.data, [0.0] * 3)

    def test_zero_weights_nonzero_cell(self):
        p = zeroed_params(1, 1)
        st = LstmState(h=Tensor([0.0]), c=Tensor([1.0]))
        out = lstm_step(p, st, Tensor([0.3]))
        np.testing.assert_allclose(out.c.data, [0.5], atol=1e-15)
        np.testing.assert_allclose(out.h.data, [0.5 * np.tanh(0.5)], atol=1e-15)
        np.testing.assert_allclose(out.h.data, [0.231059], atol=1e-6)

    def test_three_steps_match_scalar_reference(self):
        rng = np.random.default_rng(0)
        p = init_lstm_params("lstm", 3, 4, seed=0)
        ref = numpy_view(p)
        xs = rng.normal(size=(3, 3))
        h = np.zeros(4)
        c = np.zeros(4)
        for x in xs:
            h, c = ref_lstm_step(ref, h, c, x)
        states = lstm_unroll(p, lstm_init(4), [Tensor(x) for x in xs])
        np.testing.assert_allclose(states[-1].h.data, h, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(states[-1].c.data, c, rtol=1e-14, atol=1e-15)

    def test_shape_mismatch(self):
        p = init_lstm_params("lstm", 3, 4, seed=0)
        with pytest.raises(DimensionError):
            lstm_step(p, lstm_init(4), Tensor([1.0, 2.0]))
        with pytest.raises(DimensionError):
            lstm_step(p, lstm_init(5), Tensor([1.0, 2.0, 3.0]))

    def test_batched_step_matches_per_sample(self):
        rng = np.random.default_rng(5)
        p = init_lstm_params("lstm", 3, 4, seed=1)
        xs = rng.normal(size=(6, 3))
        batched = lstm_step(p, lstm_init(4, batch=6), Tensor(xs))
        for j in range(6):
            single = lstm_step(p, lstm_init(4), Tensor(xs[j]))
            np.testing.assert_allclose(batched.h.data[j], single.h.data, rtol=1e-13, atol=1e-15)


class TestLstmUnroll:
    def test_length_one_equals_step(self):
        p = init_lstm_params("lstm", 2, 3, seed=2)
        x = Tensor([0.1, -0.2])
        st = lstm_unroll(p, lstm_init(3), [x])[0]
        ref = lstm_step(p, lstm_init(3), x)
        np.testing.assert_array_equal(st.h.data, ref.h.data)

    def test_zero_params_all_steps_closed_form(self):
        p = zeroed_params(2, 3)
        states = lstm_unroll(p, lstm_init(3), [Tensor([1.0, 2.0])] * 5)
        for st in states:
            np.testing.assert_array_equal(st.h.data, [0.0] * 3)
            np.testing.assert_array_equal(st.c.data, [0.0] * 3)

    def test_unroll_equals_composed_steps(self):
        rng = np.random.default_rng(3)
        p = init_lstm_params("lstm", 2, 4, seed=3)
        xs = [Tensor(rng.normal(size=2)) for _ in range(12)]
        states = lstm_unroll(p, lstm_init(4), xs)
        st = lstm_init(4)
        for x in xs:
            st = lstm_step(p, st, x)
        np.testing.assert_array_equal(states[-1].h.data, st.h.data)
        np.testing.assert_array_equal(states[-1].c.data, st.c.data)

    def test_empty_sequence(self):
        p = init_lstm_params("lstm", 2, 3, seed=0)
        with pytest.raises(ContractError):
            lstm_unroll(p, lstm_init(3), [])


class TestInvariants:
    def test_gate_ranges(self):
        rng = np.random.default_rng(11)
        p = init_lstm_params("lstm", 3, 5, seed=11)
        st = lstm_init(5)
        for _ in range(20):
            i, f, o, g, c = lstm_gates(p, st, Tensor(rng.normal(size=3)))
            for gate in (i, f, o):
                assert np.all(gate.data > 0) and np.all(gate.data < 1)
            assert np.all(g.data > -1) and np.all(g.data < 1)
            st = lstm_step(p, st, Tensor(rng.normal(size=3)))

    def test_cell_conserved_with_saturated_gates(self):
        # sigmoid(50) rounds to exactly 1.0 and sigmoid(-50) contributes
        # below one ulp of c, so c must be carried through bitwise.
        p = zeroed_params(2, 3)
        p.b_f.data[...] = 50.0
        p.b_i.data[...] = -50.0
        c0 = np.array([1.357, -0.25, 0.875])
        st = LstmState(h=Tensor(np.zeros(3)), c=Tensor(c0))
        for _ in range(50):
            st = lstm_step(p, st, Tensor([0.9, -1.1]))
        np.testing.assert_array_equal(st.c.data, c0)

    def test_long_rollout_stays_finite(self):
        rng = np.random.default_rng(4)
        p = init_lstm_params("lstm", 2, 4, seed=4)
        # freeze params so no tape is kept and memory stays constant
        for q in p.parameters():
            q.requires_grad = False
        st = lstm_init(4)
        xs = rng.uniform(-1, 1, size=(10_000, 2))
        for x in xs:
            st = lstm_step(p, st, Tensor(x))
        assert np.all(np.isfinite(st.c.data)) and np.all(np.isfinite(st.h.data))

    def test_gradients_through_12_step_unroll(self):
        rng = np.random.default_rng(12)
        p = init_lstm_params("lstm", 3, 4, seed=12)
        xs = [Tensor(rng.normal(size=3)) for _ in range(12)]
        target = rng.normal(size=4)

        def forward():
            return mse(lstm_unroll(p, lstm_init(4), xs)[-1].h, target)

        report = grad_check(forward, p.parameters(), tolerance=1e-4)
        assert report.passed, report.format()
