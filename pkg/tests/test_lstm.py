import numpy as np
import numpy.testing as npt
import pytest

from relsql import autodiff as ad
from relsql import lstm
from relsql.autodiff import Tensor, grad_check


@pytest.fixture
def fp64():
    ad.set_dtype("float64")
    yield
    ad.set_dtype("float32")


def tiny_params(in_dim, hidden, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    p = lstm.init_lstm("t", in_dim, hidden, rng)
    p.w.data = (rng.normal(size=p.w.data.shape) * scale).astype(p.w.data.dtype)
    p.u.data = (rng.normal(size=p.u.data.shape) * scale).astype(p.u.data.dtype)
    p.b.data = (rng.normal(size=p.b.data.shape) * scale).astype(p.b.data.dtype)
    return p


def reference_lstm(xs, w, u, b, hidden):
    """Straight-line reimplementation: gate order (i, f, g, o), zero init."""
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    outs = []
    for x in xs:
        pre = x @ w + h @ u + b
        sig = lambda z: 1.0 / (1.0 + np.exp(-z))
        i = sig(pre[:hidden])
        f = sig(pre[hidden:2 * hidden])
        g = np.tanh(pre[2 * hidden:3 * hidden])
        o = sig(pre[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        outs.append(h.copy())
    return outs


def test_three_step_sequence_matches_reference(fp64):
    in_dim, hidden = 3, 4
    p = tiny_params(in_dim, hidden, seed=1)
    rng = np.random.default_rng(2)
    xs_np = [rng.normal(size=in_dim) for _ in range(3)]
    xs = [Tensor(x.reshape(1, -1)) for x in xs_np]
    outs, h_final, _ = lstm.run_lstm(xs, p, collect=True)
    ref = reference_lstm(xs_np, p.w.data, p.u.data, p.b.data, hidden)
    for got, want in zip(outs, ref):
        npt.assert_allclose(got.data[0], want, atol=1e-12)
    npt.assert_allclose(h_final.data[0], ref[-1], atol=1e-12)


def test_zero_weights_give_zero_outputs():
    p = tiny_params(2, 3, seed=0)
    for t in (p.w, p.u, p.b):
        t.data[...] = 0.0
    xs = [Tensor(np.ones((1, 2))) for _ in range(4)]
    outs, h, c = lstm.run_lstm(xs, p, collect=True)
    for o in outs:
        npt.assert_array_equal(o.data, np.zeros((1, 3)))


def test_empty_sequence_is_an_error():
    p = tiny_params(2, 3, seed=0)
    with pytest.raises(ValueError, match="empty"):
        lstm.run_lstm([], p)
    rng = np.random.default_rng(0)
    emb = Tensor(rng.normal(size=(5, 2)))
    bi = lstm.BiLstmParams(tiny_params(2, 3, 0), tiny_params(2, 3, 1))
    with pytest.raises(ValueError, match="empty"):
        lstm.bilstm_endpoints([[1], []], emb, bi, 0.0, False, None)
    with pytest.raises(ValueError, match="empty"):
        lstm.bilstm_sequence([], emb, bi, 0.0, False, None)


def test_length_one_sequence_uses_single_token_both_directions(fp64):
    rng = np.random.default_rng(4)
    emb = Tensor(rng.normal(size=(6, 3)))
    bi = lstm.BiLstmParams(tiny_params(3, 4, 7), tiny_params(3, 4, 8))
    out = lstm.bilstm_sequence([2], emb, bi, 0.0, False, None)
    x = emb.data[2]
    fwd = reference_lstm([x], bi.fwd.w.data, bi.fwd.u.data, bi.fwd.b.data, 4)[0]
    rev = reference_lstm([x], bi.rev.w.data, bi.rev.u.data, bi.rev.b.data, 4)[0]
    npt.assert_allclose(out.data[0], np.concatenate([fwd, rev]), atol=1e-12)


def test_batched_endpoints_match_per_sequence_runs(fp64):
    """Padded batching must not change any sequence's endpoint states."""
    rng = np.random.default_rng(9)
    emb = Tensor(rng.normal(size=(10, 3)))
    bi = lstm.BiLstmParams(tiny_params(3, 4, 11), tiny_params(3, 4, 12))
    seqs = [[1], [2, 3, 4], [5, 6], [7, 8, 9, 1, 2]]
    batched = lstm.bilstm_endpoints(seqs, emb, bi, 0.0, False, None)
    for row, seq in enumerate(seqs):
        fwd_ref = reference_lstm([emb.data[i] for i in seq],
                                 bi.fwd.w.data, bi.fwd.u.data, bi.fwd.b.data, 4)[-1]
        rev_ref = reference_lstm([emb.data[i] for i in reversed(seq)],
                                 bi.rev.w.data, bi.rev.u.data, bi.rev.b.data, 4)[-1]
        npt.assert_allclose(batched.data[row], np.concatenate([fwd_ref, rev_ref]), atol=1e-12)


def test_recurrent_dropout_reuses_one_mask_per_sequence():
    ad.set_dtype("float64")
    try:
        rng = np.random.default_rng(3)
        emb = Tensor(np.ones((4, 2)))
        bi = lstm.BiLstmParams(tiny_params(2, 50, 1), tiny_params(2, 50, 2))
        # rate high enough that a resampled mask would almost surely differ
        out1 = lstm.bilstm_sequence([1, 1, 1], emb, bi, 0.5, True, np.random.default_rng(3))
        out2 = lstm.bilstm_sequence([1, 1, 1], emb, bi, 0.5, True, np.random.default_rng(3))
        npt.assert_array_equal(out1.data, out2.data)  # same seed, same masks
        eval1 = lstm.bilstm_sequence([1, 1, 1], emb, bi, 0.5, False, None)
        eval2 = lstm.bilstm_sequence([1, 1, 1], emb, bi, 0.5, False, None)
        npt.assert_array_equal(eval1.data, eval2.data)  # eval mode needs no rng
    finally:
        ad.set_dtype("float32")


def test_lstm_cell_grad_check(fp64):
    p = tiny_params(3, 2, seed=21)
    rng = np.random.default_rng(22)
    x = Tensor(rng.normal(size=(2, 3)))
    h = Tensor(rng.normal(size=(2, 2)))
    c = Tensor(rng.normal(size=(2, 2)))

    def f():
        h2, c2 = lstm.lstm_cell(x, h, c, p)
        return ad.sum_all(ad.mul(ad.concat([h2, c2], axis=1), ad.concat([h2, c2], axis=1)))

    assert grad_check(f, [x, h, c, p.w, p.u, p.b]) < 1e-4


def test_bilstm_endpoints_grad_check_through_padding(fp64):
    rng = np.random.default_rng(31)
    emb = Tensor(rng.normal(size=(6, 2)))
    bi = lstm.BiLstmParams(tiny_params(2, 3, 32), tiny_params(2, 3, 33))

    def f():
        out = lstm.bilstm_endpoints([[1, 2, 3], [4]], emb, bi, 0.0, False, None)
        return ad.sum_all(ad.mul(out, out))

    assert grad_check(f, [emb, bi.fwd.w, bi.fwd.u, bi.rev.w]) < 1e-4


def test_forget_gate_bias_initialized_open():
    rng = np.random.default_rng(0)
    p = lstm.init_lstm("x", 4, 8, rng)
    npt.assert_array_equal(p.b.data[8:16], np.ones(8))
    assert np.all(np.abs(p.b.data[:8]) <= 1.0 / np.sqrt(8))
