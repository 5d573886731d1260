"""LSTM cell and bidirectional runners used by the encoders.

Gate layout in the packed projection is (input, forget, cell, output).
Recurrent dropout follows the variational scheme: one mask per sequence
per direction, applied to the hidden state fed into the gates and reused
at every time step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass
class LstmParams:
    w: Parameter  # (in_dim, 4*hidden)
    u: Parameter  # (hidden, 4*hidden)
    b: Parameter  # (4*hidden,)

    @property
    def hidden(self) -> int:
        return self.u.data.shape[0]

    def all(self) -> list[Parameter]:
        return [self.w, self.u, self.b]


def init_lstm(name: str, in_dim: int, hidden: int, rng: np.random.Generator) -> LstmParams:
    w = ad.uniform_param(f"{name}.w", (in_dim, 4 * hidden), rng)
    u = ad.uniform_param(f"{name}.u", (hidden, 4 * hidden), rng)
    b = ad.uniform_param(f"{name}.b", (4 * hidden,), rng, fan_in=hidden)
    b.data[hidden:2 * hidden] = 1.0  # forget gate starts open
    return LstmParams(w, u, b)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One step over a batch of rows: x (B,in), h/c (B,hidden)."""
    hid = params.hidden
    pre = ad.add(ad.add(ad.matmul(x, params.w), ad.matmul(h, params.u)), params.b)
    i = ad.sigmoid(ad.narrow(pre, 1, 0, hid))
    f = ad.sigmoid(ad.narrow(pre, 1, hid, hid))
    g = ad.tanh(ad.narrow(pre, 1, 2 * hid, hid))
    o = ad.sigmoid(ad.narrow(pre, 1, 3 * hid, hid))
    c_next = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_next = ad.mul(o, ad.tanh(c_next))
    return h_next, c_next


def recurrent_mask(batch: int, hidden: int, rate: float, training: bool,
                   rng: np.random.Generator | None) -> np.ndarray | None:
    if not training or rate == 0.0:
        return None
    if rng is None:
        raise ValueError("training-mode recurrent dropout needs an rng")
    keep = (rng.random((batch, hidden)) >= rate).astype(ad.current_dtype())
    return keep / (1.0 - rate)


def run_lstm(xs: list[Tensor], params: LstmParams, rec_mask: np.ndarray | None = None,
             step_masks: list[np.ndarray] | None = None,
             collect: bool = False) -> tuple[list[Tensor], Tensor, Tensor]:
    """Run a batch of sequences through one direction.

    xs: per-step inputs, each (B, in_dim). step_masks, when given, hold (B,1)
    arrays with 1 for live rows; state stays frozen past a sequence's end, so
    the returned final state is each row's state at its own last live step.
    Returns (per-step hidden states if collect else [], h_final, c_final).
    """
    if not xs:
        raise ValueError("run_lstm called with an empty sequence")
    batch = xs[0].data.shape[0]
    hid = params.hidden
    zeros = np.zeros((batch, hid), dtype=ad.current_dtype())
    h, c = Tensor(zeros), Tensor(zeros.copy())
    outputs: list[Tensor] = []
    for t, x in enumerate(xs):
        h_in = ad.cmul(h, rec_mask) if rec_mask is not None else h
        h_new, c_new = lstm_cell(x, h_in, c, params)
        if step_masks is not None:
            m = step_masks[t]
            h = ad.add(ad.cmul(h_new, m), ad.cmul(h, 1.0 - m))
            c = ad.add(ad.cmul(c_new, m), ad.cmul(c, 1.0 - m))
        else:
            h, c = h_new, c_new
        if collect:
            outputs.append(h)
    return outputs, h, c


@dataclass
class BiLstmParams:
    fwd: LstmParams
    rev: LstmParams

    def all(self) -> list[Parameter]:
        return self.fwd.all() + self.rev.all()


def init_bilstm(name: str, in_dim: int, hidden: int, rng: np.random.Generator) -> BiLstmParams:
    return BiLstmParams(init_lstm(f"{name}.fwd", in_dim, hidden, rng),
                        init_lstm(f"{name}.rev", in_dim, hidden, rng))


def bilstm_endpoints(token_ids: list[list[int]], emb_table: Tensor, params: BiLstmParams,
                     rec_rate: float, training: bool,
                     rng: np.random.Generator | None) -> Tensor:
    """Encode each id sequence to concat(forward final state, reverse first state).

    All sequences run as one padded batch per direction. Output is
    (len(token_ids), 2*hidden).
    """
    if any(len(seq) == 0 for seq in token_ids):
        raise ValueError("bilstm_endpoints: empty input sequence")
    batch = len(token_ids)
    max_len = max(len(seq) for seq in token_ids)
    dtype = ad.current_dtype()

    def padded(reverse: bool) -> tuple[list[Tensor], list[np.ndarray]]:
        xs, masks = [], []
        for t in range(max_len):
            ids = np.zeros(batch, dtype=np.int64)
            live = np.zeros((batch, 1), dtype=dtype)
            for r, seq in enumerate(token_ids):
                if t < len(seq):
                    ids[r] = seq[len(seq) - 1 - t] if reverse else seq[t]
                    live[r, 0] = 1.0
            xs.append(ad.embedding_lookup(emb_table, ids))
            masks.append(live)
        return xs, masks

    hid = params.fwd.hidden
    mask_f = recurrent_mask(batch, hid, rec_rate, training, rng)
    mask_r = recurrent_mask(batch, hid, rec_rate, training, rng)
    xs_f, live_f = padded(reverse=False)
    _, hf, _ = run_lstm(xs_f, params.fwd, mask_f, live_f)
    xs_r, live_r = padded(reverse=True)
    _, hr, _ = run_lstm(xs_r, params.rev, mask_r, live_r)
    return ad.concat([hf, hr], axis=1)


def bilstm_sequence(token_ids: list[int], emb_table: Tensor, params: BiLstmParams,
                    rec_rate: float, training: bool,
                    rng: np.random.Generator | None) -> Tensor:
    """Per-token bidirectional states for one sequence: (len, 2*hidden)."""
    if not token_ids:
        raise ValueError("bilstm_sequence: empty input sequence")
    hid = params.fwd.hidden
    mask_f = recurrent_mask(1, hid, rec_rate, training, rng)
    mask_r = recurrent_mask(1, hid, rec_rate, training, rng)
    xs = [ad.embedding_lookup(emb_table, np.array([i], dtype=np.int64)) for i in token_ids]
    outs_f, _, _ = run_lstm(xs, params.fwd, mask_f, collect=True)
    outs_r, _, _ = run_lstm(list(reversed(xs)), params.rev, mask_r, collect=True)
    outs_r.reverse()
    rows = [ad.concat([f, r], axis=1) for f, r in zip(outs_f, outs_r)]
    return ad.concat(rows, axis=0)
