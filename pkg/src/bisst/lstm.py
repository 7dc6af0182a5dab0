"""LSTM cell shared by the proposal encoders and the caption decoder.

Gate rows of ``W`` are ordered (i, f, o, g); the cell input is the
concatenation of the layer input and the previous hidden state.
"""

import numpy as np

from . import tensor as tn
from .errors import ShapeError


def init_lstm(prefix, input_dim, hidden, seed):
    W = tn.init_parameters((4 * hidden, input_dim + hidden), tn.derived_seed(seed, prefix + ".W"))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate offset
    return {
        prefix + ".W": tn.parameter(W.data, prefix + ".W"),
        prefix + ".b": tn.parameter(b, prefix + ".b"),
    }


def lstm_cell(x, h_prev, c_prev, W, b):
    """One step: returns ``(h, c)``."""
    hidden = b.shape[0] // 4
    if W.shape[1] != x.shape[0] + h_prev.shape[0]:
        raise ShapeError(
            f"LSTM weight expects input+hidden = {W.shape[1]}, "
            f"got {x.shape[0]} + {h_prev.shape[0]}"
        )
    gates = tn.affine(tn.concat([x, h_prev]), W, b)
    sig = tn.sigmoid(gates[: 3 * hidden])
    g = tn.tanh(gates[3 * hidden:])
    i = sig[:hidden]
    f = sig[hidden:2 * hidden]
    o = sig[2 * hidden:]
    c = f * c_prev + i * g
    h = o * tn.tanh(c)
    return h, c
