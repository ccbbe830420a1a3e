"""Pure-numpy GRU sequence kernels (fallback backend).

Layouts, shared with the compiled backend:

* ``X``: ``T x B x D`` time-major inputs.
* ``W``: ``3H x D`` stacked input weights, rows ordered reset, update, candidate.
* ``U``: ``3H x H`` stacked recurrent weights, same row order.
* ``b``: ``3H`` stacked biases.

``gru_forward`` returns the hidden states ``Hs`` (``T+1 x B x H``, ``Hs[0]`` is
zero) plus the reset, update and candidate activations that ``gru_backward``
consumes.
"""

import numpy as np
from scipy.special import expit


def input_projection(X, W, b):
    """Gate pre-activations from the inputs, laid out ``T x 3 x B x H``."""
    T, B, D = X.shape
    H = W.shape[0] // 3
    XP = X.reshape(T * B, D) @ W.T + b
    return np.ascontiguousarray(XP.reshape(T, B, 3, H).transpose(0, 2, 1, 3))


def weight_grads(dA, X, W, Hs, R, need_dx):
    """Reduce per-step gate gradients ``dA`` (``T x 3 x B x H``) to parameter grads."""
    T, _, B, H = dA.shape
    D = X.shape[2]
    by_gate = dA.transpose(1, 3, 0, 2).reshape(3 * H, T * B)
    dW = by_gate @ X.reshape(T * B, D)
    db = by_gate.sum(axis=1)
    H_prev = Hs[:-1].reshape(T * B, H)
    dU = np.empty((3 * H, H))
    dU[: 2 * H] = by_gate[: 2 * H] @ H_prev
    dU[2 * H:] = by_gate[2 * H:] @ (R.reshape(T * B, H) * H_prev)
    dX = None
    if need_dx:
        dX = np.tensordot(dA, W.reshape(3, H, D), axes=([1, 3], [0, 1]))
    return dX, dW, dU, db


def gru_forward(X, W, U, b):
    T, B, _ = X.shape
    H = U.shape[1]
    XP = input_projection(X, W, b)
    U_r, U_u, U_c = U[:H], U[H: 2 * H], U[2 * H:]
    Hs = np.zeros((T + 1, B, H))
    R = np.empty((T, B, H))
    Z = np.empty((T, B, H))
    C = np.empty((T, B, H))
    for t in range(T):
        h = Hs[t]
        r = expit(XP[t, 0] + h @ U_r.T)
        u = expit(XP[t, 1] + h @ U_u.T)
        c = np.tanh(XP[t, 2] + (r * h) @ U_c.T)
        R[t], Z[t], C[t] = r, u, c
        Hs[t + 1] = (1.0 - u) * h + u * c
    return Hs, R, Z, C


def gru_backward(gH, X, W, U, Hs, R, Z, C, need_dx=False):
    T, B, _ = X.shape
    H = U.shape[1]
    U_r, U_u, U_c = U[:H], U[H: 2 * H], U[2 * H:]
    dA = np.empty((T, 3, B, H))
    dh = np.array(gH, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        h, r, u, c = Hs[t], R[t], Z[t], C[t]
        dac = dh * u * (1.0 - c * c)
        dau = dh * (c - h) * u * (1.0 - u)
        drh = dac @ U_c
        dar = drh * h * r * (1.0 - r)
        dA[t, 0], dA[t, 1], dA[t, 2] = dar, dau, dac
        dh = dh * (1.0 - u) + drh * r + dar @ U_r + dau @ U_u
    return weight_grads(dA, X, W, Hs, R, need_dx)
