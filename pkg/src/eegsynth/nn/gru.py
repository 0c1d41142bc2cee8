"""GRU layers with explicit backpropagation through time.

Gate convention::

    z  = sigmoid(W_z x + U_z h_prev + b_z)
    r  = sigmoid(W_r x + U_r h_prev + b_r)
    hc = tanh(W_h x + U_h (r * h_prev) + b_h)
    h  = (1 - z) * h_prev + z * hc

Sequences are time-major: ``[T, B, D]``.
"""
from dataclasses import dataclass, fields

import numpy as np

from ..exceptions import ShapeError

PARAM_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruLayerParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden, inp = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hidden, inp):
                raise ShapeError(f"{name} must be {(hidden, inp)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"{name} must be {(hidden, hidden)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} must be {(hidden,)}")

    @property
    def hidden_size(self):
        return self.W_z.shape[0]

    @property
    def input_size(self):
        return self.W_z.shape[1]

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def astype(self, dtype):
        return GruLayerParams(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    @classmethod
    def zeros(cls, input_size, hidden_size, dtype=np.float64):
        H, D = hidden_size, input_size
        return cls(*(np.zeros((H, D), dtype) for _ in range(3)),
                   *(np.zeros((H, H), dtype) for _ in range(3)),
                   *(np.zeros(H, dtype) for _ in range(3)))

    @classmethod
    def initialize(cls, input_size, hidden_size, rng, dtype=np.float64):
        """Glorot-uniform input kernels, orthogonal recurrent kernels, zero biases."""
        H, D = hidden_size, input_size
        # fan_out counts all three gates, as for one stacked [D, 3H] kernel
        limit = np.sqrt(6.0 / (D + 3 * H))
        Ws = [rng.uniform(-limit, limit, size=(H, D)) for _ in range(3)]
        Us = []
        for _ in range(3):
            q, r = np.linalg.qr(rng.standard_normal((H, H)))
            Us.append(q * np.sign(np.diag(r)))
        return cls(*(w.astype(dtype) for w in Ws), *(u.astype(dtype) for u in Us),
                   *(np.zeros(H, dtype) for _ in range(3)))


def gru_cell_forward(x, h_prev, p):
    """One time step for a single vector (or a batch ``[B, D]``)."""
    x = np.asarray(x)
    h_prev = np.asarray(h_prev)
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(f"x {x.shape} / h {h_prev.shape} do not match layer "
                         f"{p.input_size}->{p.hidden_size}")
    z = sigmoid(x @ p.W_z.T + h_prev @ p.U_z.T + p.b_z)
    r = sigmoid(x @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    hc = np.tanh(x @ p.W_h.T + (r * h_prev) @ p.U_h.T + p.b_h)
    return (1.0 - z) * h_prev + z * hc


def gru_layer_forward(x, p):
    """Run a layer over ``x [T, B, D]`` from a zero state.

    Returns the hidden states ``[T, B, H]`` and a cache for
    :func:`gru_layer_backward`.
    """
    T, B, D = x.shape
    if D != p.input_size:
        raise ShapeError(f"input dim {D} != layer input size {p.input_size}")
    H = p.hidden_size
    W = np.concatenate([p.W_z, p.W_r, p.W_h])
    b = np.concatenate([p.b_z, p.b_r, p.b_h])
    U_zr = np.concatenate([p.U_z, p.U_r])
    xp = (x.reshape(T * B, D) @ W.T + b).reshape(T, B, 3 * H)

    hs = np.empty((T, B, H), dtype=x.dtype)
    zs = np.empty_like(hs)
    rs = np.empty_like(hs)
    hcs = np.empty_like(hs)
    h = np.zeros((B, H), dtype=x.dtype)
    for t in range(T):
        zr = sigmoid(xp[t, :, : 2 * H] + h @ U_zr.T)
        z, r = zr[:, :H], zr[:, H:]
        hc = np.tanh(xp[t, :, 2 * H:] + (r * h) @ p.U_h.T)
        h = h + z * (hc - h)
        zs[t], rs[t], hcs[t], hs[t] = z, r, hc, h
    return hs, (x, hs, zs, rs, hcs)


def gru_layer_backward(dhs, p, cache):
    """Gradients given ``dhs = dL/dh_t`` for every step.

    Returns ``(grads, dx)`` with ``grads`` keyed like :data:`PARAM_NAMES`.
    """
    x, hs, zs, rs, hcs = cache
    T, B, D = x.shape
    H = p.hidden_size
    U_zr = np.concatenate([p.U_z, p.U_r])
    dxp = np.empty((T, B, 3 * H), dtype=x.dtype)
    dU_zr = np.zeros((2 * H, H), dtype=x.dtype)
    dU_h = np.zeros((H, H), dtype=x.dtype)
    dh_next = np.zeros((B, H), dtype=x.dtype)
    zero = np.zeros((B, H), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else zero
        z, r, hc = zs[t], rs[t], hcs[t]
        dh = dhs[t] + dh_next
        dz = dh * (hc - h_prev)
        da_h = dh * z * (1.0 - hc * hc)
        drh = da_h @ p.U_h
        dr = drh * h_prev
        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dU_h += da_h.T @ (r * h_prev)
        dU_zr += da_zr.T @ h_prev
        dh_next = dh * (1.0 - z) + drh * r + da_zr @ U_zr
        dxp[t, :, : 2 * H] = da_zr
        dxp[t, :, 2 * H:] = da_h

    flat = dxp.reshape(T * B, 3 * H)
    dW = flat.T @ x.reshape(T * B, D)
    db = flat.sum(axis=0)
    W = np.concatenate([p.W_z, p.W_r, p.W_h])
    dx = (flat @ W).reshape(T, B, D)
    grads = {
        "W_z": dW[:H], "W_r": dW[H: 2 * H], "W_h": dW[2 * H:],
        "U_z": dU_zr[:H], "U_r": dU_zr[H:], "U_h": dU_h,
        "b_z": db[:H], "b_r": db[H: 2 * H], "b_h": db[2 * H:],
    }
    return grads, dx
