"""Central finite-difference check of the analytic BPTT gradients."""
import numpy as np

from .regressor import backward, dropout_masks, forward, init_params, mse_loss


def numeric_gradients(params, x, target, mask=None, masks=None, eps=1e-5):
    """Central differences of the masked MSE with respect to every parameter entry."""
    def loss():
        return mse_loss(forward(params, x, masks)[0], target, mask)[0]

    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss()
            p[idx] = old - eps
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def gradient_check(input_dim=6, hidden_sizes=(8, 4), n_outputs=3, seq_len=12, batch=2,
                   use_masks=False, dropout=0.2, eps=1e-5, seed=0):
    """Relative error ``|a - n| / (|a| + |n|)`` per parameter tensor, in float64.

    The second sequence of the batch is padded for its last quarter so the
    masking path is exercised as well.
    """
    rng = np.random.default_rng(seed)
    params = init_params(input_dim, hidden_sizes, n_outputs, rng, np.float64)
    # non-zero biases so no gradient is trivially zero
    for name in params:
        if ".b_" in name or name == "dense.b":
            params[name] = 0.1 * rng.standard_normal(params[name].shape)
    x = rng.standard_normal((seq_len, batch, input_dim))
    target = rng.standard_normal((seq_len, batch, n_outputs))
    mask = np.ones((seq_len, batch), dtype=bool)
    if batch > 1:
        mask[seq_len - seq_len // 4:, -1] = False
    masks = dropout_masks(rng, seq_len, batch, hidden_sizes, dropout, np.float64) if use_masks else None

    pred, cache = forward(params, x, masks)
    analytic = backward(params, cache, mse_loss(pred, target, mask)[1])
    numeric = numeric_gradients(params, x, target, mask, masks, eps)
    errors = {}
    for name in params:
        a, n = analytic[name], numeric[name]
        denom = np.linalg.norm(a) + np.linalg.norm(n)
        errors[name] = float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0
    return errors
