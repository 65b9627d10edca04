"""numpy MLP kernels; fallback for the compiled ``_nn`` module (same signatures).

The workspace returned by :func:`forward` is the list of layer outputs
(hidden activations after ReLU, then the head output).
"""

import numpy as np

from .losses import LossKind, loss_and_grad, pal_xi


def _layers(params, dims):
    pos = 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        W = params[pos:pos + d_in * d_out].reshape(d_in, d_out)
        pos += d_in * d_out
        yield W, params[pos:pos + d_out], pos - d_in * d_out
        pos += d_out


def forward(params, dims, x, tanh_head, scale):
    h = x
    work = []
    last = len(dims) - 2
    for k, (W, b, _) in enumerate(_layers(params, dims)):
        z = h @ W
        z += b
        if k < last:
            np.maximum(z, 0.0, out=z)
        elif tanh_head:
            z = scale * np.tanh(z)
        work.append(z)
        h = z
    return h, work


def backward(params, dims, x, work, grad_out, want_params, tanh_head, scale, want_input=True):
    g = np.asarray(grad_out, dtype=np.float64)
    if tanh_head:
        t = work[-1] / scale
        g = g * (scale * (1.0 - t * t))
    layers = list(_layers(params, dims))
    grads = np.empty_like(params) if want_params else None
    for k in range(len(layers) - 1, -1, -1):
        W, _, pos = layers[k]
        if k < len(layers) - 1:
            g = g * (work[k] > 0.0)
        if grads is not None:
            d_in, d_out = W.shape
            inp = x if k == 0 else work[k - 1]
            np.dot(inp.T, g, out=grads[pos:pos + d_in * d_out].reshape(d_in, d_out))
            grads[pos + d_in * d_out:pos + d_in * d_out + d_out] = g.sum(axis=0)
        if k == 0 and not want_input:
            return grads, None
        g = g @ W.T
    return grads, g


def adam(params, m, v, g, lr, beta1, beta2, eps, t):
    if np.isnan(g).any():
        raise FloatingPointError("NaN gradient")
    c2 = 1.0 - beta2 ** t
    step = lr * np.sqrt(c2) / (1.0 - beta1 ** t)
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (g * g) * (1.0 - beta2)
    # lr * m_hat / (sqrt(v_hat) + eps), rewritten on the raw moments
    params -= step * (m / (np.sqrt(v) + eps * np.sqrt(c2)))


def polyak(target, source, zeta):
    target *= 1.0 - zeta
    target += zeta * source


_KINDS = ("mse", "huber", "pal")


def twin_td(q1, q2, q1t, q2t, rewards, dones, weights, gamma, kind, alpha, xi):
    y = rewards + gamma * (1.0 - dones) * np.minimum(q1t, q2t)
    d1 = y - q1
    d2 = y - q2
    loss = LossKind(_KINDS[kind])
    if loss is LossKind.PAL:
        if xi <= 0.0:
            xi = pal_xi(np.maximum(np.abs(d1), np.abs(d2)), alpha)
    else:
        xi = float("nan")
    scale = weights / len(q1)
    l1, g1 = loss_and_grad(loss, d1, xi=xi, alpha=alpha)
    l2, g2 = loss_and_grad(loss, d2, xi=xi, alpha=alpha)
    return d1, d2, -g1 * scale, -g2 * scale, float(np.dot(l1 + l2, scale)), xi
