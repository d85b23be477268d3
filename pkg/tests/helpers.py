"""Shared oracles for the test-suite."""

import numpy as np

from hetrain.henn import backward, forward, loss_grad
from hetrain.henn.encrypted import accumulate
from hetrain.packing import PackedLayout, pack1d, unpack1d, unpack2d


def encrypt_rows(ctx, pk, X, axis=0):
    p = ctx.params
    return [ctx.encrypt(pk, pack1d(x, axis, p.slot_size, p.ct_size)) for x in np.atleast_2d(X)]


def decrypt_grads(sk, em, grads):
    """Flatten decrypted per-layer gradients in ``PlainModel.params_vector`` order."""
    p = em.ctx.params
    out = []
    for layer, (gW, gb) in zip(em.layers, grads):
        wl = PackedLayout.matrix(layer.out_dim, layer.in_dim, layer.axis, p.slot_size, p.ct_size)
        bl = PackedLayout.vector(layer.out_dim, layer.bias_axis, p.slot_size, p.ct_size)
        out.append(unpack2d(em.ctx.decrypt(sk, gW), wl).ravel())
        out.append(unpack1d(em.ctx.decrypt(sk, gb), bl))
    return np.concatenate(out)


def encrypted_batch_grads(sk, pk, em, X, Y):
    ctx = em.ctx
    xs = encrypt_rows(ctx, pk, X, 0)
    ys = encrypt_rows(ctx, pk, Y, em.spec.output_axis())
    n = len(xs)
    per = []
    for x, y in zip(xs, ys):
        acts = forward(em, x)
        per.append(backward(em, acts, loss_grad(acts.output, y, n)))
    return decrypt_grads(sk, em, accumulate(per))


def central_differences(f, theta, eps=1e-4):
    g = np.empty_like(theta)
    for i in range(theta.shape[0]):
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (f(up) - f(dn)) / (2 * eps)
    return g
