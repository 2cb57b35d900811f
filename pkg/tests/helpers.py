"""Shared test utilities: naive oracles and a finite-difference gradient check."""
import numpy as np
import torch


def direct_conv3(x, w):
    """Direct 3-tap convolution with zero padding, element by element."""
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros_like(x)
    n = len(x)
    for i in range(n):
        left = x[i - 1] if i - 1 >= 0 else 0.0
        right = x[i + 1] if i + 1 < n else 0.0
        y[i] = w[0] * left + w[1] * x[i] + w[2] * right
    return y


def naive_conv2d(x, weight, bias, stride=1, dilation=1, padding=0):
    """Plain spatial convolution over a (C, H, W) array, looped per element."""
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    hout = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wout = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((cout, hout, wout))
    for co in range(cout):
        for i in range(hout):
            for j in range(wout):
                acc = bias[co]
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            acc += (
                                weight[co, ci, u, v]
                                * xp[ci, i * stride + u * dilation, j * stride + v * dilation]
                            )
                out[co, i, j] = acc
    return out


def fd_gradients(fn, tensors, eps=1e-6):
    """Central finite-difference gradients of the scalar fn() w.r.t. each tensor.

    Mutates each tensor's data in place one element at a time; tensors must
    be float64 for the stated tolerances to hold.
    """
    grads = []
    for t in tensors:
        g = torch.zeros_like(t)
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(fn().detach())
            flat[i] = orig - eps
            fm = float(fn().detach())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-3, atol=1e-6):
    for a, n in zip(analytic, numeric):
        a = a.detach().cpu().numpy()
        n = n.detach().cpu().numpy()
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)
