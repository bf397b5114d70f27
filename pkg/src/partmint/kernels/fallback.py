"""Pure-NumPy implementations of the batched hot kernels.

Mirrors the API of the compiled ``partmint._native`` extension.  Inputs are
C-contiguous float64 arrays: ``feats`` is (n, H, W, D) and ``kernels`` is
(p, D).  Used automatically when the extension is unavailable, or when
``PARTMINT_KERNELS=python`` is set.
"""

from __future__ import annotations

import numpy as np


def conv_scores(feats: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-detector correlation scores, shape (n, p, H, W)."""
    return np.einsum("nhwd,pd->nphw", feats, kernels, optimize=True)


def softmax2d(scores: np.ndarray) -> np.ndarray:
    """Spatial softmax over the trailing two axes, max-subtracted."""
    n, p, h, w = scores.shape
    flat = scores.reshape(n, p, h * w)
    e = np.exp(flat - flat.max(axis=2, keepdims=True))
    e /= e.sum(axis=2, keepdims=True)
    return e.reshape(n, p, h, w)


def box3x3(acts: np.ndarray) -> np.ndarray:
    """3x3 all-ones neighborhood sum with zero padding, per map."""
    n, p, h, w = acts.shape
    padded = np.zeros((n, p, h + 2, w + 2), dtype=acts.dtype)
    padded[:, :, 1:-1, 1:-1] = acts
    out = np.zeros_like(acts)
    for dh in range(3):
        for dw in range(3):
            out += padded[:, :, dh : dh + h, dw : dw + w]
    return out


def loss_grad(feats: np.ndarray, kernels: np.ndarray, lam: float):
    """Composite loss and its exact gradient w.r.t. the kernels.

    Returns ``(locality, unicity, grad)`` where ``grad`` has shape (p, D).
    The batch is treated as the population: both loss terms average over
    the ``n`` images in ``feats``.

    The max operators are differentiated through their (row-major first)
    argmax cell only; the hinge contributes gradient only when strictly
    active.
    """
    n, h, w, d = feats.shape
    p = kernels.shape[0]
    hw = h * w

    scores = conv_scores(feats, kernels)
    acts = softmax2d(scores)
    smoothed = box3x3(acts)

    flat_g = smoothed.reshape(n, p, hw)
    g_arg = flat_g.argmax(axis=2)
    g_max = np.take_along_axis(flat_g, g_arg[..., None], axis=2)[..., 0]
    locality = -float(g_max.sum()) / (p * n)

    summed = acts.sum(axis=1)
    flat_s = summed.reshape(n, hw)
    s_arg = flat_s.argmax(axis=1)
    excess = flat_s[np.arange(n), s_arg] - 1.0
    active = excess > 0.0
    unicity = float(excess[active].sum()) / n

    # dL/dP: locality routes -1/(p*n) through the in-bounds 3x3 stencil
    # around each smoothed-map argmax (transpose of the zero-padded box
    # filter); the active hinge adds lam/n at the summed-map argmax cell
    # of every detector map.
    g_p = np.zeros_like(acts)
    coeff = -1.0 / (p * n)
    gh, gw = np.divmod(g_arg, w)
    for x in range(n):
        for i in range(p):
            h0, w0 = gh[x, i], gw[x, i]
            g_p[x, i, max(h0 - 1, 0) : h0 + 2, max(w0 - 1, 0) : w0 + 2] = coeff
    if lam != 0.0:
        hinge = lam / n
        sh, sw = np.divmod(s_arg, w)
        for x in range(n):
            if active[x]:
                g_p[x, :, sh[x], sw[x]] += hinge

    dot = np.einsum("nphw,nphw->np", g_p, acts)[:, :, None, None]
    g_s = acts * (g_p - dot)
    grad = np.einsum("nphw,nhwd->pd", g_s, feats, optimize=True)
    return locality, unicity, grad
