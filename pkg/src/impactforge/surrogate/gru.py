"""Stacked GRU with a per-step linear head, forward pass and BPTT in numpy.

Cell convention (gate columns stored as ``[z | r | h]``)::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    hc = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * hc

Batched arrays are ``(batch, time, channels)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from ..errors import InvalidArgument, NumericFailure


def sigmoid(a):
    # tanh form: stable for large |a| without branching
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass
class GruLayer:
    W: np.ndarray  # (in, 3H)
    U: np.ndarray  # (H, 3H)
    b: np.ndarray  # (3H,)

    @property
    def hidden(self):
        return self.U.shape[0]

    @property
    def n_in(self):
        return self.W.shape[0]

    def gate(self, name):
        """``(W_g, U_g, b_g)`` views for gate ``'z'``, ``'r'`` or ``'h'``."""
        H = self.hidden
        k = "zrh".index(name)
        sl = slice(k * H, (k + 1) * H)
        return self.W[:, sl], self.U[:, sl], self.b[sl]

    @classmethod
    def init(cls, n_in, hidden, rng):
        lim_w = math.sqrt(6.0 / (n_in + hidden))
        lim_u = math.sqrt(6.0 / (2 * hidden))
        return cls(rng.uniform(-lim_w, lim_w, (n_in, 3 * hidden)),
                   rng.uniform(-lim_u, lim_u, (hidden, 3 * hidden)),
                   np.zeros(3 * hidden))


@dataclass
class SurrogateModel:
    layers: List[GruLayer]
    head_W: np.ndarray  # (H, out)
    head_b: np.ndarray  # (out,)

    @classmethod
    def create(cls, n_in=8, hidden=(64, 64, 64), n_out=4, seed=0):
        rng = np.random.default_rng(seed)
        layers = []
        prev = n_in
        for H in hidden:
            layers.append(GruLayer.init(prev, H, rng))
            prev = H
        lim = math.sqrt(6.0 / (prev + n_out))
        return cls(layers, rng.uniform(-lim, lim, (prev, n_out)), np.zeros(n_out))

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.head_b.shape[0]

    @property
    def hidden_sizes(self):
        return tuple(l.hidden for l in self.layers)

    def parameters(self):
        """Flat list of parameter arrays in a fixed order (shared with gradients)."""
        out = []
        for l in self.layers:
            out += [l.W, l.U, l.b]
        return out + [self.head_W, self.head_b]

    @property
    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def copy(self):
        return SurrogateModel([GruLayer(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
                              self.head_W.copy(), self.head_b.copy())

    def zeros_like(self):
        return [np.zeros_like(p) for p in self.parameters()]


def param_count(n_in, hidden, n_out):
    """Closed-form parameter count, single bias per gate."""
    total = 0
    prev = n_in
    for H in hidden:
        total += 3 * (prev * H + H * H + H)
        prev = H
    return total + prev * n_out + n_out


def gru_cell(x, h_prev, layer: GruLayer):
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x.shape[-1] != layer.n_in or h_prev.shape[-1] != layer.hidden:
        raise InvalidArgument(f"shape mismatch: x {x.shape}, h {h_prev.shape} for layer "
                              f"({layer.n_in} -> {layer.hidden})")
    H = layer.hidden
    a = x @ layer.W + layer.b
    azr = a[..., :2 * H] + h_prev @ layer.U[:, :2 * H]
    zr = sigmoid(azr)
    z, r = zr[..., :H], zr[..., H:]
    hc = np.tanh(a[..., 2 * H:] + (r * h_prev) @ layer.U[:, 2 * H:])
    return (1.0 - z) * h_prev + z * hc


def forward(model: SurrogateModel, X, return_cache=False):
    """Outputs ``(B, T, out)`` for inputs ``(B, T, in)`` (or ``(T, in)``)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1] < 1:
        raise InvalidArgument("sequence length must be >= 1")
    if X.shape[2] != model.n_in:
        raise InvalidArgument(f"expected {model.n_in} input channels, got {X.shape[2]}")
    Bsz, T, _ = X.shape
    cache = []
    inp = X
    for layer in model.layers:
        H = layer.hidden
        A = inp @ layer.W + layer.b           # (B, T, 3H)
        hs = np.zeros((Bsz, T + 1, H))
        Z = np.empty((Bsz, T, H))
        R = np.empty((Bsz, T, H))
        HC = np.empty((Bsz, T, H))
        Uzr = layer.U[:, :2 * H]
        Uh = layer.U[:, 2 * H:]
        h = hs[:, 0]
        for t in range(T):
            zr = sigmoid(A[:, t, :2 * H] + h @ Uzr)
            z, r = zr[:, :H], zr[:, H:]
            hc = np.tanh(A[:, t, 2 * H:] + (r * h) @ Uh)
            h = (1.0 - z) * h + z * hc
            if not np.isfinite(h).all():
                raise NumericFailure(f"non-finite hidden state at step {t}")
            Z[:, t], R[:, t], HC[:, t] = z, r, hc
            hs[:, t + 1] = h
        cache.append((inp, hs, Z, R, HC))
        inp = hs[:, 1:]
    Y = inp @ model.head_W + model.head_b
    if single:
        Y = Y[0]
    if return_cache:
        return Y, cache
    return Y


def backward(model: SurrogateModel, cache, dY):
    """Gradients (same order as ``model.parameters()``) for upstream ``dY``."""
    dY = np.asarray(dY, dtype=float)
    if dY.ndim == 2:
        dY = dY[None]
    top = cache[-1][1][:, 1:]
    g_head_W = np.einsum("bth,bto->ho", top, dY)
    g_head_b = dY.sum(axis=(0, 1))
    dH = dY @ model.head_W.T                   # (B, T, H)
    grads = []
    for layer, (inp, hs, Z, R, HC) in zip(reversed(model.layers), reversed(cache)):
        H = layer.hidden
        Bsz, T, _ = inp.shape
        Uzr = layer.U[:, :2 * H]
        Uh = layer.U[:, 2 * H:]
        dA = np.empty((Bsz, T, 3 * H))
        dU = np.zeros_like(layer.U)
        dh_next = np.zeros((Bsz, H))
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t]
            z, r, hc = Z[:, t], R[:, t], HC[:, t]
            dh = dH[:, t] + dh_next
            da_h = dh * z * (1.0 - hc * hc)
            dz = dh * (hc - h_prev)
            drh = da_h @ Uh.T
            dU[:, 2 * H:] += (r * h_prev).T @ da_h
            da_z = dz * z * (1.0 - z)
            da_r = drh * h_prev * r * (1.0 - r)
            da_zr = np.concatenate((da_z, da_r), axis=1)
            dU[:, :2 * H] += h_prev.T @ da_zr
            dh_next = dh * (1.0 - z) + drh * r + da_zr @ Uzr.T
            dA[:, t, :2 * H] = da_zr
            dA[:, t, 2 * H:] = da_h
        dW = np.einsum("bti,btg->ig", inp, dA)
        db = dA.sum(axis=(0, 1))
        grads = [dW, dU, db] + grads
        dH = dA @ layer.W.T
    return grads + [g_head_W, g_head_b]


def mae(Y, Yhat):
    Y, Yhat = np.asarray(Y, dtype=float), np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape:
        raise InvalidArgument(f"shape mismatch {Y.shape} vs {Yhat.shape}")
    return float(np.abs(Y - Yhat).mean())


def mse(Y, Yhat):
    Y, Yhat = np.asarray(Y, dtype=float), np.asarray(Yhat, dtype=float)
    if Y.shape != Yhat.shape:
        raise InvalidArgument(f"shape mismatch {Y.shape} vs {Yhat.shape}")
    return float(((Y - Yhat) ** 2).mean())


def loss_and_grad(model: SurrogateModel, X, Y):
    """MAE loss and its gradient; the subgradient at a zero residual is 0."""
    pred, cache = forward(model, X, return_cache=True)
    Y = np.asarray(Y, dtype=float).reshape(pred.shape)
    diff = pred - Y
    loss = float(np.abs(diff).mean())
    dY = np.sign(diff) / diff.size
    return loss, backward(model, cache, dY)
