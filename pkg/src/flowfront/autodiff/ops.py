"""Fused differentiable primitives with hand-written backward passes.

Convolutions, recurrent layers and matrix inversion are recorded as single
graph nodes; unrolling them into elementwise nodes would make the Python
overhead dominate every training step.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractViolation
from .tensor import Tensor, as_tensor, make_result


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, weight, bias=None, dilation=(1, 1), stride=(1, 1)) -> Tensor:
    """2-D cross-correlation with symmetric "same" padding.

    ``x`` is (B, Cin, H, W) or (Cin, H, W); ``weight`` is (Cout, Cin, kh, kw)
    with odd kernel sizes.  With unit stride the output keeps H and W; a
    stride s yields ceil(H / s).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    wd = weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ContractViolation(f"conv2d expects 4-D input/kernel, got {x.shape}, {weight.shape}")
    B, cin, H, W = xd.shape
    cout, wcin, kh, kw = wd.shape
    if wcin != cin:
        raise ContractViolation(f"kernel expects {wcin} input channels, input has {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"kernel dims must be odd for same padding, got {(kh, kw)}")
    dh, dw = _pair(dilation)
    sh, sw = _pair(stride)
    ph, pw = dh * (kh - 1) // 2, dw * (kw - 1) // 2
    Ho, Wo = -(-H // sh), -(-W // sw)

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((B, cin, kh, kw, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            cols[:, :, i, j] = xp[:, :, r0 : r0 + sh * (Ho - 1) + 1 : sh, c0 : c0 + sw * (Wo - 1) + 1 : sw]
    cols2 = cols.reshape(B, cin * kh * kw, Ho * Wo)
    w2 = wd.reshape(cout, -1)
    out = w2 @ cols2
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(B, cout, Ho, Wo)
    if squeeze:
        out = out[0]

    def backward(g):
        g = g.reshape(B, cout, Ho * Wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.einsum("bop,bkp->ok", g, cols2).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = (w2.T @ g).reshape(B, cin, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dh, j * dw
                    gxp[:, :, r0 : r0 + sh * (Ho - 1) + 1 : sh, c0 : c0 + sw * (Wo - 1) + 1 : sw] += gcols[:, :, i, j]
            gx = gxp[:, :, ph : ph + H, pw : pw + W]
            if squeeze:
                gx = gx[0]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, backward)


def lstm(x, w_ih, w_hh, bias, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over a batch of sequences.

    x: (B, T, D); w_ih: (D, 4H); w_hh: (H, 4H); bias: (4H,).  Gate order is
    input, forget, cell, output.  Zero initial state.  Returns (B, T, H)
    hidden states in the original time order.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    xd = x.data
    if xd.ndim != 3:
        raise ContractViolation(f"lstm expects (B, T, D) input, got {x.shape}")
    B, T, D = xd.shape
    if T < 1:
        raise ContractViolation("lstm needs a non-empty sequence")
    H = w_hh.shape[0]
    Wih, Whh, b = w_ih.data, w_hh.data, bias.data
    seq = xd[:, ::-1] if reverse else xd
    pre = seq @ Wih + b  # (B, T, 4H)

    # all four gates through one tanh: sigmoid(a) = 0.5 * tanh(a / 2) + 0.5
    scale = np.full(4 * H, 0.5, dtype=xd.dtype)
    scale[2 * H : 3 * H] = 1.0
    shift = np.full(4 * H, 0.5, dtype=xd.dtype)
    shift[2 * H : 3 * H] = 0.0
    hs = np.zeros((B, T + 1, H), dtype=xd.dtype)
    cs = np.zeros((B, T + 1, H), dtype=xd.dtype)
    gates = np.empty((B, T, 4 * H), dtype=xd.dtype)
    tanh_c = np.empty((B, T, H), dtype=xd.dtype)
    h = hs[:, 0]
    c = cs[:, 0]
    for t in range(T):
        act = np.tanh((pre[:, t] + h @ Whh) * scale) * scale + shift
        gates[:, t] = act
        c = act[:, H : 2 * H] * c + act[:, :H] * act[:, 2 * H : 3 * H]
        tc = np.tanh(c)
        h = act[:, 3 * H :] * tc
        cs[:, t + 1] = c
        tanh_c[:, t] = tc
        hs[:, t + 1] = h
    out = hs[:, 1:]
    if reverse:
        out = out[:, ::-1]

    def backward(g):
        g = g[:, ::-1] if reverse else g
        i = gates[..., :H]
        f = gates[..., H : 2 * H]
        gg = gates[..., 2 * H : 3 * H]
        o = gates[..., 3 * H :]
        # per-step factors that do not depend on the recursion
        to_c = o * (1.0 - tanh_c * tanh_c)  # dh -> dc
        to_o = tanh_c * o * (1.0 - o)  # dh -> d pre_o
        to_ifg = np.concatenate(
            [gg * i * (1.0 - i), cs[:, :-1] * f * (1.0 - f), i * (1.0 - gg * gg)], axis=-1
        ).reshape(B, T, 3, H)
        dpre = np.empty_like(gates)
        dh_next = np.zeros((B, H), dtype=xd.dtype)
        dc = np.zeros((B, H), dtype=xd.dtype)
        for t in range(T - 1, -1, -1):
            dh = g[:, t] + dh_next
            dc = dc + dh * to_c[:, t]
            dpre[:, t, : 3 * H] = (dc[:, None, :] * to_ifg[:, t]).reshape(B, 3 * H)
            dpre[:, t, 3 * H :] = dh * to_o[:, t]
            dh_next = dpre[:, t] @ Whh.T
            dc = dc * f[:, t]
        flat = dpre.reshape(B * T, 4 * H)
        gx = gwih = gwhh = gb = None
        if x.requires_grad:
            gx = dpre @ Wih.T
            if reverse:
                gx = gx[:, ::-1]
        if w_ih.requires_grad:
            gwih = seq.reshape(B * T, D).T @ flat
        if w_hh.requires_grad:
            gwhh = hs[:, :-1].reshape(B * T, H).T @ flat
        if bias.requires_grad:
            gb = flat.sum(axis=0)
        return gx, gwih, gwhh, gb

    return make_result(np.ascontiguousarray(out), (x, w_ih, w_hh, bias), backward)


def _gauss_jordan_inverse(a: np.ndarray) -> np.ndarray:
    """Batched inverse by Gauss-Jordan elimination with partial pivoting."""
    a = np.array(a, dtype=np.float32 if a.dtype == np.float32 else np.float64)
    *batch, n, m = a.shape
    if n != m:
        raise ContractViolation(f"inverse needs square matrices, got {a.shape}")
    a = a.reshape(-1, n, n)
    nb = a.shape[0]
    aug = np.concatenate([a, np.broadcast_to(np.eye(n, dtype=a.dtype), (nb, n, n))], axis=2)
    rows = np.arange(nb)
    for k in range(n):
        piv = k + np.argmax(np.abs(aug[:, k:, k]), axis=1)
        if np.any(aug[rows, piv, k] == 0.0):
            raise np.linalg.LinAlgError("singular matrix in Gauss-Jordan inverse")
        swap = piv != k
        if np.any(swap):
            r = rows[swap]
            top = aug[r, k].copy()
            aug[r, k] = aug[r, piv[swap]]
            aug[r, piv[swap]] = top
        aug[:, k] /= aug[:, k, k][:, None]
        factors = aug[:, :, k].copy()
        factors[:, k] = 0.0
        aug -= factors[:, :, None] * aug[:, k][:, None, :]
    return aug[:, :, n:].reshape(*batch, n, n)


def inv(a) -> Tensor:
    """Batched real matrix inverse over the last two axes."""
    a = as_tensor(a)
    out = _gauss_jordan_inverse(a.data)

    def backward(g):
        inv_t = np.swapaxes(out, -1, -2)
        return (-(inv_t @ g @ inv_t),)

    return make_result(out, (a,), backward)
