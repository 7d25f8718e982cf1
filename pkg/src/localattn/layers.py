"""Network primitives: convolution, local self-attention, the attention stem,
pooling, batch norm, and the small glue layers a residual network needs.

Every layer follows one protocol:

    y, ctx = layer.forward(x, training=False)
    dx, grads = layer.backward(dy, ctx)

`layer.params` maps parameter names to the live arrays (mutated in place by
the optimizer); `grads` uses the same keys. Forward passes are pure given the
parameters, except that batch norm updates its running statistics when
`training=True`.

Shapes are (batch, channels, height, width) throughout. Attention layers never
stride; downsampling is done by the pooling layers.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError, PaddingError, UnsupportedExtentError
from .tensorops import pad_hw, sliding_windows, softmax_axis, window_validity

MODES = ("none", "absolute", "relative", "relative_only")


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


_signal_cache: dict[tuple[int, int, int], np.ndarray] = {}


def absolute_position_signal(d: int, height: int, width: int) -> np.ndarray:
    """Fixed sinusoidal position channels: the first d/2 encode the row index
    and the rest the column index, each half at geometrically spaced
    frequencies with base 10000. Returned as float64, shape (d, H, W)."""
    if d % 2:
        raise ConfigurationError(
            f"position signal splits channels into row/column halves; d={d} is odd")
    key = (d, height, width)
    if key not in _signal_cache:
        sig = np.zeros((d, height, width))
        d_row = d // 2
        for offset, dim, length, along_rows in ((0, d_row, height, True),
                                                (d_row, d - d_row, width, False)):
            pos = np.arange(length, dtype=np.float64)
            for ch in range(dim):
                angle = pos / (10000.0 ** ((ch - ch % 2) / dim))
                wave = np.sin(angle) if ch % 2 == 0 else np.cos(angle)
                if along_rows:
                    sig[offset + ch] = wave[:, None]
                else:
                    sig[offset + ch] = wave[None, :]
        _signal_cache[key] = sig
    return _signal_cache[key]


class Conv2d:
    """y_ij = sum over the k x k neighborhood of W_{i-a, j-b} x_ab, with zero
    padding and output centers at i'*stride, so H' = ceil(H/stride).

    weight shape (k, k, d_out, d_in), indexed by (i-a+half, j-b+half); the
    im2col fast path therefore contracts against the spatially flipped kernel.
    """

    def __init__(self, d_in: int, d_out: int, k: int, stride: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if k < 1 or k % 2 == 0:
            raise UnsupportedExtentError(f"convolution extent must be odd, got {k}")
        if stride < 1:
            raise ConfigurationError(f"stride must be positive, got {stride}")
        rng = rng or np.random.default_rng(0)
        self.d_in, self.d_out, self.k, self.stride = d_in, d_out, k, stride
        self.weight = he_normal(rng, (k, k, d_out, d_in), k * k * d_in, dtype)

    @property
    def params(self):
        return {"weight": self.weight}

    def forward(self, x: np.ndarray, training: bool = False):
        if x.ndim != 4 or x.shape[1] != self.d_in:
            raise DimensionError(
                f"expected (N, {self.d_in}, H, W), got {x.shape}")
        half = self.k // 2
        xp = pad_hw(x, half)
        win = sliding_windows(xp, self.k)                       # (N, C, H, W, k, k) view
        win = win[:, :, ::self.stride, ::self.stride]
        flipped = self.weight[::-1, ::-1]
        y = np.einsum("uvoc,ncijuv->noij", flipped, win, optimize=True)
        return y, (x.shape, win)

    def backward(self, dy: np.ndarray, ctx):
        x_shape, win = ctx
        n, c, height, width = x_shape
        half = self.k // 2
        flipped = self.weight[::-1, ::-1]
        d_flipped = np.einsum("noij,ncijuv->uvoc", dy, win, optimize=True)
        dw = d_flipped[::-1, ::-1].astype(self.weight.dtype)

        h_out, w_out = dy.shape[2], dy.shape[3]
        dxp = np.zeros((n, c, height + 2 * half, width + 2 * half), dtype=dy.dtype)
        for u in range(self.k):
            for v in range(self.k):
                patch = np.einsum("noij,oc->ncij", dy, flipped[u, v], optimize=True)
                dxp[:, :, u:u + h_out * self.stride:self.stride,
                    v:v + w_out * self.stride:self.stride] += patch
        dx = dxp[:, :, half:half + height, half:half + width]
        return dx, {"weight": dw}


class LocalAttention:
    """Multi-head attention where each pixel attends over its k x k window.

    Heads partition the output: head n is rows [n*d_head, (n+1)*d_head) of
    W_Q/W_K/W_V, d_head = d_out/heads. Encoding modes:
      none          logits are q.k only
      absolute      sinusoidal position channels added to x before Q/K/V
      relative      logits are q.k + q.r with r indexed by window offset
      relative_only logits are q.r alone (no W_K is allocated)
    Out-of-image window slots are masked out of the softmax. Output keeps the
    input's spatial size.
    """

    def __init__(self, d_in: int, d_out: int, k: int, heads: int,
                 encoding_mode: str = "relative",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if encoding_mode not in MODES:
            raise ConfigurationError(
                f"encoding_mode must be one of {MODES}, got {encoding_mode!r}")
        if k < 1 or k % 2 == 0:
            raise UnsupportedExtentError(f"attention extent must be odd, got {k}")
        if d_out % heads or d_in % heads:
            raise ConfigurationError(
                f"d_in={d_in} and d_out={d_out} must be divisible by heads={heads}")
        d_head = d_out // heads
        relative = encoding_mode in ("relative", "relative_only")
        if relative and d_head % 2:
            raise ConfigurationError(
                f"relative modes need even d_head, got {d_head}")
        if encoding_mode == "absolute" and d_in % 2:
            raise ConfigurationError(
                f"absolute mode splits input channels into row/column halves; "
                f"d_in={d_in} is odd")
        rng = rng or np.random.default_rng(0)
        self.d_in, self.d_out, self.k, self.heads = d_in, d_out, k, heads
        self.d_head = d_head
        self.encoding_mode = encoding_mode
        self.W_Q = he_normal(rng, (d_out, d_in), d_in, dtype)
        self.W_K = None if encoding_mode == "relative_only" else he_normal(
            rng, (d_out, d_in), d_in, dtype)
        self.W_V = he_normal(rng, (d_out, d_in), d_in, dtype)
        if relative:
            std = 1.0 / np.sqrt(d_head // 2)
            self.row_emb = (rng.standard_normal((2 * k - 1, d_head // 2)) * std).astype(dtype)
            self.col_emb = (rng.standard_normal((2 * k - 1, d_head // 2)) * std).astype(dtype)
        else:
            self.row_emb = None
            self.col_emb = None

    @property
    def params(self):
        out = {"W_Q": self.W_Q, "W_V": self.W_V}
        if self.W_K is not None:
            out["W_K"] = self.W_K
        if self.row_emb is not None:
            out["row_emb"] = self.row_emb
            out["col_emb"] = self.col_emb
        return out

    def _split_heads(self, t: np.ndarray) -> np.ndarray:
        n, _, height, width = t.shape
        return t.reshape(n, self.heads, self.d_head, height, width)

    def _offset_table(self) -> np.ndarray:
        # R[u, v] = [row_emb[(u-half) + k-1] ; col_emb[(v-half) + k-1]], which
        # simplifies to index u+half since k-1 = 2*half for odd k.
        k, half = self.k, self.k // 2
        rows = self.row_emb[half:half + k]
        cols = self.col_emb[half:half + k]
        table = np.empty((k, k, self.d_head), dtype=self.row_emb.dtype)
        table[:, :, :self.d_head // 2] = rows[:, None, :]
        table[:, :, self.d_head // 2:] = cols[None, :, :]
        return table

    def _windows(self, t_pad: np.ndarray, height: int, width: int) -> np.ndarray:
        # (n, heads, d_head, Hp, Wp) -> contiguous (n, heads, H, W, d_head, k*k)
        win = sliding_windows(t_pad, self.k)                # (n, h, d, H, W, k, k)
        n, heads = t_pad.shape[0], t_pad.shape[1]
        win = win.transpose(0, 1, 3, 4, 2, 5, 6)
        return np.ascontiguousarray(win).reshape(
            n, heads, height, width, self.d_head, self.k * self.k)

    def forward(self, x: np.ndarray, training: bool = False):
        if x.ndim != 4 or x.shape[1] != self.d_in:
            raise DimensionError(f"expected (N, {self.d_in}, H, W), got {x.shape}")
        n, _, height, width = x.shape
        k, half, heads = self.k, self.k // 2, self.heads

        x_in = x
        if self.encoding_mode == "absolute":
            x_in = x + absolute_position_signal(self.d_in, height, width)[None].astype(x.dtype)

        q = self._split_heads(np.einsum("oi,nihw->nohw", self.W_Q, x_in, optimize=True))
        q = np.ascontiguousarray(q.transpose(0, 1, 3, 4, 2))        # (n, h, H, W, d)
        v_win = self._windows(pad_hw(self._split_heads(
            np.einsum("oi,nihw->nohw", self.W_V, x_in, optimize=True)), half),
            height, width)

        k_win = None
        if self.encoding_mode != "relative_only":
            k_win = self._windows(pad_hw(self._split_heads(
                np.einsum("oi,nihw->nohw", self.W_K, x_in, optimize=True)), half),
                height, width)
            logits = (q[..., None, :] @ k_win)[..., 0, :]           # (n, h, H, W, S)
        else:
            logits = np.zeros((n, heads, height, width, k * k), dtype=x.dtype)
        if self.encoding_mode in ("relative", "relative_only"):
            table = self._offset_table().reshape(k * k, self.d_head)
            logits += q @ table.T

        mask = window_validity(height, width, k).reshape(1, 1, height, width, k * k)
        attn = softmax_axis(logits, -1, mask)

        y = (v_win @ attn[..., None])[..., 0]                       # (n, h, H, W, d)
        y = np.ascontiguousarray(y.transpose(0, 1, 4, 2, 3)).reshape(
            n, self.d_out, height, width)
        return y, (x_in, q, k_win, v_win, attn)

    def _scatter_windows(self, d_win: np.ndarray, height: int, width: int) -> np.ndarray:
        # adjoint of _windows: (n, h, H, W, d, S) -> padded (n, h, d, Hp, Wp)
        k, half = self.k, self.k // 2
        n, heads = d_win.shape[0], d_win.shape[1]
        out = np.zeros((n, heads, self.d_head, height + 2 * half, width + 2 * half),
                       dtype=d_win.dtype)
        for u in range(k):
            for v in range(k):
                out[:, :, :, u:u + height, v:v + width] += \
                    d_win[..., u * k + v].transpose(0, 1, 4, 2, 3)
        return out

    def backward(self, dy: np.ndarray, ctx):
        x_in, q, k_win, v_win, attn = ctx
        n, _, height, width = x_in.shape
        k, half, heads = self.k, self.k // 2, self.heads
        dy_h = self._split_heads(dy).transpose(0, 1, 3, 4, 2)       # (n, h, H, W, d)

        d_attn = (dy_h[..., None, :] @ v_win)[..., 0, :]            # (n, h, H, W, S)
        dv_win = dy_h[..., None] @ attn[..., None, :]               # (n, h, H, W, d, S)

        # softmax backward; masked slots carry attn == 0, hence dlogits == 0
        inner = np.sum(attn * d_attn, axis=-1, keepdims=True)
        dlogits = attn * (d_attn - inner)

        grads: dict[str, np.ndarray] = {}
        dq = np.zeros_like(q)
        if self.encoding_mode != "relative_only":
            dq += (k_win @ dlogits[..., None])[..., 0]
            dk_win = q[..., None] @ dlogits[..., None, :]
            dk_pad = self._scatter_windows(dk_win, height, width)
        if self.encoding_mode in ("relative", "relative_only"):
            table = self._offset_table().reshape(k * k, self.d_head)
            dq += dlogits @ table
            flat_l = dlogits.reshape(-1, k * k)
            flat_q = q.reshape(-1, self.d_head)
            d_table = (flat_l.T @ flat_q).reshape(k, k, self.d_head)
            d_row = np.zeros_like(self.row_emb)
            d_col = np.zeros_like(self.col_emb)
            d_row[half:half + k] = d_table[:, :, :self.d_head // 2].sum(axis=1)
            d_col[half:half + k] = d_table[:, :, self.d_head // 2:].sum(axis=0)
            grads["row_emb"] = d_row
            grads["col_emb"] = d_col

        def unpad_merge(t_pad):
            t = t_pad[:, :, :, half:half + height, half:half + width]
            return t.reshape(n, self.d_out, height, width)

        dq_full = np.ascontiguousarray(dq.transpose(0, 1, 4, 2, 3)).reshape(
            n, self.d_out, height, width)
        dv_full = unpad_merge(self._scatter_windows(dv_win, height, width))
        dx_in = np.einsum("oi,nohw->nihw", self.W_Q, dq_full, optimize=True)
        dx_in += np.einsum("oi,nohw->nihw", self.W_V, dv_full, optimize=True)
        grads["W_Q"] = np.einsum("nohw,nihw->oi", dq_full, x_in, optimize=True)
        grads["W_V"] = np.einsum("nohw,nihw->oi", dv_full, x_in, optimize=True)
        if self.encoding_mode != "relative_only":
            dk_full = unpad_merge(dk_pad)
            dx_in += np.einsum("oi,nohw->nihw", self.W_K, dk_full, optimize=True)
            grads["W_K"] = np.einsum("nohw,nihw->oi", dk_full, x_in, optimize=True)
        # the absolute-mode position signal is a constant, so dx = dx_in
        return dx_in, grads


def relative_embedding_lookup(p: LocalAttention, row_off: int, col_off: int) -> np.ndarray:
    """Embedding vector for one window offset: [row_emb[row_off + k - 1] ;
    col_emb[col_off + k - 1]], length d_head."""
    k = p.k
    if abs(row_off) > k - 1 or abs(col_off) > k - 1:
        raise IndexError(f"offsets ({row_off}, {col_off}) outside [-(k-1), k-1] for k={k}")
    return np.concatenate([p.row_emb[row_off + k - 1], p.col_emb[col_off + k - 1]])


class BatchNorm2d:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes by batch statistics and folds them into the
    running estimates as running = decay*running + (1-decay)*batch; inference
    mode normalizes by the running estimates.
    """

    def __init__(self, channels: int, decay: float = 0.9, epsilon: float = 1e-5,
                 dtype=np.float32):
        if not 0.0 < decay < 1.0:
            raise ConfigurationError(f"decay must lie in (0, 1), got {decay}")
        self.channels = channels
        self.decay = decay
        self.epsilon = epsilon
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    @property
    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x: np.ndarray, training: bool = False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"expected (N, {self.channels}, H, W), got {x.shape}")
        shape = (1, self.channels, 1, 1)
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += (1.0 - self.decay) * (mean - self.running_mean)
            self.running_var += (1.0 - self.decay) * (var - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        y = self.gamma.reshape(shape) * x_hat + self.beta.reshape(shape)
        return y, (x_hat, inv_std, training, x.shape)

    def backward(self, dy: np.ndarray, ctx):
        x_hat, inv_std, training, x_shape = ctx
        shape = (1, self.channels, 1, 1)
        d_gamma = np.sum(dy * x_hat, axis=(0, 2, 3))
        d_beta = np.sum(dy, axis=(0, 2, 3))
        dx_hat = dy * self.gamma.reshape(shape)
        if training:
            m = x_shape[0] * x_shape[2] * x_shape[3]
            sum_dxhat = np.sum(dx_hat, axis=(0, 2, 3)).reshape(shape)
            sum_dxhat_xhat = np.sum(dx_hat * x_hat, axis=(0, 2, 3)).reshape(shape)
            dx = (inv_std.reshape(shape) / m) * (
                m * dx_hat - sum_dxhat - x_hat * sum_dxhat_xhat)
        else:
            dx = dx_hat * inv_std.reshape(shape)
        return dx, {"gamma": d_gamma.astype(self.gamma.dtype),
                    "beta": d_beta.astype(self.beta.dtype)}


class AttentionStem:
    """First-stage layer: 4-head attention inside disjoint 4x4 blocks whose
    values mix M matrices by position within the block, followed by batch norm
    and a 4x4 stride-4 max pool (one output pixel per block).

    The mixture weight p(a,b,m) = softmax_m((emb_row[a] + emb_col[b]) . nu[m])
    is shared across heads and across blocks.
    """

    WINDOW = 4

    def __init__(self, d_in: int, d_out: int, mixtures: int = 4, d_emb: int = 16,
                 heads: int = 4, bn_decay: float = 0.9,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if mixtures < 1:
            raise ConfigurationError(f"need at least one mixture matrix, got {mixtures}")
        if d_out % heads:
            raise ConfigurationError(f"d_out={d_out} must be divisible by heads={heads}")
        rng = rng or np.random.default_rng(0)
        self.d_in, self.d_out, self.heads = d_in, d_out, heads
        self.mixtures, self.d_emb = mixtures, d_emb
        self.d_head = d_out // heads
        self.W_Q = he_normal(rng, (d_out, d_in), d_in, dtype)
        self.W_K = he_normal(rng, (d_out, d_in), d_in, dtype)
        self.W_V = he_normal(rng, (mixtures, d_out, d_in), d_in, dtype)
        std = 1.0 / np.sqrt(d_emb)
        self.emb_row = (rng.standard_normal((self.WINDOW, d_emb)) * std).astype(dtype)
        self.emb_col = (rng.standard_normal((self.WINDOW, d_emb)) * std).astype(dtype)
        self.nu = (rng.standard_normal((mixtures, d_emb)) * std).astype(dtype)
        self.norm = BatchNorm2d(d_out, decay=bn_decay, dtype=dtype)

    @property
    def params(self):
        out = {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V,
               "emb_row": self.emb_row, "emb_col": self.emb_col, "nu": self.nu}
        for name, arr in self.norm.params.items():
            out["norm." + name] = arr
        return out

    def mixture_weights(self) -> np.ndarray:
        """(4, 4, M) array of p(a,b,m); rows sum to one."""
        combined = self.emb_row[:, None, :] + self.emb_col[None, :, :]     # (4, 4, E)
        logits = np.einsum("abe,me->abm", combined, self.nu, optimize=True)
        return softmax_axis(logits, -1)

    def forward(self, x: np.ndarray, training: bool = False):
        if x.ndim != 4 or x.shape[1] != self.d_in:
            raise DimensionError(f"expected (N, {self.d_in}, H, W), got {x.shape}")
        n, _, height, width = x.shape
        win = self.WINDOW
        if height % win or width % win:
            raise PaddingError(
                f"input {height}x{width} not divisible by {win}; pre-pad the image")
        hb, wb = height // win, width // win
        heads, dh = self.heads, self.d_head

        p = self.mixture_weights().astype(x.dtype)                          # (4, 4, M)
        w_mixed = np.einsum("abm,moi->aboi", p, self.W_V, optimize=True)    # (4, 4, out, in)

        # blocks axes: (n, c, hb, a, wb, b) -> heads layout (n, h, d, hb, wb, a*win+b)
        def to_blocks(t):
            tb = t.reshape(n, heads, dh, hb, win, wb, win)
            return np.ascontiguousarray(tb.transpose(0, 1, 3, 5, 2, 4, 6)).reshape(
                n, heads, hb, wb, dh, win * win)

        q = np.einsum("oi,nihw->nohw", self.W_Q, x, optimize=True)
        key = np.einsum("oi,nihw->nohw", self.W_K, x, optimize=True)
        xb = x.reshape(n, self.d_in, hb, win, wb, win)
        vt = np.einsum("aboi,nihavb->nohavb", w_mixed, xb, optimize=True)
        vt = vt.reshape(n, self.d_out, height, width)

        qb = to_blocks(q)
        kb = to_blocks(key)
        vb = to_blocks(vt)
        logits = np.matmul(np.swapaxes(qb, -2, -1), kb)         # (n, h, u, v, s, t)
        attn = softmax_axis(logits, -1)
        yb = np.matmul(vb, np.swapaxes(attn, -2, -1))           # (n, h, u, v, d, s)

        def from_blocks(tb):
            t = tb.reshape(n, heads, hb, wb, dh, win, win).transpose(0, 1, 4, 2, 5, 3, 6)
            return np.ascontiguousarray(t).reshape(n, self.d_out, height, width)

        attended = from_blocks(yb)
        normed, bn_ctx = self.norm.forward(attended, training)
        pooled = normed.reshape(n, self.d_out, hb, win, wb, win)
        flat = pooled.transpose(0, 1, 2, 4, 3, 5).reshape(n, self.d_out, hb, wb, win * win)
        arg = np.argmax(flat, axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        ctx = (x, p, w_mixed, qb, kb, vb, attn, bn_ctx, arg, (n, hb, wb))
        return y, ctx

    def backward(self, dy: np.ndarray, ctx):
        x, p, w_mixed, qb, kb, vb, attn, bn_ctx, arg, dims = ctx
        n, hb, wb = dims
        win, heads, dh = self.WINDOW, self.heads, self.d_head
        height, width = hb * win, wb * win

        d_flat = np.zeros((n, self.d_out, hb, wb, win * win), dtype=dy.dtype)
        np.put_along_axis(d_flat, arg[..., None], dy[..., None], axis=-1)
        d_normed = d_flat.reshape(n, self.d_out, hb, wb, win, win).transpose(
            0, 1, 2, 4, 3, 5).reshape(n, self.d_out, height, width)
        d_attended, bn_grads = self.norm.backward(d_normed, bn_ctx)

        def to_blocks_grad(t):
            tb = t.reshape(n, heads, dh, hb, win, wb, win)
            return np.ascontiguousarray(tb.transpose(0, 1, 3, 5, 2, 4, 6)).reshape(
                n, heads, hb, wb, dh, win * win)

        def from_blocks(tb):
            t = tb.reshape(n, heads, hb, wb, dh, win, win).transpose(0, 1, 4, 2, 5, 3, 6)
            return np.ascontiguousarray(t).reshape(n, self.d_out, height, width)

        dyb = to_blocks_grad(d_attended)
        d_attn = np.matmul(np.swapaxes(dyb, -2, -1), vb)
        dvb = np.matmul(dyb, attn)
        inner = np.sum(attn * d_attn, axis=-1, keepdims=True)
        dlogits = attn * (d_attn - inner)
        dqb = np.matmul(kb, np.swapaxes(dlogits, -2, -1))
        dkb = np.matmul(qb, dlogits)

        dq = from_blocks(dqb)
        dk = from_blocks(dkb)
        dvt = from_blocks(dvb)

        grads = {"norm." + k: v for k, v in bn_grads.items()}
        grads["W_Q"] = np.einsum("nohw,nihw->oi", dq, x, optimize=True)
        grads["W_K"] = np.einsum("nohw,nihw->oi", dk, x, optimize=True)
        dx = np.einsum("oi,nohw->nihw", self.W_Q, dq, optimize=True)
        dx += np.einsum("oi,nohw->nihw", self.W_K, dk, optimize=True)

        xb = x.reshape(n, self.d_in, hb, win, wb, win)
        dvtb = dvt.reshape(n, self.d_out, hb, win, wb, win)
        d_wmixed = np.einsum("nohavb,nihavb->aboi", dvtb, xb, optimize=True)
        dxb = np.einsum("aboi,nohavb->nihavb", w_mixed, dvtb, optimize=True)
        dx += dxb.reshape(n, self.d_in, height, width)

        grads["W_V"] = np.einsum("abm,aboi->moi", p, d_wmixed, optimize=True)
        dp = np.einsum("aboi,moi->abm", d_wmixed, self.W_V, optimize=True)
        inner_p = np.sum(p * dp, axis=-1, keepdims=True)
        dp_logits = p * (dp - inner_p)                                      # (4, 4, M)
        grads["nu"] = np.einsum(
            "abm,abe->me", dp_logits,
            self.emb_row[:, None, :] + self.emb_col[None, :, :], optimize=True)
        d_combined = np.einsum("abm,me->abe", dp_logits, self.nu, optimize=True)
        grads["emb_row"] = d_combined.sum(axis=1)
        grads["emb_col"] = d_combined.sum(axis=0)
        return dx, grads


def stem_mixture_weights(s: AttentionStem, a: int, b: int) -> np.ndarray:
    """Mixture distribution p(a, b, .) for one position of the 4x4 window."""
    if not (0 <= a < s.WINDOW and 0 <= b < s.WINDOW):
        raise IndexError(f"window position ({a}, {b}) outside [0, {s.WINDOW})")
    return s.mixture_weights()[a, b]


class MaxPool:
    """Windowed max with ceil(H/stride) output; padding slots are excluded
    from the comparison rather than compared as zeros. Ties route gradient to
    the first maximal slot, keeping backward deterministic."""

    def __init__(self, window: int, stride: int):
        self.window, self.stride = window, stride
        self.params = {}

    def forward(self, x: np.ndarray, training: bool = False):
        n, c, height, width = x.shape
        w, s = self.window, self.stride
        h_out = -(-height // s)
        w_out = -(-width // s)
        pad_h = max(0, (h_out - 1) * s + w - height) // 2
        pad_w = max(0, (w_out - 1) * s + w - width) // 2
        neg = np.finfo(x.dtype).min
        stack = np.full((n, c, h_out, w_out, w * w), neg, dtype=x.dtype)
        for u in range(w):
            rows = np.arange(h_out) * s - pad_h + u
            r_ok = (rows >= 0) & (rows < height)
            for v in range(w):
                cols = np.arange(w_out) * s - pad_w + v
                c_ok = (cols >= 0) & (cols < width)
                sub = x[:, :, rows[r_ok][:, None], cols[c_ok][None, :]]
                slot = stack[:, :, :, :, u * w + v]
                slot[:, :, r_ok[:, None] & c_ok[None, :]] = sub.reshape(n, c, -1)
        arg = np.argmax(stack, axis=-1)
        y = np.take_along_axis(stack, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg, pad_h, pad_w)

    def backward(self, dy: np.ndarray, ctx):
        x_shape, arg, pad_h, pad_w = ctx
        n, c, height, width = x_shape
        w, s = self.window, self.stride
        h_out, w_out = dy.shape[2], dy.shape[3]
        dx = np.zeros(x_shape, dtype=dy.dtype)
        out_i, out_j = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
        rows = out_i * s - pad_h + arg // w
        cols = out_j * s - pad_w + arg % w
        for img in range(n):
            for ch in range(c):
                np.add.at(dx[img, ch], (rows[img, ch].ravel(), cols[img, ch].ravel()),
                          dy[img, ch].ravel())
        return dx, {}


class AvgPool2x2:
    """2x2 stride-2 average pooling; odd borders average the in-image elements
    only, so a constant image stays constant."""

    def __init__(self):
        self.params = {}

    def forward(self, x: np.ndarray, training: bool = False):
        n, c, height, width = x.shape
        h_out = -(-height // 2)
        w_out = -(-width // 2)
        xp = np.zeros((n, c, 2 * h_out, 2 * w_out), dtype=x.dtype)
        xp[:, :, :height, :width] = x
        sums = xp.reshape(n, c, h_out, 2, w_out, 2).sum(axis=(3, 5))
        rows = np.minimum(2, height - 2 * np.arange(h_out))
        cols = np.minimum(2, width - 2 * np.arange(w_out))
        count = (rows[:, None] * cols[None, :]).astype(x.dtype)
        y = sums / count
        return y, (x.shape, count)

    def backward(self, dy: np.ndarray, ctx):
        x_shape, count = ctx
        n, c, height, width = x_shape
        h_out, w_out = dy.shape[2], dy.shape[3]
        spread = np.repeat(np.repeat(dy / count, 2, axis=2), 2, axis=3)
        return spread[:, :, :height, :width], {}


class ReLU:
    def __init__(self):
        self.params = {}

    def forward(self, x: np.ndarray, training: bool = False):
        return np.maximum(x, 0), (x > 0)

    def backward(self, dy: np.ndarray, ctx):
        return dy * ctx, {}


class GlobalAvgPool:
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self):
        self.params = {}

    def forward(self, x: np.ndarray, training: bool = False):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy: np.ndarray, ctx):
        n, c, height, width = ctx
        dx = np.broadcast_to(dy[:, :, None, None] / (height * width),
                             (n, c, height, width)).copy()
        return dx, {}


class Linear:
    """y = W x + b on (N, d_in) feature rows."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.d_in, self.d_out = d_in, d_out
        self.weight = he_normal(rng, (d_out, d_in), d_in, dtype)
        self.bias = np.zeros(d_out, dtype=dtype)

    @property
    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray, training: bool = False):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"expected (N, {self.d_in}), got {x.shape}")
        return x @ self.weight.T + self.bias, x

    def backward(self, dy: np.ndarray, ctx):
        x = ctx
        return dy @ self.weight, {"weight": dy.T @ x, "bias": dy.sum(axis=0)}


# functional views of the layer ops, for callers that hold a configured layer
def conv2d(x: np.ndarray, p: Conv2d) -> np.ndarray:
    return p.forward(x)[0]


def local_attention(x: np.ndarray, p: LocalAttention) -> np.ndarray:
    return p.forward(x)[0]


def stem_attention(x: np.ndarray, s: AttentionStem, training: bool = False) -> np.ndarray:
    return s.forward(x, training)[0]


def batchnorm(x: np.ndarray, p: BatchNorm2d, training: bool = False) -> np.ndarray:
    return p.forward(x, training)[0]


def avg_pool_2x2(x: np.ndarray) -> np.ndarray:
    return AvgPool2x2().forward(x)[0]


def max_pool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    return MaxPool(window, stride).forward(x)[0]
