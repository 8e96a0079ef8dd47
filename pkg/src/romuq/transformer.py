"""Latent-sequence forecaster: causal self-attention over the delay window,
cross-attention to the external-parameter token, autoregressive rollout."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .datagen import ParamPoint
from .tensor import Tensor

MASK_FILL = -1e9


@dataclass
class TransformerConfig:
    lookback: int
    horizon: int
    latent_dim: int
    width: int = 64
    heads: int = 4
    blocks: int = 1
    param_dim: int = 1
    ff_mult: int = 2

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.lookback < 1 or self.horizon < 1:
            raise ValueError("lookback and horizon must be >= 1")

    def to_dict(self) -> dict:
        return {"lookback": self.lookback, "horizon": self.horizon,
                "latent_dim": self.latent_dim, "width": self.width,
                "heads": self.heads, "blocks": self.blocks,
                "param_dim": self.param_dim, "ff_mult": self.ff_mult}


def sinusoidal_encoding(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width // 2)[None, :]
    angles = pos / np.power(10000.0, 2 * i / width)
    enc = np.zeros((length, width))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_FILL), k=1)


def _linear_init(rng, n_in, n_out):
    w = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / (n_in + n_out))
    b = np.zeros(n_out)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class AttentionBlock:
    """Masked self-attention, cross-attention to the parameter tokens, and a
    feed-forward sublayer; each followed by residual add + layer-norm."""

    def __init__(self, config: TransformerConfig, rng, register, index: int):
        d = config.width
        self.config = config

        def lin(name, n_in, n_out):
            w, b = _linear_init(rng, n_in, n_out)
            register(f"block{index}.{name}.w", w)
            register(f"block{index}.{name}.b", b)
            return w, b

        def ln_affine(name):
            gamma = Tensor(np.ones(d), requires_grad=True)
            beta = Tensor(np.zeros(d), requires_grad=True)
            register(f"block{index}.{name}.gamma", gamma)
            register(f"block{index}.{name}.beta", beta)
            return gamma, beta

        self.wq = lin("self_q", d, d)
        self.wk = lin("self_k", d, d)
        self.wv = lin("self_v", d, d)
        self.wo = lin("self_o", d, d)
        self.cq = lin("cross_q", d, d)
        self.ck = lin("cross_k", d, d)
        self.cv = lin("cross_v", d, d)
        self.co = lin("cross_o", d, d)
        self.ff1 = lin("ff1", d, config.ff_mult * d)
        self.ff2 = lin("ff2", config.ff_mult * d, d)
        self.ln1 = ln_affine("ln1")
        self.ln2 = ln_affine("ln2")
        self.ln3 = ln_affine("ln3")

    def _heads_split(self, x: Tensor, batch: int, length: int) -> Tensor:
        c = self.config
        dh = c.width // c.heads
        return T.transpose(T.reshape(x, (batch, length, c.heads, dh)), (0, 2, 1, 3))

    def _heads_join(self, x: Tensor, batch: int, length: int) -> Tensor:
        c = self.config
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (batch, length, c.width))

    def _attend(self, q_in, kv_in, proj_q, proj_k, proj_v, proj_o, mask=None):
        c = self.config
        batch, q_len = q_in.shape[0], q_in.shape[1]
        kv_len = kv_in.shape[1]
        dh = c.width // c.heads
        q = self._heads_split(T.add(T.matmul(q_in, proj_q[0]), proj_q[1]), batch, q_len)
        k = self._heads_split(T.add(T.matmul(kv_in, proj_k[0]), proj_k[1]), batch, kv_len)
        v = self._heads_split(T.add(T.matmul(kv_in, proj_v[0]), proj_v[1]), batch, kv_len)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = T.add(scores, Tensor(mask))
        weights = T.softmax(scores)
        ctx = self._heads_join(T.matmul(weights, v), batch, q_len)
        return T.add(T.matmul(ctx, proj_o[0]), proj_o[1])

    def _ln(self, x: Tensor, affine) -> Tensor:
        gamma, beta = affine
        return T.add(T.mul(T.layer_norm(x), gamma), beta)

    def __call__(self, x: Tensor, xi_tokens: Tensor) -> Tensor:
        mask = causal_mask(x.shape[1])
        x = self._ln(T.add(x, self._attend(x, x, self.wq, self.wk, self.wv,
                                           self.wo, mask)), self.ln1)
        x = self._ln(T.add(x, self._attend(x, xi_tokens, self.cq, self.ck,
                                           self.cv, self.co)), self.ln2)
        h = T.add(T.matmul(T.gelu(T.add(T.matmul(x, self.ff1[0]), self.ff1[1])),
                           self.ff2[0]), self.ff2[1])
        return self._ln(T.add(x, h), self.ln3)


class LatentTransformer:
    """Maps a lookback window of latents to the next ``horizon`` latents."""

    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self._params: list[tuple[str, Tensor]] = []
        self.forward_count = 0  # inference-cost probe

        def register(name, t):
            self._params.append((f"transformer.{name}", t))

        def lin(name, n_in, n_out):
            w, b = _linear_init(rng, n_in, n_out)
            register(f"{name}.w", w)
            register(f"{name}.b", b)
            return w, b

        self.in_proj = lin("in_proj", c.latent_dim, c.width)
        self.xi_proj = lin("xi_proj", c.param_dim, c.width)
        self.blocks = [AttentionBlock(c, rng, register, i) for i in range(c.blocks)]
        self.out_head = lin("out_head", c.width, c.horizon * c.latent_dim)
        self.pos = sinusoidal_encoding(c.lookback, c.width)

    def named_parameters(self):
        return list(self._params)

    def parameters(self):
        return [p for _, p in self._params]

    def _xi_tokens(self, xi, batch: int) -> Tensor:
        if isinstance(xi, ParamPoint):
            vec = np.tile(xi.vector(), (batch, 1))
            xi = Tensor(vec)
        elif not isinstance(xi, Tensor):
            arr = np.asarray(xi, dtype=np.float64)
            if arr.ndim == 1:
                arr = np.tile(arr, (batch, 1))
            xi = Tensor(arr)
        tok = T.add(T.matmul(xi, self.xi_proj[0]), self.xi_proj[1])
        return T.reshape(tok, (batch, 1, self.config.width))

    def forecast(self, window: Union[np.ndarray, Tensor], xi) -> Tensor:
        """Predict the next ``horizon`` latent vectors, shape (B, h, Z)."""
        c = self.config
        x = window if isinstance(window, Tensor) else Tensor(np.asarray(window))
        if x.data.ndim == 2:
            x = T.reshape(x, (1,) + tuple(x.shape))
        if x.shape[1] != c.lookback or x.shape[2] != c.latent_dim:
            raise T.ShapeError("forecast", x.shape, (c.lookback, c.latent_dim))
        self.forward_count += 1
        batch = x.shape[0]
        h = T.add(T.add(T.matmul(x, self.in_proj[0]), self.in_proj[1]),
                  Tensor(self.pos))
        xi_tokens = self._xi_tokens(xi, batch)
        for block in self.blocks:
            h = block(h, xi_tokens)
        last = T.reshape(T.slice_axis(h, 1, c.lookback - 1, c.lookback),
                         (batch, c.width))
        out = T.add(T.matmul(last, self.out_head[0]), self.out_head[1])
        return T.reshape(out, (batch, c.horizon, c.latent_dim))


class RolloutDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"latent rollout diverged at step {step}")
        self.step = step


def rollout(model: LatentTransformer, initial_window: np.ndarray, xi,
            steps: int) -> np.ndarray:
    """Autoregressive latent trajectory of length ``steps``.

    Consumes one predicted step per forecast and slides the window; the
    encoder is never re-invoked.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    c = model.config
    window = np.asarray(initial_window, dtype=np.float64).copy()
    if window.shape != (c.lookback, c.latent_dim):
        raise T.ShapeError("rollout", window.shape, (c.lookback, c.latent_dim))
    out = np.empty((steps, c.latent_dim))
    for step in range(steps):
        pred = model.forecast(window[None, :, :], xi).data[0]
        nxt = pred[0]
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > 1e6:
            raise RolloutDivergence(step)
        out[step] = nxt
        window = np.concatenate([window[1:], nxt[None, :]], axis=0)
    return out
