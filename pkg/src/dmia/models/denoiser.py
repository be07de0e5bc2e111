"""Trainable noise predictors.

Two architectures behind one interface:
  * "mlp" for vector data: three 256-unit hidden layers, projected time
    embedding concatenated to the input.
  * "small_unet" for NCHW images (spatial dims divisible by 4): two
    stride-2 downsampling stages at widths 32/64, two residual blocks per
    stage, nearest-neighbor upsampling with additive skips, and a
    per-block projection of the time embedding added per channel.

The final layer is zero-initialized, so a freshly built net predicts zero
noise everywhere.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import ContractViolation
from ..numerics import RngStream, Tensor, concat, conv2d, silu, upsample_nearest2d

log = logging.getLogger(__name__)

TIME_DIM = 64
TIME_HIDDEN = 128
MLP_HIDDEN = 256
UNET_WIDTHS = (32, 64)

ARCHS = ("mlp", "small_unet")


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos features of integer steps, shape (n, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(np.float32)


def _he(rng: RngStream, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape) * np.float32(math.sqrt(2.0 / fan_in))


class DenoiserNet:
    """A noise-prediction network eps(x_t, t) with named parameters."""

    def __init__(self, arch: str, input_shape: tuple[int, ...], params: dict[str, Tensor], time_dim: int = TIME_DIM):
        if arch not in ARCHS:
            raise ContractViolation(f"unknown denoiser arch '{arch}'")
        self.arch = arch
        self.input_shape = tuple(input_shape)
        self.time_dim = time_dim
        self.params = params

    # ---- construction -------------------------------------------------------

    @classmethod
    def build(cls, arch: str, input_shape: tuple[int, ...], rng: RngStream, time_dim: int = TIME_DIM) -> "DenoiserNet":
        input_shape = tuple(input_shape)
        p: dict[str, Tensor] = {}

        def param(name, data):
            p[name] = Tensor(data, requires_grad=True)

        def linear(name, n_in, n_out, zero=False):
            w = np.zeros((n_in, n_out), dtype=np.float32) if zero else _he(rng, (n_in, n_out), n_in)
            param(f"{name}.w", w)
            param(f"{name}.b", np.zeros((1, n_out), dtype=np.float32))

        def conv(name, c_out, c_in, k=3, zero=False):
            w = np.zeros((c_out, c_in, k, k), dtype=np.float32) if zero else _he(rng, (c_out, c_in, k, k), c_in * k * k)
            param(f"{name}.w", w)
            param(f"{name}.b", np.zeros((c_out, 1, 1), dtype=np.float32))

        linear("temb.l1", time_dim, TIME_HIDDEN)
        linear("temb.l2", TIME_HIDDEN, TIME_HIDDEN)

        if arch == "mlp":
            if len(input_shape) != 1:
                raise ContractViolation(f"mlp denoiser expects a vector shape, got {input_shape}")
            d = input_shape[0]
            linear("l0", d + TIME_HIDDEN, MLP_HIDDEN)
            linear("l1", MLP_HIDDEN, MLP_HIDDEN)
            linear("l2", MLP_HIDDEN, MLP_HIDDEN)
            linear("head", MLP_HIDDEN, d, zero=True)
        elif arch == "small_unet":
            if len(input_shape) != 3:
                raise ContractViolation(f"small_unet expects (C, H, W), got {input_shape}")
            c, h, w = input_shape
            if h % 4 or w % 4:
                raise ContractViolation(f"small_unet needs spatial dims divisible by 4, got {h}x{w}")
            w0, w1 = UNET_WIDTHS

            def res_block(name, ch):
                conv(f"{name}.c1", ch, ch)
                linear(f"{name}.t", TIME_HIDDEN, ch)
                conv(f"{name}.c2", ch, ch, zero=True)

            conv("stem", w0, c)
            res_block("enc0.res0", w0)
            res_block("enc0.res1", w0)
            conv("enc0.down", w1, w0)
            res_block("enc1.res0", w1)
            res_block("enc1.res1", w1)
            conv("enc1.down", w1, w1)
            res_block("mid.res0", w1)
            conv("up1.conv", w1, w1)
            res_block("up1.res0", w1)
            res_block("up1.res1", w1)
            conv("up0.conv", w0, w1)
            res_block("up0.res0", w0)
            res_block("up0.res1", w0)
            conv("head", c, w0, zero=True)
        else:  # pragma: no cover - guarded above
            raise ContractViolation(arch)

        net = cls(arch, input_shape, p, time_dim)
        log.info("built %s denoiser for %s: %d parameters", arch, input_shape, net.param_count())
        return net

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def astype(self, dtype) -> "DenoiserNet":
        """Clone with parameters cast to dtype (float64 shadow for gradient checks)."""
        cast = {k: Tensor(v.data.astype(dtype), requires_grad=True, dtype=dtype) for k, v in self.params.items()}
        return DenoiserNet(self.arch, self.input_shape, cast, self.time_dim)

    # ---- forward ----------------------------------------------------------------

    def _dtype(self):
        return next(iter(self.params.values())).dtype

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.w"] + self.params[f"{name}.b"]

    def _conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        return conv2d(x, self.params[f"{name}.w"], stride=stride, padding=1) + self.params[f"{name}.b"]

    def _time_features(self, t, n: int) -> Tensor:
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        emb = Tensor(sinusoidal_embedding(t_arr, self.time_dim), dtype=self._dtype())
        return self._linear("temb.l2", silu(self._linear("temb.l1", emb)))

    def _res(self, name: str, x: Tensor, te: Tensor) -> Tensor:
        h = self._conv(f"{name}.c1", silu(x))
        tproj = self._linear(f"{name}.t", silu(te))
        n, ch = tproj.shape
        h = h + tproj.reshape(n, ch, 1, 1)
        return x + self._conv(f"{name}.c2", silu(h))

    def predict_eps(self, x_t: Tensor, t) -> Tensor:
        """Predicted noise for x_t at step(s) t; output shape equals input shape."""
        if tuple(x_t.shape[1:]) != self.input_shape:
            raise ContractViolation(f"input shape {x_t.shape[1:]} != expected {self.input_shape}")
        n = x_t.shape[0]
        te = self._time_features(t, n)
        if self.arch == "mlp":
            h = concat([x_t, te], axis=1)
            h = silu(self._linear("l0", h))
            h = silu(self._linear("l1", h))
            h = silu(self._linear("l2", h))
            return self._linear("head", h)
        h = self._conv("stem", x_t)
        a0 = self._res("enc0.res1", self._res("enc0.res0", h, te), te)
        h = self._conv("enc0.down", a0, stride=2)
        a1 = self._res("enc1.res1", self._res("enc1.res0", h, te), te)
        h = self._conv("enc1.down", a1, stride=2)
        h = self._res("mid.res0", h, te)
        h = self._conv("up1.conv", upsample_nearest2d(h, 2)) + a1
        h = self._res("up1.res1", self._res("up1.res0", h, te), te)
        h = self._conv("up0.conv", upsample_nearest2d(h, 2)) + a0
        h = self._res("up0.res1", self._res("up0.res0", h, te), te)
        return self._conv("head", h)
