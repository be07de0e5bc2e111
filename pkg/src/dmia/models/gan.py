"""Generator/discriminator pair.

Image data gets stride-2 conv stacks (4x4 kernels, leaky-ReLU critic,
tanh-bounded generator built from transposed convs); vector data gets a
256-unit MLP pair. The discriminator returns one raw (pre-sigmoid) score
per input, higher meaning "judged more real".
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..errors import ContractViolation
from ..numerics import RngStream, Tensor, conv2d, conv_transpose2d, leaky_relu, relu, tanh

log = logging.getLogger(__name__)

LATENT_DIM_DEFAULT = 100
MLP_HIDDEN = 256
BASE_WIDTH = 32


def _he(rng: RngStream, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(shape) * np.float32(math.sqrt(2.0 / fan_in))


class GanPair:
    """Generator (latent -> data) and discriminator (data -> real score)."""

    def __init__(self, arch: str, data_shape: tuple[int, ...], latent_dim: int, params: dict[str, Tensor]):
        self.arch = arch
        self.data_shape = tuple(data_shape)
        self.latent_dim = latent_dim
        self.params = params

    @classmethod
    def build(cls, data_shape: tuple[int, ...], rng: RngStream, latent_dim: int = LATENT_DIM_DEFAULT) -> "GanPair":
        data_shape = tuple(data_shape)
        p: dict[str, Tensor] = {}

        def linear(name, n_in, n_out):
            p[f"{name}.w"] = Tensor(_he(rng, (n_in, n_out), n_in), requires_grad=True)
            p[f"{name}.b"] = Tensor(np.zeros((1, n_out), dtype=np.float32), requires_grad=True)

        if len(data_shape) == 1:
            arch = "mlp"
            d = data_shape[0]
            linear("g.l0", latent_dim, MLP_HIDDEN)
            linear("g.l1", MLP_HIDDEN, MLP_HIDDEN)
            linear("g.head", MLP_HIDDEN, d)
            linear("d.l0", d, MLP_HIDDEN)
            linear("d.l1", MLP_HIDDEN, MLP_HIDDEN)
            linear("d.head", MLP_HIDDEN, 1)
        elif len(data_shape) == 3:
            arch = "dcgan"
            c, h, w = data_shape
            if h != w or h < 8 or (h & (h - 1)):
                raise ContractViolation(f"dcgan expects square power-of-two images >= 8, got {h}x{w}")
            levels = int(math.log2(h / 4))
            widths = [BASE_WIDTH * 2**i for i in range(levels)]  # e.g. 16x16 -> [32, 64]
            top = widths[-1]
            linear("g.proj", latent_dim, top * 4 * 4)
            chain = widths[::-1]  # top width down to BASE_WIDTH
            for i in range(levels):
                c_in = chain[i]
                c_out = chain[i + 1] if i + 1 < levels else c
                # conv_transpose kernels are (in, out, kh, kw)
                p[f"g.up{i}.w"] = Tensor(_he(rng, (c_in, c_out, 4, 4), c_in * 16), requires_grad=True)
                p[f"g.up{i}.b"] = Tensor(np.zeros((c_out, 1, 1), dtype=np.float32), requires_grad=True)
            for i in range(levels):
                c_in = c if i == 0 else widths[i - 1]
                p[f"d.conv{i}.w"] = Tensor(_he(rng, (widths[i], c_in, 4, 4), c_in * 16), requires_grad=True)
                p[f"d.conv{i}.b"] = Tensor(np.zeros((widths[i], 1, 1), dtype=np.float32), requires_grad=True)
            linear("d.head", top * 4 * 4, 1)
        else:
            raise ContractViolation(f"unsupported data shape {data_shape}")

        pair = cls(arch, data_shape, latent_dim, p)
        log.info("built %s GAN for %s: %d parameters", arch, data_shape, pair.param_count())
        return pair

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def generator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("g.")}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("d.")}

    def astype(self, dtype) -> "GanPair":
        cast = {k: Tensor(v.data.astype(dtype), requires_grad=True, dtype=dtype) for k, v in self.params.items()}
        return GanPair(self.arch, self.data_shape, self.latent_dim, cast)

    def _linear(self, name: str, x: Tensor) -> Tensor:
        return x @ self.params[f"{name}.w"] + self.params[f"{name}.b"]

    def generate(self, z: Tensor) -> Tensor:
        """Map latents (n, latent_dim) to data in [-1, 1]."""
        if len(z.shape) != 2 or z.shape[1] != self.latent_dim:
            raise ContractViolation(f"latents must be (n, {self.latent_dim}), got {z.shape}")
        n = z.shape[0]
        if self.arch == "mlp":
            h = relu(self._linear("g.l0", z))
            h = relu(self._linear("g.l1", h))
            return tanh(self._linear("g.head", h))
        c, height, _ = self.data_shape
        levels = int(math.log2(height / 4))
        h = relu(self._linear("g.proj", z)).reshape(n, -1, 4, 4)
        for i in range(levels):
            h = conv_transpose2d(h, self.params[f"g.up{i}.w"], stride=2, padding=1) + self.params[f"g.up{i}.b"]
            h = tanh(h) if i == levels - 1 else relu(h)
        return h

    def discriminate(self, x: Tensor) -> Tensor:
        """Raw realness scores, shape (n,)."""
        if tuple(x.shape[1:]) != self.data_shape:
            raise ContractViolation(f"input shape {x.shape[1:]} != data shape {self.data_shape}")
        n = x.shape[0]
        if self.arch == "mlp":
            h = leaky_relu(self._linear("d.l0", x))
            h = leaky_relu(self._linear("d.l1", h))
            return self._linear("d.head", h).reshape(n)
        height = self.data_shape[1]
        levels = int(math.log2(height / 4))
        h = x
        for i in range(levels):
            h = conv2d(h, self.params[f"d.conv{i}.w"], stride=2, padding=1) + self.params[f"d.conv{i}.b"]
            h = leaky_relu(h)
        return self._linear("d.head", h.reshape(n, -1)).reshape(n)


def generate(pair: GanPair, z: Tensor) -> Tensor:
    return pair.generate(z)


def discriminate(pair: GanPair, x: Tensor) -> Tensor:
    return pair.discriminate(x)
