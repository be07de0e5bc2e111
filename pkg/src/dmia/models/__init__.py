"""Trainable networks: time-conditioned denoisers and the GAN pair."""

from .denoiser import DenoiserNet, sinusoidal_embedding
from .gan import GanPair, discriminate, generate

__all__ = ["DenoiserNet", "GanPair", "discriminate", "generate", "sinusoidal_embedding"]
