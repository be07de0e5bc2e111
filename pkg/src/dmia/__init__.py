"""dmia: train small diffusion/GAN models and measure membership-inference leakage."""

__version__ = "0.1.0"
