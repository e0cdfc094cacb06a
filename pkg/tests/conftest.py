import os

import numpy as np
import pytest
import torch
from torch import nn

from cyclefill.models import ArchConfig, ModelBundle

torch.set_num_threads(min(8, os.cpu_count() or 1))


def rand_image(rng, size):
    return rng.uniform(-1, 1, size=(size, size, 3)).astype(np.float32)


def rand_mask(rng, size):
    return (rng.random((size, size)) < 0.5).astype(np.float32)


def synth_corpus(n: int, size: int, seed: int = 0, texture: bool = False) -> np.ndarray:
    """Low-dimensional synthetic image family: vertical background gradient
    plus a colored disk, parameters drawn per image. Deterministic.

    texture=True overlays fine gratings and speckle so blur/brightness/contrast
    artifacts are detectable (smooth gradients are nearly blur-invariant)."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    images = np.empty((n, size, size, 3), dtype=np.float32)
    for i in range(n):
        top = rng.uniform(-0.9, 0.9, 3).astype(np.float32)
        bottom = rng.uniform(-0.9, 0.9, 3).astype(np.float32)
        img = top[None, None] * (1 - ys[..., None]) + bottom[None, None] * ys[..., None]
        cx, cy = rng.uniform(0.3, 0.7, 2)
        radius = rng.uniform(0.15, 0.3)
        color = rng.uniform(-0.9, 0.9, 3).astype(np.float32)
        disk = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
        img[disk] = color
        if texture:
            for _ in range(2):
                period = rng.uniform(2.0, 6.0)
                fx, fy = rng.uniform(-1, 1, 2)
                norm = np.hypot(fx, fy) or 1.0
                phase = rng.uniform(0, 2 * np.pi)
                wave = np.sin(2 * np.pi * size * (fx * xs + fy * ys) / (norm * period)
                              + phase)
                img += rng.uniform(0.08, 0.18) * wave[..., None]
            img += rng.uniform(-0.08, 0.08, size=img.shape)
        images[i] = np.clip(img, -1.0, 1.0)
    return images


class FixedImageGenerator(nn.Module):
    """Stub generator that ignores the latent and returns one fixed image."""

    def __init__(self, image: np.ndarray):
        super().__init__()
        chw = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))
        self.register_buffer("image", chw)

    def forward(self, z):
        return self.image[None].expand(z.shape[0], -1, -1, -1)


class MeanEncoder(nn.Module):
    """Stub encoder: per-channel means plus coarse pooled stats as the code."""

    def __init__(self, latent_dim: int = 8):
        super().__init__()
        self.latent_dim = latent_dim

    def forward(self, x):
        pooled = nn.functional.adaptive_avg_pool2d(x, 2).flatten(1)
        reps = -(-self.latent_dim // pooled.shape[1])
        return pooled.repeat(1, reps)[:, : self.latent_dim]


class ConstantScorer(nn.Module):
    """Stub discriminator returning a fixed scalar score."""

    def __init__(self, score: float = 0.5):
        super().__init__()
        self.score = score

    def forward(self, x):
        return torch.full((x.shape[0],), self.score)


class SequenceScorer(nn.Module):
    """Stub discriminator replaying a fixed score sequence across calls."""

    def __init__(self, scores):
        super().__init__()
        self.values = list(scores)
        self.calls = 0

    def forward(self, x):
        score = self.values[self.calls % len(self.values)]
        self.calls += 1
        return torch.full((x.shape[0],), float(score))


class PerturbRefiner(nn.Module):
    """Stub refiner nudging every pixel by a constant, clamped to range."""

    def __init__(self, delta: float = 0.1, resolution: int = None):
        super().__init__()
        self.delta = delta
        if resolution is not None:
            self.resolution = resolution
        self.depth_stride = 1

    def forward(self, x):
        return (x + self.delta).clamp(-1.0, 1.0)


def stub_bundle(image: np.ndarray, scores=None, score: float = 0.5,
                refiner_delta: float = 0.1) -> ModelBundle:
    size = image.shape[0]
    arch = ArchConfig(resolution=size, latent_dim=8)
    disc = SequenceScorer(scores) if scores is not None else ConstantScorer(score)
    return ModelBundle(
        arch=arch,
        generator=FixedImageGenerator(image),
        encoder=MeanEncoder(8),
        artifact_discriminator=disc,
        refiner=PerturbRefiner(refiner_delta, resolution=size),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
