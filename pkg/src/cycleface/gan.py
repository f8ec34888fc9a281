"""Conditional generator/discriminator and their losses.

The generator consumes a 612-dimensional latent code (512-d sentence
embedding concatenated with 100-d standard-normal noise) and emits a
64x64x3 Tanh image. The discriminator scores an image against its caption
embedding and outputs a 4x4 activation map trained with least-squares
targets; the reconstruction term is a mean absolute error against the
paired real image.
"""

import numpy as np
import torch
import torch.nn as nn

EMBED_DIM = 512
NOISE_DIM = 100
LATENT_DIM = EMBED_DIM + NOISE_DIM
LEAKY_SLOPE = 0.2


def make_latent(embedding, noise_seed):
    """Concatenate the embedding with seeded standard-normal noise.

    embedding: (512,) tensor or array. Deterministic in (embedding, seed).
    """
    e = torch.as_tensor(embedding, dtype=torch.float32).reshape(-1)
    if e.numel() != EMBED_DIM:
        raise ValueError(f"embedding must have {EMBED_DIM} values, got {e.numel()}")
    rng = np.random.default_rng(np.uint64(noise_seed))
    noise = torch.from_numpy(rng.standard_normal(NOISE_DIM).astype(np.float32))
    return torch.cat([e, noise])


class Generator(nn.Module):
    """612 -> 4x4x512 projection, then four stride-2 transposed-conv blocks
    (512 -> 256 -> 128 -> 64 -> 3) ending in Tanh. Batch-style per-channel
    normalization on every block except the output layer."""

    def __init__(self):
        super().__init__()
        self.project = nn.Linear(LATENT_DIM, 4 * 4 * 512)
        self.blocks = nn.Sequential(
            nn.BatchNorm2d(512),
            nn.ReLU(),
            nn.ConvTranspose2d(512, 256, 4, stride=2, padding=1),
            nn.BatchNorm2d(256),
            nn.ReLU(),
            nn.ConvTranspose2d(256, 128, 4, stride=2, padding=1),
            nn.BatchNorm2d(128),
            nn.ReLU(),
            nn.ConvTranspose2d(128, 64, 4, stride=2, padding=1),
            nn.BatchNorm2d(64),
            nn.ReLU(),
            nn.ConvTranspose2d(64, 3, 4, stride=2, padding=1),
            nn.Tanh(),
        )

    def forward(self, z):
        """z: (B, 612) or (612,) -> (B, 3, 64, 64) in (-1, 1)."""
        if z.dim() == 1:
            z = z.unsqueeze(0)
        x = self.project(z).reshape(-1, 512, 4, 4)
        return self.blocks(x)


class Discriminator(nn.Module):
    """Four stride-2 conv blocks (3 -> 64 -> 128 -> 256 -> 512) with
    LeakyReLU; the caption embedding is projected to 128, replicated over
    the 4x4 grid, concatenated, and reduced by a 1x1 conv to a 4x4 map."""

    def __init__(self):
        super().__init__()
        self.blocks = nn.Sequential(
            nn.Conv2d(3, 64, 4, stride=2, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(64, 128, 4, stride=2, padding=1),
            nn.BatchNorm2d(128),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(128, 256, 4, stride=2, padding=1),
            nn.BatchNorm2d(256),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Conv2d(256, 512, 4, stride=2, padding=1),
            nn.BatchNorm2d(512),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        self.embed_proj = nn.Linear(EMBED_DIM, 128)
        self.head = nn.Conv2d(512 + 128, 1, 1)

    def forward(self, image, embedding):
        """image: (B, 3, 64, 64), embedding: (B, 512) -> (B, 4, 4)."""
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if embedding.dim() == 1:
            embedding = embedding.unsqueeze(0)
        if image.shape[1:] != (3, 64, 64):
            raise ValueError(f"expected (B, 3, 64, 64) image, got {tuple(image.shape)}")
        h = self.blocks(image)
        e = torch.nn.functional.leaky_relu(self.embed_proj(embedding), LEAKY_SLOPE)
        e = e[:, :, None, None].expand(-1, -1, 4, 4)
        return self.head(torch.cat([h, e], dim=1)).squeeze(1)


def mae(fake, real):
    """Mean absolute error over all pixel elements."""
    if fake.shape != real.shape:
        raise ValueError("image shape mismatch")
    return (real - fake).abs().mean()


def generator_loss(fake, real, d_fake, lambda_rec=10.0, feature_match=None,
                   lambda_fm=0.0):
    """Least-squares adversarial term (target 1) plus weighted MAE
    reconstruction. Optional feature-matching term: MSE between real and
    fake activation maps, off by default."""
    loss = ((d_fake - 1.0) ** 2).mean() + lambda_rec * mae(fake, real)
    if lambda_fm and feature_match is not None:
        d_real, d_fake_fm = feature_match
        loss = loss + lambda_fm * ((d_real - d_fake_fm) ** 2).mean()
    return loss


def discriminator_loss(d_real, d_fake):
    """Least-squares discrimination: real maps toward 1, fake toward 0."""
    if d_real.shape != d_fake.shape:
        raise ValueError("activation map shape mismatch")
    return 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake ** 2).mean()
