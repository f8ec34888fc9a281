"""Evaluation: Frechet distance over feature activations, an
inception-style score from a from-scratch attribute classifier, and the
cycle attribute-recovery rate.

The feature network here is trained on the synthetic dataset, so absolute
scores are comparable only within this artifact, not to values computed
with a pretrained feature network.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import caption_decoder, gan
from .attributes import DEFAULT_SCHEMA
from .caption_decoder import FeatureExtractor, image_to_tensor
from .grammar import attributes_from_caption
from .text_encoder import pad_batch, tokenize

log = logging.getLogger(__name__)

N_CLASSES = 12  # lipstick (2) x hair color (3) x smiling (2)
FID_FEATURE_DIM = 64


@dataclass
class ActivationStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def activation_stats(features) -> ActivationStats:
    """Sample mean and covariance (1/(n-1) normalization, symmetrized)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a list of equal-length vectors")
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 feature vectors")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2
    return ActivationStats(mu=mu, sigma=sigma, n=n)


def matrix_sqrt_psd(m, eig_tol=1e-10, sym_tol=1e-8):
    """Principal square root of a symmetric PSD matrix via
    eigendecomposition. Eigenvalues in [-eig_tol, 0) are clamped to 0;
    anything more negative is rejected."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.abs(m - m.T).max() > sym_tol:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    if vals.min() < -eig_tol:
        raise ValueError(f"matrix has negative eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(x: ActivationStats, g: ActivationStats) -> float:
    """||mu_x - mu_g||^2 + Tr(S_x + S_g - 2 (S_x S_g)^{1/2}).

    The cross term is evaluated in the symmetric, trace-equivalent form
    sqrt(S_x^{1/2} S_g S_x^{1/2}). Tiny negative results are clamped.
    """
    if x.mu.shape != g.mu.shape:
        raise ValueError("dimension mismatch")
    diff = x.mu - g.mu
    sx_half = matrix_sqrt_psd(x.sigma)
    cross = matrix_sqrt_psd(sx_half @ g.sigma @ sx_half, eig_tol=1e-8)
    value = float(diff @ diff + np.trace(x.sigma + g.sigma - 2 * cross))
    if value < -1e-6:
        raise ValueError(f"FID evaluated to {value}, below numerical tolerance")
    if value < 0:
        log.warning("clamping slightly negative FID %.3e to 0", value)
        value = 0.0
    return value


def inception_score(class_probs, splits=1):
    """exp(mean KL(p(y|x) || p_bar(y))) per split; returns (mean, std)."""
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("class_probs must be 2-D")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("class probabilities must sum to 1")
    if splits < 1:
        raise ValueError("splits must be >= 1")
    scores = []
    chunks = np.array_split(p, splits)
    for chunk in chunks:
        marginal = chunk.mean(axis=0)
        kl = (chunk * (np.log(chunk + 1e-16) - np.log(marginal + 1e-16))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def composite_class(attrs):
    """12-way class index: lipstick x hair color (black/blond/other) x smiling."""
    hair = 0 if attrs.get("hair_black") else (1 if attrs.get("hair_blond") else 2)
    return int(attrs.get("lipstick")) * 6 + hair * 2 + int(attrs.get("smiling"))


class AttributeClassifier(nn.Module):
    """Feature CNN (as the caption path's extractor) with a 64-d
    penultimate layer feeding a 12-way composite softmax head and a
    per-attribute sigmoid head. The penultimate layer supplies the
    activation features for the Frechet distance."""

    def __init__(self):
        super().__init__()
        self.extractor = FeatureExtractor()
        self.penultimate = nn.Linear(caption_decoder.FEATURE_DIM, FID_FEATURE_DIM)
        self.class_head = nn.Linear(FID_FEATURE_DIM, N_CLASSES)
        self.attr_head = nn.Linear(FID_FEATURE_DIM, len(DEFAULT_SCHEMA))

    def features(self, t):
        return self.penultimate(self.extractor(t))

    def forward(self, t):
        f = torch.relu(self.features(t))
        return torch.softmax(self.class_head(f), dim=-1), torch.sigmoid(self.attr_head(f))


def train_classifier(images, attr_vectors, seed=0, epochs=6, batch_size=64, lr=1e-3):
    """Train the FID/IS feature network on (image, attributes) pairs.

    images: (N, 3, 64, 64) tensor. Deterministic in the seed.
    """
    torch.manual_seed(seed)
    clf = AttributeClassifier()
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    classes = torch.tensor([composite_class(a) for a in attr_vectors])
    bits = torch.stack([torch.from_numpy(a.as_array()) for a in attr_vectors])
    rng = np.random.default_rng(np.uint64(seed))
    n = images.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            t = images[idx]
            probs, attr_probs = clf(t)
            loss = nn.functional.nll_loss(torch.log(probs + 1e-12), classes[idx])
            loss = loss + nn.functional.binary_cross_entropy(attr_probs, bits[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    clf.eval()
    return clf


def classifier_features(clf, images, batch_size=128):
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(clf.features(images[start : start + batch_size]))
    return torch.cat(out).numpy()


def classifier_probs(clf, images, batch_size=128):
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(clf(images[start : start + batch_size])[0])
    return torch.cat(out).numpy()


def _decode_attributes(bundle, images, max_len=64):
    """Greedy-decode captions for a batch of images and parse them."""
    feats = bundle.feature_extractor(images)
    seqs, _ = bundle.decoder.greedy(feats, max_len=max_len)
    recovered = []
    for ids in seqs:
        words = [bundle.vocab.tokens[i] for i in ids if i > 3]
        attrs, _ = attributes_from_caption(" ".join(words))
        recovered.append(attrs)
    return recovered


def cycle_attribute_recovery(bundle, captions, attr_vectors, noise_seeds=None,
                             batch_size=64, real_images=None):
    """Mean per-attribute bit agreement after the full cycle
    caption -> embedding -> generated face -> decoded caption -> attributes.

    If real_images is given, the decoder is applied to those instead
    (upper-bound variant that bypasses the generator).
    """
    bundle.eval()
    if noise_seeds is None:
        noise_seeds = list(range(len(captions)))
    agree, total = 0, 0
    with torch.no_grad():
        for start in range(0, len(captions), batch_size):
            caps = captions[start : start + batch_size]
            truth = attr_vectors[start : start + batch_size]
            if real_images is not None:
                images = real_images[start : start + batch_size]
            else:
                ids = pad_batch([tokenize(c.text, bundle.vocab) for c in caps])
                emb = bundle.encoder(ids)
                z = torch.stack([
                    gan.make_latent(e, s)
                    for e, s in zip(emb, noise_seeds[start : start + batch_size])
                ])
                images = bundle.generator(z)
            recovered = _decode_attributes(bundle, images)
            for rec, true in zip(recovered, truth):
                agree += sum(int(a == b) for a, b in zip(rec.bits, true.bits))
                total += len(true.bits)
    return agree / max(1, total)


def evaluation_report(bundle, clf, real_images, captions, attr_vectors,
                      is_splits=4, seed=0):
    """JSON-ready evaluation over one dataset split."""
    bundle.eval()
    with torch.no_grad():
        ids = pad_batch([tokenize(c.text, bundle.vocab) for c in captions])
        fake_chunks = []
        for start in range(0, len(captions), 64):
            emb = bundle.encoder(ids[start : start + 64])
            z = torch.stack([
                gan.make_latent(e, seed + start + i) for i, e in enumerate(emb)
            ])
            fake_chunks.append(bundle.generator(z))
        fake_images = torch.cat(fake_chunks)

    real_stats = activation_stats(classifier_features(clf, real_images))
    fake_stats = activation_stats(classifier_features(clf, fake_images))
    is_mean, is_std = inception_score(classifier_probs(clf, fake_images),
                                      splits=min(is_splits, len(captions)))
    recovery = cycle_attribute_recovery(bundle, captions, attr_vectors)
    return {
        "fid": fid(real_stats, fake_stats),
        "is_mean": is_mean,
        "is_std": is_std,
        "cycle_recovery": recovery,
        "n": len(captions),
        "feature_dim": FID_FEATURE_DIM,
    }
