"""Sentence encoder: tokenizer, vocabulary, and a small self-attention
network trained with a triplet objective so captions of the same attribute
vector embed close together.

Output embeddings are 512-dimensional.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .grammar import N_PARAPHRASES, caption_from_attributes, word_tokenize

log = logging.getLogger(__name__)

PAD, START, END, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<start>", "<end>", "<unk>")

MAX_LEN = 64
EMBED_DIM = 512


@dataclass
class Vocabulary:
    tokens: list  # index -> token, reserved entries first

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        assert tuple(self.tokens[:4]) == RESERVED

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, captions):
        """Vocabulary from training-split captions only."""
        words = sorted({w for c in captions for w in word_tokenize(c.text)})
        return cls(list(RESERVED) + words)

    def save(self, path):
        Path(path).write_text(json.dumps({"tokens": self.tokens}, indent=0) + "\n")

    @classmethod
    def load(cls, path):
        return cls(json.loads(Path(path).read_text())["tokens"])


def tokenize(text, vocab: Vocabulary, max_len=MAX_LEN):
    """Text -> id sequence ending with END, truncated to max_len."""
    ids = [vocab.index.get(w, UNK) for w in word_tokenize(text)]
    ids = ids[: max_len - 1] + [END]
    return ids


def pad_batch(sequences, max_len=None):
    """List of id lists -> (B, L) LongTensor padded with PAD."""
    length = max_len or max(len(s) for s in sequences)
    out = torch.full((len(sequences), length), PAD, dtype=torch.long)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


class SentenceEncoder(nn.Module):
    """Token embedding (vocab x 64) -> 2 transformer blocks (width 128,
    4 heads, feed-forward 256) -> masked mean pool -> linear to 512."""

    def __init__(self, vocab_size, max_len=MAX_LEN):
        super().__init__()
        self.token_embed = nn.Embedding(vocab_size, 64, padding_idx=PAD)
        self.input_proj = nn.Linear(64, 128)
        self.pos_embed = nn.Embedding(max_len, 128)
        self.blocks = nn.ModuleList([_Block() for _ in range(2)])
        self.output_proj = nn.Linear(128, EMBED_DIM)
        nn.init.uniform_(self.token_embed.weight, -0.05, 0.05)
        with torch.no_grad():
            self.token_embed.weight[PAD].zero_()

    def forward(self, ids):
        """ids: (B, L) -> (B, 512). PAD positions are masked out of
        attention and pooling, so trailing padding cannot change the output."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        mask = ids != PAD  # (B, L)
        if not bool(mask.any(dim=1).all()):
            raise ValueError("all-PAD input sequence")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.input_proj(self.token_embed(ids)) + self.pos_embed(positions)
        for block in self.blocks:
            x = block(x, mask)
        denom = mask.sum(dim=1, keepdim=True).to(x.dtype)
        pooled = (x * mask.unsqueeze(-1).to(x.dtype)).sum(dim=1) / denom
        return self.output_proj(pooled)


class _Block(nn.Module):
    def __init__(self, width=128, heads=4, ff=256):
        super().__init__()
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff), nn.ReLU(), nn.Linear(ff, width))
        self.norm2 = nn.LayerNorm(width)

    def forward(self, x, mask):
        attn_out, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.norm1(x + attn_out)
        return self.norm2(x + self.ff(x))


def triplet_loss(anchor, positive, negative, margin=0.2):
    """max(0, ||a-p||^2 - ||a-n||^2 + margin), mean over the batch."""
    if anchor.shape != positive.shape or anchor.shape != negative.shape:
        raise ValueError("embedding shape mismatch")
    if anchor.dim() == 1:
        anchor, positive, negative = (t.unsqueeze(0) for t in (anchor, positive, negative))
    d_ap = ((anchor - positive) ** 2).sum(dim=-1)
    d_an = ((anchor - negative) ** 2).sum(dim=-1)
    return torch.clamp(d_ap - d_an + margin, min=0.0).mean()


def build_triplets(attr_vectors, rng, hard_pool=0):
    """Index triplets (anchor caption, positive caption, negative caption)
    over per-attribute paraphrase pairs.

    Returns a list of (attrs, anchor_seed, positive_seed, neg_attrs,
    neg_seed). Positives are the alternate paraphrase of the anchor's
    attributes; negatives are a different attribute vector.
    """
    unique = list({v.bits: v for v in attr_vectors}.values())
    triplets = []
    for attrs in attr_vectors:
        a_seed = int(rng.integers(N_PARAPHRASES))
        p_seed = (a_seed + 1) % N_PARAPHRASES
        while True:
            neg = unique[int(rng.integers(len(unique)))]
            if neg.bits != attrs.bits:
                break
        n_seed = int(rng.integers(N_PARAPHRASES))
        triplets.append((attrs, a_seed, p_seed, neg, n_seed))
    return triplets


def _encode_batch(encoder, vocab, captions):
    ids = pad_batch([tokenize(c.text, vocab) for c in captions])
    return encoder(ids)


def triplet_accuracy(encoder, vocab, triplets):
    """Fraction of triplets with the anchor closer to its positive."""
    encoder.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(triplets), 256):
            chunk = triplets[start : start + 256]
            a = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[0], t[1]) for t in chunk])
            p = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[0], t[2]) for t in chunk])
            n = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[3], t[4]) for t in chunk])
            d_ap = ((a - p) ** 2).sum(dim=1)
            d_an = ((a - n) ** 2).sum(dim=1)
            correct += int((d_ap < d_an).sum())
    return correct / max(1, len(triplets))


def train_encoder(attr_vectors, vocab, config, adam_step, metrics=None):
    """Train under the triplet objective; deterministic in the config seed.

    attr_vectors: attribute vectors of the training captions.
    adam_step: callable(module, loss) performing one optimizer update.
    After the hard-negative epoch threshold, the in-batch closest negative
    replaces the sampled one.
    """
    if len(vocab) <= len(RESERVED):
        raise ValueError("vocabulary is empty")
    torch.manual_seed(config.seed)
    encoder = SentenceEncoder(len(vocab))
    rng = np.random.default_rng(np.uint64(config.seed) + 1)
    triplets = build_triplets(attr_vectors, rng)
    batch = config.batch_size

    for epoch in range(config.encoder_epochs):
        encoder.train()
        order = rng.permutation(len(triplets))
        losses = []
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            chunk = [triplets[i] for i in idx]
            a = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[0], t[1]) for t in chunk])
            p = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[0], t[2]) for t in chunk])
            n = _encode_batch(encoder, vocab,
                              [caption_from_attributes(t[3], t[4]) for t in chunk])
            if epoch >= config.hard_negative_epoch and len(chunk) > 1:
                # Closest in-batch negative per anchor, excluding itself.
                with torch.no_grad():
                    dist = torch.cdist(a, n)
                    dist.fill_diagonal_(float("inf"))
                    pick = dist.argmin(dim=1)
                n = n[pick]
            loss = triplet_loss(a, p, n, config.triplet_margin)
            adam_step(encoder, loss)
            losses.append(float(loss.detach()))
        mean_loss = float(np.mean(losses)) if losses else 0.0
        if metrics is not None:
            metrics.append({"phase": "encoder", "epoch": epoch, "triplet_loss": mean_loss})
        log.info("encoder epoch %d triplet_loss %.4f", epoch, mean_loss)
    encoder.eval()
    return encoder


def embedding_moments(embeddings):
    """Per-coordinate skewness/kurtosis diagnostic over an embedding set."""
    x = np.asarray(embeddings, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0) + 1e-12
    z = (x - mu) / sd
    return {
        "skewness_mean": float((z ** 3).mean()),
        "kurtosis_mean": float((z ** 4).mean()),
    }
