"""Image -> caption path: channel-first tensor conversion, a small
feature CNN standing in for a large pretrained extractor, and a GRU
decoder trained with per-word cross-entropy under teacher forcing."""

import numpy as np
import torch
import torch.nn as nn

from .text_encoder import END, PAD, START

FEATURE_DIM = 256
PROB_FLOOR = 1e-12


def image_to_tensor(image):
    """(64, 64, 3) HWC image -> (3, 64, 64) CHW tensor, values unchanged."""
    t = torch.as_tensor(image, dtype=torch.float32)
    if t.dim() == 3 and t.shape[-1] == 3:
        return t.permute(2, 0, 1).contiguous()
    raise ValueError(f"expected (H, W, 3) image, got {tuple(t.shape)}")


def tensor_to_image(tensor):
    """Inverse of image_to_tensor."""
    t = torch.as_tensor(tensor)
    if t.dim() == 3 and t.shape[0] == 3:
        return t.permute(1, 2, 0).contiguous()
    raise ValueError(f"expected (3, H, W) tensor, got {tuple(t.shape)}")


class FeatureExtractor(nn.Module):
    """Four stride-2 conv blocks (3 -> 32 -> 64 -> 128 -> 256, kernel 3)
    with BatchNorm and ReLU, global average pool to a 256-d feature
    vector. Without the norm the stacked convs shrink activations to
    near-constant values and the caption loss cannot train the net."""

    def __init__(self):
        super().__init__()
        widths = (3, 32, 64, 128, 256)
        layers = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1),
                       nn.BatchNorm2d(cout), nn.ReLU()]
        self.blocks = nn.Sequential(*layers)

    def forward(self, t):
        """t: (B, 3, 64, 64) or (3, 64, 64) -> (B, 256)."""
        if t.dim() == 3:
            t = t.unsqueeze(0)
        h = self.blocks(t)
        return h.mean(dim=(2, 3))


class CaptionDecoder(nn.Module):
    """GRU cell (hidden 256) whose initial state comes from the image
    features; token embeddings feed the cell and a linear head projects to
    vocabulary logits."""

    def __init__(self, vocab_size, token_dim=64, hidden=FEATURE_DIM, feat_dim=64):
        super().__init__()
        if vocab_size <= 4:
            raise ValueError("vocabulary is empty")
        self.vocab_size = vocab_size
        self.init_state = nn.Linear(FEATURE_DIM, hidden)
        # fed to the cell at every step; with init-state conditioning alone
        # the image signal washes out over long captions
        self.feat_proj = nn.Linear(FEATURE_DIM, feat_dim)
        self.token_embed = nn.Embedding(vocab_size, token_dim, padding_idx=PAD)
        self.cell = nn.GRUCell(token_dim + feat_dim, hidden)
        self.head = nn.Linear(hidden, vocab_size)

    def _step(self, token_ids, h, feat):
        h = self.cell(torch.cat([self.token_embed(token_ids), feat], dim=-1), h)
        return self.head(h), h

    def teacher_forced(self, features, targets):
        """Distributions over the vocabulary conditioned on target prefixes.

        features: (B, 256); targets: (B, L) ending with END, PAD-padded.
        Returns probabilities (B, L, V): position i is the model's
        distribution for targets[:, i] given targets[:, :i].
        """
        if features.dim() == 1:
            features = features.unsqueeze(0)
        if targets.dim() == 1:
            targets = targets.unsqueeze(0)
        h = torch.tanh(self.init_state(features))
        feat = torch.tanh(self.feat_proj(features))
        batch = features.shape[0]
        prev = torch.full((batch,), START, dtype=torch.long, device=features.device)
        probs = []
        for i in range(targets.shape[1]):
            logits, h = self._step(prev, h, feat)
            probs.append(torch.softmax(logits, dim=-1))
            prev = targets[:, i].clamp(min=PAD)  # teacher forcing
        return torch.stack(probs, dim=1)

    def greedy(self, features, max_len=64):
        """Deterministic greedy decode; argmax ties break to the lowest
        token id. Returns (ids list without trailing END padding,
        distributions (L, V))."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        single = features.dim() == 1
        if single:
            features = features.unsqueeze(0)
        h = torch.tanh(self.init_state(features))
        feat = torch.tanh(self.feat_proj(features))
        batch = features.shape[0]
        prev = torch.full((batch,), START, dtype=torch.long, device=features.device)
        done = torch.zeros(batch, dtype=torch.bool)
        seqs = [[] for _ in range(batch)]
        dists = [[] for _ in range(batch)]
        for _ in range(max_len):
            logits, h = self._step(prev, h, feat)
            p = torch.softmax(logits, dim=-1)
            nxt = p.argmax(dim=-1)  # first max = lowest id on ties
            for b in range(batch):
                if not done[b]:
                    seqs[b].append(int(nxt[b]))
                    dists[b].append(p[b])
                    if int(nxt[b]) == END:
                        done[b] = True
            if bool(done.all()):
                break
            prev = nxt
        dists = [torch.stack(d) for d in dists]
        if single:
            return seqs[0], dists[0]
        return seqs, dists


def caption_loss(dist, target):
    """Per-word cross-entropy: -(1/N) sum log p(target_i) over the N
    non-PAD target positions. Probabilities are floored at 1e-12; the
    number of floored positions is returned for metrics.

    dist: (..., L, V) probabilities; target: (..., L) token ids.
    Returns (loss, clamped_count).
    """
    d = dist if dist.dim() == 3 else dist.unsqueeze(0)
    t = target if target.dim() == 2 else target.unsqueeze(0)
    if d.shape[:2] != t.shape:
        raise ValueError(f"positions misaligned: dist {tuple(d.shape)} target {tuple(t.shape)}")
    mask = t != PAD
    picked = d.gather(-1, t.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    clamped = int(((picked < PROB_FLOOR) & mask).sum())
    picked = picked.clamp(min=PROB_FLOOR)
    n = mask.sum()
    if int(n) == 0:
        raise ValueError("target has no non-PAD positions")
    loss = -(torch.log(picked) * mask.to(picked.dtype)).sum() / n
    return loss, clamped
