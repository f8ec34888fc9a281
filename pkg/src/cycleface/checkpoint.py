"""Unified checkpoint: every parameter block plus optimizer state in one
versioned binary file.

Layout: magic b"CYF1", little-endian uint32 header length, UTF-8 JSON
header (format version, block entries with shapes/dtypes/offsets, config
echo, RNG state), then raw little-endian float32 payloads in header order.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .caption_decoder import CaptionDecoder, FeatureExtractor
from .gan import Discriminator, Generator
from .text_encoder import SentenceEncoder, Vocabulary

MAGIC = b"CYF1"
FORMAT_VERSION = 1

BLOCK_NAMES = ("encoder", "generator", "discriminator", "feature_extractor", "decoder")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelBundle:
    """All five model blocks plus the vocabulary they were trained with."""

    encoder: SentenceEncoder
    generator: Generator
    discriminator: Discriminator
    feature_extractor: FeatureExtractor
    decoder: CaptionDecoder
    vocab: Vocabulary

    def modules(self):
        return {
            "encoder": self.encoder,
            "generator": self.generator,
            "discriminator": self.discriminator,
            "feature_extractor": self.feature_extractor,
            "decoder": self.decoder,
        }

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self

    @classmethod
    def initialize(cls, vocab, seed=0):
        torch.manual_seed(seed)
        return cls(
            encoder=SentenceEncoder(len(vocab)),
            generator=Generator(),
            discriminator=Discriminator(),
            feature_extractor=FeatureExtractor(),
            decoder=CaptionDecoder(len(vocab)),
            vocab=vocab,
        )


def _flatten_state(module):
    """state_dict -> ordered (name, float32 array, original dtype str)."""
    out = []
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        out.append((name, arr.astype(np.float32), str(arr.dtype)))
    return out


def save_checkpoint(path, bundle: ModelBundle, config=None, rng_state=None,
                    optimizer_blocks=None):
    """optimizer_blocks: {block_name: {tensor_name: float array}}."""
    entries = []
    payloads = []
    offset = 0
    blocks = dict(bundle.modules())
    for block_name, module in blocks.items():
        for name, arr, dtype in _flatten_state(module):
            raw = arr.astype("<f4").tobytes()
            entries.append({
                "block": block_name,
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            })
            payloads.append(raw)
            offset += len(raw)
    for block_name, tensors in (optimizer_blocks or {}).items():
        for name, value in tensors.items():
            arr = np.asarray(value, dtype=np.float32)
            raw = arr.astype("<f4").tobytes()
            entries.append({
                "block": f"optim.{block_name}",
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float32",
                "offset": offset,
                "nbytes": len(raw),
            })
            payloads.append(raw)
            offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "blocks": entries,
        "vocab": bundle.vocab.tokens,
        "config": config or {},
        "rng_state": rng_state or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for raw in payloads:
            f.write(raw)


def _read_header(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (header_len,) = struct.unpack("<I", f.read(4))
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError("truncated header")
        header = json.loads(header_bytes.decode("utf-8"))
        payload = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format version {header.get('format_version')}")
    return header, payload


def checkpoint_hash(path):
    """Hex digest over the entire checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_checkpoint(path):
    """Returns (ModelBundle, header dict, optimizer_blocks)."""
    header, payload = _read_header(path)
    expected = sum(e["nbytes"] for e in header["blocks"])
    if len(payload) != expected:
        raise CheckpointError(
            f"payload length {len(payload)} does not match header total {expected}")

    vocab = Vocabulary(header["vocab"])
    bundle = ModelBundle.initialize(vocab, seed=0)
    modules = bundle.modules()
    states = {name: {} for name in modules}
    optimizer_blocks = {}
    for e in header["blocks"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"block {e['block']}/{e['name']} is truncated")
        arr = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(e["dtype"])
        if e["block"].startswith("optim."):
            optimizer_blocks.setdefault(e["block"][6:], {})[e["name"]] = arr
            continue
        if e["block"] not in states:
            raise CheckpointError(f"unknown block {e['block']!r}")
        states[e["block"]][e["name"]] = torch.from_numpy(arr.copy())

    for name, module in modules.items():
        expected_keys = set(module.state_dict())
        got = set(states[name])
        if got != expected_keys:
            missing = sorted(expected_keys - got)[:3]
            extra = sorted(got - expected_keys)[:3]
            raise CheckpointError(
                f"block {name!r} incomplete (missing {missing}, extra {extra})")
        module.load_state_dict(states[name])
    bundle.eval()
    return bundle, header, optimizer_blocks
