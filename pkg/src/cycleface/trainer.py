"""Training orchestration: bias-corrected Adam updates, the three-phase
regime (encoder triplet training, decoder pretraining on real pairs, joint
adversarial loop), metrics logging, and checkpointing."""

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import caption_decoder, checkpoint, data, gan, metrics, text_encoder
from .caption_decoder import caption_loss, image_to_tensor
from .checkpoint import ModelBundle
from .gan import discriminator_loss, generator_loss, make_latent
from .text_encoder import Vocabulary, pad_batch, tokenize, train_encoder

log = logging.getLogger(__name__)


class NonFiniteError(RuntimeError):
    """A loss or gradient went non-finite; training aborts rather than
    silently skipping batches."""


@dataclass
class TrainConfig:
    lr_generator: float = 0.0002
    lr_discriminator: float = 0.0001
    lr_encoder: float = 0.001
    lr_decoder: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 64
    encoder_epochs: int = 30
    decoder_epochs: int = 40
    joint_epochs: int = 30
    lambda_rec: float = 10.0
    lambda_fm: float = 0.0
    triplet_margin: float = 0.2
    hard_negative_epoch: int = 5
    seed: int = 0
    checkpoint_interval: int = 5

    def __post_init__(self):
        for name in ("lr_generator", "lr_discriminator", "lr_encoder", "lr_decoder"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.triplet_margin <= 0:
            raise ValueError("triplet_margin must be > 0")

    @classmethod
    def load(cls, path, overrides=None):
        payload = json.loads(Path(path).read_text())
        payload.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**payload)


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step for a single tensor.

    Returns (param', m', v'); t is the post-increment step counter (>= 1).
    """
    if not torch.isfinite(grad).all():
        raise NonFiniteError("non-finite gradient; step aborted")
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return param - lr * m_hat / (torch.sqrt(v_hat) + eps), m, v


class AdamOptimizer:
    """Module-level Adam built on adam_update, with exportable state."""

    def __init__(self, module, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.module = module
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in module.named_parameters()}
        self.v = {n: torch.zeros_like(p) for n, p in module.named_parameters()}

    def step(self, loss):
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite loss {float(loss)}")
        self.module.zero_grad(set_to_none=True)
        loss.backward()
        self.t += 1
        with torch.no_grad():
            for name, p in self.module.named_parameters():
                if p.grad is None:
                    continue
                new_p, self.m[name], self.v[name] = adam_update(
                    p, p.grad, self.m[name], self.v[name], self.t,
                    self.lr, self.beta1, self.beta2, self.eps)
                p.copy_(new_p)

    def state_tensors(self):
        out = {"t": np.float32(self.t)}
        for name, m in self.m.items():
            out[f"m.{name}"] = m.numpy()
        for name, v in self.v.items():
            out[f"v.{name}"] = v.numpy()
        return out


class MetricsLog:
    def __init__(self, path=None):
        self.rows = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.write_text("")

    def append(self, row):
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(row, sort_keys=True) + "\n")


def _load_split_images(manifest, split):
    samples = [data.load_sample(manifest, i) for i in manifest.ids(split)]
    images = torch.stack([image_to_tensor(s.image) for s in samples])
    captions = [s.caption for s in samples]
    attrs = [s.attributes for s in samples]
    return images, captions, attrs


def _noise_seed(global_seed, epoch, index):
    return (global_seed * 1_000_003 + epoch * 10_007 + index) % (2 ** 63)


@dataclass
class TrainingState:
    bundle: ModelBundle
    config: TrainConfig
    opt_g: AdamOptimizer
    opt_d: AdamOptimizer
    opt_dec: AdamOptimizer
    epoch: int = 0
    losses: dict = field(default_factory=dict)


def train_step(state: TrainingState, images, target_ids, embeddings, noise_seeds):
    """One alternation: discriminator update, generator update, decoder
    update on the generated images."""
    cfg = state.config
    bundle = state.bundle
    emb = embeddings.detach()

    z = torch.stack([make_latent(e, s) for e, s in zip(emb, noise_seeds)])
    fake = bundle.generator(z)

    d_real = bundle.discriminator(images, emb)
    d_fake = bundle.discriminator(fake.detach(), emb)
    loss_d = discriminator_loss(d_real, d_fake)
    state.opt_d.step(loss_d)

    d_fake_for_g = bundle.discriminator(fake, emb)
    loss_g = generator_loss(fake, images, d_fake_for_g, cfg.lambda_rec)
    state.opt_g.step(loss_g)

    feats = bundle.feature_extractor(fake.detach())
    dist = bundle.decoder.teacher_forced(feats, target_ids)
    loss_dec, clamped = caption_loss(dist, target_ids)
    state.opt_dec.step(loss_dec)

    state.losses = {
        "loss_discriminator": float(loss_d.detach()),
        "loss_generator": float(loss_g.detach()),
        "loss_decoder": float(loss_dec.detach()),
        "clamped_probs": clamped,
    }
    return state


def pretrain_decoder(bundle, images, target_ids, config, metrics_log=None,
                     epochs=None):
    """Teacher-forced cross-entropy on real image / caption pairs."""
    epochs = config.decoder_epochs if epochs is None else epochs
    opt_fx = AdamOptimizer(bundle.feature_extractor, config.lr_decoder,
                           config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    opt_dec = AdamOptimizer(bundle.decoder, config.lr_decoder,
                            config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    rng = np.random.default_rng(np.uint64(config.seed) + 2)
    n = images.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            feats = bundle.feature_extractor(images[idx])
            dist = bundle.decoder.teacher_forced(feats, target_ids[idx])
            loss, _ = caption_loss(dist, target_ids[idx])
            if not torch.isfinite(loss):
                raise NonFiniteError("decoder pretraining loss went non-finite")
            bundle.feature_extractor.zero_grad(set_to_none=True)
            bundle.decoder.zero_grad(set_to_none=True)
            loss.backward()
            opt_fx.t += 1
            opt_dec.t += 1
            with torch.no_grad():
                for opt in (opt_fx, opt_dec):
                    for name, p in opt.module.named_parameters():
                        if p.grad is None:
                            continue
                        new_p, opt.m[name], opt.v[name] = adam_update(
                            p, p.grad, opt.m[name], opt.v[name], opt.t,
                            opt.lr, opt.beta1, opt.beta2, opt.eps)
                        p.copy_(new_p)
            losses.append(float(loss.detach()))
        if metrics_log is not None:
            metrics_log.append({"phase": "decoder", "epoch": epoch,
                                "caption_loss": float(np.mean(losses))})
        log.info("decoder epoch %d caption_loss %.4f", epoch, np.mean(losses))
    return opt_fx, opt_dec


def run_training(config: TrainConfig, manifest, out_dir, progress=log.info):
    """Full three-phase run. Writes checkpoint.cyf, vocab.json, and
    metrics.jsonl under out_dir; returns (checkpoint path, MetricsLog)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    metrics_log = MetricsLog(out_dir / "metrics.jsonl")
    train_caps = data.captions(manifest, "train")
    train_attrs = data.attribute_vectors(manifest, "train")
    vocab = Vocabulary.build(train_caps)
    vocab.save(out_dir / "vocab.json")

    # Phase 1: encoder triplet training.
    progress("phase 1/3: encoder triplet training")
    enc_opt_holder = {}

    def encoder_step(module, loss):
        if "opt" not in enc_opt_holder:
            enc_opt_holder["opt"] = AdamOptimizer(
                module, config.lr_encoder, config.adam_beta1,
                config.adam_beta2, config.adam_epsilon)
        enc_opt_holder["opt"].step(loss)

    encoder = train_encoder(train_attrs, vocab, config, encoder_step, metrics_log)

    torch.manual_seed(config.seed + 1)
    bundle = ModelBundle(
        encoder=encoder,
        generator=gan.Generator(),
        discriminator=gan.Discriminator(),
        feature_extractor=caption_decoder.FeatureExtractor(),
        decoder=caption_decoder.CaptionDecoder(len(vocab)),
        vocab=vocab,
    )

    progress("loading training images")
    images, caps, attrs = _load_split_images(manifest, "train")
    target_ids = pad_batch([tokenize(c.text, vocab) for c in caps])

    # Phase 2: decoder pretraining on real pairs.
    progress("phase 2/3: decoder pretraining on real pairs")
    bundle.feature_extractor.train()
    bundle.decoder.train()
    opt_fx, opt_dec = pretrain_decoder(bundle, images, target_ids, config, metrics_log)

    # Frozen encoder embeddings for the adversarial loop.
    bundle.encoder.eval()
    with torch.no_grad():
        embeddings = torch.cat([
            bundle.encoder(target_ids[i : i + 256])
            for i in range(0, target_ids.shape[0], 256)
        ])

    val_images, val_caps, val_attrs = _load_split_images(manifest, "val")
    progress("training evaluation classifier")
    clf = metrics.train_classifier(images, attrs, seed=config.seed + 7)

    def validation_cycle():
        modes = {name: m.training for name, m in bundle.modules().items()}
        rec = metrics.cycle_attribute_recovery(bundle, val_caps, val_attrs)
        for name, m in bundle.modules().items():
            m.train(modes[name])
        return rec

    def validation_fid():
        with torch.no_grad():
            val_ids = pad_batch([tokenize(c.text, vocab) for c in val_caps])
            emb = torch.cat([bundle.encoder(val_ids[i : i + 256])
                             for i in range(0, val_ids.shape[0], 256)])
            z = torch.stack([make_latent(e, 900_000 + i) for i, e in enumerate(emb)])
            fake = bundle.generator(z)
        real_stats = metrics.activation_stats(metrics.classifier_features(clf, val_images))
        fake_stats = metrics.activation_stats(metrics.classifier_features(clf, fake))
        return metrics.fid(real_stats, fake_stats)

    bundle.generator.train()
    bundle.discriminator.train()
    state = TrainingState(
        bundle=bundle,
        config=config,
        opt_g=AdamOptimizer(bundle.generator, config.lr_generator,
                            config.adam_beta1, config.adam_beta2, config.adam_epsilon),
        opt_d=AdamOptimizer(bundle.discriminator, config.lr_discriminator,
                            config.adam_beta1, config.adam_beta2, config.adam_epsilon),
        opt_dec=AdamOptimizer(bundle.decoder, config.lr_decoder,
                              config.adam_beta1, config.adam_beta2, config.adam_epsilon),
    )
    init_fid = validation_fid() if config.joint_epochs > 0 else None
    if init_fid is not None:
        metrics_log.append({"phase": "joint", "epoch": -1, "fid_val": init_fid})
        progress(f"initial validation FID {init_fid:.3f}")

    # Phase 3: joint adversarial loop.
    rng = np.random.default_rng(np.uint64(config.seed) + 3)
    n = images.shape[0]
    for epoch in range(config.joint_epochs):
        t0 = time.monotonic()
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            seeds = [_noise_seed(config.seed, epoch, int(i)) for i in idx]
            train_step(state, images[idx], target_ids[idx], embeddings[idx], seeds)
            epoch_losses.append(state.losses)
        state.epoch = epoch
        fid_val = validation_fid()
        row = {
            "phase": "joint",
            "epoch": epoch,
            "fid_val": fid_val,
            "cycle_val": validation_cycle(),
            "wall_time_s": round(time.monotonic() - t0, 3),
        }
        for key in ("loss_discriminator", "loss_generator", "loss_decoder"):
            row[key] = float(np.mean([l[key] for l in epoch_losses]))
        metrics_log.append(row)
        progress(f"joint epoch {epoch} fid_val {fid_val:.3f} "
                 f"cycle_val {row['cycle_val']:.3f} "
                 f"G {row['loss_generator']:.3f} D {row['loss_discriminator']:.3f}")
        if config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
            _save(out_dir / f"checkpoint_epoch{epoch:03d}.cyf", state, enc_opt_holder,
                  opt_fx, opt_dec, config)

    path = out_dir / "checkpoint.cyf"
    _save(path, state, enc_opt_holder, opt_fx, opt_dec, config)
    return path, metrics_log


def _save(path, state, enc_opt_holder, opt_fx, opt_dec, config):
    optimizer_blocks = {
        "generator": state.opt_g.state_tensors(),
        "discriminator": state.opt_d.state_tensors(),
        "decoder": state.opt_dec.state_tensors(),
        "feature_extractor": opt_fx.state_tensors(),
    }
    if "opt" in enc_opt_holder:
        optimizer_blocks["encoder"] = enc_opt_holder["opt"].state_tensors()
    checkpoint.save_checkpoint(
        path, state.bundle,
        config=asdict(config),
        rng_state={"global_seed": config.seed, "joint_epochs_done": state.epoch + 1},
        optimizer_blocks=optimizer_blocks,
    )
