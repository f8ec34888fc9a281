import json
from pathlib import Path

import numpy as np
import pytest
import torch

from cycleface import checkpoint, data, gan, trainer
from cycleface.checkpoint import CheckpointError, ModelBundle
from cycleface.trainer import (
    AdamOptimizer,
    NonFiniteError,
    TrainConfig,
    adam_update,
)


class TestAdamUpdate:
    def test_zero_gradient_no_change(self):
        p = torch.tensor([1.0, -2.0])
        new_p, m, v = adam_update(p, torch.zeros(2), torch.zeros(2),
                                  torch.zeros(2), t=1, lr=0.001)
        assert torch.equal(new_p, p)
        assert torch.equal(m, torch.zeros(2))

    def test_hand_computed_first_step(self):
        # Scalar oracle: g=0.5, lr=0.001, defaults. After bias correction
        # m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps).
        g, lr, b1, b2, eps = 0.5, 0.001, 0.9, 0.999, 1e-8
        p = torch.tensor([2.0], dtype=torch.float64)
        grad = torch.tensor([g], dtype=torch.float64)
        new_p, m, v = adam_update(p, grad, torch.zeros(1, dtype=torch.float64),
                                  torch.zeros(1, dtype=torch.float64),
                                  t=1, lr=lr, beta1=b1, beta2=b2, eps=eps)
        m_exp = (1 - b1) * g
        v_exp = (1 - b2) * g * g
        m_hat = m_exp / (1 - b1)
        v_hat = v_exp / (1 - b2)
        expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert abs(float(new_p) - expected) <= 1e-12
        assert abs(float(m) - m_exp) <= 1e-12
        assert abs(float(v) - v_exp) <= 1e-12

    def test_second_step_oracle(self):
        g1, g2, lr, b1, b2, eps = 0.5, -0.25, 0.01, 0.9, 0.999, 1e-8
        p = torch.tensor([0.0], dtype=torch.float64)
        m = torch.zeros(1, dtype=torch.float64)
        v = torch.zeros(1, dtype=torch.float64)
        p, m, v = adam_update(p, torch.tensor([g1], dtype=torch.float64),
                              m, v, t=1, lr=lr, beta1=b1, beta2=b2, eps=eps)
        p, m, v = adam_update(p, torch.tensor([g2], dtype=torch.float64),
                              m, v, t=2, lr=lr, beta1=b1, beta2=b2, eps=eps)
        # independent recomputation
        m1 = (1 - b1) * g1
        v1 = (1 - b2) * g1 ** 2
        p1 = 0.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
        m2 = b1 * m1 + (1 - b1) * g2
        v2 = b2 * v1 + (1 - b2) * g2 ** 2
        p2 = p1 - lr * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
        assert abs(float(p) - p2) <= 1e-12

    def test_nonfinite_gradient_aborts(self):
        with pytest.raises(NonFiniteError):
            adam_update(torch.zeros(1), torch.tensor([float("nan")]),
                        torch.zeros(1), torch.zeros(1), t=1, lr=0.001)

    def test_deterministic_trajectories(self):
        def run():
            torch.manual_seed(0)
            module = torch.nn.Linear(4, 4)
            opt = AdamOptimizer(module, 1e-3)
            x = torch.randn(8, 4)
            for _ in range(5):
                opt.step((module(x) ** 2).mean())
            return module.weight.detach().clone()

        assert torch.equal(run(), run())


class TestTrainConfig:
    def test_defaults_match_published_values(self):
        cfg = TrainConfig()
        assert cfg.lr_generator == 0.0002
        assert cfg.lr_discriminator == 0.0001
        assert cfg.adam_beta1 == 0.9
        assert cfg.adam_beta2 == 0.999
        assert cfg.batch_size == 64
        assert cfg.lambda_rec == 10.0
        assert cfg.triplet_margin == 0.2

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(adam_beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(triplet_margin=0.0)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"batch_size": 8, "seed": 3}))
        cfg = TrainConfig.load(path, {"seed": 5, "joint_epochs": None})
        assert cfg.batch_size == 8
        assert cfg.seed == 5


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, init_bundle, fixture_vocab):
        path = tmp_path / "ck.cyf"
        checkpoint.save_checkpoint(path, init_bundle, config={"seed": 3},
                                   rng_state={"global_seed": 3})
        loaded, header, _ = checkpoint.load_checkpoint(path)
        for name, module in init_bundle.modules().items():
            for key, tensor in module.state_dict().items():
                other = loaded.modules()[name].state_dict()[key]
                assert torch.equal(tensor, other), f"{name}.{key}"
        # outputs bit-identical
        ids = torch.tensor([[5, 6, 2]])
        with torch.no_grad():
            assert torch.equal(init_bundle.encoder(ids), loaded.encoder(ids))
            z = torch.randn(1, 612)
            assert torch.equal(init_bundle.generator(z), loaded.generator(z))

    def test_save_load_save_identical_bytes(self, tmp_path, init_bundle):
        p1, p2 = tmp_path / "a.cyf", tmp_path / "b.cyf"
        checkpoint.save_checkpoint(p1, init_bundle, config={"x": 1})
        loaded, header, _ = checkpoint.load_checkpoint(p1)
        checkpoint.save_checkpoint(p2, loaded, config={"x": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic(self, tmp_path, init_bundle):
        path = tmp_path / "ck.cyf"
        checkpoint.save_checkpoint(path, init_bundle)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            checkpoint.load_checkpoint(path)

    def test_truncated_payload(self, tmp_path, init_bundle):
        path = tmp_path / "ck.cyf"
        checkpoint.save_checkpoint(path, init_bundle)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(CheckpointError, match="payload length"):
            checkpoint.load_checkpoint(path)

    def test_missing_block_rejected(self, tmp_path, init_bundle):
        import struct

        path = tmp_path / "ck.cyf"
        checkpoint.save_checkpoint(path, init_bundle)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[4:8])
        header = json.loads(raw[8 : 8 + hlen])
        # drop one tensor entry of the generator block
        dropped = [e for e in header["blocks"]
                   if not (e["block"] == "generator" and e["name"] == "project.bias")]
        removed = [e for e in header["blocks"] if e not in dropped][0]
        payload = raw[8 + hlen :]
        payload = (payload[: removed["offset"]]
                   + payload[removed["offset"] + removed["nbytes"] :])
        for e in dropped:
            if e["offset"] > removed["offset"]:
                e["offset"] -= removed["nbytes"]
        header["blocks"] = dropped
        hb = json.dumps(header, sort_keys=True).encode()
        path.write_bytes(b"CYF1" + struct.pack("<I", len(hb)) + hb + payload)
        with pytest.raises(CheckpointError, match="generator"):
            checkpoint.load_checkpoint(path)


class TestTrainStep:
    def test_separable_fixture_discriminator_learns(self):
        # real = all +1 images, fake = all -1: the discriminator loss on a
        # frozen generator output must fall over 50 steps.
        torch.manual_seed(0)
        d = gan.Discriminator().train()
        opt = AdamOptimizer(d, 1e-4)
        real = torch.ones(8, 3, 64, 64) * 0.9
        fake = -torch.ones(8, 3, 64, 64) * 0.9
        emb = torch.zeros(8, 512)
        losses = []
        for _ in range(50):
            loss = gan.discriminator_loss(d(real, emb), d(fake, emb))
            opt.step(loss)
            losses.append(float(loss.detach()))
        assert losses[-1] < 0.5 * losses[0]

    def test_zero_learning_rates_freeze_params(self):
        torch.manual_seed(1)
        g = gan.Generator().train()
        opt = AdamOptimizer(g, 0.0)
        before = {n: p.detach().clone() for n, p in g.named_parameters()}
        z = torch.randn(2, 612)
        loss = g(z).abs().mean()
        opt.step(loss)
        for n, p in g.named_parameters():
            assert torch.equal(p, before[n]), n


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    manifest = data.synthesize_dataset(root / "ds", 48, seed=21)
    cfg = TrainConfig(encoder_epochs=1, decoder_epochs=1, joint_epochs=1,
                      batch_size=16, checkpoint_interval=0, seed=21)
    path, log = trainer.run_training(cfg, manifest, root / "run1",
                                     progress=lambda m: None)
    return root, manifest, cfg, path, log


class TestRunTraining:
    def test_metrics_log_rows(self, micro_run):
        _, _, _, path, log = micro_run
        phases = {r["phase"] for r in log.rows}
        assert phases == {"encoder", "decoder", "joint"}
        joint = [r for r in log.rows if r["phase"] == "joint" and r["epoch"] >= 0]
        assert all("fid_val" in r and "cycle_val" in r and "loss_generator" in r
                   for r in joint)

    def test_checkpoint_contains_all_blocks(self, micro_run):
        _, _, _, path, _ = micro_run
        _, header, opt_blocks = checkpoint.load_checkpoint(path)
        blocks = {e["block"] for e in header["blocks"]}
        assert set(checkpoint.BLOCK_NAMES) <= blocks
        assert {"generator", "discriminator", "decoder", "feature_extractor",
                "encoder"} <= set(opt_blocks)

    def test_fixed_seed_reproduces_checkpoint_bytes(self, micro_run):
        root, manifest, cfg, path, _ = micro_run
        path2, _ = trainer.run_training(cfg, manifest, root / "run2",
                                        progress=lambda m: None)
        assert Path(path).read_bytes() == Path(path2).read_bytes()

    def test_zero_epochs_everywhere_is_initialization(self, tmp_path):
        manifest = data.synthesize_dataset(tmp_path / "ds", 24, seed=4)
        cfg = TrainConfig(encoder_epochs=0, decoder_epochs=0, joint_epochs=0,
                          batch_size=8, checkpoint_interval=0, seed=4)
        path, _ = trainer.run_training(cfg, manifest, tmp_path / "run",
                                       progress=lambda m: None)
        bundle, _, _ = checkpoint.load_checkpoint(path)
        # encoder must equal its seeded initialization
        torch.manual_seed(cfg.seed)
        from cycleface.text_encoder import SentenceEncoder, Vocabulary

        ref = SentenceEncoder(len(bundle.vocab))
        for key, tensor in ref.state_dict().items():
            assert torch.equal(tensor, bundle.encoder.state_dict()[key]), key
