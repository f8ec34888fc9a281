import numpy as np
import pytest
import torch

from cycleface.caption_decoder import (
    CaptionDecoder,
    FeatureExtractor,
    caption_loss,
    image_to_tensor,
    tensor_to_image,
)
from cycleface.text_encoder import END, PAD

from fdcheck import fd_check_parameters


class TestImageToTensor:
    def test_round_trip(self):
        img = torch.randn(64, 64, 3)
        assert torch.equal(tensor_to_image(image_to_tensor(img)), img)

    def test_constant_image(self):
        img = torch.full((64, 64, 3), 0.5)
        t = image_to_tensor(img)
        assert t.shape == (3, 64, 64)
        assert torch.all(t == 0.5)

    def test_index_mapping(self):
        rng = np.random.default_rng(0)
        img = rng.standard_normal((64, 64, 3)).astype(np.float32)
        t = image_to_tensor(img).numpy()
        for _ in range(100):
            y, x, c = rng.integers(64), rng.integers(64), rng.integers(3)
            assert t[c, y, x] == img[y, x, c]

    def test_shape_rejected(self):
        with pytest.raises(ValueError):
            image_to_tensor(torch.zeros(3, 64, 64))


class TestFeatureExtractor:
    def test_deterministic_256(self):
        torch.manual_seed(0)
        fx = FeatureExtractor().eval()
        t = torch.randn(2, 3, 64, 64)
        with torch.no_grad():
            a = fx(t)
            b = fx(t)
        assert a.shape == (2, 256)
        assert torch.equal(a, b)

    def test_gradcheck(self):
        torch.manual_seed(1)
        fx = FeatureExtractor().double()
        t = torch.randn(2, 3, 64, 64, dtype=torch.float64)

        def loss_fn():
            return (fx(t) ** 2).mean()

        fd_check_parameters(loss_fn, fx, n_coords=100, rel_tol=1e-4)


class TestDecode:
    def test_greedy_deterministic(self):
        torch.manual_seed(2)
        dec = CaptionDecoder(32).eval()
        feats = torch.randn(256)
        with torch.no_grad():
            ids1, dist1 = dec.greedy(feats, max_len=12)
            ids2, dist2 = dec.greedy(feats, max_len=12)
        assert ids1 == ids2
        assert torch.equal(dist1, dist2)
        assert len(ids1) <= 12

    def test_teacher_forced_length(self):
        torch.manual_seed(2)
        dec = CaptionDecoder(32)
        feats = torch.randn(3, 256)
        targets = torch.randint(4, 32, (3, 9))
        dist = dec.teacher_forced(feats, targets)
        assert dist.shape == (3, 9, 32)

    def test_distributions_normalized(self):
        torch.manual_seed(3)
        dec = CaptionDecoder(40)
        feats = torch.randn(2, 256)
        targets = torch.randint(4, 40, (2, 7))
        dist = dec.teacher_forced(feats, targets)
        assert torch.all(dist >= 0)
        assert torch.allclose(dist.sum(dim=-1), torch.ones(2, 7), atol=1e-6)

    def test_greedy_tie_breaks_to_lowest_id(self):
        # Uniform logits produce an exact tie; argmax must pick id 0.
        dec = CaptionDecoder(8)
        with torch.no_grad():
            for p in dec.parameters():
                p.zero_()
        ids, _ = dec.greedy(torch.zeros(256), max_len=3)
        assert ids[0] == 0

    def test_empty_vocab_rejected(self):
        with pytest.raises(ValueError):
            CaptionDecoder(4)

    def test_max_len_validated(self):
        torch.manual_seed(0)
        dec = CaptionDecoder(16)
        with pytest.raises(ValueError):
            dec.greedy(torch.randn(256), max_len=0)


class TestCaptionLoss:
    def test_one_hot_correct_is_zero(self):
        target = torch.tensor([[5, 6, END]])
        dist = torch.zeros(1, 3, 10)
        for i, t in enumerate(target[0]):
            dist[0, i, t] = 1.0
        loss, clamped = caption_loss(dist, target)
        assert float(loss) == 0.0
        assert clamped == 0

    def test_uniform_is_log_vocab(self):
        V = 128
        target = torch.tensor([[4, 5, 6, 7]])
        dist = torch.full((1, 4, V), 1.0 / V, dtype=torch.float64)
        loss, _ = caption_loss(dist, target)
        assert float(loss) == pytest.approx(np.log(V), rel=1e-12)
        assert float(loss) == pytest.approx(4.852030263919617, rel=1e-12)

    def test_pad_positions_masked(self):
        V = 16
        target = torch.tensor([[4, END, PAD, PAD]])
        dist = torch.full((1, 4, V), 1.0 / V)
        loss, _ = caption_loss(dist, target)
        assert float(loss) == pytest.approx(np.log(V), rel=1e-6)

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(6)
        V, L = 20, 6
        raw = rng.random((1, L, V))
        dist = raw / raw.sum(axis=-1, keepdims=True)
        target = rng.integers(4, V, (1, L))
        expected = -np.mean([np.log(dist[0, i, target[0, i]]) for i in range(L)])
        loss, _ = caption_loss(torch.tensor(dist), torch.tensor(target))
        assert abs(float(loss) - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_zero_probability_clamped_and_flagged(self):
        target = torch.tensor([[4, END]])
        dist = torch.zeros(1, 2, 10)
        dist[0, 0, 9] = 1.0  # probability 0 at target position 0
        dist[0, 1, END] = 1.0
        loss, clamped = caption_loss(dist, target)
        assert clamped == 1
        assert float(loss) == pytest.approx(-np.log(1e-12) / 2, rel=1e-6)

    def test_misaligned_positions(self):
        with pytest.raises(ValueError):
            caption_loss(torch.zeros(1, 3, 10), torch.zeros(1, 4, dtype=torch.long))


class TestFullPathGradient:
    def test_cnn_rnn_loss_gradcheck(self):
        torch.manual_seed(4)
        fx = FeatureExtractor().double()
        dec = CaptionDecoder(16).double()
        t = torch.randn(2, 3, 64, 64, dtype=torch.float64)
        targets = torch.tensor([[4, 7, END, PAD], [5, 6, 8, END]])

        class Both(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.fx = fx
                self.dec = dec

        both = Both()

        def loss_fn():
            dist = dec.teacher_forced(fx(t), targets)
            return caption_loss(dist, targets)[0]

        fd_check_parameters(loss_fn, both, n_coords=140, rel_tol=1e-4)
