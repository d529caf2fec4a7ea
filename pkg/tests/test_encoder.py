import math

import numpy as np
import pytest
import torch

from bam.encoder import (MemoryBank, MultimodalEncoder, SaliencyHead, clip_centers,
                         inside_gt_mask, margin_saliency_loss, negative_relation_loss,
                         rank_contrastive_loss, sample_margin_pair)
from bam.gradcheck import finite_difference_check
from bam.intervals import MomentSpan
from bam.layers import attention, sinusoidal_encoding


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return MultimodalEncoder(video_dim=20, text_dim=8, dim=16, heads=2, layers=2)


class TestProjection:
    def test_shapes(self, encoder):
        v, t = encoder.project(torch.randn(12, 20), torch.randn(5, 8))
        assert v.shape == (12, 16)
        assert t.shape == (5, 16)

    def test_zero_input_gives_bias(self, encoder):
        v, _ = encoder.project(torch.zeros(3, 20), torch.zeros(2, 8))
        assert torch.allclose(v, encoder.video_proj.bias.expand(3, -1))

    def test_dim_mismatch_rejected(self, encoder):
        with pytest.raises(ValueError, match="video feature dim"):
            encoder.project(torch.randn(3, 19), torch.randn(2, 8))
        with pytest.raises(ValueError, match="text feature dim"):
            encoder.project(torch.randn(3, 20), torch.randn(2, 9))


class TestSinusoidalEncoding:
    def test_zero_position_pattern(self):
        enc = sinusoidal_encoding(torch.zeros(1), 8)[0]
        assert torch.allclose(enc, torch.tensor([0.0, 1.0] * 4))

    def test_shape(self):
        assert sinusoidal_encoding(torch.rand(7), 16).shape == (7, 16)

    def test_equal_positions_equal_rows(self):
        enc = sinusoidal_encoding(torch.tensor([0.37, 0.37]), 12)
        assert torch.equal(enc[0], enc[1])

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            sinusoidal_encoding(torch.zeros(1), 7)


class TestCrossAttention:
    def test_single_text_token_weight_one(self, encoder):
        # with one key the softmax is exactly 1, so the pre-residual
        # output is the projected value row for every clip
        block = encoder.cross_blocks[0]
        v = torch.randn(6, 16)
        t = torch.randn(1, 16)
        q, k, val = block.q_proj(v), block.k_proj(t), block.v_proj(t)
        out = attention(q, k, val, block.heads)
        assert torch.allclose(out, val.expand(6, -1), atol=1e-6)

    def test_output_shape_matches_video(self, encoder):
        for n_t in (1, 3, 9):
            out = encoder(torch.randn(10, 20), torch.randn(n_t, 8))
            assert out.memory.shape == (10, 16)


def dense_attention_oracle(q, k, v, scale):
    """Straightforward single-head softmax attention, loops only."""
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = np.array([q[i] @ k[j] * scale for j in range(k.shape[0])])
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        out[i] = sum(weights[j] * v[j] for j in range(v.shape[0]))
    return out


class TestSelfAttention:
    def test_single_clip(self, encoder):
        block = encoder.self_blocks[0]
        x = torch.randn(1, 16)
        pe = sinusoidal_encoding(torch.tensor([0.5]), 16)
        out = block(x, x, x_pe=pe, kv_pe=pe)
        expected = x + block.v_proj(x)
        expected = block.ffn(expected) + expected
        assert torch.allclose(out, expected, atol=1e-6)

    def test_matches_dense_oracle(self):
        torch.manual_seed(1)
        dim, heads = 8, 1
        q = torch.randn(3, dim, dtype=torch.float64)
        k = torch.randn(3, dim, dtype=torch.float64)
        v = torch.randn(3, dim, dtype=torch.float64)
        ours = attention(q, k, v, heads).numpy()
        oracle = dense_attention_oracle(q.numpy(), k.numpy(), v.numpy(),
                                        1.0 / math.sqrt(dim))
        np.testing.assert_allclose(ours, oracle, atol=1e-6)


class TestEncode:
    def test_deterministic(self, encoder):
        v, t = torch.randn(12, 20), torch.randn(4, 8)
        a = encoder(v, t).memory
        b = encoder(v, t).memory
        assert torch.equal(a, b)

    def test_zero_layers_is_projection(self):
        torch.manual_seed(0)
        enc = MultimodalEncoder(20, 8, 16, 2, layers=0)
        v = torch.randn(5, 20)
        out = enc(v, torch.randn(3, 8))
        assert torch.allclose(out.memory, enc.video_proj(v))

    def test_clip_positions_increasing(self, encoder):
        out = encoder(torch.randn(9, 20), torch.randn(2, 8))
        positions = out.clip_positions
        assert (positions[1:] > positions[:-1]).all()
        assert positions.min() > 0 and positions.max() < 1


class TestMarginLoss:
    def test_satisfied_margin(self):
        scores = torch.tensor([0.1, 0.9])
        assert margin_saliency_loss(scores, [(0, 1)], 0.2).item() == 0.0

    def test_tie_case(self):
        scores = torch.tensor([0.5, 0.5])
        assert margin_saliency_loss(scores, [(0, 1)], 0.2).item() == pytest.approx(0.2)

    def test_violated_margin(self):
        scores = torch.tensor([0.8, 0.3])
        assert margin_saliency_loss(scores, [(0, 1)], 0.2).item() == pytest.approx(0.7)

    def test_no_pairs_rejected(self):
        with pytest.raises(ValueError):
            margin_saliency_loss(torch.zeros(3), [], 0.2)


class TestPairSampler:
    def test_labels_pick_extremes(self):
        rng = np.random.default_rng(0)
        pair = sample_margin_pair(clip_centers(5), [], np.array([0.2, 0.9, 0.0, 0.5, 0.1]), rng)
        assert pair == (2, 1)

    def test_without_labels_inside_outside(self):
        rng = np.random.default_rng(0)
        positions = clip_centers(10)
        spans = [MomentSpan(0.3, 0.6)]
        inside = inside_gt_mask(positions, spans)
        for _ in range(20):
            low, high = sample_margin_pair(positions, spans, None, rng)
            assert inside[high] and not inside[low]

    def test_full_coverage_returns_none(self):
        rng = np.random.default_rng(0)
        assert sample_margin_pair(clip_centers(4), [MomentSpan(0.0, 1.0)], None, rng) is None


class TestRankContrastive:
    def test_all_positive_is_zero(self):
        scores = torch.tensor([1.0, 2.0, 3.0])
        labels = np.array([2.0, 2.0, 2.0])
        inside = torch.tensor([True, True, True])
        # single reference r=2 has an empty strict-positive set -> skipped
        assert rank_contrastive_loss(scores, labels, inside).item() == 0.0

    def test_equal_scores_log2(self):
        scores = torch.tensor([0.7, 0.7])
        labels = np.array([1.0, 0.5])
        inside = torch.tensor([True, True])
        # references {0.5, 1}; only r=0.5 has positives: one of two equal
        # logits -> log 2
        assert rank_contrastive_loss(scores, labels, inside).item() == pytest.approx(math.log(2))

    def test_raising_positive_score_decreases_loss(self):
        labels = np.array([1.0, 0.5])
        inside = torch.tensor([True, True])
        lo = rank_contrastive_loss(torch.tensor([0.7, 0.7]), labels, inside)
        hi = rank_contrastive_loss(torch.tensor([1.4, 0.7]), labels, inside)
        assert hi.item() < lo.item()


class TestNegativeRelation:
    def test_very_negative_scores_vanish(self):
        assert negative_relation_loss(torch.tensor([-30.0, -40.0])).item() == pytest.approx(0.0, abs=1e-8)

    def test_zero_score_is_log2(self):
        assert negative_relation_loss(torch.tensor([0.0])).item() == pytest.approx(math.log(2))

    def test_nonnegative(self):
        torch.manual_seed(0)
        assert negative_relation_loss(torch.randn(50)).item() >= 0.0


def test_saliency_loss_gradients_match_finite_differences():
    torch.manual_seed(3)
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        encoder = MultimodalEncoder(video_dim=6, text_dim=4, dim=16, heads=2, layers=1)
        head = SaliencyHead(16)
        video = torch.randn(12, 6)
        text = torch.randn(3, 4)
        labels = np.array([0.0] * 4 + [1.0] * 4 + [0.5] * 4)
        spans = [MomentSpan(4 / 12, 1.0)]

        def loss_fn():
            out = encoder(video, text)
            scores = head(out.memory)
            inside = inside_gt_mask(out.clip_positions, spans)
            total = margin_saliency_loss(scores, [(0, 5)], 0.2)
            total = total + rank_contrastive_loss(scores, labels, inside)
            total = total + negative_relation_loss(scores)
            return total

        named = list(encoder.named_parameters()) + list(head.named_parameters())
        report = finite_difference_check(loss_fn, named, step=1e-5)
        assert report.max_rel_error < 1e-4, report.worst_param
    finally:
        torch.set_default_dtype(prev)
