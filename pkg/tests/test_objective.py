from itertools import permutations

import numpy as np
import pytest
import torch

from bam.intervals import MomentSpan
from bam.objective import (MatchResult, cost_matrix, hungarian_match, localization_loss,
                           pair_cost, quality_loss, rank_proposals, span_giou_matrix,
                           span_iou_matrix, span_l1_matrix)


def brute_force_match(costs: np.ndarray) -> tuple[tuple[int, ...], float]:
    n, m = costs.shape
    best, best_cost = None, np.inf
    for perm in permutations(range(m), n):
        cost = sum(costs[i, perm[i]] for i in range(n))
        if cost < best_cost:
            best, best_cost = perm, cost
    return best, best_cost


class TestPairCost:
    def test_identical_spans_zero(self):
        span = MomentSpan(0.2, 0.6)
        assert pair_cost(span, span) == 0.0

    def test_worked_overlap_case(self):
        cost = pair_cost(MomentSpan(0.0, 0.2), MomentSpan(0.1, 0.3))
        assert cost == pytest.approx(10 * 0.2 + (1 - 1 / 3), abs=1e-9)
        assert cost == pytest.approx(2.6667, abs=1e-4)

    def test_worked_disjoint_case(self):
        cost = pair_cost(MomentSpan(0.0, 0.1), MomentSpan(0.2, 0.3))
        assert cost == pytest.approx(10 * 0.4 + (1 + 1 / 3), abs=1e-9)
        assert cost == pytest.approx(5.3333, abs=1e-4)

    def test_tensor_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(7)
        gts = [MomentSpan(*sorted(rng.uniform(0, 1, 2))) for _ in range(3)]
        preds = [MomentSpan(*sorted(rng.uniform(0, 1, 2))) for _ in range(4)]
        gt_t = torch.tensor([[s.t_s, s.t_e] for s in gts], dtype=torch.float64)
        pr_t = torch.tensor([[s.t_s, s.t_e] for s in preds], dtype=torch.float64)
        mat = cost_matrix(gt_t, pr_t).numpy()
        for i, g in enumerate(gts):
            for j, p in enumerate(preds):
                assert mat[i, j] == pytest.approx(pair_cost(g, p), abs=1e-9)


class TestHungarianMatch:
    def test_single_pair(self):
        match = hungarian_match(np.array([[3.0]]))
        assert match.assignment == (0,)
        assert match.total_cost == 3.0

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(1, 5)
            m = rng.integers(n, 7)
            costs = rng.uniform(0, 10, size=(n, m))
            match = hungarian_match(costs)
            _, best_cost = brute_force_match(costs)
            assert match.total_cost == pytest.approx(best_cost, abs=0)

    def test_duplicate_gts_deterministic(self):
        costs = np.array([[1.0, 2.0, 5.0], [1.0, 2.0, 5.0]])
        match = hungarian_match(costs)
        # lexicographically smallest optimal assignment
        assert match.assignment == (0, 1)

    def test_scale_consistency(self):
        rng = np.random.default_rng(1)
        costs = rng.uniform(0, 5, size=(3, 5))
        base = hungarian_match(costs)
        scaled = hungarian_match(costs * 7.3)
        assert base.assignment == scaled.assignment

    def test_more_gts_than_preds_rejected(self):
        with pytest.raises(ValueError, match="exceed"):
            hungarian_match(np.zeros((3, 2)))

    def test_large_instance_uses_solver(self):
        rng = np.random.default_rng(2)
        costs = rng.uniform(0, 10, size=(7, 12))
        match = hungarian_match(costs)
        from scipy.optimize import linear_sum_assignment
        rows, cols = linear_sum_assignment(costs)
        assert match.total_cost == pytest.approx(costs[rows, cols].sum())


class TestLocalizationLoss:
    def test_identical_matched_pairs_zero(self):
        gt = torch.tensor([[0.1, 0.5], [0.6, 0.9]], dtype=torch.float64)
        pred = torch.cat([gt, torch.tensor([[0.0, 1.0]], dtype=torch.float64)])
        match = hungarian_match(cost_matrix(gt, pred).numpy())
        loss = localization_loss(gt, pred, match)
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_equals_matching_cost(self):
        rng = np.random.default_rng(3)
        gt = torch.tensor(np.sort(rng.uniform(0, 1, (2, 2)), axis=1))
        pred = torch.tensor(np.sort(rng.uniform(0, 1, (5, 2)), axis=1))
        match = hungarian_match(cost_matrix(gt, pred).numpy())
        loss = localization_loss(gt, pred, match)
        assert loss.item() == pytest.approx(match.total_cost, abs=1e-9)

    def test_single_pair_worked_value(self):
        gt = torch.tensor([[0.0, 0.2]], dtype=torch.float64)
        pred = torch.tensor([[0.1, 0.3]], dtype=torch.float64)
        match = MatchResult(assignment=(0,), total_cost=0.0)
        assert localization_loss(gt, pred, match).item() == pytest.approx(2.6667, abs=1e-4)

    def test_gradient_flows_to_predictions(self):
        gt = torch.tensor([[0.1, 0.5]], dtype=torch.float64)
        pred = torch.tensor([[0.2, 0.4]], dtype=torch.float64, requires_grad=True)
        match = hungarian_match(cost_matrix(gt, pred.detach()).numpy())
        localization_loss(gt, pred, match).backward()
        assert pred.grad is not None and pred.grad.abs().sum() > 0


class TestQualityLoss:
    def test_perfect_predictions_zero(self):
        gt = torch.tensor([[0.1, 0.5]])
        pred = torch.tensor([[0.1, 0.5], [0.8, 0.9]])
        targets = span_iou_matrix(gt, pred).amax(0)
        assert quality_loss(targets, pred, gt).item() == pytest.approx(0.0, abs=1e-6)

    def test_single_query_half_score(self):
        gt = torch.tensor([[0.1, 0.5]])
        q = torch.tensor([0.5])
        assert quality_loss(q, gt.clone(), gt).item() == pytest.approx(0.5)

    def test_two_query_worked_case(self):
        gt = torch.tensor([[0.0, 0.5]])
        pred = torch.tensor([[0.6, 0.9], [0.0, 0.5]])  # max IoUs (0.0, 1.0)
        q = torch.tensor([0.2, 0.9])
        assert quality_loss(q, pred, gt).item() == pytest.approx(0.3, abs=1e-6)

    def test_bounded_by_num_queries(self):
        rng = np.random.default_rng(4)
        gt = torch.tensor(np.sort(rng.uniform(0, 1, (2, 2)), axis=1))
        pred = torch.tensor(np.sort(rng.uniform(0, 1, (6, 2)), axis=1))
        q = torch.tensor(rng.uniform(0, 1, 6))
        assert quality_loss(q, pred, gt).item() <= 6.0


class TestSpanMatrices:
    def test_l1(self):
        gt = torch.tensor([[0.0, 0.5]])
        pred = torch.tensor([[0.1, 0.4]])
        assert span_l1_matrix(gt, pred).item() == pytest.approx(0.2)

    def test_giou_matches_scalar(self):
        from bam.intervals import giou_1d
        rng = np.random.default_rng(5)
        for _ in range(100):
            a = MomentSpan(*sorted(rng.uniform(0, 1, 2)))
            b = MomentSpan(*sorted(rng.uniform(0, 1, 2)))
            mat = span_giou_matrix(torch.tensor([[a.t_s, a.t_e]], dtype=torch.float64),
                                   torch.tensor([[b.t_s, b.t_e]], dtype=torch.float64))
            assert mat.item() == pytest.approx(giou_1d(a, b), abs=1e-9)


class TestRankProposals:
    def test_descending_by_score(self):
        order = rank_proposals([MomentSpan(0, 0.1), MomentSpan(0.2, 0.3)], [0.1, 0.9])
        assert order == [1, 0]

    def test_stable_on_ties(self):
        order = rank_proposals([MomentSpan(0, 0.1)] * 3, [0.5, 0.5, 0.5])
        assert order == [0, 1, 2]

    def test_monotone_transform_invariant(self):
        scores = [0.1, 0.7, 0.3, 0.9]
        spans = [MomentSpan(0, 0.1)] * 4
        assert rank_proposals(spans, scores) == rank_proposals(spans, [s ** 3 for s in scores])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rank_proposals([MomentSpan(0, 1)], [0.5, 0.6])
