import numpy as np
import pytest
import torch

from occludet.exceptions import EmptyBatch
from occludet.fullbody import (
    AssignmentResult,
    FullBodyHead,
    assign_visible_array,
    assign_visible_to_gt,
    fullbody_forward,
    fullbody_loss,
)
from occludet.geometry import Box, boxes_to_array, encode_offsets_array
from occludet.netcore import FeatureMap
from occludet.scenes import GroundTruthPedestrian

from helpers import (
    finite_difference_gradients,
    random_int_box,
    reference_assign_visible,
    relative_error,
)


def ped(visible, full=None, ignore=False):
    v = Box(*visible)
    f = Box(*full) if full else v
    return GroundTruthPedestrian(visible=v, full=f, ignore=ignore)


class TestAssignVisibleToGt:
    def test_positive_above_threshold(self):
        # IoU([0,0,10,10], [0,0,10,6]) = 0.6
        res = assign_visible_to_gt(
            Box(0, 0, 10, 10), [ped((0, 0, 10, 6), (0, 0, 10, 12))]
        )
        assert res.status == "positive"
        assert res.gt_index == 0

    def test_negative_strictly_below_half(self):
        # IoU = 49/100 = 0.49 -> negative under the strict < 0.5 rule
        res = assign_visible_to_gt(Box(0, 0, 10, 10), [ped((0, 0, 7, 7))])
        assert res.status == "negative"
        assert res.gt_index is None

    def test_exactly_half_is_positive(self):
        res = assign_visible_to_gt(Box(0, 0, 10, 10), [ped((0, 0, 10, 5))])
        assert res.status == "positive"

    def test_ignore_gts_excluded(self):
        gts = [
            ped((0, 0, 10, 10), ignore=True),
            ped((0, 0, 10, 8)),
        ]
        res = assign_visible_to_gt(Box(0, 0, 10, 10), gts)
        assert res.status == "positive"
        assert res.gt_index == 1

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(66)
        for _ in range(1000):
            n_v = int(rng.integers(1, 11))
            n_g = int(rng.integers(1, 5))
            cands = [random_int_box(rng, max_coord=24, min_size=2) for _ in range(n_v)]
            gt_vis = [random_int_box(rng, max_coord=24, min_size=2) for _ in range(n_g)]
            gts = [ped(g) for g in gt_vis]
            for v in cands:
                got = assign_visible_to_gt(Box(*v), gts)
                status, idx = reference_assign_visible(v, gt_vis)
                assert got.status == status
                assert got.gt_index == idx

    def test_array_form_matches_scalar(self):
        rng = np.random.default_rng(67)
        cands = boxes_to_array(
            [random_int_box(rng, max_coord=24, min_size=2) for _ in range(20)]
        )
        gt_vis = boxes_to_array(
            [random_int_box(rng, max_coord=24, min_size=2) for _ in range(4)]
        )
        positive, gt_index = assign_visible_array(cands, gt_vis)
        gts = [ped(tuple(g)) for g in gt_vis]
        for i in range(20):
            res = assign_visible_to_gt(Box(*cands[i]), gts)
            assert positive[i] == (res.status == "positive")
            if positive[i]:
                assert gt_index[i] == res.gt_index

    def test_positive_requires_index(self):
        with pytest.raises(ValueError):
            AssignmentResult(status="positive")


class TestFullBodyHead:
    def make(self):
        torch.manual_seed(5)
        head = FullBodyHead(channels=4, roi_size=3, width=16, feature_dim=8)
        rng = np.random.default_rng(1)
        fm = FeatureMap(
            values=torch.tensor(rng.normal(size=(4, 8, 8))), stride=8
        )
        return head, fm

    def test_output_counts(self):
        head, fm = self.make()
        boxes = np.array([[0, 0, 30, 60], [8, 8, 40, 64]], dtype=float)
        offsets, feats = fullbody_forward(fm, head, boxes)
        assert offsets.shape == (2, 4)
        assert feats.shape == (2, 8)

    def test_identical_inputs_identical_outputs(self):
        head, fm = self.make()
        boxes = np.array([[4, 4, 36, 60], [4, 4, 36, 60]], dtype=float)
        offsets, feats = fullbody_forward(fm, head, boxes)
        np.testing.assert_array_equal(
            offsets[0].detach().numpy(), offsets[1].detach().numpy()
        )
        np.testing.assert_array_equal(
            feats[0].detach().numpy(), feats[1].detach().numpy()
        )


class TestFullBodyLoss:
    def test_perfect_offsets_zero(self):
        visible = np.array([[0, 0, 10, 20], [5, 5, 15, 30]], dtype=float)
        gt_full = np.array([[0, 0, 12, 30], [3, 2, 18, 36]], dtype=float)
        targets = encode_offsets_array(visible, gt_full)
        loss = fullbody_loss(torch.tensor(targets), visible, gt_full)
        assert loss.item() == 0.0

    def test_reorder_invariant(self):
        rng = np.random.default_rng(2)
        visible = boxes_to_array([random_int_box(rng, 40, min_size=4) for _ in range(6)])
        gt_full = boxes_to_array([random_int_box(rng, 40, min_size=4) for _ in range(6)])
        pred = torch.tensor(rng.normal(size=(6, 4)))
        loss_a = fullbody_loss(pred, visible, gt_full)
        perm = rng.permutation(6)
        loss_b = fullbody_loss(pred[perm], visible[perm], gt_full[perm])
        assert loss_a.item() == pytest.approx(loss_b.item(), rel=1e-12)

    def test_empty_batch_raises(self):
        with pytest.raises(EmptyBatch):
            fullbody_loss(torch.zeros(0, 4), np.zeros((0, 4)), np.zeros((0, 4)))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(7)
        head = FullBodyHead(channels=3, roi_size=3, width=12, feature_dim=6)
        rng = np.random.default_rng(3)
        fm = FeatureMap(values=torch.tensor(rng.normal(size=(3, 6, 6))), stride=8)
        visible = np.array([[2, 2, 30, 44], [10, 4, 42, 46]], dtype=float)
        gt_full = np.array([[0, 0, 34, 48], [8, 2, 44, 48]], dtype=float)

        def probe():
            offsets, _ = fullbody_forward(fm, head, visible)
            return fullbody_loss(offsets, visible, gt_full)

        loss = probe()
        loss.backward()
        grads = {n: p.grad.clone() for n, p in head.named_parameters()}
        for name, idx, fd in finite_difference_gradients(
            probe, dict(head.named_parameters()), max_entries=4
        ):
            analytic = grads[name].reshape(-1)[idx].item()
            assert relative_error(analytic, fd, floor=1e-6) < 1e-4, (name, idx)
