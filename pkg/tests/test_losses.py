import math

import numpy as np
import pytest
import torch

import lsmyolo.losses as losses
from lsmyolo.common import ConfigMismatchError, DegenerateBoxError
from lsmyolo.config import LossConfig, ModelConfig
from lsmyolo.losses import (DetectionLoss, assign_targets, bce_cls_loss,
                            dfl_loss, siou_loss)

from conftest import tiny_model_config
from oracles import fd_tensor_grad, max_rel_err, siou_scalar


class TestSIoU:
    def test_identical_boxes_zero(self):
        b = torch.tensor([[10.0, 10.0, 50.0, 50.0]])
        assert siou_loss(b, b).item() < 1e-6

    def test_disjoint_worse_than_overlapping(self):
        target = torch.tensor([[0.0, 0.0, 20.0, 20.0]])
        near = torch.tensor([[5.0, 5.0, 25.0, 25.0]])
        far = torch.tensor([[200.0, 200.0, 220.0, 220.0]])
        assert siou_loss(far, target) > siou_loss(near, target)

    def test_matches_scalar_transcription(self):
        pred = torch.tensor([[10.0, 10.0, 50.0, 50.0]], dtype=torch.float64)
        target = torch.tensor([[20.0, 20.0, 60.0, 60.0]], dtype=torch.float64)
        got = siou_loss(pred, target).item()
        want = siou_scalar((10, 10, 50, 50), (20, 20, 60, 60))
        assert got == pytest.approx(want, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_pairs_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            p = rng.uniform(0, 100, 2)
            pw, ph = rng.uniform(1, 60, 2)
            t = rng.uniform(0, 100, 2)
            tw, th = rng.uniform(1, 60, 2)
            pred = torch.tensor([[p[0], p[1], p[0] + pw, p[1] + ph]],
                                dtype=torch.float64)
            target = torch.tensor([[t[0], t[1], t[0] + tw, t[1] + th]],
                                  dtype=torch.float64)
            want = siou_scalar(tuple(pred[0].tolist()),
                               tuple(target[0].tolist()))
            assert siou_loss(pred, target).item() == pytest.approx(
                want, abs=1e-6)

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            b1 = torch.tensor([[0.0, 0.0, 30.0, 20.0]], dtype=torch.float64)
            b2 = torch.tensor([[5.0, -3.0, 42.0, 25.0]], dtype=torch.float64)
            shift = torch.tensor(rng.uniform(-500, 500, 2).tolist() * 2,
                                 dtype=torch.float64)
            base = siou_loss(b1, b2).item()
            moved = siou_loss(b1 + shift, b2 + shift).item()
            assert moved == pytest.approx(base, abs=1e-6)

    def test_degenerate_target_rejected(self):
        pred = torch.tensor([[0.0, 0.0, 10.0, 10.0]])
        with pytest.raises(DegenerateBoxError):
            siou_loss(pred, torch.tensor([[5.0, 5.0, 5.0, 9.0]]))

    def test_nonnegative_on_random_pairs(self):
        torch.manual_seed(0)
        xy = torch.rand(100, 2) * 50
        wh = torch.rand(100, 2) * 40 + 1
        pred = torch.cat([xy, xy + wh], 1)
        xy2 = torch.rand(100, 2) * 50
        wh2 = torch.rand(100, 2) * 40 + 1
        target = torch.cat([xy2, xy2 + wh2], 1)
        vals = siou_loss(pred, target)
        assert torch.all(vals >= -1e-7) and torch.isfinite(vals).all()


class TestDFL:
    def test_point_mass_at_integer_target(self):
        logits = torch.full((1, 8), -40.0)
        logits[0, 5] = 40.0
        assert dfl_loss(logits, torch.tensor([5.0])).item() < 1e-6

    def test_half_split_target(self):
        logits = torch.full((1, 8), -40.0)
        logits[0, 4] = 10.0
        logits[0, 5] = 10.0
        got = dfl_loss(logits, torch.tensor([4.5])).item()
        assert got == pytest.approx(-math.log(0.5), abs=1e-5)

    def test_uniform_distribution(self):
        for reg_max in (8, 16):
            logits = torch.zeros(1, reg_max)
            got = dfl_loss(logits, torch.tensor([3.3])).item()
            assert got == pytest.approx(math.log(reg_max), abs=1e-6)

    def test_out_of_range_target(self):
        with pytest.raises(ConfigMismatchError):
            dfl_loss(torch.zeros(1, 8), torch.tensor([7.5]))
        with pytest.raises(ConfigMismatchError):
            dfl_loss(torch.zeros(1, 8), torch.tensor([-0.1]))

    def test_brute_force_equivalence_1000_cases(self):
        rng = np.random.default_rng(0)
        reg_max = 16
        for _ in range(1000):
            logits = torch.tensor(rng.normal(0, 3, reg_max)).view(1, -1)
            t = float(rng.uniform(0, reg_max - 1))
            got = dfl_loss(logits, torch.tensor([t], dtype=torch.float64)).item()
            # direct evaluation of the bracketing cross-entropy
            p = torch.softmax(logits[0], dim=0).numpy()
            tl = min(int(math.floor(t)), reg_max - 2)
            tr = tl + 1
            wl, wr = tr - t, t - tl
            want = -(wl * math.log(p[tl]) + wr * math.log(p[tr]))
            assert got == pytest.approx(want, abs=1e-6)


class TestBCE:
    def test_saturated_logit(self):
        loss = bce_cls_loss(torch.tensor([40.0]), torch.tensor([1.0]))
        assert loss.item() < 1e-6

    def test_zero_logit_target_one(self):
        loss = bce_cls_loss(torch.tensor([0.0]), torch.tensor([1.0]))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_symmetry(self):
        ls = torch.linspace(-4, 4, 17)
        a = bce_cls_loss(ls, torch.zeros_like(ls))
        b = bce_cls_loss(-ls, torch.ones_like(ls))
        assert torch.allclose(a, b, atol=1e-6)


def _centers(n, stride):
    ax = (torch.arange(n, dtype=torch.float32) + 0.5) * stride
    gy, gx = torch.meshgrid(ax, ax, indexing="ij")
    return torch.stack([gx.reshape(-1), gy.reshape(-1)], -1)


class TestAssigner:
    def setup_method(self):
        self.cfg = LossConfig(assign_topk=1)
        self.centers = _centers(4, 8)  # 16 cells, 32x32 image

    def test_single_gt_single_cell(self):
        scores = torch.full((16, 1), 0.9)
        boxes = torch.cat([self.centers - 4, self.centers + 4], -1)
        gt = torch.tensor([[10.0, 10.0, 14.0, 14.0]])  # covers center (12,12)
        fg, gt_idx, ts = assign_targets(scores, boxes, gt,
                                        torch.tensor([0]), self.centers,
                                        self.cfg)
        assert fg.sum() == 1
        assert fg[5]  # cell center (12, 12) is location index 5
        assert gt_idx[5] == 0

    def test_no_gts(self):
        scores = torch.rand(16, 2)
        boxes = torch.cat([self.centers - 4, self.centers + 4], -1)
        fg, gt_idx, ts = assign_targets(
            scores, boxes, torch.zeros(0, 4), torch.zeros(0, dtype=torch.long),
            self.centers, self.cfg)
        assert fg.sum() == 0 and torch.all(gt_idx == -1) and torch.all(ts == 0)

    def test_identical_gts_tie_to_lower_index(self):
        cfg = LossConfig(assign_topk=3)
        scores = torch.full((16, 1), 0.5)
        boxes = torch.cat([self.centers - 6, self.centers + 6], -1)
        gt = torch.tensor([[0.0, 0.0, 32.0, 32.0],
                           [0.0, 0.0, 32.0, 32.0]])
        fg, gt_idx, _ = assign_targets(scores, boxes, gt,
                                       torch.tensor([0, 0]), self.centers, cfg)
        assert torch.all(gt_idx[fg] == 0)

    def test_each_location_at_most_one_gt(self):
        torch.manual_seed(3)
        cfg = LossConfig(assign_topk=5)
        scores = torch.rand(16, 3)
        boxes = torch.cat([self.centers - 5, self.centers + 5], -1)
        gt = torch.rand(4, 2) * 10
        gt = torch.cat([gt, gt + torch.rand(4, 2) * 20 + 4], -1)
        fg, gt_idx, ts = assign_targets(scores, boxes, gt,
                                        torch.tensor([0, 1, 2, 0]),
                                        self.centers, cfg)
        assert gt_idx[fg].ndim == 1  # single assignment per location
        assert torch.all((ts >= 0) & (ts <= 1))

    def test_determinism(self):
        torch.manual_seed(5)
        scores = torch.rand(16, 2)
        boxes = torch.cat([self.centers - 5, self.centers + 5], -1)
        gt = torch.tensor([[2.0, 2.0, 30.0, 30.0]])
        out1 = assign_targets(scores, boxes, gt, torch.tensor([1]),
                              self.centers, self.cfg)
        out2 = assign_targets(scores, boxes, gt, torch.tensor([1]),
                              self.centers, self.cfg)
        for a, b in zip(out1, out2):
            assert torch.equal(a, b)


def _random_raw(cfg, batch=1, seed=0):
    torch.manual_seed(seed)
    raw = []
    for stride in cfg.head_strides:
        n = cfg.input_size // stride
        raw.append((torch.randn(batch, cfg.num_classes, n, n),
                    torch.randn(batch, 4 * cfg.reg_max, n, n)))
    return raw


class TestTotalLoss:
    def setup_method(self):
        self.model_cfg = tiny_model_config(input_size=32, reg_max=4)
        self.loss_cfg = LossConfig(reg_max=4)
        self.criterion = DetectionLoss(self.model_cfg, self.loss_cfg)
        self.gts = [(torch.tensor([[4.0, 4.0, 28.0, 28.0]]),
                     torch.tensor([0]))]

    def test_weighted_combination_exact(self):
        raw = _random_raw(self.model_cfg)
        total, l_cls, l_dfl, l_box = self.criterion(raw, self.gts)
        assert total.item() == pytest.approx(
            0.5 * l_cls.item() + 1.5 * l_dfl.item() + 7.5 * l_box.item(),
            rel=1e-6)

    def test_component_weights_are_paper_values(self):
        cfg = LossConfig()
        assert (cfg.cls_weight, cfg.dfl_weight, cfg.box_weight) == (0.5, 1.5, 7.5)

    def test_doubling_box_weight_doubles_contribution(self):
        raw = _random_raw(self.model_cfg)
        t1, c1, d1, b1 = self.criterion(raw, self.gts)
        doubled = DetectionLoss(self.model_cfg,
                                LossConfig(reg_max=4, box_weight=15.0))
        t2, c2, d2, b2 = doubled(raw, self.gts)
        assert b2.item() == pytest.approx(b1.item(), rel=1e-6)
        assert c2.item() == pytest.approx(c1.item(), rel=1e-6)
        assert (t2 - t1).item() == pytest.approx(7.5 * b1.item(), rel=1e-5)

    def test_no_gts_only_bce(self):
        raw = _random_raw(self.model_cfg)
        empty = [(torch.zeros(0, 4), torch.zeros(0, dtype=torch.long))]
        total, l_cls, l_dfl, l_box = self.criterion(raw, empty)
        assert l_dfl.item() == 0 and l_box.item() == 0
        assert total.item() == pytest.approx(0.5 * l_cls.item(), rel=1e-6)

    def test_components_finite_nonnegative(self):
        for seed in range(3):
            raw = _random_raw(self.model_cfg, seed=seed)
            vals = self.criterion(raw, self.gts)
            for v in vals:
                assert torch.isfinite(v) and v.item() >= 0

    def test_perfect_predictions_near_zero(self):
        cfg = self.model_cfg
        # bin offsets stay strictly below reg_max - 1 so the clamp is inactive
        gts = [(torch.tensor([[12.0, 12.0, 20.0, 20.0]]), torch.tensor([0]))]
        box = gts[0][0][0]
        raw = []
        from lsmyolo.network import grid_centers
        for stride in cfg.head_strides:
            n = cfg.input_size // stride
            cls_logits = torch.full((1, cfg.num_classes, n, n), -40.0)
            dist = torch.full((1, 4, cfg.reg_max, n, n), -40.0)
            centers = grid_centers(cfg.input_size, stride)
            for loc in range(n * n):
                cx, cy = centers[loc]
                ltrb = torch.tensor([cx - box[0], cy - box[1],
                                     box[2] - cx, box[3] - cy]) / stride
                if torch.all(ltrb >= 0) and torch.all(ltrb <= cfg.reg_max - 1):
                    frac = ltrb - ltrb.floor()
                    if torch.all(frac < 1e-6):  # integer bin offsets only
                        i, j = loc // n, loc % n
                        cls_logits[0, 0, i, j] = 40.0
                        for side in range(4):
                            dist[0, side, int(ltrb[side]), i, j] = 40.0
            raw.append((cls_logits, dist.view(1, 4 * cfg.reg_max, n, n)))
        # k capped at the 4 exactly-representable cells so no background
        # location with a near-zero score sneaks into the candidate pool
        criterion = DetectionLoss(cfg, LossConfig(reg_max=4, assign_topk=4))
        total, l_cls, l_dfl, l_box = criterion(raw, gts)
        assert l_box.item() < 1e-5
        assert l_dfl.item() < 1e-5

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed, monkeypatch):
        cfg = tiny_model_config(input_size=32, reg_max=4)
        criterion = DetectionLoss(cfg, LossConfig(reg_max=4))
        torch.manual_seed(seed)
        flat = torch.randn(
            sum(cfg.num_classes * (cfg.input_size // s) ** 2
                + 4 * cfg.reg_max * (cfg.input_size // s) ** 2
                for s in cfg.head_strides),
            dtype=torch.float64, requires_grad=True)

        def unpack(vec):
            raw, i = [], 0
            for s in cfg.head_strides:
                n = cfg.input_size // s
                c = cfg.num_classes * n * n
                d = 4 * cfg.reg_max * n * n
                raw.append((vec[i:i + c].view(1, cfg.num_classes, n, n),
                            vec[i + c:i + c + d].view(1, 4 * cfg.reg_max, n, n)))
                i += c + d
            return raw

        gts = [(torch.tensor([[4.0, 4.0, 28.0, 28.0]], dtype=torch.float64),
                torch.tensor([0]))]

        # freeze the (non-differentiable) assignment so both gradient routes
        # evaluate the same smooth function
        frozen = {}
        real_assign = losses.assign_targets

        def fixed_assign(scores, boxes, gt_boxes, gt_labels, centers, lcfg):
            if "result" not in frozen:
                frozen["result"] = real_assign(scores, boxes, gt_boxes,
                                               gt_labels, centers, lcfg)
            return frozen["result"]

        monkeypatch.setattr(losses, "assign_targets", fixed_assign)

        def loss_fn():
            return criterion(unpack(flat), gts)[0]

        total = loss_fn()
        analytic = torch.autograd.grad(total, flat)[0]
        numeric = fd_tensor_grad(flat, loss_fn, eps=1e-5)
        assert max_rel_err([analytic], [numeric], floor=1e-4) < 1e-3
