"""Single-device training loop with seeded determinism, cosine schedule,
JSONL loss/metric history, and best-AP checkpoint retention."""

import copy
import json
import logging
import math
import random
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import LossConfig, ModelConfig, TrainConfig
from .data import GroundTruthSet, augment, letterbox, load_image, mosaic
from .inference import evaluate_model
from .losses import DetectionLoss
from .network import build_model

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


def lr_at(train_cfg: TrainConfig, epoch: int, total_epochs: int) -> float:
    """Linear warmup then cosine decay to final_lr."""
    warm = train_cfg.warmup_epochs
    if warm > 0 and epoch < warm:
        return train_cfg.lr * (epoch + 1) / warm
    span = max(total_epochs - warm, 1)
    t = min(max(epoch - warm, 0) / span, 1.0)
    return train_cfg.final_lr + 0.5 * (train_cfg.lr - train_cfg.final_lr) * (
        1 + math.cos(math.pi * t))


def _load_augmented(rec, policy, rng):
    image = load_image(rec.path)
    boxes = rec.boxes.copy()
    if policy is not None:
        image, boxes = augment(image, boxes, policy, rng)
    return image, boxes, rec.labels


def _prepare_sample(rec, input_size, policy, rng, dataset=None):
    use_mosaic = (policy is not None and dataset is not None
                  and policy.mosaic_prob > 0
                  and rng.random() < policy.mosaic_prob)
    if use_mosaic:
        others = [dataset.records[rng.randrange(len(dataset.records))]
                  for _ in range(3)]
        parts = [_load_augmented(r, policy, rng) for r in (rec, *others)]
        image, boxes, labels = mosaic(parts, target=input_size, rng=rng)
    else:
        image, boxes, labels = _load_augmented(rec, policy, rng)
        image, boxes, _ = letterbox(image, boxes, target=input_size)
    keep = (boxes[:, 2] - boxes[:, 0] > 1) & (boxes[:, 3] - boxes[:, 1] > 1)
    tensor = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)
    return tensor, torch.from_numpy(boxes[keep].astype(np.float32)), \
        torch.from_numpy(labels[keep].astype(np.int64))


def make_batches(dataset, input_size, batch_size, policy, rng):
    order = list(range(len(dataset.records)))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [dataset.records[i] for i in order[start:start + batch_size]]
        samples = [_prepare_sample(r, input_size, policy,
                                   rng or random.Random(0), dataset=dataset)
                   for r in chunk]
        images = torch.stack([s[0] for s in samples])
        gts = [(s[1], s[2]) for s in samples]
        yield images, gts


class Ema:
    def __init__(self, model, decay):
        self.decay = decay
        self.shadow = copy.deepcopy(model).eval()
        for p in self.shadow.parameters():
            p.requires_grad_(False)

    def update(self, model):
        with torch.no_grad():
            msd = model.state_dict()
            for k, v in self.shadow.state_dict().items():
                if v.dtype.is_floating_point:
                    v.mul_(self.decay).add_(msd[k].detach(), alpha=1 - self.decay)


def train(model_cfg: ModelConfig, train_cfg: TrainConfig,
          dataset: GroundTruthSet, out_dir, val_set: GroundTruthSet | None = None,
          loss_cfg: LossConfig | None = None):
    """Runs the full loop; returns (model, history list, best checkpoint path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    torch.manual_seed(train_cfg.seed)
    rng = random.Random(train_cfg.seed)
    model = build_model(model_cfg)
    criterion = DetectionLoss(model_cfg, loss_cfg)
    optimizer = torch.optim.SGD(model.parameters(), lr=train_cfg.lr,
                                momentum=train_cfg.momentum,
                                weight_decay=train_cfg.weight_decay)
    ema = Ema(model, train_cfg.ema_decay) if train_cfg.use_ema else None

    history = []
    best_ap50 = -1.0
    with open(history_path, "a") as hist:
        for epoch in range(train_cfg.epochs):
            lr = lr_at(train_cfg, epoch, train_cfg.epochs)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            sums = np.zeros(4)
            n_batches = 0
            for batch_id, (images, gts) in enumerate(make_batches(
                    dataset, model_cfg.input_size, train_cfg.batch_size,
                    train_cfg.augment, rng)):
                total, l_cls, l_dfl, l_box = criterion(model(images), gts)
                if not torch.isfinite(total):
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} batch {batch_id}")
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                if ema is not None:
                    ema.update(model)
                sums += [float(total.detach()), float(l_cls.detach()),
                         float(l_dfl.detach()), float(l_box.detach())]
                n_batches += 1

            entry = {
                "epoch": epoch,
                "lr": lr,
                "loss": sums[0] / n_batches,
                "loss_cls": sums[1] / n_batches,
                "loss_dfl": sums[2] / n_batches,
                "loss_box": sums[3] / n_batches,
            }
            eval_model = ema.shadow if ema is not None else model
            last_epoch = epoch == train_cfg.epochs - 1
            if val_set is not None and (
                    last_epoch or (epoch + 1) % train_cfg.eval_interval == 0):
                metrics = evaluate_model(eval_model, val_set,
                                         iou_thr=train_cfg.nms_iou,
                                         score_thr=train_cfg.score_thr)
                entry["val"] = metrics
                if metrics["ap50"] > best_ap50:
                    best_ap50 = metrics["ap50"]
                    save_checkpoint(eval_model, best_path,
                                    extra={"epoch": epoch, "ap50": best_ap50})
            hist.write(json.dumps(entry) + "\n")
            hist.flush()
            history.append(entry)
            log.info("epoch %d loss %.4f lr %.5f", epoch, entry["loss"], lr)

        save_checkpoint(ema.shadow if ema is not None else model, last_path,
                        extra={"epoch": train_cfg.epochs - 1})
        if not best_path.exists():
            save_checkpoint(ema.shadow if ema is not None else model,
                            best_path, extra={"epoch": train_cfg.epochs - 1})
    return model, history, best_path
