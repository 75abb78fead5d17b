"""Single-category training runs and their evaluation.

An epoch is 10 passes over the training set in seeded shuffled order.  Each
time an image comes up it is independently replaced, with probability 0.5,
by an anomalous version: its confetti-stamped variant in unsupervised mode,
or one of the held-in test anomalies in semi-supervised mode (one randomly
chosen image per anomaly type, moved from the test set and excluded from
evaluation).  The replacement is re-rolled on every pass.  Augmentation,
contrast normalization, and min-max scaling run after anomalization, with
the mask following every geometric transform.

All randomness flows through named substreams keyed by (purpose, category,
epoch, pass, image), so runs are bit-reproducible per (dataset seed, run
seed) and independent across images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment, lcn, minmax, preprocess_test
from .heatmap import gaussian_upsample, gaussian_upsample_adjoint, score_map
from .losses import loss_fcdd_baseline, loss_proposed, pseudo_huber, pseudo_huber_grad
from .metrics import category_scores
from .model import FcnArch, FcnParams, OptState, backward_from_prescores, forward_with_acts, init_params, sgd_nesterov_step
from .ops import NumericalError
from .rng import Rng
from .synth import CategoryData, confetti_apply

__all__ = [
    "LOSS_VARIANTS",
    "SUPERVISION_MODES",
    "TrainResult",
    "select_semi_proxies",
    "train_run",
    "evaluate_category",
]

LOSS_VARIANTS = ("baseline", "proposed")
SUPERVISION_MODES = ("unsup", "semi")
ITERATIONS_PER_EPOCH = 10
REPLACE_PROB = 0.5
UPSAMPLE_FACTOR = 4


@dataclass
class TrainResult:
    params: FcnParams
    log: list[dict] = field(default_factory=list)
    held_in: tuple[int, ...] = ()  # test indices moved into training (semi mode)


def batch_loss(variant: str, scores: np.ndarray, masks: np.ndarray) -> tuple[float, np.ndarray]:
    if variant == "baseline":
        return loss_fcdd_baseline(scores, masks)
    if variant == "proposed":
        return loss_proposed(scores, masks, balance=True)
    raise ValueError(f"unknown loss variant {variant!r}, expected one of {LOSS_VARIANTS}")


def select_semi_proxies(data: CategoryData, rng: Rng) -> tuple[int, ...]:
    """One randomly chosen anomalous test image per anomaly type."""
    kinds = sorted({k for k in data.test_kinds if k is not None})
    if not kinds:
        raise ValueError(f"category {data.name!r} has no anomalous test images for semi mode")
    g = rng.stream("semi-pick", data.category_id)
    picks = []
    for kind in kinds:
        idxs = [i for i, k in enumerate(data.test_kinds) if k == kind]
        picks.append(idxs[int(g.integers(0, len(idxs)))])
    return tuple(picks)


def train_run(
    data: CategoryData,
    loss_variant: str,
    supervision: str,
    seed: int,
    epochs: int = 50,
    batch_size: int = 16,
    arch: FcnArch = FcnArch(),
    aug_cfg: AugmentConfig = AugmentConfig(),
) -> TrainResult:
    """Train one network on one category; deterministic per (data, seed)."""
    if loss_variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {loss_variant!r}, expected one of {LOSS_VARIANTS}")
    if supervision not in SUPERVISION_MODES:
        raise ValueError(f"unknown supervision {supervision!r}, expected one of {SUPERVISION_MODES}")
    n_train = len(data.train_images)
    if n_train == 0:
        raise ValueError(f"category {data.name!r} has no training images")

    rng = Rng(seed)
    cat = data.category_id
    held_in = select_semi_proxies(data, rng) if supervision == "semi" else ()
    params = init_params(rng, arch, stream_key=(cat,))
    opt = OptState.for_params(params)
    out = aug_cfg.out_size
    log: list[dict] = []

    for epoch in range(epochs):
        losses = []
        for it in range(ITERATIONS_PER_EPOCH):
            order = rng.stream("shuffle", cat, epoch, it).permutation(n_train)
            for start in range(0, n_train, batch_size):
                chunk = order[start : start + batch_size]
                images = np.empty((len(chunk), 3, out, out))
                masks = np.empty((len(chunk), 1, out, out))
                for bi, idx in enumerate(chunk):
                    idx = int(idx)
                    img = data.train_images[idx]
                    mask = np.zeros((1,) + img.shape[1:])
                    if rng.stream("replace", cat, epoch, it, idx).random() < REPLACE_PROB:
                        if supervision == "unsup":
                            img, mask = confetti_apply(img, rng.stream("confetti", cat, epoch, it, idx))
                        else:
                            j = held_in[int(rng.stream("semi-draw", cat, epoch, it, idx).integers(0, len(held_in)))]
                            img, mask = data.test_images[j], data.test_masks[j]
                    img, mask = augment(img, mask, rng.stream("augment", cat, epoch, it, idx), aug_cfg)
                    images[bi] = minmax(lcn(img))
                    masks[bi] = mask
                loss, params, opt = _train_step(params, opt, images, masks, loss_variant)
                losses.append(loss)
        log.append({"epoch": epoch, "lr": opt.lr, "mean_loss": float(np.mean(losses))})
        opt = opt.next_epoch()
    return TrainResult(params=params, log=log, held_in=held_in)


def _train_step(params, opt, images, masks, variant):
    pre, acts = forward_with_acts(params, images)
    h_low = pseudo_huber(pre)
    amap = gaussian_upsample(h_low, UPSAMPLE_FACTOR)
    loss, d_amap = batch_loss(variant, amap, masks)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite training loss ({loss}) for variant {variant!r}")
    d_hlow = gaussian_upsample_adjoint(d_amap, pre.shape[2], pre.shape[3], UPSAMPLE_FACTOR)
    d_pre = d_hlow * pseudo_huber_grad(pre)
    grads = backward_from_prescores(params, acts, d_pre)
    params, opt = sgd_nesterov_step(params, grads, opt)
    return loss, params, opt


def evaluate_category(
    params: FcnParams,
    data: CategoryData,
    exclude: tuple[int, ...] = (),
    out_size: int = 64,
) -> tuple[float, float, np.ndarray]:
    """Pixel AUROC/AP over the category's test set; returns (auroc, ap, score_maps)."""
    keep = [i for i in range(len(data.test_images)) if i not in set(exclude)]
    if not keep:
        raise ValueError("no test images left to evaluate")
    images = np.stack([preprocess_test(data.test_images[i], out_size) for i in keep])
    masks = data.test_masks[keep]
    maps = score_map(params, images, UPSAMPLE_FACTOR)
    auroc, ap = category_scores(maps, masks)
    return auroc, ap, maps
