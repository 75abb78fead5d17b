"""Central finite-difference verification of every analytic gradient.

Each check draws a random small instance, reduces the operation to a scalar
through a fixed random linear functional, and compares the analytic gradient
against central differences (default step 1e-5 in float64).  Instances that
land within 1e-4 of a ReLU or max-pool kink are redrawn, since finite
differences straddle the non-differentiability there.

``run_all`` powers the ``loss-check`` CLI command: it runs every check with
at least 50 random cases per operation and reports the worst relative error
per check against its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heatmap import gaussian_upsample, gaussian_upsample_adjoint
from .losses import (
    loss_fcdd_baseline,
    loss_proposed,
    pseudo_huber,
    pseudo_huber_grad,
    push,
    push_grad,
)
from .model import FcnArch, backward_from_prescores, forward_with_acts, init_params
from .ops import ConvSpec, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward
from .rng import Rng

__all__ = ["CheckResult", "fd_grad", "rel_error", "run_all"]

FD_STEP = 1e-5
KINK_MARGIN = 1e-4


@dataclass
class CheckResult:
    name: str
    cases: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def fd_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = f(x)
        xf[i] = orig - step
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def _conv_case(g: np.random.Generator, k: int) -> float:
    cin, cout = int(g.integers(1, 4)), int(g.integers(1, 4))
    h = int(g.integers(max(3, k), 7))
    w = int(g.integers(max(3, k), 7))
    pad = int(g.integers(0, (k + 1) // 2 + 1))
    spec = ConvSpec(cin, cout, k, padding=pad)
    x = g.normal(size=(cin, h, w))
    wt = g.normal(size=(cout, cin, k, k))
    b = g.normal(size=cout)
    probe = g.normal(size=conv2d(x, wt, b, spec).shape)

    gx, gw, gb = conv2d_backward(probe, x, wt, spec)
    worst = rel_error(gx, fd_grad(lambda v: float((conv2d(v, wt, b, spec) * probe).sum()), x))
    worst = max(worst, rel_error(gw, fd_grad(lambda v: float((conv2d(x, v, b, spec) * probe).sum()), wt)))
    worst = max(worst, rel_error(gb, fd_grad(lambda v: float((conv2d(x, wt, v, spec) * probe).sum()), b)))
    return worst


def _relu_case(g: np.random.Generator) -> float:
    shape = (int(g.integers(1, 3)), int(g.integers(2, 6)), int(g.integers(2, 6)))
    x = g.normal(size=shape)
    x = np.where(np.abs(x) < 10 * KINK_MARGIN, np.sign(x) * 0.1 + x, x)  # push off the kink
    probe = g.normal(size=shape)
    analytic = relu_backward(probe, x)
    return rel_error(analytic, fd_grad(lambda v: float((relu(v) * probe).sum()), x))


def _pool_case(g: np.random.Generator) -> float:
    shape = (int(g.integers(1, 3)), 2 * int(g.integers(1, 4)), 2 * int(g.integers(1, 4)))
    while True:
        x = g.normal(size=shape)
        win = x.reshape(shape[0], shape[1] // 2, 2, shape[2] // 2, 2)
        win = win.transpose(0, 1, 3, 2, 4).reshape(shape[0], shape[1] // 2, shape[2] // 2, 4)
        sorted_win = np.sort(win, axis=-1)
        if np.min(sorted_win[..., -1] - sorted_win[..., -2]) > 10 * KINK_MARGIN:
            break
    probe = g.normal(size=maxpool2(x).shape)
    analytic = maxpool2_backward(probe, x)
    return rel_error(analytic, fd_grad(lambda v: float((maxpool2(v) * probe).sum()), x))


def _upsample_case(g: np.random.Generator) -> float:
    h, w = int(g.integers(2, 5)), int(g.integers(2, 5))
    f = int(g.integers(2, 5))
    low = g.uniform(0.1, 2.0, size=(h, w))
    probe = g.normal(size=(f * h, f * w))
    analytic = gaussian_upsample_adjoint(probe, h, w, f)
    worst = rel_error(analytic, fd_grad(lambda v: float((gaussian_upsample(v, f) * probe).sum()), low))
    # adjoint identity <U x, y> = <x, U^T y>
    lhs = float((gaussian_upsample(low, f) * probe).sum())
    rhs = float((low * analytic).sum())
    return max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-12))


def _scalar_losses_case(g: np.random.Generator) -> float:
    zs = g.uniform(-4.0, 4.0, size=8)
    worst = rel_error(pseudo_huber_grad(zs), fd_grad(lambda v: float(pseudo_huber(v).sum()), zs))
    ss = g.uniform(0.05, 5.0, size=8)
    return max(worst, rel_error(push_grad(ss), fd_grad(lambda v: float(push(v).sum()), ss)))


def _loss_map_case(g: np.random.Generator, variant: str) -> float:
    n, m = int(g.integers(1, 4)), int(g.integers(3, 9))
    a = g.uniform(0.05, 3.0, size=(n, m))
    y = (g.random(size=(n, m)) < 0.4).astype(np.float64)
    if variant == "baseline":
        loss_fn = loss_fcdd_baseline
    else:
        loss_fn = loss_proposed
    _, grad = loss_fn(a, y)
    return rel_error(grad, fd_grad(lambda v: loss_fn(v, y)[0], a))


def _end_to_end_case(g: np.random.Generator, variant: str) -> float:
    arch = FcnArch(channels=(3, 4, 5))
    rng = Rng(int(g.integers(0, 2**32)))
    params = init_params(rng, arch)
    x = rng.stream("gc-input").uniform(0.0, 1.0, size=(2, 3, 8, 8))
    y = (rng.stream("gc-mask").random(size=(2, 1, 8, 8)) < 0.3).astype(np.float64)
    y[:, 0, 0, 0] = 1.0  # both images carry at least one anomalous pixel

    def total_loss(tensors: dict[str, np.ndarray]) -> float:
        p = params.copy()
        p.tensors.update(tensors)
        pre, _ = forward_with_acts(p, x)
        amap = gaussian_upsample(pseudo_huber(pre), arch.downsample)
        if variant == "baseline":
            return loss_fcdd_baseline(amap, y)[0]
        return loss_proposed(amap, y)[0]

    pre, acts = forward_with_acts(params, x)
    margins = [np.min(np.abs(acts[k])) for k in ("a1", "a2", "a3")]
    if min(margins) < KINK_MARGIN:
        return _end_to_end_case(g, variant)  # redraw away from relu kinks

    amap = gaussian_upsample(pseudo_huber(pre), arch.downsample)
    if variant == "baseline":
        _, d_amap = loss_fcdd_baseline(amap, y)
    else:
        _, d_amap = loss_proposed(amap, y)
    d_pre = gaussian_upsample_adjoint(d_amap, pre.shape[2], pre.shape[3], arch.downsample)
    d_pre = d_pre * pseudo_huber_grad(pre)
    grads = backward_from_prescores(params, acts, d_pre)

    worst = 0.0
    for name in params.tensors:
        fd = fd_grad(lambda v, _n=name: total_loss({_n: v}), params.tensors[name])
        worst = max(worst, rel_error(grads[name], fd, floor=1e-5))
    return worst


def run_all(seed: int = 0, cases: int = 50, e2e_cases: int = 50) -> list[CheckResult]:
    """Run the whole gradient-check suite; every result must pass."""
    rng = Rng(seed)
    suite = [
        ("conv2d 3x3", lambda g: _conv_case(g, 3), cases, 1e-6),
        ("conv2d 1x1 head", lambda g: _conv_case(g, 1), cases, 1e-6),
        ("relu", _relu_case, cases, 1e-6),
        ("maxpool2", _pool_case, cases, 1e-6),
        ("gaussian upsample adjoint", _upsample_case, cases, 1e-6),
        ("pseudo-huber and push", _scalar_losses_case, cases, 1e-6),
        ("baseline loss dA", lambda g: _loss_map_case(g, "baseline"), cases, 1e-7),
        ("proposed loss dA", lambda g: _loss_map_case(g, "proposed"), cases, 1e-7),
        ("end-to-end baseline", lambda g: _end_to_end_case(g, "baseline"), e2e_cases, 1e-5),
        ("end-to-end proposed", lambda g: _end_to_end_case(g, "proposed"), e2e_cases, 1e-5),
    ]
    results = []
    for name, fn, n_cases, tol in suite:
        g = rng.stream("gradcheck", name)
        worst = max(fn(g) for _ in range(n_cases))
        results.append(CheckResult(name=name, cases=n_cases, max_rel_error=worst, tolerance=tol))
    return results
