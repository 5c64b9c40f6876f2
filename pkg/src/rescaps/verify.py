"""Self-checks run by ``rescaps verify``: gradients, routing, squash, metric oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model as M
from . import tensor as T
from .gradcheck import finite_diff_check
from .metrics import auc, pairwise_auc, roc_curve

GRAD_TOL = 1e-4
GRAD_STEP = 1e-5

DESK_ARCH = M.ArchitectureConfig(
    input_height=32, input_width=32, conv_channels=(8, 16, 16, 16), conv_strides=(1, 2, 2, 2),
    res2net_scale=4, primary_channels=8, primary_dim=8, intermediate_caps=8,
    intermediate_dim=12, class_caps=2, class_dim=16, routing_iterations=3,
)


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} measured={self.measured:.3e}  tol={self.tolerance:.1e}"


def _grad(name: str, f: Callable[[], T.Tensor], params, per_tensor=None) -> CheckResult:
    rep = finite_diff_check(f, params, h=GRAD_STEP, max_per_tensor=per_tensor)
    return CheckResult(f"gradient/{name}", rep.max_rel_error, GRAD_TOL, rep.passed(GRAD_TOL))


def _rand(rng, *shape, scale=1.0, grad=True) -> T.Tensor:
    return T.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=grad)


def randomize_biases(params: dict[str, T.Tensor], rng: np.random.Generator,
                     scale: float = 0.1) -> None:
    """Nonzero biases keep ReLU pre-activations off the kink where differences are invalid."""
    for name, p in params.items():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(-scale, scale, size=p.shape)


def gradient_checks(seed: int = 0, full_model: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    x = _rand(rng, 2, 5, 7)
    w = rng.normal(size=(2, 5, 7))
    out.append(_grad("squash", lambda: T.sum(T.mul(T.squash(x), w)), [x]))

    for r in (1, 2, 3):
        caps = _rand(rng, 2, 6, 4, scale=0.5)
        wr = _rand(rng, 6, 2, 5, 4, scale=0.5)
        probe = rng.normal(size=(2, 2, 5))
        out.append(_grad(
            f"routing(r={r})",
            lambda caps=caps, wr=wr, r=r, probe=probe:
                T.sum(T.mul(M.dynamic_routing(caps, wr, r)[0], probe)),
            [caps, wr],
        ))

    sc = T.Tensor(rng.uniform(0.05, 0.95, size=(4, 2)), requires_grad=True)
    tg = M.one_hot([0, 1, 1, 0])
    out.append(_grad("margin_loss", lambda: M.margin_loss(sc, tg), [sc]))

    cfg = M.Res2NetConfig(8, 4)
    names = dict(M._res2net_shapes("blk", cfg))
    params = {n: _rand(rng, *s, scale=0.3) for n, s in names.items()}
    xb = _rand(rng, 1, 8, 5, 5)
    pb = rng.normal(size=(1, 8, 5, 5))
    out.append(_grad(
        "res2net_block",
        lambda: T.sum(T.mul(M.res2net_block_forward(xb, cfg, params, "blk"), pb)),
        [xb] + list(params.values()), per_tensor=12,
    ))

    xc = _rand(rng, 2, 3, 6, 6)
    wc = _rand(rng, 4, 3, 3, 3)
    bc = _rand(rng, 4)
    spec = T.ConvSpec(3, 4, 3, stride=2, padding=1)
    pc = rng.normal(size=(2, 4, 3, 3))
    out.append(_grad("conv2d", lambda: T.sum(T.mul(T.conv2d(xc, wc, bc, spec), pc)),
                     [xc, wc, bc]))

    xl, wl, bl = _rand(rng, 3, 4), _rand(rng, 4, 5), _rand(rng, 5)
    pl = rng.normal(size=(3, 5))
    out.append(_grad("relu+linear",
                     lambda: T.sum(T.mul(T.relu(T.linear(xl, wl, bl)), pl)), [xl, wl, bl]))

    xs = _rand(rng, 3, 4)
    ps = rng.normal(size=(3, 4))
    out.append(_grad("softmax", lambda: T.sum(T.mul(T.softmax(xs, axis=1), ps)), [xs]))

    if full_model:
        mp = M.init_params(DESK_ARCH, seed)
        randomize_biases(mp, rng)
        img = T.Tensor(rng.uniform(0, 1, size=(1, 3, 32, 32)))
        target = M.one_hot([1])
        out.append(_grad(
            "full_model(32x32)",
            lambda: M.margin_loss(M.forward(img, DESK_ARCH, mp).scores, target),
            list(mp.values()), per_tensor=4,
        ))
    return out


def routing_checks(instances: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    simplex_err, neg, max_norm, uniform_err = 0.0, 0.0, 0.0, 0.0
    for _ in range(instances):
        n_in = int(rng.integers(1, 12))
        k = int(rng.integers(1, 5))
        d = int(rng.integers(1, 6))
        r = int(rng.integers(1, 5))
        u_hat = T.Tensor(rng.normal(0.0, rng.uniform(0.1, 3.0), size=(2, n_in, k, d)))
        v, state = M.route(u_hat, r)
        for c in state.coupling_history:
            simplex_err = max(simplex_err, float(np.abs(c.sum(axis=2) - 1.0).max()))
            neg = max(neg, float(-c.min()))
        uniform_err = max(uniform_err, float(np.abs(state.coupling_history[0] - 1.0 / k).max()))
        max_norm = max(max_norm, float(np.linalg.norm(v.data, axis=-1).max()))
    return [
        CheckResult("routing/coupling_row_sum", simplex_err, 1e-12, simplex_err < 1e-12),
        CheckResult("routing/coupling_nonneg", max(neg, 0.0), 0.0, neg <= 0.0),
        CheckResult("routing/first_pass_uniform", uniform_err, 1e-15, uniform_err <= 1e-15),
        CheckResult("routing/output_norm_below_1", max_norm, 1.0, max_norm < 1.0),
    ]


def squash_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(2000, 8)) * rng.lognormal(0.0, 2.0, size=(2000, 1))
    n = np.linalg.norm(T.squash(T.Tensor(s)).data, axis=-1)
    zero = float(np.abs(T.squash(T.Tensor(np.zeros((1, 4)))).data).max())
    return [
        CheckResult("squash/norm_below_1", float(n.max()), 1.0, bool(n.max() < 1.0)),
        CheckResult("squash/zero_maps_to_zero", zero, 0.0, zero == 0.0),
    ]


def metric_checks(sets: int = 500, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(sets):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        scores = rng.integers(0, max(2, n // 3), size=n) / 10.0  # ties injected
        worst = max(worst, abs(auc(roc_curve(scores, y)) - pairwise_auc(scores, y)))
    return [CheckResult("metrics/auc_vs_pair_statistic", worst, 1e-12, worst < 1e-12)]


def run_all(seed: int = 0, full_model: bool = True) -> list[CheckResult]:
    return (gradient_checks(seed, full_model) + routing_checks(seed=seed)
            + squash_checks(seed) + metric_checks(seed=seed))
