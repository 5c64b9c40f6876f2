import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_conv(x, w, b, stride=1, padding=0):
    """Loop-based cross-correlation used as an independent oracle."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[oi]
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[ni, ci, i * stride + di, j * stride + dj] * w[oi, ci, di, dj]
                    out[ni, oi, i, j] = acc
    return out


def overfit(steps=200, seed=7, n=16, stop_at_zero=False):
    """Full-batch Adam on a fixed synthetic set; returns (params, losses, accs, imgs, labels).

    Images are quantized to 8 bits so they survive a PPM round trip unchanged.
    """
    from rescaps.config import RunConfig
    from rescaps.model import init_params
    from rescaps.optim import OptimizerState
    from rescaps.synthetic import make_set
    from rescaps.train import train_step
    from rescaps.verify import DESK_ARCH

    imgs, labels = make_set(n, 32, seed=seed)
    imgs = np.rint(imgs * 255) / 255
    cfg = RunConfig(seed=seed, model=DESK_ARCH)
    params = init_params(DESK_ARCH, seed)
    opt = OptimizerState("adam", 1e-3)
    losses, accs = [], []
    for _ in range(steps):
        loss, pred = train_step(params, opt, imgs, labels, cfg)
        losses.append(loss)
        accs.append(float(np.mean(pred == labels)))
        if stop_at_zero and loss == 0.0:
            break
    return params, losses, accs, imgs, labels


@pytest.fixture(scope="session")
def overfit_run():
    return overfit()


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, printed after the run."""
    def record(number, name, ok, detail):
        _ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
