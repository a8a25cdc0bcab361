"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from varfc import tensor as T


def numeric_grad(f, t, idx, h=1e-4):
    """d f() / d t.data[idx] by central differences (f evaluated without a graph)."""
    old = t.data[idx]
    t.data[idx] = old + h
    with T.no_grad():
        up = float(f().data)
    t.data[idx] = old - h
    with T.no_grad():
        down = float(f().data)
    t.data[idx] = old
    return (up - down) / (2 * h)


def rel_error(a, n):
    a, n = np.asarray(a, np.float64), np.asarray(n, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check(f, tensors, samples=30, h=1e-4, seed=0):
    """Max relative error between backprop and finite differences over ``tensors``.

    Up to ``samples`` coordinates per tensor are probed.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "tensor received no gradient"
        flat = rng.choice(t.data.size, size=min(samples, t.data.size), replace=False)
        idxs = [np.unravel_index(i, t.shape) for i in flat]
        analytic = [t.grad[i] for i in idxs]
        numeric = [numeric_grad(f, t, i, h) for i in idxs]
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def leaf(rng, *shape, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def projection(rng, shape):
    """Random weights turning an output into a scalar without trivial cancellations."""
    return T.Tensor(rng.standard_normal(shape))


def check_joint(f, tensors, samples=24, h=1e-4, seed=0):
    """Like :func:`check` but probes ``samples`` coordinates spread over all tensors at once.

    Used for whole models, where per-tensor probing would need thousands of forwards.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    f().backward()
    sizes = np.array([t.data.size for t in tensors], dtype=np.float64)
    picks = rng.choice(len(tensors), size=samples, p=np.sqrt(sizes) / np.sqrt(sizes).sum())
    analytic, numeric = [], []
    for j in picks:
        t = tensors[j]
        idx = np.unravel_index(int(rng.integers(t.data.size)), t.shape)
        analytic.append(0.0 if t.grad is None else t.grad[idx])
        numeric.append(numeric_grad(f, t, idx, h))
    return rel_error(analytic, numeric)
