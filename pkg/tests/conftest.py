import numpy as np
import pytest

from gsavatar import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def fd_gradcheck(fn, inputs, h=1e-3, tol=1e-4, seed=7, fn64=None):
    """Compare reverse-mode grads against central finite differences (h=1e-3).

    fn maps Tensors to a Tensor of any shape; the checked scalar is a fixed
    random weighting of its outputs. The finite-difference side reduces the
    float32 op outputs in float64 so the comparison measures the op's
    gradient, not summation round-off. Ops whose gradients are too small for
    f32 forward noise at h=1e-3 pass fn64, an independent float64 forward
    (ndarray in, ndarray out) that the differencing runs through instead.
    Error metric per input is ||analytic - fd||_2 / max(||analytic||_2, ||fd||_2).
    """
    probe_rng = np.random.default_rng(seed)
    out0 = fn(*[T.Tensor(x) for x in inputs])
    w = probe_rng.standard_normal(out0.shape).astype(np.float32)

    tensors = [T.Tensor(x, requires_grad=True) for x in inputs]
    loss = T.sum_(T.mul(fn(*tensors), T.Tensor(w)))
    analytic = [g.data.copy() for g in T.grad(loss, tensors)]

    if fn64 is not None:
        def eval64(args):
            return float((fn64(*[a.astype(np.float64) for a in args]) * w).sum())
    else:
        def eval64(args):
            return float((fn(*[T.Tensor(a) for a in args]).data.astype(np.float64) * w).sum())

    worst = 0.0
    for i, x in enumerate(inputs):
        fd = np.zeros(x.shape, dtype=np.float64)
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = eval64(inputs)
            flat[j] = orig - h
            fm = eval64(inputs)
            flat[j] = orig
            fd.reshape(-1)[j] = (fp - fm) / (2 * h)
        scale = max(np.linalg.norm(analytic[i]), np.linalg.norm(fd), 1e-9)
        err = np.linalg.norm(analytic[i].astype(np.float64) - fd) / scale
        worst = max(worst, err)
        assert err <= tol, f"input {i}: grad mismatch {err:.3e} > {tol}"
    return worst
