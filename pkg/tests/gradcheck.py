"""Central finite-difference oracle for gradient tests."""
import numpy as np

STEP = 1e-5
REL_TOL = 1e-3


def numerical_grad(f, param, step=STEP, indices=None):
    """d f() / d param.data by central differences.

    ``indices`` restricts the check to a subset of flat positions; the
    result is NaN elsewhere.
    """
    flat = param.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(param.shape)


def relative_error(analytic, numeric):
    """Norm-wise relative error over the checked entries."""
    mask = ~np.isnan(numeric)
    a, n = np.asarray(analytic)[mask], numeric[mask]
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return np.linalg.norm(a - n) / denom


def check_gradients(loss_fn, params, rng=None, max_entries=None, tol=REL_TOL):
    """Backprop ``loss_fn()`` and compare every param with finite differences.

    ``loss_fn`` must rebuild the graph on each call and return a scalar
    Tensor. With ``max_entries`` only that many random entries per
    parameter are probed. Returns ``{name: relative error}``.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(str(i), p) for i, p in enumerate(params)]
    for _, p in named:
        p.grad = None
    loss_fn().backward()
    errors = {}
    for name, p in named:
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(p.size, size=max_entries, replace=False)
        numeric = numerical_grad(lambda: float(loss_fn().data), p, indices=idx)
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        errors[name] = relative_error(analytic, numeric)
    return errors
