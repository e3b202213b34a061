"""Finite-difference gradient checking.

The numerical side only ever calls forward passes, so it stays independent of
every hand-written backward pass it is used to verify.
"""

import numpy as np


def numerical_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f w.r.t. array x (x is restored)."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Max absolute deviation scaled by the numeric gradient magnitude (floor 1)."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(1.0, np.max(np.abs(numeric)) if numeric.size else 0.0)
    return diff / scale


def check_model_gradients(model, x, h=1e-5, training=True, rng_state=None,
                          restore_rng=None):
    """Compare backward-pass gradients of a model-like object against
    central finite differences.

    ``model`` must expose forward(x, training), backward(grad), zero_grads()
    and named_parameters()/named_grads(). The scalar objective is a fixed
    random projection of the output. When the forward pass draws randomness
    (dropout), pass ``rng_state``/``restore_rng`` to pin it between calls.

    Returns the worst relative error over the input and all parameters.
    """
    proj_rng = np.random.default_rng(0)

    def run_forward():
        if restore_rng is not None:
            restore_rng(rng_state)
        return model.forward(x, training=training)

    out = run_forward()
    proj = proj_rng.standard_normal(out.shape)

    def objective():
        return float(np.sum(run_forward() * proj))

    model.zero_grads()
    run_forward()
    dx = model.backward(proj.copy())

    worst = relative_error(dx, numerical_gradient(objective, x, h))
    analytic = dict(model.named_grads())
    for name, param in model.named_parameters():
        num = numerical_gradient(objective, param, h)
        worst = max(worst, relative_error(analytic[name], num))
    return worst
