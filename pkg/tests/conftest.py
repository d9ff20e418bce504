"""Shared test helpers: finite-difference gradient oracles."""

import numpy as np


def central_diff(fn, x, h=1e-6):
    """Central finite-difference gradient of scalar fn at 1-D point x."""
    g = np.zeros_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def param_central_diff(loss_fn, params, h=1e-6):
    """Finite-difference gradients over every entry of an MlpParams.

    loss_fn takes no arguments and reads params; entries are perturbed in
    place and restored. Returns (weight_grads, bias_grads) lists.
    """
    wgrads, bgrads = [], []
    for arrs, store in ((params.weights, wgrads), (params.biases, bgrads)):
        for arr in arrs:
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                lp = loss_fn()
                flat[k] = orig - h
                lm = loss_fn()
                flat[k] = orig
                gflat[k] = (lp - lm) / (2.0 * h)
            store.append(g)
    return wgrads, bgrads


def max_rel_err(analytic, numeric, floor=1e-8):
    """Worst relative error; near-zero pairs are compared absolutely."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_rel_err(analytic, numeric):
    """Relative error with a floor tied to the gradient's own scale.

    Central differences carry roundoff noise around eps/h in absolute terms,
    so entries far below the array's dominant magnitude cannot be certified
    at a pure relative tolerance; they are measured against 1e-3 of the
    largest entry instead.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    return max_rel_err(a, n, floor=max(1e-8, 1e-3 * scale))
