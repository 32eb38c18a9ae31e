"""Shared test utilities: finite-difference oracles independent of the tape."""
import numpy as np

FD_STEP = 1e-5


def fd_grad(f, x, step=FD_STEP):
    """Central finite differences of scalar-valued f() w.r.t. array x.

    f reads x by reference, so perturbations happen in place and are
    restored afterwards.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def rel_err(g_ad, g_fd):
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if g_ad.size else 0.0
