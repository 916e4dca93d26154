"""Independent reference implementations used to check the library."""

import numpy as np


def nlcmv_pgd(a, g, restarts=1000, iters=400, rng=None):
    """Projected-gradient minimum of h^H a h over {h^H g = 1, ||h||^2 <= M / ||g||^2}.

    The feasible set is a disk in the distortionless plane, centered at
    g / ||g||^2 with radius sqrt((M - 1) / ||g||^2), so projecting onto the
    plane and then shrinking radially toward the center is exact. Restarts run
    as one batch; returns the best objective and its minimizer.
    """
    rng = rng or np.random.default_rng(0)
    m = g.size
    gg = float(np.real(np.vdot(g, g)))
    center = g / gg
    radius = np.sqrt((m - 1) / gg)

    def project(h):
        h = h - np.outer(h @ np.conj(g) - 1.0, g) / gg
        v = h - center
        norm = np.linalg.norm(v, axis=1, keepdims=True)
        shrink = np.minimum(1.0, radius / np.maximum(norm, 1e-300))
        return center + v * shrink

    h = project(rng.standard_normal((restarts, m)) + 1j * rng.standard_normal((restarts, m)))
    step = 1.0 / (2.0 * np.linalg.eigvalsh(a).max())
    y, t = h.copy(), 1.0
    for _ in range(iters):
        h_next = project(y - step * 2.0 * (y @ a.T))
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = h_next + ((t - 1) / t_next) * (h_next - h)
        h, t = h_next, t_next
    obj = np.real(np.einsum("ri,ij,rj->r", np.conj(h), a, h))
    best = int(np.argmin(obj))
    return float(obj[best]), h[best]


def direct_convolve(x, h):
    """Time-domain full convolution by explicit shifted accumulation."""
    out = np.zeros(x.size + h.size - 1)
    for k in np.flatnonzero(h):
        out[k:k + x.size] += h[k] * x
    return out


def first_order_images(src, dims):
    """Direct path plus the six single-wall mirror images, enumerated by hand."""
    x, y, z = src
    lx, ly, lz = dims
    return np.array([
        [x, y, z],
        [-x, y, z], [2 * lx - x, y, z],
        [x, -y, z], [x, 2 * ly - y, z],
        [x, y, -z], [x, y, 2 * lz - z],
    ])


def whitened_diffuse_snapshots(cov, n, rng):
    """Complex snapshots (bins, M, n) whose sample covariance equals ``cov`` to rounding.

    White complex noise is orthonormalized (so its sample covariance is exactly
    the identity) and colored with the Hermitian square root of ``cov``.
    """
    f, m, _ = cov.shape
    out = np.empty((f, m, n), dtype=complex)
    for k in range(f):
        z = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        q, _ = np.linalg.qr(z)
        w, v = np.linalg.eigh(cov[k])
        root = (v * np.sqrt(np.clip(w, 0, None))) @ np.conj(v.T)
        out[k] = root @ (q.T * np.sqrt(n))
    return out
