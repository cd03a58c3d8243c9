"""Independent reference implementations used only by the tests.

Nothing here imports the package under test, so agreement between the two
routes is evidence, not tautology.
"""

import numpy as np


def jacobi_svd(a, sweeps=60, tol=1e-15):
    """One-sided Jacobi SVD: orthogonalise the columns of ``a`` by plane rotations.

    Returns ``u, s, vt`` with singular values in descending order. Slow and
    simple; fine for the small matrices of the tests.
    """
    a = np.array(a, dtype=np.float64)
    transpose = a.shape[0] < a.shape[1]
    if transpose:
        a = a.T
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    for _ in range(sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = work[:, p] @ work[:, p]
                beta = work[:, q] @ work[:, q]
                gamma = work[:, p] @ work[:, q]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp, wq = work[:, p].copy(), work[:, q].copy()
                work[:, p], work[:, q] = c * wp - s * wq, s * wp + c * wq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    v = v[:, order]
    u = np.zeros((m, n))
    for j in range(n):
        if sigma[j] > 0:
            u[:, j] = work[:, order[j]] / sigma[j]
    if transpose:
        return v, sigma, u.T
    return u, sigma, v.T


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(analytic, numeric):
    """Largest coordinate error relative to the coordinate's own size, floored at
    1e-3 of the gradient's largest entry so that near-zero coordinates are judged
    on the gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-3 * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


def spearman(a, b):
    """Spearman rank correlation via average ranks and the Pearson formula."""
    def ranks(x):
        x = np.asarray(x, dtype=np.float64)
        order = np.argsort(x, kind="mergesort")
        r = np.empty(len(x))
        i = 0
        while i < len(x):
            j = i
            while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0
            i = j + 1
        return r
    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))


def top_k_scan(z, k):
    """Critical indices by repeated linear scans: largest |z_i - 1|, lower index on ties."""
    dev = [abs(float(v) - 1.0) for v in z]
    chosen = []
    for _ in range(k):
        best = None
        for i, d in enumerate(dev):
            if i in chosen:
                continue
            if best is None or d > dev[best]:
                best = i
        chosen.append(best)
    return tuple(sorted(chosen))


def gamma_double_sum(u, vt, g, h):
    """gamma_i = sum_j (u_i . g_j)(h_j . v_i) for a gradient sum_j g_j h_j^T."""
    r = u.shape[1]
    out = np.zeros(r)
    for i in range(r):
        for j in range(g.shape[1]):
            out[i] += float(u[:, i] @ g[:, j]) * float(h[:, j] @ vt[i])
    return out
