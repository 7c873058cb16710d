"""Pure numpy implementation of the batched closure kernel.

Used when the compiled extension is unavailable or when
``RADLAB_PURE_PYTHON=1`` is set. Vectorised over the batch of alphas.
"""

import numpy as np


def _gram_schmidt(x, ww, n):
    """Monic orthogonal polynomials by modified Gram-Schmidt on node values.

    ``ww`` holds quadrature weight times the weight function, shape (M, Q).
    Two sweeps are made per degree to keep orthogonality at round-off.
    """
    m, q = ww.shape
    vals = np.empty((m, n, q))
    coef = np.zeros((m, n, n))
    nrm = np.empty((m, n))
    vals[:, 0] = 1.0
    coef[:, 0, 0] = 1.0
    nrm[:, 0] = ww.sum(axis=1)
    for j in range(1, n):
        v = x * vals[:, j - 1]
        c = np.zeros((m, n))
        c[:, 1:] = coef[:, j - 1, :-1]
        for _ in range(2):
            for k in range(j):
                h = (ww * v * vals[:, k]).sum(axis=1) / nrm[:, k]
                v = v - h[:, None] * vals[:, k]
                c = c - h[:, None] * coef[:, k]
        c[:, j] = 1.0
        vals[:, j] = v
        coef[:, j] = c
        nrm[:, j] = (ww * v * v).sum(axis=1)
    return vals, coef, nrm


def closure_batch(alphas, N, nodes, weights):
    """Closure coefficient tables for every alpha in ``alphas``.

    Returns a dict of arrays with a leading batch axis:
    kappa, kappa_t, dkappa of shape (M, N+2, N+2) indexed [j, k] for
    int mu^j phi_k w; R (M, N+1); Mt and dproj (M, N+1, N+1); coeffs and
    coeffs_t (M, N+2, N+2) with phi_j = sum_m coeffs[j, m] mu^m.
    """
    a = np.ascontiguousarray(alphas, dtype=float).reshape(-1)
    x = np.asarray(nodes, dtype=float)[None, :]
    wq = np.asarray(weights, dtype=float)[None, :]
    n = N + 2
    base = 1.0 + a[:, None] * x
    om4 = base ** -4
    om5 = om4 / base
    dom4 = -4.0 * x * om5

    phi, coef, nrm = _gram_schmidt(x, wq * om4, n)
    pht, coeft, nrmt = _gram_schmidt(x, wq * om5, n)

    # d phi_j / d alpha = -sum_{k<j} <phi_j phi_k, d omega> / kappa_kk phi_k
    dphi = np.zeros_like(phi)
    dcoef = np.zeros_like(coef)
    wd = wq * dom4
    for j in range(1, n):
        for k in range(j):
            h = (wd * phi[:, j] * phi[:, k]).sum(axis=1) / nrm[:, k]
            dphi[:, j] -= h[:, None] * phi[:, k]
            dcoef[:, j] -= h[:, None] * coef[:, k]

    powers = x[0][None, :] ** np.arange(n)[:, None]
    kappa = np.einsum("jq,mkq->mjk", powers, (wq * om4)[:, None, :] * phi)
    kappa_t = np.einsum("jq,mkq->mjk", powers, (wq * om5)[:, None, :] * pht)
    dbig = dphi * om4[:, None, :] + phi * dom4[:, None, :]
    dkappa = np.einsum("jq,mkq->mjk", powers, wq[:, None, :] * dbig)

    nn = N + 1
    R = (wq[:, None, :] * pht[:, :nn]).sum(axis=2)
    wt = (wq * om5)[:, None, :] * pht[:, :nn]
    Mt = np.einsum("miq,mjq->mij", wt * x[:, None, :], pht[:, :nn])
    Mt /= nrmt[:, :nn, None]
    dproj = np.einsum("mkq,miq->mki", wq[:, None, :] * pht[:, :nn], dbig[:, :nn])
    dproj /= nrmt[:, :nn, None]
    return {
        "kappa": kappa,
        "kappa_t": kappa_t,
        "dkappa": dkappa,
        "R": R,
        "Mt": Mt,
        "dproj": dproj,
        "coeffs": coef,
        "coeffs_t": coeft,
        "dcoeffs": dcoef,
    }
