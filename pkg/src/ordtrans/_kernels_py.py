"""Pure-NumPy likelihood kernels; the fallback for the compiled ``_kernels``.

Both backends share one contract:

``loglik_grad(beta, delta, X1, Y1, rows, cols, W, alpha, with_grad, check_all)``
    returns ``(ll, bad, gbeta, gdelta)``.  ``ll`` is the unpenalized data
    log-likelihood, ``bad`` the index of the first observation whose completed
    last probability is <= 0 (``-1`` if none; ``ll`` is then ``-inf``), and the
    gradients have the shapes of ``beta``/``delta`` (``None`` unless requested
    and ``bad == -1``).

By default only observations recorded in the last column are checked, since
only there does the remainder enter the likelihood; ``check_all`` extends the
check to every observation.

``probabilities(beta, delta, X1, Y1, rows, W, alpha)``
    returns the ``N x J`` matrix of completed probability vectors.

``X1``/``Y1`` carry a leading column of ones; ``rows``/``cols`` are 0-based.
"""

import numpy as np

CLAMP = 30.0


def _effects(beta, delta, X1, Y1, rows):
    a = np.einsum("kl,kl->k", X1, beta[rows])
    b = Y1 @ delta.T
    a_in = np.abs(a) < CLAMP
    b_in = np.abs(b) < CLAMP
    return np.exp(np.clip(a, -CLAMP, CLAMP)), np.exp(np.clip(b, -CLAMP, CLAMP)), a_in, b_in


def probabilities(beta, delta, X1, Y1, rows, W, alpha):
    lam, gam, _, _ = _effects(beta, delta, X1, Y1, rows)
    n_cols = W.shape[1]
    P = np.empty((len(rows), n_cols))
    P[:, :-1] = lam[:, None] / (alpha + lam[:, None] + W[rows, : n_cols - 1] * gam)
    P[:, -1] = 1.0 - P[:, :-1].sum(axis=1)
    return P


def loglik_grad(beta, delta, X1, Y1, rows, cols, W, alpha, with_grad=True, check_all=False):
    n = len(rows)
    last = W.shape[1] - 1
    lam, gam, a_in, b_in = _effects(beta, delta, X1, Y1, rows)
    Kg = W[rows, :last] * gam
    D = alpha + lam[:, None] + Kg
    P = lam[:, None] / D
    p_last = 1.0 - P.sum(axis=1)
    at_last = cols == last
    bad = np.flatnonzero((at_last | check_all) & (p_last <= 0.0))
    if bad.size:
        return -np.inf, int(bad[0]), None, None

    idx = np.arange(n)
    inner = ~at_last
    ll = np.sum(np.log(lam[inner]) - np.log(D[idx[inner], cols[inner]]))
    ll += np.sum(np.log(p_last[at_last]))
    if not with_grad:
        return float(ll), -1, None, None

    Q = Kg / D
    dA = np.empty(n)
    dB = np.zeros((n, last))
    ci = cols[inner]
    dA[inner] = 1.0 - P[idx[inner], ci]
    dB[idx[inner], ci] = -Q[idx[inner], ci]
    r = 1.0 / p_last[at_last]
    Pl = P[at_last]
    dA[at_last] = -np.sum(Pl * (1.0 - Pl), axis=1) * r
    dB[at_last] = Pl * Q[at_last] * r[:, None]
    dA *= a_in
    dB *= b_in

    gbeta = np.zeros_like(beta)
    # fixed reduction order per row level
    for i in range(beta.shape[0]):
        sel = rows == i
        if sel.any():
            gbeta[i] = dA[sel] @ X1[sel]
    gdelta = dB.T @ Y1
    return float(ll), -1, gbeta, gdelta
