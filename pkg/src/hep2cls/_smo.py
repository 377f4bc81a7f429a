"""Compiled inner loop of the SMO solver."""

import numpy as np
from numba import njit

TAU = 1e-12


@njit(cache=True, nogil=True)
def smo_solve(K, y, C, tol, max_iter):
    """Solve the soft-margin SVM dual for a precomputed kernel matrix.

    Minimizes 0.5 a'Qa - e'a subject to y'a = 0, 0 <= a <= C with
    Q_ij = y_i y_j K_ij.  Working pairs are chosen by the maximal violating
    pair rule; iteration stops once the violation m(a) - M(a) <= tol.

    Returns (alpha, gradient, rho, n_iter, converged).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        # maximal violating pair
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            yg = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if yg > gmax:
                    gmax = yg
                    i = t
            if (y[t] < 0 and alpha[t] < C) or (y[t] > 0 and alpha[t] > 0):
                if yg < gmin:
                    gmin = yg
                    j = t
        if i < 0 or j < 0 or gmax - gmin <= tol:
            converged = True
            break
        it += 1

        Kii = K[i, i]
        Kjj = K[j, j]
        Kij = K[i, j]
        old_ai = alpha[i]
        old_aj = alpha[j]
        if y[i] != y[j]:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s

        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        yi = y[i]
        yj = y[j]
        for t in range(n):
            G[t] += y[t] * (yi * K[t, i] * dai + yj * K[t, j] * daj)

    # offset: average over free vectors, else midpoint of the feasible range
    ub = np.inf
    lb = -np.inf
    s = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            s += yg
    if nfree > 0:
        rho = s / nfree
    else:
        rho = (ub + lb) / 2
    return alpha, G, rho, it, converged
