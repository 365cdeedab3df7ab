"""Independent reference implementations used only by the tests.

None of these share code with the package: exact rational normal
equations, accelerated proximal gradient for the elastic net, projected
gradient on the split-variable SVR dual, and a power series for the
regularized incomplete beta function.
"""
from fractions import Fraction
import math

import numpy as np


def ols_rational(X, y):
    """Intercept and coefficients from the normal equations, in exact arithmetic."""
    X = [[Fraction(1)] + [Fraction(float(v)) for v in row] for row in np.atleast_2d(X)]
    y = [Fraction(float(v)) for v in y]
    p = len(X[0])
    A = [[sum(r[i] * r[j] for r in X) for j in range(p)] for i in range(p)]
    b = [sum(r[i] * t for r, t in zip(X, y)) for i in range(p)]
    # Gauss-Jordan with exact pivots
    M = [A[i] + [b[i]] for i in range(p)]
    for c in range(p):
        piv = next(r for r in range(c, p) if M[r][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [v * inv for v in M[c]]
        for r in range(p):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    sol = [float(M[i][p]) for i in range(p)]
    return sol[0], np.array(sol[1:])


def standardized(X, y):
    X = np.atleast_2d(np.asarray(X, float))
    mu, sd = X.mean(0), X.std(0, ddof=1)
    return (X - mu) / sd, np.asarray(y, float) - np.mean(y), mu, sd


def ridge_closed_form(X, y, l2):
    """Standardized-space coefficients (Z'Z/n + l2 I)^-1 Z'yc/n."""
    Z, yc, _, _ = standardized(X, y)
    n, d = Z.shape
    return np.linalg.solve(Z.T @ Z / n + l2 * np.eye(d), Z.T @ yc / n)


def enet_objective(Z, yc, beta, l1, l2):
    r = yc - Z @ beta
    return r @ r / (2 * len(yc)) + l1 * np.abs(beta).sum() + 0.5 * l2 * beta @ beta


def enet_fista(X, y, l1, l2, tol=1e-10, max_iter=500_000):
    """Elastic net in standardized space by accelerated proximal gradient."""
    Z, yc, _, _ = standardized(X, y)
    n, d = Z.shape
    L = np.linalg.eigvalsh(Z.T @ Z / n).max() + l2
    beta = np.zeros(d)
    w, t = beta.copy(), 1.0
    for _ in range(max_iter):
        grad = -Z.T @ (yc - Z @ w) / n + l2 * w
        v = w - grad / L
        new = np.sign(v) * np.maximum(np.abs(v) - l1 / L, 0.0)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        w = new + (t - 1) / t_next * (new - beta)
        done = np.max(np.abs(new - beta)) < tol
        beta, t = new, t_next
        if done:
            break
    return beta, enet_objective(Z, yc, beta, l1, l2)


def _project(v, n, C):
    """Euclidean projection onto {u in [0, C]^2n : sum(u[:n]) = sum(u[n:])}."""
    a = np.concatenate([np.ones(n), -np.ones(n)])

    def g(mu):
        return a @ np.clip(v - mu * a, 0.0, C)

    lo, hi = -np.abs(v).max() - C - 1, np.abs(v).max() + C + 1
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi) * a, 0.0, C)


def svr_dual_pg(K, y, C, eps, iters=200_000, tol=1e-13):
    """Minimise the SVR dual over (alpha, alpha*) by accelerated projected gradient.

    Returns (beta = alpha - alpha*, objective).
    """
    n = len(y)
    y = np.asarray(y, float)
    L = 2 * np.linalg.eigvalsh(K).max() + 1e-12
    u = np.zeros(2 * n)
    w, t = u.copy(), 1.0

    def grad(z):
        b = z[:n] - z[n:]
        g = K @ b - y
        return np.concatenate([g + eps, -g + eps])

    for _ in range(iters):
        new = _project(w - grad(w) / L, n, C)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        w = new + (t - 1) / t_next * (new - u)
        done = np.max(np.abs(new - u)) < tol
        u, t = new, t_next
        if done:
            break
    beta = u[:n] - u[n:]
    obj = 0.5 * beta @ K @ beta - y @ beta + eps * u.sum()
    return beta, float(obj)


def betainc_series(a, b, x, terms=1_000_000):
    """I_x(a, b) from x^a / (a B(a,b)) * sum_k (1-b)_k / k! * a/(a+k) * x^k."""
    if x > a / (a + b):
        return 1.0 - betainc_series(b, a, 1.0 - x, terms)
    k = np.arange(1, terms, dtype=float)
    ratio = (k - b) / k * x
    coef = np.concatenate([[1.0], np.cumprod(ratio)])
    s = math.fsum(coef * (a / (a + np.arange(terms))))
    log_front = a * math.log(x) - math.log(a) - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    return math.exp(log_front) * s
