"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin (``np_*``). The compiled twin (``nb_*``)
is used unless numba is missing or ``TAILILC_DISABLE_NUMBA=1`` is set in the
environment before import. The module-level names without prefix are the
selected implementation; benchmarks import both twins directly.
"""
import os

import numpy as np

_FLAG = os.environ.get("TAILILC_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


# ---------------------------------------------------------------------------
# state-space recursion
# ---------------------------------------------------------------------------

def np_ss_simulate(A, B, C, D, u):
    n_s = A.shape[0]
    N = u.shape[1]
    y = D @ u
    if n_s == 0:
        return y
    x = np.zeros(n_s)
    for k in range(N):
        y[:, k] += C @ x
        x = A @ x + B @ u[:, k]
    return y


@njit(cache=True)
def nb_ss_simulate(A, B, C, D, u):
    n_s = A.shape[0]
    n_u = B.shape[1]
    n_y = C.shape[0]
    N = u.shape[1]
    y = np.zeros((n_y, N))
    x = np.zeros(n_s)
    xn = np.zeros(n_s)
    for k in range(N):
        for i in range(n_y):
            acc = 0.0
            for s in range(n_s):
                acc += C[i, s] * x[s]
            for m in range(n_u):
                acc += D[i, m] * u[m, k]
            y[i, k] = acc
        for s in range(n_s):
            acc = 0.0
            for t in range(n_s):
                acc += A[s, t] * x[t]
            for m in range(n_u):
                acc += B[s, m] * u[m, k]
            xn[s] = acc
        for s in range(n_s):
            x[s] = xn[s]
    return y


# ---------------------------------------------------------------------------
# SISO Markov parameters and lower-triangular Toeplitz assembly
# ---------------------------------------------------------------------------

def np_markov(A, B, C, D, n):
    h = np.zeros(n)
    if n == 0:
        return h
    h[0] = D[0, 0]
    x = B[:, 0].copy()
    for k in range(1, n):
        h[k] = C[0] @ x
        x = A @ x
    return h


@njit(cache=True)
def nb_markov(A, B, C, D, n):
    h = np.zeros(n)
    if n == 0:
        return h
    n_s = A.shape[0]
    h[0] = D[0, 0]
    x = B[:, 0].copy()
    xn = np.zeros(n_s)
    for k in range(1, n):
        acc = 0.0
        for s in range(n_s):
            acc += C[0, s] * x[s]
        h[k] = acc
        for s in range(n_s):
            a = 0.0
            for t in range(n_s):
                a += A[s, t] * x[t]
            xn[s] = a
        for s in range(n_s):
            x[s] = xn[s]
    return h


def np_toeplitz_lower(h, N):
    col = np.zeros(N)
    m = min(N, h.shape[0])
    col[:m] = h[:m]
    # index matrix i - j, masked above the diagonal
    idx = np.arange(N)[:, None] - np.arange(N)[None, :]
    T = col[np.clip(idx, 0, N - 1)]
    T[idx < 0] = 0.0
    return T


@njit(cache=True)
def nb_toeplitz_lower(h, N):
    T = np.zeros((N, N))
    m = min(N, h.shape[0])
    for j in range(N):
        for i in range(j, min(N, j + m)):
            T[i, j] = h[i - j]
    return T


# ---------------------------------------------------------------------------
# exact (zero-order-hold) integration of a piecewise-constant snap signal
# ---------------------------------------------------------------------------

def np_integrate_snap(s, Ts):
    # Vectorized form of the same recursion; sums run left to right.
    n = s.shape[0]
    T2 = Ts * Ts / 2.0
    T3 = Ts * Ts * Ts / 6.0
    T4 = Ts * Ts * Ts * Ts / 24.0
    j = np.zeros(n)
    a = np.zeros(n)
    v = np.zeros(n)
    p = np.zeros(n)
    if n == 1:
        return p, v, a, j
    sk = s[:-1]
    j[1:] = np.cumsum(sk * Ts)
    jk = j[:-1]
    a[1:] = np.cumsum(jk * Ts + sk * T2)
    ak = a[:-1]
    v[1:] = np.cumsum(ak * Ts + jk * T2 + sk * T3)
    vk = v[:-1]
    p[1:] = np.cumsum(vk * Ts + ak * T2 + jk * T3 + sk * T4)
    return p, v, a, j


@njit(cache=True)
def nb_integrate_snap(s, Ts):
    n = s.shape[0]
    T2 = Ts * Ts / 2.0
    T3 = Ts * Ts * Ts / 6.0
    T4 = Ts * Ts * Ts * Ts / 24.0
    j = np.zeros(n)
    a = np.zeros(n)
    v = np.zeros(n)
    p = np.zeros(n)
    for k in range(n - 1):
        sk = s[k]
        j[k + 1] = j[k] + sk * Ts
        a[k + 1] = a[k] + (j[k] * Ts + sk * T2)
        v[k + 1] = v[k] + (a[k] * Ts + j[k] * T2 + sk * T3)
        p[k + 1] = p[k] + (v[k] * Ts + a[k] * T2 + j[k] * T3 + sk * T4)
    return p, v, a, j


if USE_NUMBA:
    ss_simulate = nb_ss_simulate
    markov = nb_markov
    toeplitz_lower = nb_toeplitz_lower
    integrate_snap = nb_integrate_snap
else:
    ss_simulate = np_ss_simulate
    markov = np_markov
    toeplitz_lower = np_toeplitz_lower
    integrate_snap = np_integrate_snap

BACKEND = "numba" if USE_NUMBA else "numpy"
