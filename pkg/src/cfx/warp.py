"""Dynamic time warping: hard DTW, soft-DTW (value and gradient), and a path-enumeration oracle.

Series are ``(T, d)`` arrays (or ``TimeSeries``); the local cost is squared
Euclidean distance summed over channels. Paths use 0-based index pairs
running from ``(0, 0)`` to ``(m - 1, m' - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log

import numpy as np
from numba import njit

from cfx.series import TimeSeries

# boundary sentinel; exp(-BIG / gamma) underflows to exactly 0 for any usable gamma
BIG = 1e30
MAX_BRUTE_FORCE = 8


def _values(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.values
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"series must be (T, d), got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("empty series")
    return a


def _pair(X, Y):
    X, Y = _values(X), _values(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"channel mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def cost_matrix(X, Y) -> np.ndarray:
    """``C[i, j] = sum_ch (X[i, ch] - Y[j, ch])**2``."""
    X, Y = _pair(X, Y)
    return _cost(X, Y)


@njit(cache=True, nogil=True)
def _cost(X, Y):
    m, d = X.shape
    n = Y.shape[0]
    C = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for c in range(d):
                t = X[i, c] - Y[j, c]
                s += t * t
            C[i, j] = s
    return C


@dataclass(frozen=True, eq=False)
class AlignmentPath:
    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        st = self.steps
        if not st or st[0] != (0, 0):
            raise ValueError("path must start at (0, 0)")
        for (i0, j0), (i1, j1) in zip(st, st[1:]):
            if (i1 - i0, j1 - j0) not in ((1, 0), (0, 1), (1, 1)):
                raise ValueError(f"invalid step {(i0, j0)} -> {(i1, j1)}")

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def cost(self, C: np.ndarray) -> float:
        # left-to-right, the same accumulation order as the DP table
        total = 0.0
        for i, j in self.steps:
            total += float(C[i, j])
        return total

    def matrix(self, m: int, n: int) -> np.ndarray:
        A = np.zeros((m, n))
        for i, j in self.steps:
            A[i, j] = 1.0
        return A


@njit(cache=True, nogil=True)
def _dtw_table(C):
    m, n = C.shape
    D = np.full((m + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            D[i, j] = C[i - 1, j - 1] + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return D


def _traceback(D) -> AlignmentPath:
    i, j = D.shape[0] - 1, D.shape[1] - 1
    steps = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # tie-break: diagonal, then vertical, then horizontal
        cands = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        best = min(cands, key=lambda c: c[0])
        i, j = best[1], best[2]
        steps.append((i - 1, j - 1))
    return AlignmentPath(tuple(reversed(steps)))


def dtw(X, Y) -> tuple[float, AlignmentPath]:
    """Hard DTW distance and an optimal alignment path."""
    C = cost_matrix(X, Y)
    D = _dtw_table(C)
    return float(D[-1, -1]), _traceback(D)


def dtw_distance(X, Y) -> float:
    X, Y = _pair(X, Y)
    return float(_dtw_table(_cost(X, Y))[-1, -1])


@njit(cache=True, nogil=True)
def _dtw_many(X, Ys):
    out = np.empty(Ys.shape[0])
    for k in range(Ys.shape[0]):
        out[k] = _dtw_table(_cost(X, Ys[k]))[-1, -1]
    return out


def dtw_to_many(X, Ys: np.ndarray) -> np.ndarray:
    """Hard DTW from one series to each of a ``(k, m', d)`` stack."""
    X = _values(X)
    Ys = np.asarray(Ys, dtype=np.float64)
    if Ys.ndim != 3 or Ys.shape[2] != X.shape[1]:
        raise ValueError(f"expected a (k, T, {X.shape[1]}) stack, got {Ys.shape}")
    return _dtw_many(np.ascontiguousarray(X), np.ascontiguousarray(Ys))


def soft_min(values, gamma: float) -> float:
    """``-gamma * log(sum(exp(-a / gamma)))``, shifted by ``min(a)`` for stability."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("soft_min of an empty list")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    lo = a.min()
    return float(lo - gamma * np.log(np.sum(np.exp(-(a - lo) / gamma))))


@njit(cache=True, nogil=True)
def _softmin3(a, b, c, gamma):
    lo = min(a, b, c)
    s = exp(-(a - lo) / gamma) + exp(-(b - lo) / gamma) + exp(-(c - lo) / gamma)
    return lo - gamma * log(s)


@njit(cache=True, nogil=True)
def _soft_forward(C, gamma):
    m, n = C.shape
    R = np.full((m + 2, n + 2), BIG)
    R[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            R[i, j] = C[i - 1, j - 1] + _softmin3(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1], gamma)
    return R


@njit(cache=True, nogil=True)
def _soft_backward(C, R, gamma):
    m, n = C.shape
    Cp = np.zeros((m + 2, n + 2))
    Cp[1:m + 1, 1:n + 1] = C
    Rw = R.copy()
    Rw[:, n + 1] = -BIG
    Rw[m + 1, :] = -BIG
    Rw[m + 1, n + 1] = R[m, n]
    E = np.zeros((m + 2, n + 2))
    E[m + 1, n + 1] = 1.0
    for j in range(n, 0, -1):
        for i in range(m, 0, -1):
            r = Rw[i, j]
            a = exp((Rw[i + 1, j] - r - Cp[i + 1, j]) / gamma)
            b = exp((Rw[i, j + 1] - r - Cp[i, j + 1]) / gamma)
            c = exp((Rw[i + 1, j + 1] - r - Cp[i + 1, j + 1]) / gamma)
            E[i, j] = a * E[i + 1, j] + b * E[i, j + 1] + c * E[i + 1, j + 1]
    return E[1:m + 1, 1:n + 1]


@njit(cache=True, nogil=True)
def _grad_x(E, X, Y):
    m, d = X.shape
    n = Y.shape[0]
    G = np.zeros((m, d))
    for i in range(m):
        for j in range(n):
            e = E[i, j]
            if e == 0.0:
                continue
            for c in range(d):
                G[i, c] += 2.0 * e * (X[i, c] - Y[j, c])
    return G


@njit(cache=True, nogil=True)
def _soft_dtw_many(X, Ys, gamma):
    k = Ys.shape[0]
    vals = np.empty(k)
    G = np.zeros(X.shape)
    for q in range(k):
        C = _cost(X, Ys[q])
        R = _soft_forward(C, gamma)
        vals[q] = R[C.shape[0], C.shape[1]]
        G += _grad_x(_soft_backward(C, R, gamma), X, Ys[q])
    return vals, G


@dataclass(frozen=True, eq=False)
class SoftDtwWorkspace:
    """Forward table ``R`` (with sentinel border) retained for the backward pass."""

    R: np.ndarray
    gamma: float
    shape: tuple[int, int, int]  # (m, m', d)

    @property
    def value(self) -> float:
        m, n, _ = self.shape
        return float(self.R[m, n])


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")


def soft_dtw(X, Y, gamma: float = 1.0) -> tuple[float, SoftDtwWorkspace]:
    """Soft-DTW value: the soft minimum of every alignment path's cost."""
    _check_gamma(gamma)
    X, Y = _pair(X, Y)
    R = _soft_forward(_cost(X, Y), float(gamma))
    ws = SoftDtwWorkspace(R, float(gamma), (X.shape[0], Y.shape[0], X.shape[1]))
    return ws.value, ws


def soft_dtw_grad(workspace: SoftDtwWorkspace, X, Y) -> np.ndarray:
    """Gradient of the soft-DTW value with respect to ``X``; shape ``(m, d)``."""
    X, Y = _pair(X, Y)
    if (X.shape[0], Y.shape[0], X.shape[1]) != workspace.shape:
        raise ValueError(f"workspace was built for shape {workspace.shape}, "
                         f"got {(X.shape[0], Y.shape[0], X.shape[1])}")
    C = _cost(X, Y)
    E = _soft_backward(C, workspace.R, workspace.gamma)
    return _grad_x(E, X, Y)


def soft_dtw_alignment(workspace: SoftDtwWorkspace, X, Y) -> np.ndarray:
    """Expected alignment matrix (gradient of the value w.r.t. the cost matrix)."""
    X, Y = _pair(X, Y)
    return _soft_backward(_cost(X, Y), workspace.R, workspace.gamma)


def soft_dtw_many(X, Ys: np.ndarray, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Soft-DTW from ``X`` to each of a ``(k, m', d)`` stack, plus the gradient of their sum."""
    _check_gamma(gamma)
    X = np.ascontiguousarray(_values(X))
    Ys = np.ascontiguousarray(np.asarray(Ys, dtype=np.float64))
    if Ys.ndim != 3 or Ys.shape[2] != X.shape[1]:
        raise ValueError(f"expected a (k, T, {X.shape[1]}) stack, got {Ys.shape}")
    return _soft_dtw_many(X, Ys, float(gamma))


def delannoy(a: int, b: int) -> int:
    """Number of monotone (1,0)/(0,1)/(1,1) lattice paths from (0,0) to (a,b)."""
    D = [[1] * (b + 1) for _ in range(a + 1)]
    for i in range(1, a + 1):
        for j in range(1, b + 1):
            D[i][j] = D[i - 1][j] + D[i][j - 1] + D[i - 1][j - 1]
    return D[a][b]


def brute_force_paths(m: int, n: int) -> list[AlignmentPath]:
    """Every alignment path for an ``m x n`` cost matrix (small sizes only)."""
    if m < 1 or n < 1:
        raise ValueError("path enumeration needs m, n >= 1")
    if m > MAX_BRUTE_FORCE or n > MAX_BRUTE_FORCE:
        raise ValueError(f"brute-force enumeration limited to m, n <= {MAX_BRUTE_FORCE}, got ({m}, {n})")
    out = []

    def walk(i, j, acc):
        if (i, j) == (m - 1, n - 1):
            out.append(AlignmentPath(tuple(acc)))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < m and b < n:
                acc.append((a, b))
                walk(a, b, acc)
                acc.pop()

    walk(0, 0, [(0, 0)])
    return out
