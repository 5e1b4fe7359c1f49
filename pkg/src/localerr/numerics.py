"""Small deterministic linear-algebra and statistics kernel.

Random streams are numpy ``Generator`` objects backed by PCG64. A stream is
identified by a non-negative integer seed plus an optional tuple of
integer keys; ``make_rng(seed, *keys)`` feeds both through numpy's
``SeedSequence`` hash, so ``make_rng(7, 0)`` and ``make_rng(7, 1)`` are
statistically independent and neither depends on how many other streams
were created.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConvergenceError,
    DegenerateError,
    InsufficientSamplesError,
    ShapeError,
)

logger = logging.getLogger(__name__)

Rng = np.random.Generator

NEG_EIG_TOL = 1e-9
SYM_TOL = 1e-9


def make_rng(seed: int, *keys: int) -> Rng:
    """Return a PCG64 generator for the stream ``(seed, *keys)``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and stream keys must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def box_muller(raw: np.ndarray) -> np.ndarray:
    """Map an even number of uint64 words to standard normals, both values of each pair used."""
    u = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    u1, u2 = 1.0 - u[0::2], u[1::2]  # u1 in (0, 1]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(u.size)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out


def counter_normals(seed: int, stream: int, counters, dim: int) -> np.ndarray:
    """Standard normals indexed by counter: row i depends only on (seed, stream, counters[i]).

    Each row comes from a Philox4x64 generator whose key is hashed from
    (seed, stream) and whose top counter word is ``counters[i]``, followed by
    Box-Muller. Rows are therefore independent of evaluation order or subset.
    """
    key = np.random.SeedSequence(int(seed), spawn_key=(int(stream),)).generate_state(2, np.uint64)
    n_words = dim + (dim % 2)
    counters = np.asarray(counters, dtype=np.uint64).ravel()
    out = np.empty((counters.size, dim))
    for i, c in enumerate(counters):
        bg = np.random.Philox(key=key, counter=np.array([0, 0, 0, c], dtype=np.uint64))
        out[i] = box_muller(bg.random_raw(n_words))[:dim]
    return out


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def gaussian_matrix(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    # Draw even when std == 0 so the stream advances identically.
    z = rng.standard_normal((rows, cols))
    return mean + std * z


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def covariance(samples, center: bool = True) -> np.ndarray:
    """Sample covariance of the rows of ``samples`` with a 1/(k-1) divisor.

    With ``center=False`` the raw second-moment matrix X^T X / (k-1) is
    returned instead.
    """
    x = as_matrix(samples, "samples")
    k = x.shape[0]
    if k < 2:
        raise InsufficientSamplesError(f"covariance needs at least 2 samples, got {k}")
    if center:
        x = x - x.mean(axis=0)
    c = (x.T @ x) / (k - 1)
    return 0.5 * (c + c.T)


def _check_symmetric(s: np.ndarray) -> np.ndarray:
    s = as_matrix(s, "s")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"eigenproblem needs a square matrix, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("matrix contains non-finite entries")
    scale = max(np.abs(s).max(), 1.0)
    if np.abs(s - s.T).max() > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (s + s.T)


def jacobi_eigh(s, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver; returns (eigenvalues, eigenvectors) unsorted.

    Kept as an independent check on the LAPACK path. Cost is O(n^3) per
    sweep, fine up to a few hundred rows.
    """
    a = _check_symmetric(s).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    off_mask = ~np.eye(n, dtype=bool)
    scale = max(np.sqrt((a * a).sum()), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        if np.sqrt((a[off_mask] ** 2).sum()) <= tol * scale:
            return a.diagonal().copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def sym_eigh(s, method: str = "lapack") -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching eigenvectors (as columns)."""
    s = _check_symmetric(s)
    if method == "lapack":
        try:
            w, v = np.linalg.eigh(s)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(str(exc)) from exc
    elif method == "jacobi":
        w, v = jacobi_eigh(s)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(w, kind="stable")[::-1]
    return w[order], v[:, order]


def sym_eigvals(s, psd: bool = False, method: str = "lapack", return_clamped: bool = False):
    """Full real spectrum of a symmetric matrix, sorted descending.

    With ``psd=True`` small negative eigenvalues above ``-1e-9 * lambda_max``
    are round-off and get clamped to zero; anything more negative is logged
    and also clamped. ``return_clamped`` additionally returns whether any
    value was clamped.
    """
    w, _ = sym_eigh(s, method=method)
    clamped = False
    if psd and w.size:
        lam_max = max(w[0], 0.0)
        neg = w < 0
        if neg.any():
            clamped = True
            if w.min() < -NEG_EIG_TOL * lam_max:
                logger.warning("clamping eigenvalue %.3e below round-off threshold", w.min())
            w = np.where(neg, 0.0, w)
    return (w, clamped) if return_clamped else w


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r_squared: float


def linfit(xs, ys) -> LineFit:
    """Ordinary least-squares line through (xs, ys)."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ShapeError(f"xs and ys differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise InsufficientSamplesError("linfit needs at least 2 points")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = dx @ dx
    if sxx <= 0 or np.ptp(x) == 0:
        raise DegenerateError("all xs are equal; slope undefined")
    slope = (dx @ (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = resid @ resid
    dy = y - ym
    ss_tot = dy @ dy
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LineFit(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)))
