"""Eigen-spectrum statistics of layer activity.

A point cloud of ``k`` activation vectors is summarised by the descending
eigenvalues of its covariance. From those we read a power-law decay
exponent (log-log slope over the leading components), the share of
variance carried by the leading components, and the participation ratio
``(sum lambda)^2 / sum lambda^2`` as a linear dimensionality.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DegenerateError, DomainError, InsufficientSamplesError, ShapeError
from .numerics import as_matrix, covariance, linfit, sym_eigvals

N_FIT = 10
SINGULAR_TOL = 1e-6

DUMP_MAGIC = b"LEACTDMP"
DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<8sIQQIdq")


def eigen_spectrum(activations, center: bool = True, method: str = "lapack") -> np.ndarray:
    """Descending covariance eigenvalues of the rows, clamped at zero."""
    x = as_matrix(activations, "activations")
    if x.shape[0] < 2:
        raise InsufficientSamplesError(f"need at least 2 stimuli, got {x.shape[0]}")
    return sym_eigvals(covariance(x, center=center), psd=True, method=method)


def fit_power_law(eigenvalues, n_fit: int = N_FIT) -> tuple[float, float]:
    """Fit ln(lambda_n) = c - alpha ln(n) over n = 1..n_fit.

    Returns (alpha, r_squared).
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if n_fit < 2:
        raise DomainError("n_fit must be >= 2")
    if lam.size < n_fit:
        raise DegenerateError(f"spectrum has {lam.size} values, fit window needs {n_fit}")
    head = lam[:n_fit]
    if not np.all(head > 0):
        raise DegenerateError(f"non-positive eigenvalue inside the first {n_fit} components")
    fit = linfit(np.log(np.arange(1, n_fit + 1)), np.log(head))
    return -fit.slope, fit.r_squared


def participation_dimensionality(eigenvalues) -> float:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if lam.size == 0 or not np.any(lam > 0):
        raise DegenerateError("participation ratio needs at least one positive eigenvalue")
    # normalise first: the ratio is scale-free and this keeps squares in range
    lam = lam / lam.max()
    return float(lam.sum() ** 2 / (lam * lam).sum())


def explained_variance_fraction(eigenvalues, m: int = N_FIT) -> float:
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if m < 0 or m > lam.size:
        raise DomainError(f"m must lie in 0..{lam.size}, got {m}")
    total = lam.sum()
    if total <= 0:
        raise DegenerateError("total variance is zero")
    return float(lam[:m].sum() / total)


def _power_sum(exponent: float, n: int) -> float:
    ns = np.arange(1, n + 1, dtype=np.float64)
    return float(np.exp(-exponent * np.log(ns)).sum())


def _integral_power_sum(exponent: float, n: int) -> float:
    """int_1^n x^-exponent dx = (n^(1-e) - 1) / (1 - e), ln n at e = 1."""
    log_n = math.log(n)
    x = (1.0 - exponent) * log_n
    if abs(1.0 - exponent) < SINGULAR_TOL:
        return log_n * (1.0 + x / 2.0 + x * x / 6.0 + x ** 3 / 24.0)
    return log_n * math.expm1(x) / x


def theoretical_dimensionality(alpha: float, n: int, mode: str = "exact_sum") -> float:
    """Participation ratio of the ideal spectrum lambda_k = k^-alpha, k = 1..n.

    ``exact_sum`` evaluates the finite sums directly; ``integral``
    replaces each sum by the integral from 1 to n, with the logarithmic
    limits at alpha = 1 and alpha = 1/2.
    """
    if alpha < 0:
        raise DomainError("alpha must be >= 0")
    if n < 2:
        raise DomainError("n must be >= 2")
    if mode == "exact_sum":
        return _power_sum(alpha, n) ** 2 / _power_sum(2 * alpha, n)
    if mode == "integral":
        return _integral_power_sum(alpha, n) ** 2 / _integral_power_sum(2 * alpha, n)
    raise DomainError(f"unknown mode {mode!r}")


# B_2k / (2k)!, k = 1..8
_BERNOULLI_OVER_FACT = [
    1 / 6 / math.factorial(2),
    -1 / 30 / math.factorial(4),
    1 / 42 / math.factorial(6),
    -1 / 30 / math.factorial(8),
    5 / 66 / math.factorial(10),
    -691 / 2730 / math.factorial(12),
    7 / 6 / math.factorial(14),
    -3617 / 510 / math.factorial(16),
]


def zeta(s: float, terms: int = 20) -> float:
    """Riemann zeta for real s > 1 by Euler-Maclaurin summation.

    Direct sum of the first ``terms - 1`` terms plus the integral tail and
    eight Bernoulli corrections at n = terms; the truncation error is below
    1e-15 for s > 1 with the default.
    """
    if s <= 1:
        raise DomainError(f"zeta series needs s > 1, got {s}")
    m = terms
    head = _power_sum(s, m - 1)
    tail = m ** (1.0 - s) / (s - 1.0) + 0.5 * m ** (-s)
    rising = s  # s (s+1) ... (s+2k-2)
    power = m ** (-s - 1.0)
    for k, coef in enumerate(_BERNOULLI_OVER_FACT, start=1):
        tail += coef * rising * power
        rising *= (s + 2 * k - 1) * (s + 2 * k)
        power /= m * m
    return head + tail


def zeta_dimensionality(alpha: float) -> float:
    """Infinite-width limit zeta(alpha)^2 / zeta(2 alpha); needs alpha > 1."""
    if alpha <= 1:
        raise DomainError(f"zeta limit requires alpha > 1, got {alpha}")
    return zeta(alpha) ** 2 / zeta(2 * alpha)


def best_fit_width(alphas, dims, candidates=range(2, 201)) -> int:
    """Width n whose exact-sum D(alpha) curve best matches measured (alpha, D) points."""
    alphas = np.asarray(alphas, dtype=np.float64)
    dims = np.asarray(dims, dtype=np.float64)
    if alphas.shape != dims.shape or alphas.size == 0:
        raise ShapeError("alphas and dims must be non-empty and the same length")
    best, best_err = None, np.inf
    for n in candidates:
        pred = np.array([theoretical_dimensionality(max(a, 0.0), n) for a in alphas])
        err = float(((pred - dims) ** 2).sum())
        if err < best_err:
            best, best_err = n, err
    return int(best)


@dataclass
class SpectrumReport:
    eigenvalues: list = field(repr=False)
    alpha: float
    r_squared: float
    top10_fraction: float
    dimensionality: float
    layer: int = 0
    epsilon: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "SpectrumReport":
        return cls(**json.loads(text))


def spectrum_report(activations, layer: int = 0, epsilon: float = 0.0, n_fit: int = N_FIT,
                    center: bool = True) -> SpectrumReport:
    lam = eigen_spectrum(activations, center=center)
    alpha, r2 = fit_power_law(lam, n_fit)
    return SpectrumReport(
        eigenvalues=[float(v) for v in lam],
        alpha=float(alpha),
        r_squared=float(r2),
        top10_fraction=explained_variance_fraction(lam, min(N_FIT, lam.size)),
        dimensionality=participation_dimensionality(lam),
        layer=int(layer),
        epsilon=float(epsilon),
    )


def write_activation_dump(path, activations, layer: int = 0, epsilon: float = 0.0, seed: int = 0) -> None:
    """Header (k, N, layer, epsilon, seed) followed by row-major little-endian float64."""
    x = np.ascontiguousarray(as_matrix(activations, "activations"), dtype="<f8")
    k, n = x.shape
    with open(path, "wb") as f:
        f.write(_DUMP_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, k, n, layer, float(epsilon), seed))
        f.write(x.tobytes())


def read_activation_dump(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as f:
        head = f.read(_DUMP_HEADER.size)
        if len(head) != _DUMP_HEADER.size:
            raise OSError(f"{path}: truncated header")
        magic, version, k, n, layer, epsilon, seed = _DUMP_HEADER.unpack(head)
        if magic != DUMP_MAGIC or version != DUMP_VERSION:
            raise ValueError(f"{path}: not an activation dump (version {version})")
        body = f.read()
    if len(body) != 8 * k * n:
        raise OSError(f"{path}: expected {k * n} values, found {len(body) // 8}")
    x = np.frombuffer(body, dtype="<f8").reshape(k, n).astype(np.float64)
    return x, {"k": k, "n": n, "layer": layer, "epsilon": epsilon, "seed": seed}
