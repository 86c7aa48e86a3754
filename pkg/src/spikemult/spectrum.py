"""
Sample covariance spectra, the spike-forward map and bulk edges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import blas
from scipy.sparse.linalg import LinearOperator, eigsh

from .model import ObservationMatrix, ParameterError

__all__ = [
    "ValidationError",
    "DomainError",
    "SpectrumSummary",
    "ClusterPartition",
    "sample_covariance",
    "eigenvalues_desc",
    "spectrum",
    "top_eigenvalues",
    "phi",
    "phi_inverse",
    "mp_bulk_edges",
    "cluster_sums",
    "histogram",
]

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-8
CLAMP_TOL = 1e-10


class ValidationError(ValueError):
    """Raised when an input matrix does not have the required structure."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


@dataclass(frozen=True)
class SpectrumSummary:
    """Descending sample eigenvalues with consecutive gaps.

    ``gaps[j] = eigenvalues[j] - eigenvalues[j + 1]`` (0-based), i.e. the
    1-based gap index ``j`` separates eigenvalue ``j`` from ``j + 1``.
    """

    eigenvalues: NDArray[np.float64] = field(repr=False)
    gaps: NDArray[np.float64] = field(repr=False)
    p: int
    n: int

    @classmethod
    def from_eigenvalues(cls, eigenvalues: Sequence[float], n: int) -> "SpectrumSummary":
        """Sort eigenvalues in descending order (stable) and derive gaps."""
        lam = np.asarray(eigenvalues, dtype=np.float64).ravel()
        if lam.size == 0:
            raise ValidationError("empty spectrum")
        if not np.all(np.isfinite(lam)):
            raise ValidationError("spectrum contains non-finite values")
        if n < 1:
            raise ParameterError("n must be positive")
        order = np.argsort(-lam, kind="stable")
        lam = lam[order]
        lam.setflags(write=False)
        gaps = lam[:-1] - lam[1:]
        gaps.setflags(write=False)
        return cls(eigenvalues=lam, gaps=gaps, p=int(lam.size), n=int(n))

    @property
    def gamma(self) -> float:
        return self.p / self.n

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))


@dataclass(frozen=True)
class ClusterPartition:
    """Consecutive groups of the leading eigenvalues, one per spike."""

    mults: tuple[int, ...]

    def __post_init__(self) -> None:
        mults = tuple(int(m) for m in self.mults)
        if not mults or any(m < 1 for m in mults):
            raise ParameterError("cluster sizes must be positive integers")
        object.__setattr__(self, "mults", mults)

    @property
    def K(self) -> int:
        return len(self.mults)

    @property
    def boundaries(self) -> tuple[int, ...]:
        """Cumulative sums ``s_k = m_1 + ... + m_k``."""
        return tuple(int(s) for s in np.cumsum(self.mults))

    @property
    def index_sets(self) -> tuple[range, ...]:
        """1-based index sets ``J_k = {s_{k-1} + 1, ..., s_k}``."""
        starts = (0,) + self.boundaries[:-1]
        return tuple(range(s + 1, e + 1) for s, e in zip(starts, self.boundaries))

    def slices(self) -> list[slice]:
        starts = (0,) + self.boundaries[:-1]
        return [slice(s, e) for s, e in zip(starts, self.boundaries)]


def _as_array(x: ObservationMatrix | NDArray) -> NDArray[np.complex128]:
    if isinstance(x, ObservationMatrix):
        return x.entries
    return np.asarray(x)


def sample_covariance(x: ObservationMatrix | NDArray) -> NDArray:
    """Return ``(1/n) X X^H``, exactly Hermitian."""
    data = _as_array(x)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ParameterError("X must be a 2-D matrix with at least one column")
    n = data.shape[1]
    if np.iscomplexobj(data):
        a = np.asfortranarray(data, dtype=np.complex128)
        upper = blas.zherk(1.0 / n, a)
    else:
        a = np.asfortranarray(data, dtype=np.float64)
        upper = blas.dsyrk(1.0 / n, a)
    s = np.triu(upper)
    s = s + np.triu(s, 1).conj().T
    if np.iscomplexobj(s):
        np.fill_diagonal(s, s.diagonal().real)
    return s


def eigenvalues_desc(s: NDArray, n: int = 1) -> SpectrumSummary:
    """Eigenvalues of a Hermitian matrix in descending order, with gaps.

    Round-off negatives no smaller than ``-1e-10 * max(1, ||S||)`` are clamped
    to zero. Genuinely negative eigenvalues of indefinite input are kept.

    Raises:
        ValidationError: ``s`` is not square or not Hermitian to ``1e-8``.
    """
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s))) if s.size else 1.0)
    asym = float(np.max(np.abs(s - s.conj().T))) if s.size else 0.0
    if asym > HERMITIAN_TOL * scale:
        raise ValidationError(f"matrix is not Hermitian (max asymmetry {asym:.3g})")
    lam = np.linalg.eigvalsh(s)[::-1].copy()
    tiny = (lam < 0.0) & (lam >= -CLAMP_TOL * scale)
    if np.any(tiny):
        logger.debug("clamped %d round-off negative eigenvalues to zero", int(tiny.sum()))
        lam[tiny] = 0.0
    return SpectrumSummary.from_eigenvalues(lam, n)


def spectrum(x: ObservationMatrix | NDArray) -> SpectrumSummary:
    """Spectrum of the sample covariance of ``x``."""
    data = _as_array(x)
    return eigenvalues_desc(sample_covariance(data), n=data.shape[1])


def top_eigenvalues(x: ObservationMatrix | NDArray, k: int) -> NDArray[np.float64]:
    """Leading ``k`` sample-covariance eigenvalues (descending) by Lanczos.

    Applies ``(1/n) X X^H`` implicitly, which is much cheaper than forming the
    sample covariance when only a few outliers are needed.
    """
    data = _as_array(x)
    p, n = data.shape
    if not 1 <= k < p:
        raise ParameterError(f"k must lie in [1, {p - 1}]")
    xh = data.conj().T

    def matvec(v):
        return data @ (xh @ v) / n

    op = LinearOperator((p, p), matvec=matvec, dtype=data.dtype)
    v0 = np.ones(p, dtype=data.dtype)
    vals = eigsh(op, k=k, which="LA", v0=v0, tol=1e-12, return_eigenvectors=False)
    return np.sort(vals.real)[::-1]


def phi(x: float, sigma2: float, gamma: float) -> float:
    """Almost-sure limit of the sample eigenvalues attached to a spike ``x``."""
    if x == 0:
        raise DomainError("phi is undefined at x = 0")
    return x + sigma2 + gamma * sigma2 * (1.0 + sigma2 / x)


def phi_inverse(lam: float, sigma2: float, gamma: float) -> float:
    """Invert :func:`phi` on the detectable branch ``x > sigma2 * sqrt(gamma)``.

    Returns the larger root of ``x^2 + (sigma2 + gamma sigma2 - lam) x + gamma sigma2^2``.

    Raises:
        DomainError: ``lam`` is not strictly above the bulk edge
            ``sigma2 (1 + sqrt(gamma))^2``.
    """
    edge = sigma2 * (1.0 + math.sqrt(gamma)) ** 2
    if not lam > edge:
        raise DomainError(f"lambda={lam} is not above the bulk edge {edge}")
    b = lam - sigma2 * (1.0 + gamma)
    c = 2.0 * math.sqrt(gamma) * sigma2
    # (b - c)(b + c) avoids cancellation in b^2 - c^2 near the edge
    disc = (b - c) * (b + c)
    return 0.5 * (b + math.sqrt(disc))


def mp_bulk_edges(sigma2: float, gamma: float) -> tuple[float, float]:
    """Marchenko-Pastur support ``(sigma2 (1 - sqrt g)^2, sigma2 (1 + sqrt g)^2)``."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    r = math.sqrt(gamma)
    return sigma2 * (1.0 - r) ** 2, sigma2 * (1.0 + r) ** 2


def cluster_sums(summary: SpectrumSummary, partition: ClusterPartition) -> NDArray[np.float64]:
    """Sum of the eigenvalues in each cluster ``J_k``."""
    if partition.boundaries[-1] > summary.p:
        raise ParameterError(
            f"partition covers {partition.boundaries[-1]} eigenvalues but p={summary.p}"
        )
    csum = np.concatenate([[0.0], np.cumsum(summary.eigenvalues[: partition.boundaries[-1]])])
    b = np.asarray((0,) + partition.boundaries)
    return csum[b[1:]] - csum[b[:-1]]


def histogram(
    eigenvalues: Sequence[float],
    bins: int = 200,
    upper: float | None = None,
) -> list[tuple[float, float, int]]:
    """Bin counts over ``[0, upper]`` (default ``1.05 * max eigenvalue``).

    Returns rows ``(bin_left, bin_right, count)``; counts sum to the number of
    eigenvalues inside the range.
    """
    if bins < 1:
        raise ParameterError("bins must be positive")
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if upper is None:
        upper = 1.05 * float(lam.max())
    if upper <= 0:
        upper = 1.0
    counts, edges = np.histogram(lam, bins=bins, range=(0.0, upper))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]
