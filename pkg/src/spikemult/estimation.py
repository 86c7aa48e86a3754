"""
Joint estimation of the number of spikes, their multiplicities and values.

For a known number of distinct spikes ``K`` the multiplicities are read off
the ``K`` largest consecutive-eigenvalue gaps.  When ``K`` is unknown every
candidate ``k <= k_max`` is scored by the Gaussian likelihood of its cluster
sums, averaged over a uniform discrete prior on the spike values, and the best
scoring ``k`` is kept.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .model import ParameterError
from .spectrum import (
    ClusterPartition,
    DomainError,
    SpectrumSummary,
    cluster_sums,
    phi,
    phi_inverse,
)

__all__ = [
    "VARIANCE_CONVENTIONS",
    "DEFAULT_CONVENTION",
    "MultiplicityEstimate",
    "PriorSpec",
    "JointEstimate",
    "default_j_max",
    "estimate_multiplicities",
    "clt_variance_factor",
    "cluster_variance",
    "cluster_log_likelihood",
    "marginal_log_likelihood",
    "estimate_k",
    "estimate_alphas",
]

# Var(g_k) for a cluster of size m with dimensionless CLT factor v^2:
#   complex        m v^2 sigma^4 / (2 n)   measured for circular complex data
#   proposition    2 m v^2 sigma^4 / n     limit law as stated for the cluster sum
#   paper_literal  v^2                     unscaled, as in the likelihood display
VARIANCE_CONVENTIONS = ("complex", "proposition", "paper_literal")
DEFAULT_CONVENTION = "complex"

LOW_CONTRAST_RATIO = 10.0


@dataclass(frozen=True)
class MultiplicityEstimate:
    """Multiplicities induced by the ``K`` largest gaps.

    Attributes:
        mults: Estimated cluster sizes, top cluster first.
        gap_indices: Selected 1-based gap indices in ascending order; these are
            the cluster boundaries ``s_1 < ... < s_K``.
        gap_values: Gap sizes at ``gap_indices``.
        low_contrast: True when the largest selected gap is at most ten times the
            median scanned gap, i.e. the spectrum shows no clear clusters.
    """

    mults: tuple[int, ...]
    gap_indices: tuple[int, ...]
    gap_values: tuple[float, ...]
    low_contrast: bool = False

    @property
    def K(self) -> int:
        return len(self.mults)

    @property
    def partition(self) -> ClusterPartition:
        return ClusterPartition(self.mults)


@dataclass(frozen=True)
class PriorSpec:
    """Uniform prior over strictly decreasing ``k``-tuples from a finite support."""

    support: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(sorted(float(v) for v in self.support))
        if not vals:
            raise ParameterError("prior support is empty")
        if any(v <= 0 or not math.isfinite(v) for v in vals):
            raise ParameterError("prior support values must be positive and finite")
        if len(set(vals)) != len(vals):
            raise ParameterError("prior support values must be distinct")
        object.__setattr__(self, "support", vals)

    @property
    def size(self) -> int:
        return len(self.support)

    def tuples(self, k: int) -> NDArray[np.float64]:
        """All strictly decreasing ``k``-tuples, one per row."""
        if not 1 <= k <= self.size:
            raise ParameterError(f"k={k} needs 1 <= k <= |E|={self.size}")
        desc = sorted(self.support, reverse=True)
        return np.array(list(itertools.combinations(desc, k)), dtype=np.float64).reshape(-1, k)

    def scaled(self, c: float) -> "PriorSpec":
        return PriorSpec(tuple(c * v for v in self.support))


@dataclass(frozen=True)
class JointEstimate:
    """Outcome of the unknown-``K`` procedure."""

    k_hat: int
    mults: MultiplicityEstimate
    alphas_hat: tuple[float, ...]
    log_marginals: tuple[float, ...]
    candidates: tuple[MultiplicityEstimate, ...] = field(repr=False, default=())


def default_j_max(p: int) -> int:
    """Default gap-scan range ``min(p - 1, floor(p / 4))``."""
    return min(p - 1, p // 4)


def estimate_multiplicities(
    summary: SpectrumSummary,
    K: int,
    j_max: int | None = None,
) -> MultiplicityEstimate:
    """Estimate ``K`` multiplicities from the largest eigenvalue gaps.

    Gaps ``delta_1 .. delta_{j_max}`` are ranked in descending order (ties go
    to the smaller index), the ``K`` leading indices are sorted, and each
    multiplicity is the distance between consecutive selected indices.
    """
    if j_max is None:
        j_max = default_j_max(summary.p)
    if j_max > summary.p - 1:
        raise ParameterError(f"j_max={j_max} exceeds the {summary.p - 1} available gaps")
    if not 1 <= K <= j_max:
        raise ParameterError(f"need 1 <= K <= j_max, got K={K}, j_max={j_max}")
    gaps = summary.gaps[:j_max]
    order = np.argsort(-gaps, kind="stable")
    chosen = np.sort(order[:K])
    idx = chosen + 1
    mults = np.diff(np.concatenate([[0], idx]))
    selected = gaps[chosen]
    median = float(np.median(gaps))
    low_contrast = bool(selected.max() <= LOW_CONTRAST_RATIO * median)
    return MultiplicityEstimate(
        mults=tuple(int(m) for m in mults),
        gap_indices=tuple(int(i) for i in idx),
        gap_values=tuple(float(v) for v in selected),
        low_contrast=low_contrast,
    )


def clt_variance_factor(alpha, sigma2, gamma):
    """Dimensionless fluctuation factor ``v^2 = 2 a'^2 ((a' - 1)^2 - gamma) / (a' - 1)^2``.

    ``a' = alpha / sigma2 + 1``. Vectorised over ``alpha``.
    """
    if sigma2 <= 0:
        raise DomainError("the normalised variance factor needs sigma2 > 0")
    a = np.asarray(alpha, dtype=np.float64) / sigma2 + 1.0
    return 2.0 * a**2 * ((a - 1.0) ** 2 - gamma) / (a - 1.0) ** 2


def _cluster_variance(alpha, sigma2, gamma, m, n, convention):
    alpha = np.asarray(alpha, dtype=np.float64)
    if convention == "paper_literal":
        return clt_variance_factor(alpha, sigma2, gamma)
    # sigma^4 v^2 written so that sigma2 = 0 is allowed
    scaled = 2.0 * (alpha + sigma2) ** 2 * (1.0 - gamma * sigma2**2 / alpha**2)
    if convention == "complex":
        return np.asarray(m) * scaled / (2.0 * n)
    if convention == "proposition":
        return 2.0 * np.asarray(m) * scaled / n
    raise ParameterError(
        f"unknown variance convention {convention!r}; expected one of {VARIANCE_CONVENTIONS}"
    )


def cluster_variance(
    alpha: float,
    sigma2: float,
    gamma: float,
    m_k: int,
    n: int,
    convention: str = DEFAULT_CONVENTION,
) -> float:
    """Variance of a cluster sum of ``m_k`` eigenvalues attached to spike ``alpha``.

    Raises:
        DomainError: ``alpha`` is not above ``sigma2 * sqrt(gamma)``.
    """
    if not alpha > sigma2 * math.sqrt(gamma):
        raise DomainError(f"spike {alpha} is not detectable at sigma2={sigma2}, gamma={gamma}")
    return float(_cluster_variance(alpha, sigma2, gamma, m_k, n, convention))


def _check_detectable(alphas, sigma2, gamma) -> None:
    bad = [a for a in alphas if not a > sigma2 * math.sqrt(gamma)]
    if bad:
        raise DomainError(f"spikes {bad} are not detectable at sigma2={sigma2}, gamma={gamma}")


def cluster_log_likelihood(
    g: Sequence[float],
    alphas: Sequence[float],
    mults: Sequence[int],
    sigma2: float,
    gamma: float,
    n: int,
    convention: str = DEFAULT_CONVENTION,
) -> float:
    """Log of the product of independent Gaussian densities of the cluster sums."""
    g = np.asarray(g, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    mults = np.asarray(mults, dtype=np.float64)
    if not g.shape == alphas.shape == mults.shape:
        raise ParameterError("g, alphas and mults must have the same length")
    _check_detectable(alphas, sigma2, gamma)
    var = _cluster_variance(alphas, sigma2, gamma, mults, n, convention)
    mean = mults * np.array([phi(a, sigma2, gamma) for a in alphas])
    return float(np.sum(-0.5 * np.log(2.0 * np.pi * var) - (g - mean) ** 2 / (2.0 * var)))


def _tuple_log_likelihoods(g, mults, tuples, sigma2, gamma, n, convention):
    """Log-likelihood of every prior tuple; undetectable tuples score -inf."""
    ok = np.all(tuples > sigma2 * math.sqrt(gamma), axis=1)
    out = np.full(tuples.shape[0], -np.inf)
    if not np.any(ok):
        return out
    t = tuples[ok]
    var = _cluster_variance(t, sigma2, gamma, mults[None, :], n, convention)
    mean = mults[None, :] * (t + sigma2 + gamma * sigma2 * (1.0 + sigma2 / t))
    out[ok] = np.sum(-0.5 * np.log(2.0 * np.pi * var) - (g[None, :] - mean) ** 2 / (2.0 * var), axis=1)
    return out


def marginal_log_likelihood(
    g: Sequence[float],
    mults: Sequence[int],
    k: int,
    prior: PriorSpec,
    sigma2: float,
    gamma: float,
    n: int,
    convention: str = DEFAULT_CONVENTION,
) -> float:
    """Log of the prior-averaged cluster-sum likelihood for ``k`` spikes.

    The average is uniform over all strictly decreasing ``k``-tuples of the
    prior support and is accumulated with log-sum-exp. Tuples containing an
    undetectable value contribute zero likelihood but keep their prior weight.

    Raises:
        ParameterError: ``k`` exceeds the support size or lengths disagree.
    """
    g = np.asarray(g, dtype=np.float64)
    mults = np.asarray(mults, dtype=np.float64)
    if g.shape != (k,) or mults.shape != (k,):
        raise ParameterError(f"g and mults must both have length k={k}")
    tuples = prior.tuples(k)
    ll = _tuple_log_likelihoods(g, mults, tuples, sigma2, gamma, n, convention)
    if np.all(np.isneginf(ll)):
        return -math.inf
    return float(logsumexp(ll) - math.log(tuples.shape[0]))


def estimate_alphas(
    summary: SpectrumSummary,
    partition: ClusterPartition,
    sigma2: float,
    gamma: float | None = None,
) -> list[float]:
    """Recover spike values by inverting the forward map at each cluster mean.

    Raises:
        DomainError: a cluster mean lies at or below the bulk edge.
    """
    if gamma is None:
        gamma = summary.gamma
    sums = cluster_sums(summary, partition)
    return [phi_inverse(s / m, sigma2, gamma) for s, m in zip(sums, partition.mults)]


def estimate_k(
    summary: SpectrumSummary,
    k_max: int,
    prior: PriorSpec,
    sigma2: float,
    *,
    j_max: int | None = None,
    convention: str = DEFAULT_CONVENTION,
) -> JointEstimate:
    """Jointly estimate the number of distinct spikes, their sizes and values.

    For each ``k`` in ``1..k_max`` the multiplicities come from
    :func:`estimate_multiplicities`; the resulting cluster sums are scored by
    :func:`marginal_log_likelihood`. The smallest maximising ``k`` wins.
    Spike values whose cluster mean falls inside the bulk are reported as NaN.
    """
    if not 1 <= k_max <= prior.size:
        raise ParameterError(f"k_max={k_max} must lie in [1, |E|={prior.size}]")
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    gamma = summary.gamma
    candidates = []
    log_marginals = []
    for k in range(1, k_max + 1):
        est = estimate_multiplicities(summary, k, j_max)
        g = cluster_sums(summary, est.partition)
        candidates.append(est)
        log_marginals.append(
            marginal_log_likelihood(g, est.mults, k, prior, sigma2, gamma, summary.n, convention)
        )
    best = int(np.argmax(log_marginals))
    chosen = candidates[best]
    alphas = []
    sums = cluster_sums(summary, chosen.partition)
    for s, m in zip(sums, chosen.mults):
        try:
            alphas.append(phi_inverse(s / m, sigma2, gamma))
        except DomainError:
            alphas.append(math.nan)
    return JointEstimate(
        k_hat=best + 1,
        mults=chosen,
        alphas_hat=tuple(alphas),
        log_marginals=tuple(log_marginals),
        candidates=tuple(candidates),
    )
