"""
Spiked covariance observation models.

Two generators are provided: the isotropic form ``X = Sigma^{1/2} Y`` and the
array-processing form ``X = A(theta) P^{1/2} S + sigma N`` built from uniform
linear array steering vectors.  All randomness flows through :func:`make_rng`,
so every generator is a pure function of its seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "ParameterError",
    "SpikeSpec",
    "ObservationMatrix",
    "make_rng",
    "complex_gaussian",
    "haar_unitary",
    "population_covariance",
    "detectable",
    "generate_isotropic",
    "steering_matrix",
    "generate_doa",
]

RNG_SCHEME = "philox4x64/seedsequence-v1"


class ParameterError(ValueError):
    """Raised when model parameters violate their preconditions."""


@dataclass(frozen=True)
class SpikeSpec:
    """Ground-truth parameters of a spiked covariance model.

    Attributes:
        alphas: Spike powers, strictly decreasing and positive.
        mults: Multiplicity of each spike power.
        sigma2: Noise power. Zero is allowed for noiseless fixtures.
        p: Observation dimension.
        n: Number of samples.
    """

    alphas: tuple[float, ...]
    mults: tuple[int, ...]
    sigma2: float
    p: int
    n: int

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        mults = tuple(int(m) for m in np.atleast_1d(self.mults))
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "mults", mults)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not alphas:
            raise ParameterError("at least one spike is required")
        if len(alphas) != len(mults):
            raise ParameterError(
                f"alphas and mults differ in length ({len(alphas)} != {len(mults)})"
            )
        if any(a <= 0.0 or not np.isfinite(a) for a in alphas):
            raise ParameterError("spike powers must be positive and finite")
        if any(a1 <= a2 for a1, a2 in zip(alphas, alphas[1:])):
            raise ParameterError(f"spike powers must be strictly decreasing, got {alphas}")
        if any(m < 1 for m in mults):
            raise ParameterError("multiplicities must be positive integers")
        if self.sigma2 < 0.0 or not np.isfinite(self.sigma2):
            raise ParameterError("sigma2 must be a nonnegative finite number")
        if self.p < 1 or self.n < 1:
            raise ParameterError("p and n must be positive")
        if sum(mults) >= self.p:
            raise ParameterError(f"total multiplicity {sum(mults)} must be below p={self.p}")

    @property
    def K(self) -> int:
        return len(self.alphas)

    @property
    def m(self) -> int:
        return sum(self.mults)

    @property
    def gamma(self) -> float:
        return self.p / self.n

    def spike_powers(self) -> NDArray[np.float64]:
        """Per-column signal powers, each alpha repeated by its multiplicity."""
        return np.repeat(np.asarray(self.alphas), self.mults)

    def population_eigenvalues(self) -> NDArray[np.float64]:
        """Descending eigenvalues of the population covariance."""
        spikes = self.spike_powers() + self.sigma2
        noise = np.full(self.p - self.m, self.sigma2)
        return np.concatenate([spikes, noise])

    def with_(self, **changes) -> "SpikeSpec":
        fields = dict(alphas=self.alphas, mults=self.mults, sigma2=self.sigma2, p=self.p, n=self.n)
        fields.update(changes)
        return SpikeSpec(**fields)

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "mults": list(self.mults),
            "sigma2": self.sigma2,
            "p": self.p,
            "n": self.n,
        }


@dataclass(frozen=True)
class ObservationMatrix:
    """A generated ``p x n`` complex data matrix and its provenance."""

    entries: NDArray[np.complex128] = field(repr=False)
    spec: SpikeSpec
    seed: int
    model: str = "isotropic"
    thetas: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.entries.shape != (self.spec.p, self.spec.n):
            raise ParameterError(
                f"entries have shape {self.entries.shape}, expected {(self.spec.p, self.spec.n)}"
            )


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def make_rng(seed: int, purpose: str = "default", index: int = 0) -> np.random.Generator:
    """Return an independent Philox stream for ``(seed, purpose, index)``.

    Streams are derived through :class:`numpy.random.SeedSequence` spawn keys,
    so distinct purposes or indices never share state regardless of the order
    in which they are requested.
    """
    if seed < 0 or index < 0:
        raise ParameterError("seed and index must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purpose_key(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def complex_gaussian(rng: np.random.Generator, shape: tuple[int, ...]) -> NDArray[np.complex128]:
    """Standard circular complex Gaussian entries (real and imaginary variance 1/2)."""
    out = rng.standard_normal(shape + (2,))
    out *= np.sqrt(0.5)
    return out.view(np.complex128).reshape(shape)


def haar_unitary(p: int, rng: np.random.Generator) -> NDArray[np.complex128]:
    """Draw a Haar-distributed ``p x p`` unitary matrix."""
    z = complex_gaussian(rng, (p, p))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def population_covariance(
    spec: SpikeSpec,
    *,
    haar: bool = False,
    seed: int = 0,
) -> NDArray[np.complex128]:
    """Build the population covariance ``U diag(alpha_k + sigma2, ..., sigma2) U^H``.

    With ``haar=False`` (default) ``U`` is the identity; otherwise a Haar
    unitary is drawn from ``seed``.
    """
    diag = spec.population_eigenvalues().astype(np.complex128)
    if not haar:
        return np.diag(diag)
    u = haar_unitary(spec.p, make_rng(seed, "population-unitary"))
    sigma = (u * diag) @ u.conj().T
    return 0.5 * (sigma + sigma.conj().T)


def detectable(alpha: float, sigma2: float, gamma: float) -> bool:
    """Whether a spike of power ``alpha`` separates from the noise bulk.

    The sample eigenvalue leaves the bulk iff ``alpha > sigma2 * sqrt(gamma)``.
    The boundary itself is not detectable.
    """
    if alpha <= 0 or sigma2 <= 0 or gamma <= 0:
        raise ParameterError("alpha, sigma2 and gamma must be positive")
    return bool(alpha > sigma2 * np.sqrt(gamma))


def generate_isotropic(
    spec: SpikeSpec,
    seed: int,
    *,
    haar: bool = False,
    index: int = 0,
) -> ObservationMatrix:
    """Draw ``X = Sigma^{1/2} Y`` with ``Y`` standard complex Gaussian.

    Args:
        spec: Model parameters.
        seed: Master seed; the output is a pure function of it.
        haar: Rotate the spike subspace by a Haar unitary instead of using
            the canonical coordinate axes.
        index: Stream index, used by Monte Carlo runners to derive per-trial
            data from a single master seed.
    """
    rng = make_rng(seed, "isotropic", index)
    y = complex_gaussian(rng, (spec.p, spec.n))
    y *= np.sqrt(spec.population_eigenvalues())[:, None]
    if haar:
        u = haar_unitary(spec.p, make_rng(seed, "isotropic-unitary", index))
        y = u @ y
    return ObservationMatrix(entries=y, spec=spec, seed=seed, model="isotropic")


def steering_matrix(thetas: Sequence[float], p: int) -> NDArray[np.complex128]:
    """Uniform linear array steering vectors ``p^{-1/2} exp(-i v sin(theta) pi)``.

    Returns a ``p x len(thetas)`` matrix whose columns have unit norm.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    if thetas.size == 0:
        raise ParameterError("at least one angle is required")
    if p < 1:
        raise ParameterError("p must be positive")
    if thetas.size > p:
        raise ParameterError(f"{thetas.size} angles exceed the array size p={p}")
    v = np.arange(p)[:, None]
    return np.exp(-1j * np.pi * v * np.sin(thetas)[None, :]) / np.sqrt(p)


def generate_doa(
    spec: SpikeSpec,
    thetas: Sequence[float] | None,
    seed: int,
    *,
    index: int = 0,
) -> ObservationMatrix:
    """Draw ``X = A(theta) P^{1/2} S + sigma N`` for a uniform linear array.

    If ``thetas`` is None the ``m`` angles are drawn uniformly on ``[0, 2 pi)``
    from their own stream, so passing back the drawn angles reproduces ``X``.
    """
    rng = make_rng(seed, "doa", index)
    if thetas is None:
        thetas = make_rng(seed, "doa-angles", index).uniform(0.0, 2.0 * np.pi, size=spec.m)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    if thetas.size != spec.m:
        raise ParameterError(f"expected {spec.m} angles, got {thetas.size}")
    a = steering_matrix(thetas, spec.p)
    s = complex_gaussian(rng, (spec.m, spec.n))
    s *= np.sqrt(spec.spike_powers())[:, None]
    noise = complex_gaussian(rng, (spec.p, spec.n))
    x = a @ s
    if spec.sigma2 > 0.0:
        x += np.sqrt(spec.sigma2) * noise
    return ObservationMatrix(
        entries=x,
        spec=spec,
        seed=seed,
        model="doa",
        thetas=tuple(float(t) for t in thetas),
    )
