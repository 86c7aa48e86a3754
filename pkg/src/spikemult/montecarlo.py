"""
Seeded Monte Carlo experiments for spike-count estimation.

Every trial derives its own random streams from ``(master_seed, trial_index)``
and results are reduced in trial order, so an experiment is bit-identical for
any number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .estimation import (
    DEFAULT_CONVENTION,
    VARIANCE_CONVENTIONS,
    PriorSpec,
    cluster_variance,
    estimate_k,
)
from .model import (
    ParameterError,
    SpikeSpec,
    detectable,
    generate_doa,
    generate_isotropic,
    make_rng,
)
from .spectrum import ClusterPartition, phi, spectrum, top_eigenvalues

__all__ = [
    "TABLE1_SIGMA2_DB",
    "TABLE1_REFERENCE_PROB",
    "FIG2_MODELS",
    "TrialConfig",
    "TrialOutcome",
    "ResultRow",
    "ExperimentResult",
    "ClusterMoments",
    "db_to_sigma2",
    "sigma2_to_db",
    "run_trial",
    "run_config",
    "sweep_sigma2",
    "sweep_dimension",
    "clt_diagnostic",
]

DATA_MODELS = ("isotropic", "doa")
CLT_MIN_TRIALS = 500

# sigma^2 grid (dB) and reported P(K_hat = K), K=3, p=500, n=1000, m=(1,4,2)
TABLE1_SIGMA2_DB = (
    -50.0, -40.0, -30.0, -20.0, -10.0, -6.99, -5.223, -3.98, -3.01, -2.22,
    -1.55, -0.97, -0.46, 0.0, 0.41, 0.80, 0.97, 1.14, 1.30, 1.46,
)
TABLE1_REFERENCE_PROB = (
    0.992, 0.978, 0.988, 0.986, 0.984, 0.978, 0.978, 0.980, 0.964, 0.974,
    0.972, 0.954, 0.960, 0.968, 0.942, 0.926, 0.896, 0.850, 0.694, 0.476,
)

FIG2_MODELS = {
    "A": (1, 2, 1),
    "B": (2, 4, 2),
    "C": (3, 6, 3),
}


def db_to_sigma2(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def sigma2_to_db(sigma2: float) -> float:
    return 10.0 * math.log10(sigma2)


@dataclass(frozen=True)
class TrialConfig:
    """One Monte Carlo configuration.

    When ``alphas`` is None each trial draws a uniformly random strictly
    decreasing ``len(mults)``-subset of the prior support; the multiplicities
    stay fixed.
    """

    mults: tuple[int, ...]
    p: int
    n: int
    sigma2: float
    prior: PriorSpec = field(default_factory=lambda: PriorSpec((1.0, 3.0, 5.0, 7.0)))
    k_max: int = 4
    trials: int = 500
    master_seed: int = 0
    data_model: str = "isotropic"
    variance_convention: str = DEFAULT_CONVENTION
    j_max: int | None = None
    alphas: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mults", tuple(int(m) for m in self.mults))
        if self.alphas is not None:
            object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if not 1 <= self.k_max <= self.prior.size:
            raise ParameterError(f"k_max={self.k_max} must lie in [1, |E|={self.prior.size}]")
        if self.alphas is None and len(self.mults) > self.prior.size:
            raise ParameterError("cannot draw more distinct spikes than the prior support holds")
        if self.data_model not in DATA_MODELS:
            raise ParameterError(f"data_model must be one of {DATA_MODELS}")
        if self.variance_convention not in VARIANCE_CONVENTIONS:
            raise ParameterError(f"variance_convention must be one of {VARIANCE_CONVENTIONS}")
        if self.sigma2 <= 0:
            raise ParameterError("sigma2 must be positive")
        if sum(self.mults) >= self.p:
            raise ParameterError("total multiplicity must be below p")

    @property
    def K(self) -> int:
        return len(self.mults)

    @property
    def gamma(self) -> float:
        return self.p / self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prior"] = list(self.prior.support)
        d["mults"] = list(self.mults)
        d["alphas"] = None if self.alphas is None else list(self.alphas)
        return d


@dataclass(frozen=True)
class TrialOutcome:
    index: int
    k_hat: int
    mults_hat: tuple[int, ...]
    alphas: tuple[float, ...]
    mults: tuple[int, ...]
    all_detectable: bool

    @property
    def k_correct(self) -> bool:
        return self.k_hat == len(self.mults)

    @property
    def mults_correct(self) -> bool:
        return self.mults_hat == self.mults


def _draw_alphas(config: TrialConfig, index: int) -> tuple[float, ...]:
    if config.alphas is not None:
        return config.alphas
    rng = make_rng(config.master_seed, "alphas", index)
    picked = rng.choice(np.asarray(config.prior.support), size=config.K, replace=False)
    return tuple(float(a) for a in np.sort(picked)[::-1])


def run_trial(config: TrialConfig, trial_index: int) -> TrialOutcome:
    """Draw one data set, run the unknown-K estimator and record the truth."""
    alphas = _draw_alphas(config, trial_index)
    spec = SpikeSpec(alphas, config.mults, config.sigma2, config.p, config.n)
    if config.data_model == "doa":
        x = generate_doa(spec, None, config.master_seed, index=trial_index)
    else:
        x = generate_isotropic(spec, config.master_seed, index=trial_index)
    est = estimate_k(
        spectrum(x),
        config.k_max,
        config.prior,
        config.sigma2,
        j_max=config.j_max,
        convention=config.variance_convention,
    )
    return TrialOutcome(
        index=trial_index,
        k_hat=est.k_hat,
        mults_hat=est.mults.mults,
        alphas=alphas,
        mults=config.mults,
        all_detectable=all(detectable(a, config.sigma2, config.gamma) for a in alphas),
    )


@dataclass
class ResultRow:
    """Aggregate of one configuration."""

    params: dict
    prob_correct: float
    mult_correct_rate: float
    trials: int
    undetectable_trials: int
    seconds: float | None = None

    @property
    def std_error(self) -> float:
        """Binomial standard error of ``prob_correct``."""
        q = self.prob_correct
        return math.sqrt(q * (1.0 - q) / self.trials)


def _map_trials(config: TrialConfig, threads: int) -> list[TrialOutcome]:
    indices = range(config.trials)
    if threads <= 1:
        return [run_trial(config, i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map preserves submission order
        return list(pool.map(lambda i: run_trial(config, i), indices))


def run_config(
    config: TrialConfig,
    *,
    threads: int = 1,
    params: dict | None = None,
    timed: bool = True,
) -> ResultRow:
    """Run all trials of ``config`` and aggregate them in trial order."""
    start = time.perf_counter()
    outcomes = _map_trials(config, threads)
    elapsed = time.perf_counter() - start
    if len(outcomes) != config.trials:
        raise RuntimeError(f"expected {config.trials} outcomes, got {len(outcomes)}")
    hits = [o for o in outcomes if o.k_correct]
    prob = len(hits) / config.trials
    mult_rate = sum(o.mults_correct for o in hits) / len(hits) if hits else 0.0
    return ResultRow(
        params=dict(params or {}),
        prob_correct=prob,
        mult_correct_rate=mult_rate,
        trials=config.trials,
        undetectable_trials=sum(not o.all_detectable for o in outcomes),
        seconds=elapsed if timed else None,
    )


@dataclass
class ExperimentResult:
    """Rows of an experiment plus the configuration that produced them."""

    name: str
    config: dict
    rows: list[ResultRow] = field(default_factory=list)

    def to_csv(self) -> str:
        keys: list[str] = []
        for row in self.rows:
            for k in row.params:
                if k not in keys:
                    keys.append(k)
        header = keys + ["prob_correct", "mult_correct_rate", "trials", "undetectable_trials", "seconds"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in self.rows:
            writer.writerow(
                [_fmt(row.params.get(k, "")) for k in keys]
                + [
                    _fmt(row.prob_correct),
                    _fmt(row.mult_correct_rate),
                    row.trials,
                    row.undetectable_trials,
                    "" if row.seconds is None else _fmt(row.seconds),
                ]
            )
        return buf.getvalue()

    def to_json(self, provenance: bool = True) -> str:
        doc = {
            "experiment": self.name,
            "rows": [
                {
                    **row.params,
                    "prob_correct": row.prob_correct,
                    "mult_correct_rate": row.mult_correct_rate,
                    "trials": row.trials,
                    "undetectable_trials": row.undetectable_trials,
                    "std_error": row.std_error,
                    "seconds": row.seconds,
                }
                for row in self.rows
            ],
        }
        if provenance:
            doc["config"] = self.config
        return json.dumps(doc, indent=2, sort_keys=True)


def _fmt(value) -> str:
    # repr of a float is its shortest round-trip form and ignores locale
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def sweep_sigma2(
    config: TrialConfig,
    sigma2_grid_db: Iterable[float],
    *,
    threads: int = 1,
    timed: bool = True,
    progress=None,
) -> ExperimentResult:
    """One row per noise level; ``sigma2 = 10 ** (dB / 10)``."""
    grid = list(sigma2_grid_db)
    if not grid:
        raise ParameterError("sigma2 grid is empty")
    result = ExperimentResult("sweep_sigma2", {"base": config.to_dict(), "sigma2_db": grid})
    for db in grid:
        cfg = replace(config, sigma2=db_to_sigma2(db))
        row = run_config(
            cfg,
            threads=threads,
            params={"sigma2_db": float(db), "sigma2": cfg.sigma2, "p": cfg.p, "n": cfg.n},
            timed=timed,
        )
        result.rows.append(row)
        if progress is not None:
            progress(row)
    return result


def sweep_dimension(
    config: TrialConfig,
    models: dict[str, Sequence[int]],
    p_grid: Iterable[int],
    gamma: float = 0.5,
    *,
    threads: int = 1,
    timed: bool = True,
    progress=None,
) -> ExperimentResult:
    """One row per ``(model, p)`` with ``n = p / gamma``; all else from ``config``."""
    p_grid = [int(p) for p in p_grid]
    if not p_grid or not models:
        raise ParameterError("models and p grid must be nonempty")
    result = ExperimentResult(
        "sweep_dimension",
        {
            "base": config.to_dict(),
            "models": {k: list(v) for k, v in models.items()},
            "p_grid": p_grid,
            "gamma": gamma,
        },
    )
    for name, mults in models.items():
        for p in p_grid:
            n = int(round(p / gamma))
            cfg = replace(config, mults=tuple(mults), p=p, n=n)
            row = run_config(
                cfg,
                threads=threads,
                params={"model": name, "m": sum(mults), "p": p, "n": n, "sigma2": cfg.sigma2},
                timed=timed,
            )
            result.rows.append(row)
            if progress is not None:
                progress(row)
    return result


@dataclass(frozen=True)
class ClusterMoments:
    empirical_mean: float
    empirical_variance: float
    theoretical_mean: float
    theoretical_variance: float

    @property
    def variance_ratio(self) -> float:
        return self.empirical_variance / self.theoretical_variance


def clt_diagnostic(
    spec: SpikeSpec,
    trials: int,
    *,
    seed: int = 0,
    convention: str = DEFAULT_CONVENTION,
) -> list[ClusterMoments]:
    """Empirical moments of the cluster sums against their predicted limits.

    Only the ``m`` leading eigenvalues are needed, so they are computed by
    Lanczos rather than a full eigendecomposition.
    """
    if not all(detectable(a, spec.sigma2, spec.gamma) for a in spec.alphas):
        raise ParameterError("all spikes must be detectable")
    if trials < CLT_MIN_TRIALS:
        raise ParameterError(f"trials must be >= {CLT_MIN_TRIALS}, got {trials}")
    partition = ClusterPartition(spec.mults)
    sums = np.empty((trials, spec.K))
    for t in range(trials):
        x = generate_isotropic(spec, seed, index=t)
        lam = top_eigenvalues(x, spec.m)
        csum = np.concatenate([[0.0], np.cumsum(lam)])
        b = np.asarray((0,) + partition.boundaries)
        sums[t] = csum[b[1:]] - csum[b[:-1]]
    out = []
    for k, (a, m) in enumerate(zip(spec.alphas, spec.mults)):
        out.append(
            ClusterMoments(
                empirical_mean=float(sums[:, k].mean()),
                empirical_variance=float(sums[:, k].var(ddof=1)),
                theoretical_mean=m * phi(a, spec.sigma2, spec.gamma),
                theoretical_variance=cluster_variance(
                    a, spec.sigma2, spec.gamma, m, spec.n, convention
                ),
            )
        )
    return out
