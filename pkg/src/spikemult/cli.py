"""
Command-line front end.

Subcommands: ``simulate``, ``estimate``, ``experiment`` and ``histogram``.
Exit codes are 0 on success, 1 for usage or parse errors, 2 for I/O errors
and 3 when an estimator precondition is violated.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .estimation import (
    DEFAULT_CONVENTION,
    VARIANCE_CONVENTIONS,
    PriorSpec,
    default_j_max,
    estimate_k,
)
from .model import RNG_SCHEME, ParameterError, SpikeSpec, generate_doa, generate_isotropic
from .montecarlo import TrialConfig, sweep_dimension, sweep_sigma2
from .spectrum import (
    DomainError,
    SpectrumSummary,
    ValidationError,
    histogram,
    mp_bulk_edges,
    phi,
    spectrum,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DOMAIN = 0, 1, 2, 3

BINARY_LAYOUT = "complex128, little-endian float64 pairs (re, im), row-major p x n"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- io


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"expected a list of numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"expected a list of integers, got {text!r}") from exc


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_config(name: str) -> dict:
    """Load a JSON config from a path, falling back to the bundled configs."""
    path = Path(name)
    if path.exists():
        text = _read_text(name)
    else:
        bundled = resources.files("spikemult").joinpath("configs", path.name)
        if not bundled.is_file():
            raise OSError(f"config {name} not found")
        text = bundled.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {name} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {name} must be a JSON object")
    return doc


def _write(path: str | None, payload: str | bytes) -> None:
    if path is None or path == "-":
        if isinstance(payload, bytes):
            sys.stdout.buffer.write(payload)
        else:
            sys.stdout.write(payload)
        return
    target = Path(path)
    try:
        if isinstance(payload, bytes):
            target.write_bytes(payload)
        else:
            target.write_text(payload, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_matrix(path: str, x: np.ndarray, sidecar: dict) -> None:
    """Write ``x`` as raw little-endian complex128 plus a JSON sidecar at ``path.json``."""
    payload = np.ascontiguousarray(x, dtype="<c16").tobytes(order="C")
    _write(path, payload)
    _write(path + ".json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_matrix(path: str) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_matrix`."""
    meta = json.loads(_read_text(path + ".json"))
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    p, n = int(meta["p"]), int(meta["n"])
    if len(raw) != p * n * 16:
        raise UsageError(f"{path} holds {len(raw)} bytes, expected {p * n * 16} for {p}x{n}")
    return np.frombuffer(raw, dtype="<c16").reshape(p, n).astype(np.complex128), meta


def _timestamp(args) -> str | None:
    if args.no_timestamp:
        return None
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def _provenance_lines(config: dict, args) -> str:
    if args.no_provenance:
        return ""
    return "# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")) + "\n"


# ------------------------------------------------------------------- simulate


def _spec_from(doc: dict) -> SpikeSpec:
    try:
        return SpikeSpec(
            alphas=tuple(doc["alphas"]),
            mults=tuple(doc["mults"]),
            sigma2=doc["sigma2"],
            p=int(doc["p"]),
            n=int(doc["n"]),
        )
    except KeyError as exc:
        raise UsageError(f"spec is missing field {exc.args[0]!r}") from exc


def _resolve_spec_args(args) -> dict:
    doc = load_config(args.config) if args.config else {}
    # a simulate sidecar nests the spec; accept it directly so runs can be replayed
    if isinstance(doc.get("spec"), dict):
        doc = {**doc, **doc.pop("spec")}
    for key in ("alphas", "mults"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = _floats(val) if key == "alphas" else _ints(val)
    for key in ("sigma2", "p", "n", "model"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.seed is not None:
        doc["seed"] = args.seed
    doc.setdefault("seed", 0)
    doc.setdefault("model", "isotropic")
    if doc["model"] not in ("isotropic", "doa"):
        raise UsageError(f"unknown model {doc['model']!r}")
    return doc


def _generate(doc: dict):
    spec = _spec_from(doc)
    if doc["model"] == "doa":
        return generate_doa(spec, doc.get("thetas"), int(doc["seed"]))
    return generate_isotropic(spec, int(doc["seed"]))


def cmd_simulate(args) -> int:
    doc = _resolve_spec_args(args)
    if args.out is None:
        raise UsageError("simulate needs --out for the binary data file")
    obs = _generate(doc)
    sidecar = {
        "layout": BINARY_LAYOUT,
        "p": obs.spec.p,
        "n": obs.spec.n,
        "seed": obs.seed,
        "model": obs.model,
        "spec": obs.spec.to_dict(),
        "thetas": None if obs.thetas is None else list(obs.thetas),
        "rng": RNG_SCHEME,
        "version": __version__,
    }
    write_matrix(args.out, obs.entries, sidecar)
    print(f"wrote {args.out} ({obs.spec.p}x{obs.spec.n}) and {args.out}.json", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- estimate


def _load_spectrum(args) -> tuple[SpectrumSummary, dict]:
    source = {}
    if args.data:
        x, meta = read_matrix(args.data)
        source = {"data": args.data, "p": meta["p"], "n": meta["n"]}
        return spectrum(x), source
    if args.eigenvalues is not None:
        values = _floats(args.eigenvalues)
        source = {"eigenvalues": "inline"}
    elif args.spectrum:
        text = _read_text(args.spectrum)
        try:
            values = [float(v) for v in json.loads(text)]
        except (json.JSONDecodeError, TypeError):
            values = _floats(text)
        except ValueError as exc:
            raise UsageError(f"{args.spectrum}: {exc}") from exc
        source = {"spectrum": args.spectrum}
    else:
        raise UsageError("estimate needs --data, --spectrum or --eigenvalues")
    if args.n is None:
        raise UsageError("--n (sample count) is required with a bare spectrum")
    if len(values) < 2:
        raise UsageError("a spectrum needs at least two eigenvalues")
    return SpectrumSummary.from_eigenvalues(values, args.n), source


def cmd_estimate(args) -> int:
    summary, source = _load_spectrum(args)
    if args.sigma2 is None:
        raise UsageError("--sigma2 is required")
    if not args.sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    prior = PriorSpec(tuple(_floats(args.prior)))
    k_max = args.k_max if args.k_max is not None else prior.size
    j_max = args.j_max if args.j_max is not None else default_j_max(summary.p)
    try:
        est = estimate_k(
            summary, k_max, prior, args.sigma2, j_max=j_max, convention=args.convention
        )
    except ParameterError as exc:
        raise DomainError(str(exc)) from exc
    lower, upper = mp_bulk_edges(args.sigma2, summary.gamma)
    scanned = summary.gaps[:j_max]
    top = np.argsort(-scanned, kind="stable")[: min(10, scanned.size)]
    config = {
        "source": source,
        "p": summary.p,
        "n": summary.n,
        "sigma2": args.sigma2,
        "prior": list(prior.support),
        "k_max": k_max,
        "j_max": j_max,
        "variance_convention": args.convention,
    }
    report = {
        "k_hat": est.k_hat,
        "mults": list(est.mults.mults),
        "gap_indices": list(est.mults.gap_indices),
        "alphas_hat": list(est.alphas_hat),
        "log_marginals": list(est.log_marginals),
        "candidates": [
            {"k": c.K, "mults": list(c.mults), "gap_indices": list(c.gap_indices)}
            for c in est.candidates
        ],
        "gap_diagnostics": {
            "largest_gaps": [{"index": int(i) + 1, "gap": float(scanned[i])} for i in top],
            "median_gap": float(np.median(scanned)),
            "low_contrast": est.mults.low_contrast,
        },
        "bulk_edges": [lower, upper],
        "gamma": summary.gamma,
    }
    if not args.no_provenance:
        report["config"] = config
    stamp = _timestamp(args)
    if stamp:
        report["timestamp"] = stamp
    _write(args.out, json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------- experiment

EXPERIMENT_DEFAULTS = {
    "prior": [1.0, 3.0, 5.0, 7.0],
    "k_max": 4,
    "trials": 500,
    "seed": 0,
    "data_model": "isotropic",
    "variance_convention": DEFAULT_CONVENTION,
    "j_max": None,
}


def resolve_experiment(doc: dict, args) -> dict:
    """Fill defaults, apply flag overrides and validate before any compute."""
    kind = doc.get("experiment")
    if kind not in ("sweep_sigma2", "sweep_dimension"):
        raise UsageError("config field 'experiment' must be 'sweep_sigma2' or 'sweep_dimension'")
    resolved = {**EXPERIMENT_DEFAULTS, **doc}
    if args.trials is not None:
        resolved["trials"] = args.trials
    if args.seed is not None:
        resolved["seed"] = args.seed
    required = ["mults", "p", "n", "sigma2_db"] if kind == "sweep_sigma2" else ["models", "p_grid", "sigma2"]
    missing = [k for k in required if k not in resolved]
    if missing:
        raise UsageError(f"config is missing {missing}")
    if kind == "sweep_dimension":
        resolved.setdefault("gamma", 0.5)
        resolved["p_grid"] = [int(p) for p in resolved["p_grid"]]
        first = next(iter(resolved["models"].values()))
        resolved.setdefault("mults", first)
        resolved.setdefault("p", resolved["p_grid"][0])
        resolved.setdefault("n", int(round(resolved["p"] / resolved["gamma"])))
        for mults in resolved["models"].values():
            for p in resolved["p_grid"]:
                if sum(mults) >= p:
                    raise ParameterError(f"model {mults} does not fit in p={p}")
    else:
        resolved.setdefault("sigma2", 1.0)
        if not resolved["sigma2_db"]:
            raise ParameterError("sigma2_db grid is empty")
    _trial_config(resolved)
    return resolved


def _trial_config(resolved: dict) -> TrialConfig:
    return TrialConfig(
        mults=tuple(resolved["mults"]),
        p=int(resolved["p"]),
        n=int(resolved["n"]),
        sigma2=float(resolved["sigma2"]),
        prior=PriorSpec(tuple(resolved["prior"])),
        k_max=int(resolved["k_max"]),
        trials=int(resolved["trials"]),
        master_seed=int(resolved["seed"]),
        data_model=resolved["data_model"],
        variance_convention=resolved["variance_convention"],
        j_max=resolved["j_max"],
    )


def _summary_line(row) -> None:
    params = " ".join(f"{k}={v}" for k, v in row.params.items())
    print(
        f"{params} P(K_hat=K)={row.prob_correct:.3f} "
        f"mult_ok={row.mult_correct_rate:.3f} trials={row.trials}",
        file=sys.stderr,
    )


def cmd_experiment(args) -> int:
    if not args.config:
        raise UsageError("experiment needs --config")
    resolved = resolve_experiment(load_config(args.config), args)
    config = _trial_config(resolved)
    timed = not args.no_timestamp
    if resolved["experiment"] == "sweep_sigma2":
        result = sweep_sigma2(
            config, resolved["sigma2_db"], threads=args.threads, timed=timed, progress=_summary_line
        )
    else:
        result = sweep_dimension(
            config,
            resolved["models"],
            resolved["p_grid"],
            resolved["gamma"],
            threads=args.threads,
            timed=timed,
            progress=_summary_line,
        )
    result.config = resolved
    csv_text = _provenance_lines(resolved, args) + result.to_csv()
    json_text = result.to_json(provenance=not args.no_provenance) + "\n"
    if args.out:
        _write(args.out + ".csv", csv_text)
        _write(args.out + ".json", json_text)
    else:
        _write(None, csv_text if args.format == "csv" else json_text)
    return EXIT_OK


# ------------------------------------------------------------------ histogram


def cmd_histogram(args) -> int:
    if args.data:
        x, meta = read_matrix(args.data)
        spec = meta.get("spec") or {}
        resolved = {"data": args.data, **spec}
    else:
        resolved = _resolve_spec_args(args)
        x = _generate(resolved).entries
    summary = spectrum(x)
    rows = histogram(summary.eigenvalues, bins=args.bins)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_left", "bin_right", "count"])
    for left, right, count in rows:
        writer.writerow([repr(left), repr(right), count])
    writer.writerow([])
    writer.writerow(["reference", "value"])
    sigma2 = resolved.get("sigma2")
    if sigma2 is not None and sigma2 > 0:
        lower, upper = mp_bulk_edges(sigma2, summary.gamma)
        writer.writerow(["mp_lower", repr(lower)])
        writer.writerow(["mp_upper", repr(upper)])
    for k, a in enumerate(resolved.get("alphas") or [], start=1):
        if sigma2 is not None:
            writer.writerow([f"phi_alpha_{k}", repr(phi(a, sigma2, summary.gamma))])
    _write(args.out, _provenance_lines(resolved, args) + buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for trials")
    common.add_argument("--out", default=None, help="output path (or prefix for experiment)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--trials", type=int, default=None, help="override trials per point")
    common.add_argument("--no-timestamp", action="store_true")
    common.add_argument("--no-provenance", action="store_true")

    spec_args = _Parser(add_help=False)
    spec_args.add_argument("--config", help="JSON spec file")
    spec_args.add_argument("--alphas", help="spike powers, e.g. 7,5,3")
    spec_args.add_argument("--mults", help="multiplicities, e.g. 1,4,2")
    spec_args.add_argument("--sigma2", type=float)
    spec_args.add_argument("--p", type=int)
    spec_args.add_argument("--n", type=int)
    spec_args.add_argument("--model", choices=("isotropic", "doa"))

    parser = _Parser(prog="spikemult", description="Spiked covariance simulation and spike-count estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_sim = sub.add_parser("simulate", parents=[common, spec_args], help="generate a data matrix")
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", parents=[common], help="estimate K, multiplicities and spikes")
    p_est.add_argument("--data", help="binary matrix written by simulate")
    p_est.add_argument("--spectrum", help="file with eigenvalues (JSON list or whitespace/comma separated)")
    p_est.add_argument("--eigenvalues", help="inline eigenvalues, comma separated")
    p_est.add_argument("--n", type=int, help="sample count for a bare spectrum")
    p_est.add_argument("--sigma2", type=float)
    p_est.add_argument("--prior", default="1,3,5,7", help="prior support E")
    p_est.add_argument("--k-max", type=int, default=None)
    p_est.add_argument("--j-max", type=int, default=None)
    p_est.add_argument("--convention", choices=VARIANCE_CONVENTIONS, default=DEFAULT_CONVENTION)
    p_est.set_defaults(func=cmd_estimate)

    p_exp = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo sweep")
    p_exp.add_argument("--config", help="experiment JSON (bundled: table1.cfg, fig2.cfg)")
    p_exp.set_defaults(func=cmd_experiment)

    p_hist = sub.add_parser("histogram", parents=[common, spec_args], help="eigenvalue histogram CSV")
    p_hist.add_argument("--data", help="binary matrix written by simulate")
    p_hist.add_argument("--bins", type=int, default=200)
    p_hist.set_defaults(func=cmd_histogram)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required: simulate, estimate, experiment, histogram")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.trials is not None and args.trials < 1:
            raise UsageError("--trials must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParameterError, ValidationError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"error: domain: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: i/o: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
