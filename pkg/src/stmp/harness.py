"""Experiment configuration and orchestration.

A single JSON config describes prior, operator, sampling, noise,
quantization, denoiser backend, damping, and seeds.  Runs execute every
seed (optionally in parallel), attach the state-evolution prediction,
and emit machine-readable results: results.json, trace.csv (fixed
schema) and se.json.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoisers import ExternalDenoiserClient, tweedie_denoiser
from .msgpass import StmpConfig, run_tmp
from .operators import make_operator, sample_model
from .priors import Prior, mmse_oracle, prior_from_dict, sample_prior, second_moment
from .quantizer import QuantizerSpec, run_qstmp, sample_quantized_model, uniform_interval
from .state_evolution import SETrace, run_se_qstmp, run_se_stmp

__all__ = [
    "ExperimentConfig",
    "ResultRecord",
    "ConfigError",
    "run_experiment",
    "run_se",
    "write_outputs",
]

ENV_EXTERNAL_ADDRESS = "STMP_DENOISER_ADDRESS"
TRACE_COLUMNS = ["iter", "v_A_pri", "v_B_pri", "v_B_post", "nmse", "se_mse"]
ALGORITHMS = ("tmp", "stmp", "qstmp")
BACKENDS = ("analytic", "fitted", "external")


class ConfigError(ValueError):
    """Configuration failed validation; message names the offending field."""


@dataclass
class ExperimentConfig:
    prior: dict
    operator: dict
    sampling_ratio: float
    noise_std: float
    algorithm: str = "stmp"
    quantizer: dict | None = None
    denoiser: dict = field(default_factory=lambda: {"backend": "analytic"})
    damping: float = 1.0
    seeds: list = field(default_factory=lambda: [0])
    max_iters: int = 50
    rel_change_tol: float = 1e-6
    inner_iters: int = 1
    record_trace: bool = False
    sweep: dict | None = None
    se_max_iters: int = 2000
    schema_version: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != 1:
            raise ConfigError(f"schema_version: unsupported version {self.schema_version}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: must be one of {ALGORITHMS}, got {self.algorithm!r}")
        try:
            prior_from_dict(self.prior)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"prior: {exc}") from exc
        kind = self.operator.get("kind")
        if kind not in ("dct", "hadamard"):
            raise ConfigError(f"operator.kind: must be 'dct' or 'hadamard', got {kind!r}")
        n = self.operator.get("n_cols")
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"operator.n_cols: must be a positive integer, got {n!r}")
        if kind == "hadamard" and n & (n - 1):
            raise ConfigError(f"operator.n_cols: hadamard needs a power of two, got {n}")
        if not (0.0 < self.sampling_ratio <= 1.0):
            raise ConfigError(f"sampling_ratio: must lie in (0, 1], got {self.sampling_ratio}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std: must be >= 0, got {self.noise_std}")
        if (self.quantizer is not None) != (self.algorithm == "qstmp"):
            raise ConfigError("quantizer: must be present exactly when algorithm is 'qstmp'")
        if self.quantizer is not None:
            bits = self.quantizer.get("bits")
            if not isinstance(bits, int) or bits < 1:
                raise ConfigError(f"quantizer.bits: must be a positive integer, got {bits!r}")
            interval = self.quantizer.get("interval")
            if interval is not None and interval <= 0:
                raise ConfigError(f"quantizer.interval: must be positive, got {interval}")
        backend = self.denoiser.get("backend")
        if backend not in BACKENDS:
            raise ConfigError(f"denoiser.backend: must be one of {BACKENDS}, got {backend!r}")
        if backend == "fitted":
            for key in ("model_first", "model_second"):
                path = self.denoiser.get(key)
                if not path or not os.path.exists(path):
                    raise ConfigError(f"denoiser.{key}: file not found: {path!r}")
        if backend == "external" and not (
            self.denoiser.get("address") or os.environ.get(ENV_EXTERNAL_ADDRESS)
        ):
            raise ConfigError("denoiser.address: required for the external backend")
        if not (0.0 < self.damping <= 1.0):
            raise ConfigError(f"damping: must lie in (0, 1], got {self.damping}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters: must be >= 1, got {self.max_iters}")
        if self.inner_iters < 1:
            raise ConfigError(f"inner_iters: must be >= 1, got {self.inner_iters}")
        if self.se_max_iters < 1:
            raise ConfigError(f"se_max_iters: must be >= 1, got {self.se_max_iters}")

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return ExperimentConfig(**raw)
        except TypeError as exc:
            raise ConfigError(f"missing required field: {exc}") from exc

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return ExperimentConfig.from_json(fh.read())

    def to_dict(self) -> dict:
        return asdict(self)

    def sweep_configs(self) -> list[tuple[object, "ExperimentConfig"]]:
        """Expand the sweep block into (value, config) pairs."""
        if self.sweep is None:
            return [(None, self)]
        param = self.sweep.get("param")
        values = self.sweep.get("values")
        if not values:
            raise ConfigError("sweep.values: must be a non-empty list")
        out = []
        for value in values:
            d = self.to_dict()
            d.pop("sweep")
            if param == "sampling_ratio":
                d["sampling_ratio"] = value
            elif param == "bits":
                if d.get("quantizer") is None:
                    raise ConfigError("sweep.param 'bits' needs a quantizer block")
                d["quantizer"] = dict(d["quantizer"], bits=value)
            elif param == "noise_std":
                d["noise_std"] = value
            elif param == "damping":
                d["damping"] = value
            else:
                raise ConfigError(f"sweep.param: unsupported parameter {param!r}")
            out.append((value, ExperimentConfig(**d)))
        return out


@dataclass
class ResultRecord:
    seed: int
    nmse: float
    nmse_db: float
    converged: bool
    iterations: int
    wall_clock_per_iter: float
    trace: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _resolve_quantizer(cfg: ExperimentConfig) -> QuantizerSpec:
    prior = prior_from_dict(cfg.prior)
    bits = cfg.quantizer["bits"]
    interval = cfg.quantizer.get("interval")
    if interval is None:
        spread = np.sqrt(second_moment(prior) + cfg.noise_std**2)
        interval = uniform_interval(bits, 4.0 * spread)
    return QuantizerSpec(bits=bits, interval=float(interval))


def _external_target(cfg: ExperimentConfig):
    addr = os.environ.get(ENV_EXTERNAL_ADDRESS) or cfg.denoiser.get("address")
    if isinstance(addr, str) and ":" in addr:
        host, port = addr.rsplit(":", 1)
        return ("tcp", host, int(port))
    if isinstance(addr, (list, tuple)):
        return ("stdio", list(addr))
    raise ConfigError(f"denoiser.address: expected 'host:port' or an argv list, got {addr!r}")


def _make_denoiser(cfg: ExperimentConfig, n: int):
    """Build the denoiser callable; returns (denoiser, closer)."""
    backend = cfg.denoiser.get("backend", "analytic")
    if backend == "analytic":
        return tweedie_denoiser(prior_from_dict(cfg.prior)), None
    if backend == "fitted":
        from .score_matching import LinearScoreModel, fitted_denoiser

        with open(cfg.denoiser["model_first"], encoding="utf-8") as fh:
            first = LinearScoreModel.from_json(fh.read())
        with open(cfg.denoiser["model_second"], encoding="utf-8") as fh:
            second = LinearScoreModel.from_json(fh.read())
        return fitted_denoiser(first, second), None
    target = _external_target(cfg)
    if target[0] == "tcp":
        client = ExternalDenoiserClient.connect(target[1], target[2], n)
    else:
        client = ExternalDenoiserClient.spawn(target[1], n)
    return client, client.close


def run_single_seed(cfg: ExperimentConfig, seed: int) -> ResultRecord:
    """One fully reproducible run: everything derives from (config, seed)."""
    prior = prior_from_dict(cfg.prior)
    n = cfg.operator["n_cols"]
    m = max(1, int(round(cfg.sampling_ratio * n)))
    ss = np.random.SeedSequence([cfg.schema_version, seed])
    op_seed, signal_seed, noise_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    if cfg.operator.get("seed") is not None:
        op_seed = cfg.operator["seed"]
    op = make_operator(m, n, cfg.operator["kind"], op_seed)
    x_true = sample_prior(prior, n, np.random.default_rng(signal_seed))

    run_cfg = StmpConfig(
        max_iters=cfg.max_iters,
        rel_change_tol=cfg.rel_change_tol,
        damping=cfg.damping,
        init_variance=second_moment(prior),
        record_trace=cfg.record_trace,
        inner_iters=cfg.inner_iters,
    )
    denoiser, closer = _make_denoiser(cfg, n)
    started = time.perf_counter()
    try:
        if cfg.algorithm == "qstmp":
            spec = _resolve_quantizer(cfg)
            qm = sample_quantized_model(op, x_true, spec, cfg.noise_std**2, noise_seed)
            out, trace = run_qstmp(qm, denoiser, run_cfg, ground_truth=x_true)
        else:
            model = sample_model(op, x_true, cfg.noise_std**2, noise_seed)
            out, trace = run_tmp(model, denoiser, run_cfg, ground_truth=x_true)
    finally:
        if closer is not None:
            closer()
    elapsed = time.perf_counter() - started

    nmse = trace.nmse[-1]
    return ResultRecord(
        seed=seed,
        nmse=nmse,
        nmse_db=10.0 * np.log10(nmse) if nmse > 0 else -np.inf,
        converged=trace.converged,
        iterations=trace.iterations,
        wall_clock_per_iter=elapsed / max(trace.iterations, 1),
        trace=trace.to_dict(),
    )


def _run_seed_worker(cfg_dict: dict, seed: int) -> dict:
    cfg = ExperimentConfig(**cfg_dict)
    return run_single_seed(cfg, seed).to_dict()


def se_prediction(cfg: ExperimentConfig) -> SETrace | None:
    """State-evolution trace for the config; analytic backends only."""
    if cfg.denoiser.get("backend") != "analytic":
        return None
    prior = prior_from_dict(cfg.prior)
    if cfg.algorithm == "qstmp":
        return run_se_qstmp(
            prior,
            cfg.sampling_ratio,
            cfg.noise_std**2,
            _resolve_quantizer(cfg),
            max_iters=cfg.se_max_iters,
        )
    return run_se_stmp(prior, cfg.sampling_ratio, cfg.noise_std**2, max_iters=cfg.se_max_iters)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Execute all seeds of (possibly swept) configs and attach SE overlays.

    Returns {"groups": [{"sweep_value", "records", "se", "aggregate"}, ...]}.
    """
    groups = []
    for value, sub in cfg.sweep_configs():
        se = se_prediction(sub)
        if workers > 1 and len(sub.seeds) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(_run_seed_worker, sub.to_dict(), int(s)): s for s in sub.seeds}
                records = [ResultRecord(**f.result()) for f in concurrent.futures.as_completed(futs)]
            records.sort(key=lambda r: sub.seeds.index(r.seed))
        else:
            records = [run_single_seed(sub, int(s)) for s in sub.seeds]
        mean_nmse = float(np.mean([r.nmse for r in records]))
        groups.append(
            {
                "sweep_value": value,
                "records": records,
                "se": se,
                "aggregate": {
                    "mean_nmse": mean_nmse,
                    "mean_nmse_db": 10.0 * float(np.log10(mean_nmse)) if mean_nmse > 0 else None,
                    "all_converged": all(r.converged for r in records),
                },
            }
        )
    return {"config": cfg.to_dict(), "groups": groups}


def run_se(cfg: ExperimentConfig) -> list[dict]:
    """SE-only mode: deterministic traces per sweep value, no sampling."""
    out = []
    for value, sub in cfg.sweep_configs():
        se = se_prediction(sub)
        if se is None:
            raise ConfigError("denoiser.backend: SE-only mode needs the analytic backend")
        out.append({"sweep_value": value, "se": se.to_dict()})
    return out


def _se_nmse_overlay(se: SETrace | None, prior: Prior) -> list:
    if se is None:
        return []
    norm = second_moment(prior)
    return [m / norm for m in se.predicted_mse]


def write_outputs(outdir: str, result: dict) -> dict[str, str]:
    """Write results.json, trace.csv and se.json; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    cfg = ExperimentConfig(**result["config"])
    prior = prior_from_dict(cfg.prior)

    paths = {
        "results": os.path.join(outdir, "results.json"),
        "trace": os.path.join(outdir, "trace.csv"),
        "se": os.path.join(outdir, "se.json"),
    }
    payload = {
        "config": result["config"],
        "groups": [
            {
                "sweep_value": g["sweep_value"],
                "aggregate": g["aggregate"],
                "records": [
                    {k: v for k, v in r.to_dict().items() if k != "trace"} for r in g["records"]
                ],
                "se_fixed_point": g["se"].fixed_point if g["se"] is not None else None,
            }
            for g in result["groups"]
        ],
    }
    with open(paths["results"], "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(paths["trace"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for g in result["groups"]:
            overlay = _se_nmse_overlay(g["se"], prior)
            for rec in g["records"]:
                tr = rec.trace
                for i in range(tr["iterations"]):
                    writer.writerow(
                        {
                            "iter": i,
                            "v_A_pri": tr["v_A_pri"][i],
                            "v_B_pri": tr["v_B_pri"][i],
                            "v_B_post": tr["v_B_post"][i],
                            "nmse": tr["nmse"][i] if tr["nmse"] else "",
                            "se_mse": overlay[i] if i < len(overlay) else "",
                        }
                    )

    se_payload = [
        {
            "sweep_value": g["sweep_value"],
            "se": g["se"].to_dict() if g["se"] is not None else None,
        }
        for g in result["groups"]
    ]
    with open(paths["se"], "w", encoding="utf-8") as fh:
        json.dump(se_payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def conformance_check(
    prior: Prior,
    client: ExternalDenoiserClient,
    n: int,
    requests: int,
    seed: int = 0,
    tolerance: float = 1e-9,
) -> dict:
    """Compare an external denoiser against the in-process analytic one."""
    from .denoisers import denoise_tweedie

    rng = np.random.default_rng(seed)
    worst_mean = worst_var = 0.0
    for _ in range(requests):
        v = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        r = sample_prior(prior, n, rng) + np.sqrt(v) * rng.standard_normal(n)
        remote = client.denoise(r, v)
        local = denoise_tweedie(prior, r, v)
        worst_mean = max(worst_mean, float(np.max(np.abs(remote.mean - local.mean))))
        worst_var = max(worst_var, abs(remote.variance - local.variance))
    return {
        "requests": requests,
        "max_mean_abs_diff": worst_mean,
        "max_variance_abs_diff": worst_var,
        "tolerance": tolerance,
        "passed": worst_mean <= tolerance and worst_var <= tolerance,
    }


def oracle_probe(prior: Prior, r: float, v: float) -> dict:
    """Tiny helper for spot-checking the quadrature oracle from the CLI."""
    mean, var = mmse_oracle(prior, r, v)
    return {"r": r, "v": v, "mean": mean, "variance": var}
