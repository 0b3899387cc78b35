"""Simulation-based calibration: refit synthetic studies with known truth."""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .gibbs import SamplerConfig, run_chain
from .simulate import SimScenario, simulate_sequences
from .summary import coverage_report


@dataclass(frozen=True)
class CalibrationConfig:
    """Replicate count and per-fit settings.

    Replicate ``r`` draws its truth and data from ``SimScenario(seed=base_seed + r)``
    and fits with sampler seed ``base_seed + r``.
    """

    n_replicates: int = 50
    n_iterations: int = 6000
    burn_in: int = 1000
    scenario: SimScenario = field(default_factory=SimScenario)
    base_seed: int = 0
    n_threads: int = 1


def beta_digest(beta):
    return hashlib.sha256(np.ascontiguousarray(beta).tobytes()).hexdigest()


def run_replicate(rep, config):
    """Simulate, fit and score one replicate; returns a flat record."""
    seed = config.base_seed + rep
    spec = replace(config.scenario, seed=seed)
    t0 = time.perf_counter()
    _, data = simulate_sequences(spec, np.random.default_rng(seed))
    sampler = SamplerConfig(
        n_iterations=config.n_iterations, burn_in=config.burn_in, seed=seed, n_threads=config.n_threads
    )
    chain = run_chain(data, config=sampler)
    cov = coverage_report(chain, spec.truth)
    return {
        "replicate": rep,
        "seed": seed,
        "covered": int(cov["covered"].sum()),
        "n_coefficients": len(cov),
        "digest": beta_digest(chain.beta),
        "seconds": time.perf_counter() - t0,
    }


def _worker(args):
    return run_replicate(*args)


def run_calibration(config=None, processes=None, replicates=None):
    """Run replicates, in parallel processes when more than one CPU is available.

    Returns one row per replicate; pooled coverage is
    ``covered.sum() / n_coefficients.sum()``.
    """
    config = config or CalibrationConfig()
    reps = range(config.n_replicates) if replicates is None else replicates
    jobs = [(r, config) for r in reps]
    processes = processes or os.cpu_count() or 1
    if processes > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(processes, len(jobs))) as pool:
            rows = list(pool.map(_worker, jobs))
    else:
        rows = [_worker(j) for j in jobs]
    return pd.DataFrame(rows)


def pooled_coverage(frame):
    return float(frame["covered"].sum() / frame["n_coefficients"].sum())


def config_dict(config):
    d = asdict(config)
    d["scenario"] = {k: v for k, v in d["scenario"].items() if k not in ("alphabet", "layout", "covariates", "truth")}
    d["scenario"]["start"] = str(d["scenario"]["start"])
    return d
