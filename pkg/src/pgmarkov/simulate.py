"""Synthetic scenarios with known coefficients, for parameter-recovery checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    CoefficientState,
    DesignLayout,
    ModelData,
    StateAlphabet,
    assemble_design,
    forward_simulate,
    segments_by_individual,
)

DEFAULT_START = np.datetime64("2018-03-01T00:00:00", "s")


@dataclass
class SimScenario:
    """Dimensions and generators of a synthetic study.

    ``n_noise`` smooth noise covariates are standardized; with ``diurnal``
    the pair cos/sin of time of day follows them (unstandardized). The true
    coefficients are drawn uniformly from ``coef_range`` unless ``truth`` is
    given. ``make_scenario`` fills in the materialized fields.
    """

    n_individuals: int = 2
    n_states: int = 3
    n_habitats: int = 2
    n_noise: int = 1
    diurnal: bool = True
    n_steps: int = 4000
    step_seconds: float = 360.0
    coef_range: tuple = (-1.0, 1.0)
    habitat_stay: float = 0.95
    noise_ar: float = 0.99
    seed: int = 0
    state_labels: tuple | None = None
    noise_labels: tuple | None = None
    habitat_labels: tuple | None = None
    reference: str | None = None
    start: np.datetime64 = DEFAULT_START
    truth: CoefficientState | None = None

    # materialized by make_scenario
    alphabet: StateAlphabet | None = field(default=None, repr=False)
    layout: DesignLayout | None = field(default=None, repr=False)
    covariates: dict | None = field(default=None, repr=False)

    @property
    def n_quantitative(self):
        return self.n_noise + (2 if self.diurnal else 0)


def _check_dims(spec):
    if spec.n_individuals < 1 or spec.n_states < 2 or spec.n_habitats < 0:
        raise ValueError("need N >= 1, J >= 2, H >= 0")
    if spec.n_steps < 2 or spec.n_noise < 0 or spec.step_seconds <= 0:
        raise ValueError("need at least two steps per individual and a positive step")
    lo, hi = spec.coef_range
    if not lo <= hi:
        raise ValueError("coef_range must be ordered")


def _sticky_path(n, H, stay, rng):
    if H == 0:
        return np.zeros(n, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    path[0] = rng.integers(H)
    move = rng.random(n) >= stay
    jumps = rng.integers(H, size=n)
    for t in range(1, n):
        path[t] = jumps[t] if move[t] else path[t - 1]
    return path


def _ar1(n, phi, rng):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi * phi)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def make_scenario(spec):
    """Materialize covariate paths and the true coefficients of ``spec``.

    Raw covariates are stored in ``spec.covariates`` (a dict of columns
    keyed like the covariate CSV); ``spec.truth`` holds the coefficients.
    The sum-to-zero coding makes the last individual's effect the negative
    sum of the others.
    """
    _check_dims(spec)
    rng = np.random.default_rng(spec.seed)
    labels = spec.state_labels or tuple(f"s{k + 1}" for k in range(spec.n_states))
    if len(labels) != spec.n_states:
        raise ValueError("state_labels length does not match n_states")
    spec.alphabet = StateAlphabet.from_labels(labels, spec.reference)
    habitats = spec.habitat_labels or tuple(f"h{k + 1}" for k in range(spec.n_habitats))
    if len(habitats) != spec.n_habitats:
        raise ValueError("habitat_labels length does not match n_habitats")
    quant = list(spec.noise_labels or (f"x{k + 1}" for k in range(spec.n_noise)))
    if len(quant) != spec.n_noise:
        raise ValueError("noise_labels length does not match n_noise")
    if spec.diurnal:
        quant += ["cos_time", "sin_time"]
    spec.layout = DesignLayout(
        tuple(f"ind{n + 1}" for n in range(spec.n_individuals)), habitats, quant
    )

    N, T = spec.n_individuals, spec.n_steps
    step = np.timedelta64(int(round(spec.step_seconds)), "s")
    ts = spec.start + step * np.arange(T)
    epoch = ts.astype("datetime64[s]").astype(np.int64).astype(np.float64)
    cols = {"individual_id": [], "timestamp": [], "habitat": []}
    for name in quant[: spec.n_noise]:
        cols[name] = []
    for n in range(N):
        cols["individual_id"].append(np.full(T, spec.layout.individuals[n], dtype=object))
        cols["timestamp"].append(epoch)
        hab = _sticky_path(T, spec.n_habitats, spec.habitat_stay, rng)
        cols["habitat"].append(
            np.array([habitats[h] for h in hab], dtype=object)
            if spec.n_habitats
            else np.full(T, "", dtype=object)
        )
        for name in quant[: spec.n_noise]:
            # raw scale, standardized on assembly
            cols[name].append(10.0 + 3.0 * _ar1(T, spec.noise_ar, rng))
    spec.covariates = {k: np.concatenate(v) for k, v in cols.items()}

    if spec.truth is None:
        J, B = spec.n_states, spec.layout.width
        truth = CoefficientState.zeros(J, B, spec.alphabet.reference_index)
        lo, hi = spec.coef_range
        for i in range(J):
            for j in spec.alphabet.destinations:
                truth.beta[i, j] = rng.uniform(lo, hi, size=B)
                if spec.n_habitats:
                    truth.mu[i, j] = truth.beta[i, j, spec.layout.habitat_slice].mean()
        spec.truth = truth
    elif spec.truth.beta.shape != (spec.n_states, spec.n_states, spec.layout.width):
        raise ValueError("explicit truth has the wrong shape")
    return spec


def scenario_design(spec):
    """ModelData (without labels) for a materialized scenario."""
    cov = spec.covariates
    quant = {c: cov[c] for c in spec.layout.quantitative if c in cov}
    seconds = np.mod(cov["timestamp"], 86400.0)
    X, ind, stats = assemble_design(
        spec.layout, cov["individual_id"], cov["timestamp"], cov["habitat"], quant, seconds
    )
    starts, lengths = segments_by_individual(ind, cov["timestamp"], spec.step_seconds)
    return ModelData(
        spec.alphabet,
        spec.layout,
        X,
        ind,
        cov["timestamp"],
        starts,
        lengths,
        None,
        spec.step_seconds,
        {"standardization": stats},
    )


def simulate_sequences(spec, rng):
    """Forward-simulate states under the true coefficients.

    The first state of every segment is uniform; later states follow the
    transition probabilities at each step. Returns ``(sequences, data)``
    where ``data`` carries the simulated labels.
    """
    if spec.covariates is None:
        make_scenario(spec)
    data = scenario_design(spec)
    init = rng.integers(spec.n_states, size=data.seg_start.size)
    labels = forward_simulate(data.X, spec.truth.beta, data.seg_start, data.seg_len, init, rng)
    data = data.with_labels(labels)
    return data.sequences(), data


def noisy_probabilities(labels, J, confidence, rng):
    """Classifier-like probability rows centred on ``labels``.

    Each row mixes the one-hot true label (weight ``confidence``) with a
    flat Dirichlet draw.
    """
    labels = np.asarray(labels, dtype=np.int64)
    noise = rng.dirichlet(np.ones(J), size=labels.size)
    probs = (1.0 - confidence) * noise
    probs[np.arange(labels.size), labels] += confidence
    return probs / probs.sum(axis=1, keepdims=True)


def demo_scenario(seed=2018, n_steps=1500):
    """Four-behaviour, three-habitat demo with temperature and time of day."""
    return SimScenario(
        n_individuals=3,
        n_states=4,
        n_habitats=3,
        n_noise=1,
        diurnal=True,
        n_steps=n_steps,
        seed=seed,
        state_labels=("flying", "feeding", "stationary", "walking"),
        noise_labels=("temperature",),
        habitat_labels=("corn", "open_water", "wetland"),
        reference="walking",
    )
