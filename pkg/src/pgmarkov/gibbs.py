"""Polya-Gamma augmented Gibbs sampler for the covariate-driven Markov model.

For from-state ``i`` and destination ``j`` the likelihood of ``beta_ij``
given the other destinations is a product of binary logistic terms with
log-odds ``eta = x' beta_ij - C`` where ``C = log sum_{k != j} exp(psi_k)``.
Augmenting with ``omega ~ PG(1, eta)`` makes the full conditional Gaussian:

    precision  P = X' diag(omega) X + I / sigma2
    mean       P^{-1} ( X' (kappa + omega * C) + m0 / sigma2 ),  kappa = y - 1/2

``m0`` is zero except on the habitat block, where it equals the common mean
``mu_ij``. With a flat prior on ``mu_ij`` its conditional is
``N(mean(zeta_ij), sigma2 / H)``. See ``docs/math.md`` for the derivation.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import ConfigurationError, DimensionError, NumericError
from .imputation import ImputationSet, select_dataset
from .model import CoefficientState, DesignLayout, StateAlphabet
from .pg import fill_pg1, pg1

log = logging.getLogger(__name__)

THREADS_ENV = "PGMARKOV_THREADS"
# budget for keeping per-dataset blocks in memory across iterations
BLOCK_CACHE_BYTES = 256 * 2**20


@dataclass(frozen=True)
class PriorSpec:
    """Normal prior variance shared by the individual, habitat and quantitative blocks."""

    variance: float = 100.0

    def __post_init__(self):
        if not (self.variance > 0 and np.isfinite(self.variance)):
            raise ConfigurationError("prior variance must be positive and finite")


def default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 15000
    burn_in: int = 5000
    thin: int = 1
    seed: int = 0
    n_chains: int = 1
    n_threads: int | None = None
    init: str = "zero"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.n_iterations < 0 or self.burn_in < 0:
            raise ConfigurationError("iteration counts must be non-negative")
        if self.burn_in > self.n_iterations:
            raise ConfigurationError("burn-in exceeds the number of iterations")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if self.n_chains < 1:
            raise ConfigurationError("need at least one chain")
        if self.init not in ("zero", "random"):
            raise ConfigurationError(f"unknown init {self.init!r}")

    @property
    def threads(self):
        return self.n_threads if self.n_threads is not None else default_threads()

    @property
    def n_keep(self):
        return len(range(self.burn_in, self.n_iterations, self.thin))

    def to_dict(self):
        d = asdict(self)
        d["n_threads"] = self.threads
        return d


@dataclass
class FromStateBlock:
    """Transitions leaving state ``from_state``: design rows and destination codes."""

    from_state: int
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self):
        return self.X.shape[0]

    def indicators(self, j):
        return (self.y == j).astype(np.float64)


def build_blocks(X, src, dst, labels, J):
    """Split transitions by origin state for one label vector."""
    prev = labels[src]
    order = np.argsort(prev, kind="stable")
    counts = np.bincount(prev, minlength=J)
    rows = dst[order]
    Xs = X[rows]
    ys = labels[rows]
    bounds = np.concatenate([[0], np.cumsum(counts)])
    return [
        FromStateBlock(i, Xs[bounds[i] : bounds[i + 1]], ys[bounds[i] : bounds[i + 1]])
        for i in range(J)
    ]


def prior_mean(layout, mu_ij):
    m0 = np.zeros(layout.width)
    m0[layout.habitat_slice] = mu_ij
    return m0


def beta_conditional(X, kappa, omega, offset, m0, prior_var):
    """Gaussian full conditional of one coefficient vector given omega.

    Returns ``(mean, L)`` with ``L`` the lower Cholesky factor of the precision.
    """
    B = X.shape[1]
    if m0.shape != (B,):
        raise DimensionError(f"prior mean has shape {m0.shape}, expected ({B},)")
    P = (X.T * omega) @ X
    P[np.diag_indices(B)] += 1.0 / prior_var
    rhs = X.T @ (kappa + omega * offset) + m0 / prior_var
    try:
        L = cholesky(P, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericError("conditional precision is not positive definite") from exc
    mean = cho_solve((L, True), rhs, check_finite=False)
    return mean, L


def draw_gaussian_precision(mean, L, rng):
    z = rng.standard_normal(mean.size)
    return mean + solve_triangular(L, z, lower=True, trans="T", check_finite=False)


@njit(cache=True, nogil=True)
def _augmented_stats(X, psi, y, j, rng, P, rhs):
    """Offsets, omega ~ PG(1, eta) and the sums X'WX (lower) and X'(kappa + wC).

    Returns False if a log-odds value is not finite.
    """
    n, B = X.shape
    J = psi.shape[1]
    P[:, :] = 0.0
    rhs[:] = 0.0
    for r in range(n):
        m = -np.inf
        for k in range(J):
            if k != j and psi[r, k] > m:
                m = psi[r, k]
        s = 0.0
        for k in range(J):
            if k != j:
                s += np.exp(psi[r, k] - m)
        c = m + np.log(s)
        eta = psi[r, j] - c
        if not np.isfinite(eta):
            return False
        w = pg1(eta, rng)
        z = (0.5 if y[r] == j else -0.5) + w * c
        for a in range(B):
            xa = X[r, a]
            if xa == 0.0:
                continue
            rhs[a] += xa * z
            wxa = w * xa
            for b in range(a + 1):
                P[a, b] += wxa * X[r, b]
    return True


@njit(cache=True, nogil=True)
def _gaussian_from_precision(P, rhs, rng, out):
    """out ~ N(P^{-1} rhs, P^{-1}) using the lower triangle of P (overwritten).

    Returns False if P is not positive definite.
    """
    B = rhs.shape[0]
    for a in range(B):
        d = P[a, a]
        for k in range(a):
            d -= P[a, k] * P[a, k]
        if not d > 0.0:
            return False
        d = np.sqrt(d)
        P[a, a] = d
        for r in range(a + 1, B):
            v = P[r, a]
            for k in range(a):
                v -= P[r, k] * P[a, k]
            P[r, a] = v / d
    # L v = rhs, then L' out = v + z
    for a in range(B):
        v = rhs[a]
        for k in range(a):
            v -= P[a, k] * out[k]
        out[a] = v / P[a, a]
    for a in range(B):
        out[a] += rng.standard_normal()
    for a in range(B - 1, -1, -1):
        v = out[a]
        for k in range(a + 1, B):
            v -= P[k, a] * out[k]
        out[a] = v / P[a, a]
    return True


@njit(cache=True, nogil=True)
def _draw_beta(X, psi, y, j, m0, inv_var, rng, P, rhs, out):
    # 0 ok, 1 non-finite log-odds, 2 precision not positive definite
    if not _augmented_stats(X, psi, y, j, rng, P, rhs):
        return 1
    for a in range(rhs.shape[0]):
        P[a, a] += inv_var
        rhs[a] += m0[a] * inv_var
    if not _gaussian_from_precision(P, rhs, rng, out):
        return 2
    return 0


@njit(cache=True, nogil=True)
def _sweep_block(X, y, beta_i, m0s, dests, inv_var, rng, psi, P, rhs, out):
    """Update every non-reference destination of one from-state in turn."""
    n, B = X.shape
    J = beta_i.shape[0]
    for r in range(n):
        for k in range(J):
            v = 0.0
            for a in range(B):
                v += X[r, a] * beta_i[k, a]
            psi[r, k] = v
    for d in range(dests.shape[0]):
        j = dests[d]
        status = _draw_beta(X, psi, y, j, m0s[d], inv_var, rng, P, rhs, out)
        if status != 0:
            return status
        for a in range(B):
            beta_i[j, a] = out[a]
        for r in range(n):
            v = 0.0
            for a in range(B):
                v += X[r, a] * out[a]
            psi[r, j] = v
    return 0


def _raise_status(status):
    if status == 1:
        raise NumericError("non-finite log-odds in the Gibbs update")
    if status == 2:
        raise NumericError("conditional precision is not positive definite")


def _offset(psi, j):
    others = psi.copy()
    others[:, j] = -np.inf
    m = others.max(axis=1)
    return m + np.log(np.exp(others - m[:, None]).sum(axis=1))


def update_beta(block, coeffs, priors, j, layout, rng, psi=None, pg_fill=None):
    """Draw beta_ij from its full conditional.

    ``psi`` may carry the current (n, J) linear predictors of the block to
    avoid recomputing them. By default a compiled kernel draws omega, forms
    the conditional and draws from it; passing ``pg_fill(eta, rng, out)``
    switches to the vectorized reference path with that omega source (used
    with stubs in tests). Both paths consume ``rng`` identically.
    """
    i = block.from_state
    if j == coeffs.reference_index:
        raise ValueError("the reference destination has no coefficients")
    B = layout.width
    if coeffs.B != B or (block.n and block.X.shape[1] != B):
        raise DimensionError("block design width does not match the coefficients")
    m0 = prior_mean(layout, coeffs.mu[i, j])
    if block.n == 0:
        return m0 + np.sqrt(priors.variance) * rng.standard_normal(B)
    if psi is None:
        psi = block.X @ coeffs.beta[i].T
    if pg_fill is not None:
        C = _offset(psi, j)
        eta = psi[:, j] - C
        if not np.all(np.isfinite(eta)):
            raise NumericError("non-finite log-odds in the Gibbs update")
        omega = np.empty(block.n)
        pg_fill(eta, rng, omega)
        kappa = block.indicators(j) - 0.5
        mean, L = beta_conditional(block.X, kappa, omega, C, m0, priors.variance)
        return draw_gaussian_precision(mean, L, rng)
    P = np.empty((B, B))
    rhs = np.empty(B)
    out = np.empty(B)
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    _raise_status(
        _draw_beta(block.X, psi, block.y, j, m0, 1.0 / priors.variance, rng, P, rhs, out)
    )
    return out


def update_mu(zeta, variance, rng):
    """Habitat common mean under a flat prior: N(mean(zeta), variance / H)."""
    zeta = np.asarray(zeta, dtype=np.float64)
    return float(zeta.mean() + np.sqrt(variance / zeta.size) * rng.standard_normal())


@dataclass
class PosteriorChain:
    """Stored draws: ``beta`` (C, S, J, J, B), ``mu`` (C, S, J, J), ``dataset`` (C, S)."""

    beta: np.ndarray
    mu: np.ndarray
    dataset: np.ndarray
    alphabet: StateAlphabet
    layout: DesignLayout
    config: SamplerConfig | None = None
    priors: PriorSpec | None = None

    @property
    def n_chains(self):
        return self.beta.shape[0]

    @property
    def n_draws(self):
        return self.beta.shape[1]

    @property
    def pooled_beta(self):
        s = self.beta.shape
        return self.beta.reshape((s[0] * s[1],) + s[2:])

    @property
    def pooled_mu(self):
        s = self.mu.shape
        return self.mu.reshape((s[0] * s[1],) + s[2:])

    def transitions(self):
        return [(i, j) for i in range(self.alphabet.J) for j in self.alphabet.destinations]

    def draws(self, i, j, covariate):
        """Pooled draws of one coefficient, addressed by column name or index."""
        col = covariate if isinstance(covariate, (int, np.integer)) else self.layout.column(covariate)
        return self.pooled_beta[:, i, j, col]

    def state(self, chain, draw):
        return CoefficientState(
            self.beta[chain, draw].copy(),
            self.mu[chain, draw].copy(),
            self.alphabet.reference_index,
        )


class _BlockSource:
    def __init__(self, data, datasets):
        self.X = data.X
        self.src, self.dst = data.transition_index
        self.datasets = datasets
        self.J = data.alphabet.J
        per = max(1, self.src.size) * (data.layout.width + 1) * 8
        self.cache_ok = per * datasets.shape[0] <= BLOCK_CACHE_BYTES
        self._cache = {}

    def get(self, m):
        if m in self._cache:
            return self._cache[m]
        blocks = build_blocks(self.X, self.src, self.dst, self.datasets[m], self.J)
        if self.cache_ok:
            self._cache[m] = blocks
        return blocks


def _initial_state(alphabet, layout, config, rng):
    J, B = alphabet.J, layout.width
    coeffs = CoefficientState.zeros(J, B, alphabet.reference_index)
    if config.init == "random":
        for i in range(J):
            for j in alphabet.destinations:
                coeffs.beta[i, j] = config.init_scale * rng.standard_normal(B)
                if layout.n_habitats:
                    coeffs.mu[i, j] = coeffs.beta[i, j, layout.habitat_slice].mean()
    return coeffs


def _run_one(data, datasets, priors, config, seed_seq, pool, progress=None):
    alphabet, layout = data.alphabet, data.layout
    J, B = alphabet.J, layout.width
    dests = alphabet.destinations
    streams = [np.random.Generator(np.random.PCG64(s)) for s in seed_seq.spawn(3 + J)]
    init_rng, select_rng, mu_rng = streams[:3]
    block_rngs = streams[3:]

    coeffs = _initial_state(alphabet, layout, config, init_rng)
    source = _BlockSource(data, datasets)
    M = datasets.shape[0]
    S = config.n_keep
    out_beta = np.empty((S, J, J, B))
    out_mu = np.empty((S, J, J))
    out_ds = np.empty(S, dtype=np.int64)
    hab = layout.habitat_slice

    dest_arr = np.asarray(dests, dtype=np.int64)
    inv_var = 1.0 / priors.variance
    work = [(np.empty((B, B)), np.empty(B), np.empty(B)) for _ in range(J)]

    def sweep(block):
        i = block.from_state
        rng = block_rngs[i]
        if block.n == 0:
            for j in dests:
                coeffs.beta[i, j] = update_beta(block, coeffs, priors, j, layout, rng)
            return
        psi = np.empty((block.n, J))
        m0s = np.zeros((dest_arr.size, B))
        m0s[:, hab] = coeffs.mu[i, dest_arr][:, None]
        P, rhs, out = work[i]
        status = _sweep_block(
            block.X, block.y, coeffs.beta[i], m0s, dest_arr, inv_var, rng, psi, P, rhs, out
        )
        _raise_status(status)

    k = 0
    for it in range(config.n_iterations):
        m = select_dataset(M, select_rng)
        blocks = source.get(m)
        if pool is None:
            for block in blocks:
                sweep(block)
        else:
            list(pool.map(sweep, blocks))
        if layout.n_habitats:
            for i in range(J):
                for j in dests:
                    coeffs.mu[i, j] = update_mu(coeffs.beta[i, j, hab], priors.variance, mu_rng)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            out_beta[k] = coeffs.beta
            out_mu[k] = coeffs.mu
            out_ds[k] = m
            k += 1
        if progress is not None:
            progress(it)
    return out_beta, out_mu, out_ds


def run_chain(
    data,
    priors=None,
    config=None,
    imputations=None,
    allow_empty=False,
    progress=None,
):
    """Run ``config.n_chains`` Gibbs chains and return the stored draws.

    Parameters
    ----------
    data : ModelData
        Design rows and segment structure. ``data.labels`` supplies the
        states unless ``imputations`` is given.
    imputations : ImputationSet, optional
        When given, each iteration picks one of its M datasets uniformly.
    allow_empty : bool
        Permit data without any transition; the chain then samples the
        prior. Otherwise empty data is a configuration error.

    Chains and from-state blocks draw from independent substreams derived
    from ``config.seed``, so output is identical for any thread count.
    """
    priors = priors or PriorSpec()
    config = config or SamplerConfig()
    if imputations is not None:
        if not isinstance(imputations, ImputationSet):
            raise ConfigurationError("imputations must be an ImputationSet")
        imputations.check_schedule(data)
        datasets = imputations.labels
    elif data.labels is not None:
        datasets = data.labels[None, :]
    else:
        raise ConfigurationError("no labels and no imputation set supplied")
    if data.n_transitions == 0 and not allow_empty:
        raise ConfigurationError("data contain no transitions")
    if datasets.size and (datasets.min() < 0 or datasets.max() >= data.alphabet.J):
        raise ConfigurationError("state codes outside the alphabet")

    threads = config.threads
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    try:
        results = []
        for c, ss in enumerate(seeds):
            log.info("chain %d/%d: %d iterations", c + 1, config.n_chains, config.n_iterations)
            results.append(_run_one(data, datasets, priors, config, ss, pool, progress))
    finally:
        if pool is not None:
            pool.shutdown()
    beta = np.stack([r[0] for r in results])
    mu = np.stack([r[1] for r in results])
    ds = np.stack([r[2] for r in results])
    return PosteriorChain(beta, mu, ds, data.alphabet, data.layout, config, priors)


def split_rhat(draws):
    """Split potential scale reduction for draws shaped (chains, draws).

    Returns nan when fewer than 4 draws per chain.
    """
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 1:
        draws = draws[None]
    n = draws.shape[1] // 2
    if n < 2:
        return np.nan
    halves = np.concatenate([draws[:, :n], draws[:, n : 2 * n]], axis=0)
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    Bn = means.var(ddof=1)
    if W == 0:
        return 1.0 if Bn == 0 else np.inf
    var_plus = (n - 1) / n * W + Bn
    return float(np.sqrt(var_plus / W))


def effective_sample_size(draws):
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 1:
        draws = draws[None]
    m, n = draws.shape
    if n < 4:
        return float(m * n)
    centred = draws - draws.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centred, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += draws.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        prev = pair
        total += pair
    tau = max(-1.0 + 2.0 * total, 1.0 / np.log10(m * n + 10))
    return float(m * n / tau)


def diagnostics(chain):
    """R-hat and ESS per coefficient, as a list of dict rows."""
    rows = []
    names = chain.layout.column_names
    labels = chain.alphabet.labels
    for i, j in chain.transitions():
        for b, name in enumerate(names):
            d = chain.beta[:, :, i, j, b]
            rows.append(
                {
                    "from_state": labels[i],
                    "to_state": labels[j],
                    "covariate": name,
                    "rhat": split_rhat(d),
                    "ess": effective_sample_size(d),
                }
            )
    return rows
