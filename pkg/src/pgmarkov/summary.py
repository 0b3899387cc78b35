"""Posterior summaries: odds ratios, credible intervals, significance calls,
habitat contrasts and posterior-predictive goodness of fit.

Odds-ratio summaries are computed on exponentiated draws, so the reported
mean odds ratio is the mean of exp(beta), not exp of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DimensionError, ValidationError
from .gibbs import PosteriorChain
from .model import CoefficientState, forward_simulate

LOWER_Q = 0.025
UPPER_Q = 0.975
SIG_PROP = 0.95


def _pooled(chain):
    if chain.beta.size == 0 or chain.n_draws == 0:
        raise ConfigurationError("chain holds no draws")
    return chain.pooled_beta


def odds_ratios(chain):
    """exp of every stored coefficient draw, shape (draws, J, J, B)."""
    return np.exp(_pooled(chain))


def interval(draws, axis=0):
    """Posterior mean and equal-tailed 95% interval of ``draws``."""
    draws = np.asarray(draws, dtype=np.float64)
    lo, hi = np.quantile(draws, [LOWER_Q, UPPER_Q], axis=axis)
    return draws.mean(axis=axis), lo, hi


@dataclass(frozen=True)
class Significance:
    """Significance call for one odds ratio.

    ``flag`` is +1 (positive), -1 (negative) or 0.
    """

    flag: int
    proportion: float
    mean: float
    lower: float
    upper: float

    @property
    def label(self):
        return {1: "positive", -1: "negative", 0: "none"}[self.flag]


def significance_from_draws(or_draws):
    """Classify odds-ratio draws.

    Positive when the 95% interval excludes one and more than 95% of draws
    exceed one; negative when it excludes one and fewer than 5% do. Both
    conditions use the same draws.
    """
    d = np.asarray(or_draws, dtype=np.float64).ravel()
    if d.size == 0:
        raise ConfigurationError("no draws to classify")
    mean, lo, hi = interval(d)
    prop = float(np.mean(d > 1.0))
    excludes = lo > 1.0 or hi < 1.0
    flag = 0
    if excludes and prop > SIG_PROP:
        flag = 1
    elif excludes and prop < 1.0 - SIG_PROP:
        flag = -1
    return Significance(flag, prop, float(mean), float(lo), float(hi))


def significance(chain, i, j, covariate):
    """Significance of a quantitative covariate's odds ratio on transition i -> j."""
    layout = chain.layout
    col = covariate if isinstance(covariate, (int, np.integer)) else layout.column(covariate)
    if layout.column_blocks[col] != "quantitative":
        raise ValueError(f"{layout.column_names[col]} is not a quantitative covariate")
    return significance_from_draws(np.exp(_pooled(chain)[:, i, j, col]))


def _coefficient_rows(chain):
    """(i, j, column name, block, draws) per reported coefficient.

    The last individual's effect, fixed by the sum-to-zero coding, is
    reported as a derived row.
    """
    beta = _pooled(chain)
    layout = chain.layout
    names = layout.column_names
    blocks = layout.column_blocks
    ind = layout.individual_slice
    for i, j in chain.transitions():
        for b, name in enumerate(names):
            yield i, j, name, blocks[b], beta[:, i, j, b]
            if b == ind.stop - 1 and layout.n_individuals > 1:
                last = -beta[:, i, j, ind].sum(axis=1)
                yield i, j, f"ind[{layout.individuals[-1]}]", "individual (derived)", last


def summary_table(chain):
    """One row per (from, to, covariate) with coefficient and odds-ratio summaries.

    ``significance`` is filled for quantitative covariates only. Rows for
    the reference destination are absent.
    """
    labels = chain.alphabet.labels
    rows = []
    for i, j, name, block, d in _coefficient_rows(chain):
        b_mean, b_lo, b_hi = interval(d)
        sig = significance_from_draws(np.exp(d))
        rows.append(
            {
                "from_state": labels[i],
                "to_state": labels[j],
                "covariate": name,
                "block": block,
                "beta_mean": float(b_mean),
                "beta_lower": float(b_lo),
                "beta_upper": float(b_hi),
                "or_mean": sig.mean,
                "or_lower": sig.lower,
                "or_upper": sig.upper,
                "prop_or_gt_1": sig.proportion,
                "significance": sig.label if block == "quantitative" else "",
            }
        )
    return pd.DataFrame(rows)


def interval_frame(chain):
    """Long-format intervals (one row per coefficient and scale) for CI plots."""
    table = summary_table(chain)
    keep = ["from_state", "to_state", "covariate", "block"]
    parts = []
    for scale, prefix in (("beta", "beta_"), ("odds_ratio", "or_")):
        part = table[keep + [prefix + "mean", prefix + "lower", prefix + "upper"]].copy()
        part.columns = keep + ["mean", "lower", "upper"]
        part.insert(4, "scale", scale)
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


@dataclass
class PairwiseMatrix:
    """Proportions of draws with zeta_a > zeta_b for one transition.

    ``values[a, b]`` for a != b; the diagonal is NaN. Ties count one half
    so that ``values[a, b] + values[b, a] == 1``.
    """

    from_state: str
    to_state: str
    habitats: tuple
    values: np.ndarray

    def significant(self):
        """Boolean mask of entries above 0.95 or below 0.05."""
        v = np.nan_to_num(self.values, nan=0.5)
        return (v > SIG_PROP) | (v < 1.0 - SIG_PROP)

    def to_frame(self):
        return pd.DataFrame(self.values, index=list(self.habitats), columns=list(self.habitats))


def pairwise_from_draws(zeta):
    """H x H matrix of P(zeta_a > zeta_b) from draws shaped (S, H)."""
    zeta = np.asarray(zeta, dtype=np.float64)
    S, H = zeta.shape
    out = np.full((H, H), np.nan)
    for a in range(H):
        for b in range(a + 1, H):
            gt = np.count_nonzero(zeta[:, a] > zeta[:, b])
            eq = np.count_nonzero(zeta[:, a] == zeta[:, b])
            out[a, b] = (gt + 0.5 * eq) / S
            out[b, a] = 1.0 - out[a, b]
    return out


def pairwise_habitat(chain, i, j):
    layout = chain.layout
    if layout.n_habitats < 2:
        raise ValueError("pairwise habitat comparison needs at least two habitats")
    zeta = _pooled(chain)[:, i, j, layout.habitat_slice]
    labels = chain.alphabet.labels
    return PairwiseMatrix(labels[i], labels[j], tuple(layout.habitats), pairwise_from_draws(zeta))


# --- posterior prediction and goodness of fit ------------------------------


@dataclass
class Replicates:
    """Simulated label vectors (R, n_fixes) and the stored draw behind each."""

    labels: np.ndarray
    draw_index: np.ndarray


def _check_horizon(data):
    end = data.seg_start + data.seg_len
    if end.size and (data.seg_start.min() < 0 or end.max() > data.n_fixes):
        raise DimensionError("segments extend beyond the covariate rows")
    rows = np.concatenate([np.arange(s, e) for s, e in zip(data.seg_start, end)]) if end.size else []
    if len(rows) and not np.all(np.isfinite(data.X[rows])):
        raise ValidationError("covariate rows are missing within the prediction horizon")


def posterior_predict(source, data, rng, n_replicates=1, labels=None, initial_states=None):
    """Forward-simulate replicate label vectors from posterior draws.

    Parameters
    ----------
    source : PosteriorChain or CoefficientState
        With a chain, each replicate uses a stored draw picked uniformly at
        random.
    data : ModelData
        Supplies the covariate rows and segments of the horizon.
    labels : ndarray, optional
        Observed labels whose segment-initial states seed each replicate;
        defaults to ``data.labels``. Ignored when ``initial_states`` is given.
    """
    _check_horizon(data)
    if initial_states is None:
        labels = data.labels if labels is None else np.asarray(labels)
        if labels is None:
            raise ConfigurationError("no observed labels to take initial states from")
        initial_states = np.asarray(labels)[data.seg_start]
    initial_states = np.asarray(initial_states, dtype=np.int64)
    if initial_states.shape != data.seg_start.shape:
        raise DimensionError("need one initial state per segment")
    if isinstance(source, CoefficientState):
        betas = source.beta[None]
    elif isinstance(source, PosteriorChain):
        betas = _pooled(source)
    else:
        raise TypeError("source must be a PosteriorChain or CoefficientState")
    out = np.empty((n_replicates, data.n_fixes), dtype=np.int64)
    idx = np.zeros(n_replicates, dtype=np.int64)
    for r in range(n_replicates):
        if betas.shape[0] > 1:
            idx[r] = rng.integers(betas.shape[0])
        out[r] = forward_simulate(
            data.X, betas[idx[r]], data.seg_start, data.seg_len, initial_states, rng
        )
    return Replicates(out, idx)


def gof_statistics(labels, data):
    """Discrepancy statistics of one label vector.

    Returns a dict with ``transition_freq`` (J, J) joint cell frequencies
    over all transitions, ``occupancy`` (J,) fraction of fixes per state
    and ``stay`` the fraction of transitions that keep the state.
    """
    labels = np.asarray(labels, dtype=np.int64)
    J = data.alphabet.J
    src, dst = data.transition_index
    a, b = labels[src], labels[dst]
    n_tr = max(1, src.size)
    counts = np.bincount(a * J + b, minlength=J * J).reshape(J, J)
    in_seg = np.zeros(data.n_fixes, dtype=bool)
    for s, n in zip(data.seg_start, data.seg_len):
        in_seg[s : s + n] = True
    occ = np.bincount(labels[in_seg], minlength=J) / max(1, in_seg.sum())
    return {
        "transition_freq": counts / n_tr,
        "occupancy": occ,
        "stay": float(np.trace(counts) / n_tr),
    }


def _ppp(observed, reps):
    # two-sided-friendly: fraction of replicates >= observed, ties counting half
    return float(np.mean(reps > observed) + 0.5 * np.mean(reps == observed))


@dataclass
class GofResult:
    """Observed statistics against posterior-predictive replicates."""

    observed: dict
    replicates: dict
    alphabet: object

    def band(self, name):
        r = self.replicates[name]
        return np.quantile(r, [LOWER_Q, UPPER_Q], axis=0)

    def inside(self, name="stay"):
        lo, hi = self.band(name)
        obs = self.observed[name]
        return (lo <= obs) & (obs <= hi)

    def to_frame(self):
        labels = self.alphabet.labels
        rows = []

        def emit(stat, frm, to, obs, reps):
            lo, hi = np.quantile(reps, [LOWER_Q, UPPER_Q])
            rows.append(
                {
                    "statistic": stat,
                    "from_state": frm,
                    "to_state": to,
                    "observed": float(obs),
                    "replicate_mean": float(np.mean(reps)),
                    "lower": float(lo),
                    "upper": float(hi),
                    "ppp": _ppp(obs, reps),
                    "inside": bool(lo <= obs <= hi),
                }
            )

        emit("stay", "", "", self.observed["stay"], self.replicates["stay"])
        J = len(labels)
        for i in range(J):
            emit("occupancy", labels[i], "", self.observed["occupancy"][i], self.replicates["occupancy"][:, i])
        for i in range(J):
            for j in range(J):
                emit(
                    "transition_freq",
                    labels[i],
                    labels[j],
                    self.observed["transition_freq"][i, j],
                    self.replicates["transition_freq"][:, i, j],
                )
        return pd.DataFrame(rows)


def goodness_of_fit(source, data, rng, n_replicates=200, labels=None):
    """Compare observed statistics with replicates simulated from the posterior."""
    labels = data.labels if labels is None else np.asarray(labels)
    if labels is None:
        raise ConfigurationError("goodness of fit needs observed labels")
    reps = posterior_predict(source, data, rng, n_replicates, labels=labels)
    stats = [gof_statistics(r, data) for r in reps.labels]
    collected = {k: np.array([s[k] for s in stats]) for k in stats[0]} if stats else {}
    return GofResult(gof_statistics(labels, data), collected, data.alphabet)


# --- calibration ------------------------------------------------------------


def coverage_report(chain, truth):
    """Whether each true coefficient lies in its 95% interval.

    Returns a DataFrame over all non-reference (i, j, column) entries.
    """
    beta = _pooled(chain)
    if truth.beta.shape != beta.shape[1:]:
        raise DimensionError("truth does not match the chain's coefficient shape")
    _, lo, hi = interval(beta)
    labels = chain.alphabet.labels
    rows = []
    for i, j in chain.transitions():
        for b, name in enumerate(chain.layout.column_names):
            t = truth.beta[i, j, b]
            rows.append(
                {
                    "from_state": labels[i],
                    "to_state": labels[j],
                    "covariate": name,
                    "truth": float(t),
                    "lower": float(lo[i, j, b]),
                    "upper": float(hi[i, j, b]),
                    "covered": bool(lo[i, j, b] <= t <= hi[i, j, b]),
                }
            )
    return pd.DataFrame(rows)
