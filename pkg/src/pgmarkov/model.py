"""State sequences, design layout and the multinomial-logistic transition model.

Conventions used throughout the package:

* States are integer codes ``0..J-1`` in alphabet order. The reference
  category keeps its own code; coefficients for transitions *into* it are
  pinned to zero, so ``beta[:, ref, :] == 0`` always.
* The design row attached to a transition ``(t-1) -> t`` is the covariate row
  of fix ``t``.
* Design columns are laid out as individual effects (N-1, sum-to-zero coded),
  habitat indicators (H, one-hot) and quantitative covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit, logsumexp

from .errors import DimensionError, NumericError, ValidationError

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class StateAlphabet:
    labels: tuple
    reference_index: int = -1

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("need at least two states")
        if len(set(labels)) != len(labels):
            raise ValueError(f"state labels must be unique: {labels}")
        ref = self.reference_index
        if ref < 0:
            ref += len(labels)
        if not 0 <= ref < len(labels):
            raise ValueError(f"reference index {self.reference_index} out of range")
        object.__setattr__(self, "reference_index", ref)

    @classmethod
    def from_labels(cls, labels, reference=None):
        """Build an alphabet; ``reference`` is a label name (default: last label)."""
        labels = tuple(str(x) for x in labels)
        if reference is None:
            return cls(labels)
        if reference not in labels:
            raise ValueError(f"reference state {reference!r} not in {labels}")
        return cls(labels, labels.index(reference))

    @property
    def J(self):
        return len(self.labels)

    @property
    def reference(self):
        return self.labels[self.reference_index]

    @property
    def destinations(self):
        """Codes of the non-reference states, in order."""
        return tuple(k for k in range(self.J) if k != self.reference_index)

    def code(self, label):
        return self.labels.index(str(label))

    def to_dict(self):
        return {"labels": list(self.labels), "reference": self.reference}

    @classmethod
    def from_dict(cls, d):
        return cls.from_labels(d["labels"], d.get("reference"))


@dataclass
class BehaviorSequence:
    """One regularly spaced run of states for an individual.

    ``t0`` is in seconds since the epoch and ``step`` in seconds. A gap in the
    original fix schedule starts a new sequence.
    """

    individual_id: str
    states: np.ndarray
    t0: float = 0.0
    step: float = 360.0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.ndim != 1 or self.states.size < 2:
            raise ValueError("a behaviour sequence needs at least two states")

    @property
    def n_transitions(self):
        return self.states.size - 1


def split_at_gaps(timestamps, step, gap_factor=1.5):
    """Segment boundaries for a sorted timestamp vector.

    Returns ``(starts, lengths)``; a new segment begins wherever the spacing
    exceeds ``gap_factor * step``.
    """
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if timestamps.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    breaks = np.flatnonzero(np.diff(timestamps) > gap_factor * step) + 1
    starts = np.concatenate([[0], breaks]).astype(np.int64)
    ends = np.concatenate([breaks, [timestamps.size]]).astype(np.int64)
    return starts, ends - starts


@dataclass(frozen=True)
class DesignLayout:
    individuals: tuple
    habitats: tuple
    quantitative: tuple = ()

    def __post_init__(self):
        for name in ("individuals", "habitats", "quantitative"):
            object.__setattr__(self, name, tuple(str(x) for x in getattr(self, name)))
        if len(self.individuals) < 1:
            raise ValueError("need at least one individual")

    @property
    def n_individuals(self):
        return len(self.individuals)

    @property
    def n_habitats(self):
        return len(self.habitats)

    @property
    def width(self):
        return self.n_individuals - 1 + self.n_habitats + len(self.quantitative)

    @property
    def individual_slice(self):
        return slice(0, self.n_individuals - 1)

    @property
    def habitat_slice(self):
        s = self.n_individuals - 1
        return slice(s, s + self.n_habitats)

    @property
    def quantitative_slice(self):
        return slice(self.n_individuals - 1 + self.n_habitats, self.width)

    @property
    def column_names(self):
        names = [f"ind[{x}]" for x in self.individuals[:-1]]
        names += [f"hab[{x}]" for x in self.habitats]
        names += list(self.quantitative)
        return names

    @property
    def column_blocks(self):
        return (
            ["individual"] * (self.n_individuals - 1)
            + ["habitat"] * self.n_habitats
            + ["quantitative"] * len(self.quantitative)
        )

    def column(self, name):
        names = self.column_names
        if name in names:
            return names.index(name)
        for prefix in ("hab", "ind"):
            if f"{prefix}[{name}]" in names:
                return names.index(f"{prefix}[{name}]")
        raise KeyError(name)

    def individual_codes(self):
        """(N, N-1) sum-to-zero coding; the last individual gets all -1."""
        n = self.n_individuals
        codes = np.zeros((n, n - 1))
        codes[: n - 1] = np.eye(n - 1)
        codes[n - 1] = -1.0
        return codes

    def design_matrix(self, individual, habitat, quantitative=None):
        """Assemble X from integer individual/habitat codes and a quantitative block."""
        individual = np.asarray(individual, dtype=np.int64)
        n = individual.size
        X = np.zeros((n, self.width))
        X[:, self.individual_slice] = self.individual_codes()[individual]
        if self.n_habitats:
            habitat = np.asarray(habitat, dtype=np.int64)
            X[np.arange(n), self.habitat_slice.start + habitat] = 1.0
        q = len(self.quantitative)
        if q:
            quantitative = np.asarray(quantitative, dtype=np.float64).reshape(n, q)
            X[:, self.quantitative_slice] = quantitative
        return X

    def to_dict(self):
        return {
            "individuals": list(self.individuals),
            "habitats": list(self.habitats),
            "quantitative": list(self.quantitative),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["individuals"], d["habitats"], d.get("quantitative", ()))


@dataclass
class CoefficientState:
    """One MCMC state: ``beta`` (J, J, B) and habitat means ``mu`` (J, J).

    Entries for the reference destination are held at zero.
    """

    beta: np.ndarray
    mu: np.ndarray
    reference_index: int

    @classmethod
    def zeros(cls, J, B, reference_index=-1):
        return cls(np.zeros((J, J, B)), np.zeros((J, J)), reference_index % J)

    def copy(self):
        return CoefficientState(self.beta.copy(), self.mu.copy(), self.reference_index)

    @property
    def J(self):
        return self.beta.shape[0]

    @property
    def B(self):
        return self.beta.shape[2]

    def check(self):
        ref = self.reference_index
        if np.any(self.beta[:, ref] != 0.0) or np.any(self.mu[:, ref] != 0.0):
            raise ValueError("reference-destination coefficients must be zero")
        if not (np.all(np.isfinite(self.beta)) and np.all(np.isfinite(self.mu))):
            raise NumericError("non-finite coefficients")


def individual_effects(beta_ij, layout):
    """Full length-N individual effect vector including the implied last one."""
    alpha = np.asarray(beta_ij)[layout.individual_slice]
    return np.concatenate([alpha, [-np.sum(alpha)]])


def linear_predictors(x, coeffs, from_state):
    """Linear predictors psi_{i.} = x' beta_{i.} for one or many design rows.

    ``x`` has shape (B,) or (n, B); the result has shape (J,) or (n, J), with
    the reference column identically zero.
    """
    x = np.asarray(x, dtype=np.float64)
    beta_i = coeffs.beta[from_state]
    if x.shape[-1] != beta_i.shape[-1]:
        raise DimensionError(
            f"design row width {x.shape[-1]} != coefficient width {beta_i.shape[-1]}"
        )
    return x @ beta_i.T


def _check_finite(psi):
    psi = np.asarray(psi, dtype=np.float64)
    if not np.all(np.isfinite(psi)):
        raise NumericError("non-finite linear predictor")
    return psi


def transition_row(psi):
    """Softmax over the last axis with max-subtraction."""
    psi = _check_finite(psi)
    z = psi - psi.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def offset_c(psi, j):
    """log sum_{k != j} exp(psi_k) along the last axis."""
    psi = _check_finite(psi)
    others = np.delete(psi, j, axis=-1)
    return logsumexp(others, axis=-1)


def logistic(x):
    return expit(x)


def transition_matrices(X, coeffs):
    """P_t for every design row: array (n, J, J), rows indexed by from-state."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != coeffs.B:
        raise DimensionError(f"design width {X.shape[-1]} != {coeffs.B}")
    psi = np.einsum("nb,ijb->nij", X, coeffs.beta)
    return transition_row(psi)


def count_transitions(states, J):
    """J x J matrix of (t-1, t) pair counts for one state vector."""
    states = np.asarray(states, dtype=np.int64)
    if states.size < 2:
        return np.zeros((J, J), dtype=np.int64)
    flat = states[:-1] * J + states[1:]
    return np.bincount(flat, minlength=J * J).reshape(J, J)


def transition_counts(seqs, J):
    """Transition counts per individual and pooled.

    Returns ``(per_individual, pooled)`` where ``per_individual`` maps
    individual id to a J x J integer matrix.
    """
    per = {}
    for seq in seqs:
        c = count_transitions(seq.states, J)
        if seq.individual_id in per:
            per[seq.individual_id] = per[seq.individual_id] + c
        else:
            per[seq.individual_id] = c
    pooled = np.zeros((J, J), dtype=np.int64)
    for c in per.values():
        pooled += c
    return per, pooled


@dataclass
class ModelData:
    """Fix-level data for all individuals, sorted by individual then time.

    ``X`` holds one design row per fix. ``seg_start``/``seg_len`` describe
    the gap-free segments (contiguous row ranges). ``labels`` is the fixed
    state vector, or None when states come from an imputation set.
    """

    alphabet: StateAlphabet
    layout: DesignLayout
    X: np.ndarray
    individual: np.ndarray
    timestamps: np.ndarray
    seg_start: np.ndarray
    seg_len: np.ndarray
    labels: np.ndarray | None = None
    step: float = 360.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.individual = np.asarray(self.individual, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.seg_start = np.asarray(self.seg_start, dtype=np.int64)
        self.seg_len = np.asarray(self.seg_len, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[1] != self.layout.width:
            raise DimensionError(
                f"design matrix shape {self.X.shape} does not match layout width {self.layout.width}"
            )
        n = self.X.shape[0]
        if self.individual.shape != (n,) or self.timestamps.shape != (n,):
            raise DimensionError("individual/timestamp vectors must have one entry per fix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DimensionError("labels must have one entry per fix")
            if n and (self.labels.min() < 0 or self.labels.max() >= self.alphabet.J):
                raise ValidationError("state codes outside the alphabet")
        self._src = None

    @property
    def n_fixes(self):
        return self.X.shape[0]

    @property
    def transition_index(self):
        """(src, dst) fix indices of every within-segment transition."""
        if self._src is None:
            parts = [
                np.arange(s, s + n - 1) for s, n in zip(self.seg_start, self.seg_len) if n > 1
            ]
            src = np.concatenate(parts) if parts else np.zeros(0, np.int64)
            self._src = (src.astype(np.int64), (src + 1).astype(np.int64))
        return self._src

    @property
    def n_transitions(self):
        return self.transition_index[0].size

    def sequences(self, labels=None):
        labels = self.labels if labels is None else np.asarray(labels)
        if labels is None:
            raise ValueError("no labels available")
        ids = self.layout.individuals
        out = []
        for s, n in zip(self.seg_start, self.seg_len):
            if n < 2:
                continue
            out.append(
                BehaviorSequence(
                    ids[self.individual[s]], labels[s : s + n], self.timestamps[s], self.step
                )
            )
        return out

    def with_labels(self, labels):
        return ModelData(
            self.alphabet,
            self.layout,
            self.X,
            self.individual,
            self.timestamps,
            self.seg_start,
            self.seg_len,
            labels,
            self.step,
            dict(self.info),
        )


def diurnal_covariates(solar_seconds):
    """cos/sin of the local solar time of day on a 24 h period."""
    angle = 2.0 * np.pi * np.asarray(solar_seconds, dtype=np.float64) / SECONDS_PER_DAY
    return np.cos(angle), np.sin(angle)


def standardize(values):
    """Column-wise (x - mean) / sd with population sd; returns (z, means, sds).

    A constant column raises ValidationError.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    means = values.mean(axis=0)
    sds = values.std(axis=0)
    bad = np.flatnonzero(~(sds > 0))
    if bad.size:
        raise ValidationError(f"covariate column {int(bad[0])} has zero standard deviation")
    return (values - means) / sds, means, sds


def assemble_design(layout, individual_ids, timestamps, habitat, quantitative, diurnal_seconds=None):
    """Build (X, individual codes, standardization stats) from raw columns.

    ``quantitative`` maps names to raw columns and is standardized; cos/sin
    time columns are computed from ``diurnal_seconds`` when the layout lists
    them. Shared with CSV ingestion so both paths give identical matrices.
    """
    ind_index = {v: k for k, v in enumerate(layout.individuals)}
    ind = np.array([ind_index[str(v)] for v in individual_ids], dtype=np.int64)
    hab_index = {v: k for k, v in enumerate(layout.habitats)}
    hab = None
    if layout.n_habitats:
        hab = np.array([hab_index[str(v)] for v in habitat], dtype=np.int64)
    n = ind.size
    q = np.zeros((n, len(layout.quantitative)))
    stats = {}
    std_names = [c for c in layout.quantitative if c in quantitative]
    if std_names:
        raw = np.column_stack([np.asarray(quantitative[c], dtype=np.float64) for c in std_names])
        z, means, sds = standardize(raw)
        for k, c in enumerate(std_names):
            q[:, layout.quantitative.index(c)] = z[:, k]
            stats[c] = {"mean": float(means[k]), "sd": float(sds[k])}
    if "cos_time" in layout.quantitative or "sin_time" in layout.quantitative:
        if diurnal_seconds is None:
            raise ValueError("diurnal covariates requested without solar times")
        cos_t, sin_t = diurnal_covariates(diurnal_seconds)
        if "cos_time" in layout.quantitative:
            q[:, layout.quantitative.index("cos_time")] = cos_t
        if "sin_time" in layout.quantitative:
            q[:, layout.quantitative.index("sin_time")] = sin_t
    X = layout.design_matrix(ind, hab, q)
    return X, ind, stats


def segments_by_individual(individual, timestamps, step, gap_factor=1.5):
    """Gap-split segments for fix rows already sorted by individual then time."""
    starts, lengths = [], []
    bounds = np.flatnonzero(np.diff(individual) != 0) + 1
    edges = np.concatenate([[0], bounds, [individual.size]])
    for a, b in zip(edges[:-1], edges[1:]):
        s, n = split_at_gaps(timestamps[a:b], step, gap_factor)
        starts.append(s + a)
        lengths.append(n)
    if not starts:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(starts), np.concatenate(lengths)


@njit(cache=True, nogil=True)
def _forward_kernel(X, beta, starts, lengths, init, rng, out):
    J = beta.shape[0]
    B = beta.shape[2]
    w = np.empty(J)
    for s in range(starts.shape[0]):
        r0 = starts[s]
        cur = init[s]
        out[r0] = cur
        for t in range(1, lengths[s]):
            r = r0 + t
            m = -np.inf
            for k in range(J):
                acc = 0.0
                for b in range(B):
                    acc += X[r, b] * beta[cur, k, b]
                w[k] = acc
                if acc > m:
                    m = acc
            tot = 0.0
            for k in range(J):
                w[k] = np.exp(w[k] - m)
                tot += w[k]
            u = rng.random() * tot
            k = 0
            c = w[0]
            while u >= c and k < J - 1:
                k += 1
                c += w[k]
            cur = k
            out[r] = cur


def forward_simulate(X, beta, seg_start, seg_len, initial_states, rng):
    """Simulate states forward through each segment from given first states.

    Returns an int64 vector of length ``X.shape[0]``; rows outside every
    segment are set to -1.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    if beta.ndim != 3 or beta.shape[2] != X.shape[1]:
        raise DimensionError("coefficient array does not match design width")
    out = np.full(X.shape[0], -1, dtype=np.int64)
    _forward_kernel(
        X,
        beta,
        np.asarray(seg_start, np.int64),
        np.asarray(seg_len, np.int64),
        np.asarray(initial_states, np.int64),
        rng,
        out,
    )
    return out
