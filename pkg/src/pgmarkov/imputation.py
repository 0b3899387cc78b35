"""Candidate label datasets drawn from per-fix classification probabilities."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

PROB_TOL = 1e-6


@dataclass
class ClassificationProbs:
    """Classifier output for one individual: one probability row per fix."""

    individual_id: str
    timestamps: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.timestamps.size:
            raise ValidationError(
                f"individual {self.individual_id}: probability rows do not match timestamps"
            )

    def validate(self, source=None, row_offset=0):
        validate_probability_rows(self.probs, source, row_offset)


def validate_probability_rows(probs, source=None, row_numbers=None):
    """Raise ValidationError listing every row that is not a probability vector.

    ``row_numbers`` maps array rows to the line numbers reported; an int is
    taken as an offset.
    """
    probs = np.asarray(probs, dtype=np.float64)
    bad_range = ~np.all((probs >= 0.0) & (probs <= 1.0), axis=1)
    bad_sum = np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL
    bad = np.flatnonzero(bad_range | bad_sum)
    if bad.size == 0:
        return
    if row_numbers is None:
        row_numbers = 0
    if np.isscalar(row_numbers):
        lines = bad + int(row_numbers)
    else:
        lines = np.asarray(row_numbers)[bad]
    issues = []
    for r, line in zip(bad, lines):
        if bad_range[r]:
            msg = "probabilities outside [0, 1]"
        else:
            msg = f"probabilities sum to {probs[r].sum():.8g}, not 1"
        issues.append((source, int(line), msg))
    raise ValidationError(issues)


@dataclass(frozen=True)
class ImputationSet:
    """M complete label vectors aligned with the fix order of a ModelData.

    ``labels`` has shape (M, n_fixes). ``individual`` and ``timestamps``
    record the fix schedule the labels belong to.
    """

    labels: np.ndarray
    individual: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("imputation labels must be (M, n_fixes)")
        if labels.shape[1] != np.asarray(self.timestamps).size:
            raise ValueError("imputation labels do not match the fix schedule")
        labels = labels.astype(np.int64, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def M(self):
        return self.labels.shape[0]

    @property
    def n_fixes(self):
        return self.labels.shape[1]

    def dataset(self, m):
        return self.labels[m]

    def check_schedule(self, data):
        if not (
            np.array_equal(np.asarray(self.individual), data.individual)
            and np.array_equal(np.asarray(self.timestamps), data.timestamps)
        ):
            raise ValidationError("imputation set was drawn for a different fix schedule")

    def save(self, directory):
        """Write ``labels.npy``, ``individual.npy``, ``timestamps.npy`` and ``imputation.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "labels.npy", np.ascontiguousarray(self.labels, dtype=np.int16))
        np.save(d / "individual.npy", np.asarray(self.individual, dtype=np.int64))
        np.save(d / "timestamps.npy", np.asarray(self.timestamps, dtype=np.float64))
        meta = {"M": int(self.M), "n_fixes": int(self.n_fixes), "format": 1}
        (d / "imputation.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        return cls(
            np.load(d / "labels.npy").astype(np.int64),
            np.load(d / "individual.npy"),
            np.load(d / "timestamps.npy"),
        )


def _draw_categorical(probs, M, rng):
    cum = np.cumsum(probs, axis=1)
    cum /= cum[:, -1:]
    out = np.empty((M, probs.shape[0]), dtype=np.int64)
    J = probs.shape[1]
    for m in range(M):
        u = rng.random(probs.shape[0])
        k = (u[:, None] >= cum).sum(axis=1)
        np.minimum(k, J - 1, out=k)
        out[m] = k
    return out


def draw_imputations(probs, M, rng, individual=None, timestamps=None):
    """Draw M label datasets by independent categorical sampling per fix.

    Parameters
    ----------
    probs : ndarray (n_fixes, J) or list of ClassificationProbs
        Rows must each sum to one within 1e-6. A list is concatenated in
        order.
    M : int
    rng : numpy.random.Generator
        Each individual gets its own spawned child stream, so the result
        does not depend on the order individuals are processed in.
    individual, timestamps : ndarray, optional
        Fix schedule for an array input; defaults to a single individual
        with row-index timestamps.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if isinstance(probs, (list, tuple)):
        individual = np.concatenate(
            [np.full(p.timestamps.size, k, dtype=np.int64) for k, p in enumerate(probs)]
        )
        timestamps = np.concatenate([p.timestamps for p in probs])
        probs = np.concatenate([p.probs for p in probs], axis=0)
    probs = np.asarray(probs, dtype=np.float64)
    validate_probability_rows(probs)
    n = probs.shape[0]
    if individual is None:
        individual = np.zeros(n, dtype=np.int64)
    if timestamps is None:
        timestamps = np.arange(n, dtype=np.float64)
    individual = np.asarray(individual, dtype=np.int64)
    ids = np.unique(individual)
    children = rng.spawn(ids.size)
    labels = np.empty((M, n), dtype=np.int64)
    for child, ind in zip(children, ids):
        rows = np.flatnonzero(individual == ind)
        labels[:, rows] = _draw_categorical(probs[rows], M, child)
    return ImputationSet(labels, individual, np.asarray(timestamps, dtype=np.float64))


def select_dataset(imputations, rng):
    """Uniform index in 0..M-1. With M == 1 the stream is not advanced."""
    M = imputations if isinstance(imputations, (int, np.integer)) else imputations.M
    if M == 1:
        return 0
    return int(rng.integers(M))


def argmax_labels(probs):
    """Most probable state per fix; ties go to the lowest state code."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.argmax(probs, axis=1).astype(np.int64)
