"""Run configuration, CSV ingestion with validation, and output writers.

File layouts are documented in ``docs/formats.md``.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigurationError, ValidationError
from .gibbs import PosteriorChain, PriorSpec, SamplerConfig
from .imputation import validate_probability_rows
from .model import (
    SECONDS_PER_DAY,
    DesignLayout,
    ModelData,
    StateAlphabet,
    assemble_design,
    segments_by_individual,
)

CHAIN_FORMAT = 1
DIURNAL = ("cos_time", "sin_time")


# --- configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    """Everything needed to load inputs and fit.

    Paths are resolved relative to the directory of the config file.
    """

    states: tuple
    reference: str | None = None
    labels: Path | None = None
    probabilities: Path | None = None
    covariates: Path | None = None
    output: Path = Path("out")
    habitats: tuple | None = None
    habitat_map: dict | None = None
    quantitative: tuple = ()
    diurnal: bool = False
    longitude: float | None = None
    step_seconds: float = 360.0
    gap_factor: float = 1.5
    prior: PriorSpec = field(default_factory=PriorSpec)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    m_imputations: int = 200
    source: Path | None = None

    def __post_init__(self):
        self.states = tuple(str(s) for s in self.states)
        if self.labels is None and self.probabilities is None:
            raise ConfigurationError("config needs a labels or a probabilities file")
        if self.covariates is None:
            raise ConfigurationError("config needs a covariates file")
        if self.m_imputations < 1:
            raise ConfigurationError("m_imputations must be at least 1")
        if self.step_seconds <= 0 or self.gap_factor <= 1.0:
            raise ConfigurationError("need step_seconds > 0 and gap_factor > 1")

    @property
    def alphabet(self):
        try:
            return StateAlphabet.from_labels(self.states, self.reference)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    @property
    def quantitative_columns(self):
        return tuple(self.quantitative) + (DIURNAL if self.diurnal else ())

    def to_dict(self):
        base = self.source.parent if self.source else None

        def rel(p):
            if p is None:
                return None
            p = Path(p)
            if base is not None:
                try:
                    return str(p.relative_to(base))
                except ValueError:
                    pass
            return str(p)

        return {
            "states": list(self.states),
            "reference": self.reference,
            "data": {
                "labels": rel(self.labels),
                "probabilities": rel(self.probabilities),
                "covariates": rel(self.covariates),
                "habitat_map": self.habitat_map,
            },
            "design": {
                "habitats": None if self.habitats is None else list(self.habitats),
                "quantitative": list(self.quantitative),
                "diurnal": self.diurnal,
                "longitude": self.longitude,
                "step_seconds": self.step_seconds,
                "gap_factor": self.gap_factor,
            },
            "prior": {"variance": self.prior.variance},
            "sampler": {k: v for k, v in self.sampler.to_dict().items() if k != "n_threads"},
            "imputation": {"M": self.m_imputations},
            "output": rel(self.output),
        }

    def hash(self):
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def _section(d, key):
    v = d.get(key) or {}
    if not isinstance(v, dict):
        raise ConfigurationError(f"config section {key!r} must be a mapping")
    return v


def parse_config(d, base=Path("."), source=None):
    """RunConfig from a parsed YAML mapping; relative paths are joined to ``base``."""
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a mapping")
    if "states" not in d:
        raise ConfigurationError("config is missing 'states'")
    base = Path(base)
    data = _section(d, "data")
    design = _section(d, "design")
    sampler = _section(d, "sampler")

    def path(v):
        return None if v in (None, "") else base / v

    hmap = data.get("habitat_map")
    if isinstance(hmap, str):
        hmap = read_habitat_map(base / hmap)
    known = set(SamplerConfig.__dataclass_fields__)
    unknown = set(sampler) - known
    if unknown:
        raise ConfigurationError(f"unknown sampler keys: {sorted(unknown)}")
    habitats = design.get("habitats")
    try:
        return RunConfig(
            states=d["states"],
            reference=d.get("reference"),
            labels=path(data.get("labels")),
            probabilities=path(data.get("probabilities")),
            covariates=path(data.get("covariates")),
            output=path(d.get("output", "out")),
            habitats=None if habitats is None else tuple(str(h) for h in habitats),
            habitat_map=hmap,
            quantitative=tuple(design.get("quantitative") or ()),
            diurnal=bool(design.get("diurnal", False)),
            longitude=design.get("longitude"),
            step_seconds=float(design.get("step_seconds", 360.0)),
            gap_factor=float(design.get("gap_factor", 1.5)),
            prior=PriorSpec(float(_section(d, "prior").get("variance", 100.0))),
            sampler=SamplerConfig(**sampler),
            m_imputations=int(_section(d, "imputation").get("M", 200)),
            source=source,
        )
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path):
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(d, path.parent, path)


def write_config(config, path):
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


def read_habitat_map(path):
    """Two-column CSV ``habitat,group`` regrouping raw habitat labels."""
    df = pd.read_csv(path, dtype=str)
    if list(df.columns[:2]) != ["habitat", "group"]:
        raise ValidationError([(str(path), 1, "habitat map needs columns habitat,group")])
    return dict(zip(df["habitat"], df["group"]))


# --- CSV ingestion ----------------------------------------------------------


def _read_csv(path, required):
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"individual_id": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ValidationError([(str(path), None, f"cannot parse: {exc}")]) from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError([(str(path), 1, f"missing column(s): {', '.join(missing)}")])
    df["_line"] = np.arange(len(df)) + 2
    return df


def parse_timestamps(values, source):
    """Epoch seconds from numeric seconds or ISO-8601 strings (naive = UTC)."""
    s = pd.Series(values)
    num = pd.to_numeric(s, errors="coerce")
    if num.notna().all():
        return num.to_numpy(np.float64)
    dt = pd.to_datetime(s, utc=True, errors="coerce", format="ISO8601")
    bad = np.flatnonzero(dt.isna().to_numpy())
    if bad.size:
        raise ValidationError([(source, int(r) + 2, f"unparseable timestamp {s.iloc[r]!r}") for r in bad])
    ns = dt.dt.tz_convert("UTC").dt.tz_localize(None).to_numpy("datetime64[ns]").astype(np.int64)
    return ns.astype(np.float64) / 1e9


def _check_keys(df, source):
    dup = df.duplicated(["individual_id", "timestamp_s"], keep="first").to_numpy()
    issues = [
        (source, int(line), "duplicate (individual_id, timestamp)")
        for line in df["_line"].to_numpy()[dup]
    ]
    nan_id = df["individual_id"].isna().to_numpy()
    issues += [(source, int(line), "missing individual_id") for line in df["_line"].to_numpy()[nan_id]]
    if issues:
        raise ValidationError(issues)


def _probability_columns(df, alphabet):
    named = [f"p_{s}" for s in alphabet.labels]
    if all(c in df.columns for c in named):
        return named
    positional = [f"p_{k + 1}" for k in range(alphabet.J)]
    if all(c in df.columns for c in positional):
        return positional
    return None


@dataclass
class Inputs:
    """Validated model inputs.

    ``data.labels`` is set when a labels file was given; ``probs`` holds the
    (n_fixes, J) classification probabilities when a probabilities file was
    given. Both are in the fix order of ``data``.
    """

    data: ModelData
    probs: np.ndarray | None
    report: dict
    files: dict


def _solar_seconds(config, cov, epoch):
    if config.longitude is not None:
        return np.mod(epoch + 240.0 * float(config.longitude), SECONDS_PER_DAY), "longitude"
    if "solar_seconds" in cov.columns:
        v = pd.to_numeric(cov["solar_seconds"], errors="coerce").to_numpy(np.float64)
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise ValidationError(
                [(str(config.covariates), int(cov["_line"].iloc[r]), "bad solar_seconds") for r in bad]
            )
        return v, "solar_seconds column"
    return np.mod(epoch, SECONDS_PER_DAY), "timestamp time of day"


def load_inputs(config):
    """Parse, align and validate the files named by ``config``.

    Fixes are ordered by individual (first appearance in the covariate
    file) and then by time. Labels or probabilities must match the
    covariate rows one to one on (individual_id, timestamp).
    """
    alphabet = config.alphabet
    cov_src = str(config.covariates)
    need = ["individual_id", "timestamp"] + list(config.quantitative)
    if config.habitats is None or len(config.habitats):
        need.append("habitat")
    cov = _read_csv(config.covariates, need)
    cov["timestamp_s"] = parse_timestamps(cov["timestamp"], cov_src)
    _check_keys(cov, cov_src)

    issues = []
    if "habitat" in cov.columns:
        hab = cov["habitat"].astype("string")
        if config.habitat_map:
            hab = hab.map(lambda h: config.habitat_map.get(h, h) if h is not pd.NA else h)
        for line in cov["_line"][hab.isna()]:
            issues.append((cov_src, int(line), "missing habitat"))
        cov["habitat"] = hab
        habitats = config.habitats
        if habitats is None:
            habitats = tuple(sorted(hab.dropna().unique()))
        else:
            unknown = ~hab.isin(habitats) & hab.notna()
            for line, h in zip(cov["_line"][unknown], hab[unknown]):
                issues.append((cov_src, int(line), f"unknown habitat {h!r}"))
    else:
        habitats = ()
    for c in config.quantitative:
        v = pd.to_numeric(cov[c], errors="coerce")
        for line in cov["_line"][v.isna()]:
            issues.append((cov_src, int(line), f"missing or non-numeric {c}"))
        cov[c] = v
    if issues:
        raise ValidationError(issues)

    order = {k: n for n, k in enumerate(pd.unique(cov["individual_id"]))}
    cov["_ind"] = cov["individual_id"].map(order)
    cov = cov.sort_values(["_ind", "timestamp_s"], kind="stable").reset_index(drop=True)
    individuals = tuple(order)
    layout = DesignLayout(individuals, habitats, config.quantitative_columns)

    epoch = cov["timestamp_s"].to_numpy(np.float64)
    seconds, diurnal_source = (None, None)
    if config.diurnal:
        seconds, diurnal_source = _solar_seconds(config, cov, epoch)
    quant = {c: cov[c].to_numpy(np.float64) for c in config.quantitative}
    hab_col = cov["habitat"].astype(str).to_numpy() if habitats else None
    try:
        X, ind, stats = assemble_design(layout, cov["individual_id"].to_numpy(), epoch, hab_col, quant, seconds)
    except ValidationError as exc:
        raise ValidationError([(cov_src, None, m) for _, _, m in exc.issues]) from exc
    starts, lengths = segments_by_individual(ind, epoch, config.step_seconds, config.gap_factor)

    files = {"covariates": config.covariates}
    labels = probs = None
    label_counts = None
    if config.labels is not None:
        lab = _align(config.labels, cov, ["state"])
        codes = {s: k for k, s in enumerate(alphabet.labels)}
        states = lab["state"].astype(str)
        mapped = states.map(codes)
        bad = mapped.isna().to_numpy()
        if bad.any():
            raise ValidationError(
                [
                    (str(config.labels), int(line), f"unknown state {s!r}")
                    for line, s in zip(lab["_line"][bad], states[bad])
                ]
            )
        labels = mapped.to_numpy(np.int64)
        label_counts = dict(zip(alphabet.labels, np.bincount(labels, minlength=alphabet.J).tolist()))
        files["labels"] = config.labels
    if config.probabilities is not None:
        head = pd.read_csv(config.probabilities, nrows=0).columns
        cols = _probability_columns(pd.DataFrame(columns=head), alphabet)
        if cols is None:
            raise ValidationError(
                [(str(config.probabilities), 1, "need p_<state> or p_1..p_J columns for every state")]
            )
        pr = _align(config.probabilities, cov, cols)
        probs = pr[cols].apply(pd.to_numeric, errors="coerce").to_numpy(np.float64)
        nan_rows = np.flatnonzero(~np.all(np.isfinite(probs), axis=1))
        if nan_rows.size:
            raise ValidationError(
                [(str(config.probabilities), int(pr["_line"].iloc[r]), "non-numeric probability") for r in nan_rows]
            )
        validate_probability_rows(probs, str(config.probabilities), pr["_line"].to_numpy())
        files["probabilities"] = config.probabilities

    info = {"standardization": stats, "diurnal_source": diurnal_source}
    data = ModelData(alphabet, layout, X, ind, epoch, starts, lengths, labels, config.step_seconds, info)
    report = validation_report(data, cov, habitats, label_counts, stats, diurnal_source)
    return Inputs(data, probs, report, files)


def _align(path, cov, value_cols):
    """Rows of ``path`` reordered to match ``cov``; every key must match once."""
    src = str(path)
    df = _read_csv(path, ["individual_id", "timestamp"] + list(value_cols))
    df["timestamp_s"] = parse_timestamps(df["timestamp"], src)
    _check_keys(df, src)
    keys = ["individual_id", "timestamp_s"]
    merged = cov[keys].merge(df, on=keys, how="left", indicator=True, validate="one_to_one")
    missing = merged["_merge"] != "both"
    issues = [
        (src, None, f"no row for individual {i} at timestamp {t:.0f}")
        for i, t in zip(merged["individual_id"][missing], merged["timestamp_s"][missing])
    ]
    extra = df.merge(cov[keys], on=keys, how="left", indicator=True)
    for line in extra["_line"][extra["_merge"] != "both"]:
        issues.append((src, int(line), "fix has no matching covariate row"))
    if issues:
        raise ValidationError(issues)
    return merged.drop(columns="_merge")


def validation_report(data, cov, habitats, label_counts, stats, diurnal_source):
    fixes = np.bincount(data.individual, minlength=data.layout.n_individuals)
    hab_freq = {}
    if habitats:
        vc = cov["habitat"].value_counts()
        hab_freq = {h: int(vc.get(h, 0)) for h in habitats}
    return {
        "n_fixes": int(data.n_fixes),
        "n_individuals": int(data.layout.n_individuals),
        "fixes_per_individual": dict(zip(data.layout.individuals, fixes.tolist())),
        "n_segments": int(data.seg_start.size),
        "n_transitions": int(data.n_transitions),
        "habitat_frequency": hab_freq,
        "state_frequency": label_counts,
        "standardization": stats,
        "diurnal_source": diurnal_source,
        "design_columns": data.layout.column_names,
    }


# --- writers ----------------------------------------------------------------


def _float_csv(df, path):
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def write_simulated(spec, data, directory, probs=None, config_extra=None):
    """Write a simulated study in the public CSV formats.

    Produces ``covariates.csv`` (raw values), ``labels.csv``, optionally
    ``probabilities.csv``, ``truth.json`` and a ``config.yaml`` that loads
    them back.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cov = spec.covariates
    ts = cov["timestamp"].astype(np.int64)
    frame = {"individual_id": cov["individual_id"], "timestamp": ts}
    if spec.layout.n_habitats:
        frame["habitat"] = cov["habitat"]
    for c in spec.layout.quantitative:
        if c in cov:
            frame[c] = cov[c]
    _float_csv(pd.DataFrame(frame), d / "covariates.csv")
    labels = np.asarray(spec.alphabet.labels, dtype=object)[data.labels]
    _float_csv(
        pd.DataFrame({"individual_id": cov["individual_id"], "timestamp": ts, "state": labels}),
        d / "labels.csv",
    )
    if probs is not None:
        pf = pd.DataFrame({"individual_id": cov["individual_id"], "timestamp": ts})
        for k, s in enumerate(spec.alphabet.labels):
            pf[f"p_{s}"] = probs[:, k]
        _float_csv(pf, d / "probabilities.csv")
    write_truth(spec, d / "truth.json")
    cfg = {
        "states": list(spec.alphabet.labels),
        "reference": spec.alphabet.reference,
        "data": {
            "labels": "labels.csv" if probs is None else None,
            "probabilities": "probabilities.csv" if probs is not None else None,
            "covariates": "covariates.csv",
        },
        "design": {
            "habitats": list(spec.layout.habitats),
            "quantitative": [c for c in spec.layout.quantitative if c not in DIURNAL],
            "diurnal": spec.diurnal,
            "step_seconds": float(spec.step_seconds),
        },
        "prior": {"variance": 100.0},
        "sampler": {"n_iterations": 15000, "burn_in": 5000, "thin": 1, "seed": int(spec.seed)},
        "imputation": {"M": 200},
        "output": "out",
    }
    for k, v in (config_extra or {}).items():
        if isinstance(v, dict):
            cfg.setdefault(k, {}).update(v)
        else:
            cfg[k] = v
    (d / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return d / "config.yaml"


def write_truth(spec, path):
    t = spec.truth
    doc = {
        "states": list(spec.alphabet.labels),
        "reference": spec.alphabet.reference,
        "layout": spec.layout.to_dict(),
        "columns": spec.layout.column_names,
        "beta": t.beta.tolist(),
        "mu": t.mu.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_truth(path):
    from .model import CoefficientState

    doc = json.loads(Path(path).read_text())
    alphabet = StateAlphabet.from_labels(doc["states"], doc["reference"])
    beta = np.asarray(doc["beta"], dtype=np.float64)
    return CoefficientState(beta, np.asarray(doc["mu"], dtype=np.float64), alphabet.reference_index)


# --- chain export -----------------------------------------------------------


def _json_bytes(obj):
    return (json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n").encode()


def chain_columns(chain):
    labels = chain.alphabet.labels
    return [
        f"beta[{labels[i]}->{labels[j]}:{name}]"
        for i, j in chain.transitions()
        for name in chain.layout.column_names
    ]


def save_chain(chain, directory, csv=True):
    """Write ``beta.npy``, ``mu.npy``, ``dataset.npy``, ``chain.json`` and ``draws.csv``.

    The output depends only on the chain contents, so equal chains give
    byte-identical files.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "beta.npy", np.ascontiguousarray(chain.beta, dtype="<f8"))
    np.save(d / "mu.npy", np.ascontiguousarray(chain.mu, dtype="<f8"))
    np.save(d / "dataset.npy", np.ascontiguousarray(chain.dataset, dtype="<i8"))
    meta = {
        "format": CHAIN_FORMAT,
        "alphabet": chain.alphabet.to_dict(),
        "layout": chain.layout.to_dict(),
        "columns": chain.layout.column_names,
        "shape": {"chains": chain.n_chains, "draws": chain.n_draws},
        "sampler": chain.config.to_dict() if chain.config else None,
        "prior": {"variance": chain.priors.variance} if chain.priors else None,
    }
    if meta["sampler"] is not None:
        # thread count does not affect the draws
        meta["sampler"].pop("n_threads", None)
    (d / "chain.json").write_bytes(_json_bytes(meta))
    if csv:
        rows = chain.n_chains * chain.n_draws
        trans = chain.transitions()
        wide = np.stack([chain.beta[:, :, i, j, :] for i, j in trans], axis=2)
        wide = wide.reshape(rows, -1)
        df = pd.DataFrame(wide, columns=chain_columns(chain))
        df.insert(0, "dataset", chain.dataset.reshape(rows))
        df.insert(0, "draw", np.tile(np.arange(chain.n_draws), chain.n_chains))
        df.insert(0, "chain", np.repeat(np.arange(chain.n_chains), chain.n_draws))
        _float_csv(df, d / "draws.csv")
    return d


def load_chain(directory):
    d = Path(directory)
    try:
        meta = json.loads((d / "chain.json").read_text())
    except OSError as exc:
        raise ConfigurationError(f"no chain export in {d}") from exc
    if meta.get("format") != CHAIN_FORMAT:
        raise ConfigurationError(f"unsupported chain format {meta.get('format')}")
    sampler = meta.get("sampler")
    prior = meta.get("prior")
    return PosteriorChain(
        np.load(d / "beta.npy"),
        np.load(d / "mu.npy"),
        np.load(d / "dataset.npy"),
        StateAlphabet.from_dict(meta["alphabet"]),
        DesignLayout.from_dict(meta["layout"]),
        SamplerConfig(**sampler) if sampler else None,
        PriorSpec(prior["variance"]) if prior else None,
    )


# --- manifest ---------------------------------------------------------------


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions():
    import numba
    import scipy

    from . import __version__

    return {
        "pgmarkov": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(directory, command, argv, config=None, seed=None, inputs=None, extra=None):
    """Record what is needed to rerun a command exactly.

    No wall-clock time is stored, so reruns reproduce the manifest too.
    """
    doc = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config_hash": config.hash() if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "inputs": {k: {"path": str(v), "sha256": file_sha256(v)} for k, v in (inputs or {}).items()},
        "versions": versions(),
    }
    if extra:
        doc.update(extra)
    path = Path(directory) / "manifest.json"
    path.write_bytes(_json_bytes(doc))
    return path


def write_json(obj, path):
    Path(path).write_bytes(_json_bytes(obj))


def write_frame(df, path):
    _float_csv(df, path)


def stderr(msg):
    print(msg, file=sys.stderr)
