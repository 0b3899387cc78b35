import json

import numpy as np
import pandas as pd
import pytest
import yaml

from pgmarkov import io
from pgmarkov.cli import main
from pgmarkov.errors import ConfigurationError, ValidationError
from pgmarkov.gibbs import SamplerConfig, run_chain
from pgmarkov.simulate import SimScenario, demo_scenario, noisy_probabilities, simulate_sequences


@pytest.fixture
def study(tmp_path):
    """A small simulated study written in the public formats."""
    spec = demo_scenario(seed=4, n_steps=120)
    rng = np.random.default_rng(4)
    _, data = simulate_sequences(spec, rng)
    probs = noisy_probabilities(data.labels, spec.n_states, 0.8, rng)
    cfg = io.write_simulated(spec, data, tmp_path / "study", probs)
    return spec, data, probs, cfg


def read_csv(path, **kw):
    return pd.read_csv(path, float_precision="round_trip", **kw)


def edit_config(path, **sections):
    d = yaml.safe_load(path.read_text())
    for k, v in sections.items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    path.write_text(yaml.safe_dump(d))
    return path


def test_round_trip_reproduces_in_memory_data(study):
    spec, data, probs, cfg_path = study
    edit_config(cfg_path, data={"labels": "labels.csv"})
    inputs = io.load_inputs(io.load_config(cfg_path))
    d = inputs.data
    np.testing.assert_array_equal(d.X, data.X)
    np.testing.assert_array_equal(d.labels, data.labels)
    np.testing.assert_array_equal(d.timestamps, data.timestamps)
    np.testing.assert_array_equal(d.seg_start, data.seg_start)
    np.testing.assert_array_equal(inputs.probs, probs)
    assert d.layout == data.layout and d.alphabet == data.alphabet
    assert inputs.report["standardization"] == data.info["standardization"]
    assert sum(inputs.report["habitat_frequency"].values()) == d.n_fixes


def test_row_order_within_file_does_not_matter(study):
    _, data, _, cfg_path = study
    d = cfg_path.parent
    for name in ("covariates.csv", "probabilities.csv", "labels.csv"):
        df = read_csv(d / name, dtype={"individual_id": str})
        # shuffle rows but keep the first row so individual order is preserved
        rest = df.iloc[1:].sample(frac=1.0, random_state=1)
        pd.concat([df.iloc[:1], rest]).to_csv(d / name, index=False, float_format="%.17g")
    inputs = io.load_inputs(io.load_config(cfg_path))
    np.testing.assert_array_equal(inputs.data.X, data.X)


def test_iso_timestamps_equal_epoch_seconds(study):
    _, data, _, cfg_path = study
    d = cfg_path.parent
    for name in ("covariates.csv", "probabilities.csv"):
        df = read_csv(d / name, dtype={"individual_id": str})
        df["timestamp"] = pd.to_datetime(df["timestamp"], unit="s").dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        df.to_csv(d / name, index=False, float_format="%.17g")
    inputs = io.load_inputs(io.load_config(cfg_path))
    np.testing.assert_array_equal(inputs.data.timestamps, data.timestamps)
    np.testing.assert_array_equal(inputs.data.X, data.X)


def test_unknown_state_names_the_row(study):
    _, _, _, cfg_path = study
    edit_config(cfg_path, data={"labels": "labels.csv", "probabilities": None})
    df = read_csv(cfg_path.parent / "labels.csv", dtype=str)
    df.loc[6, "state"] = "swimming"
    df.to_csv(cfg_path.parent / "labels.csv", index=False)
    with pytest.raises(ValidationError) as err:
        io.load_inputs(io.load_config(cfg_path))
    (src, row, msg), = err.value.issues
    assert src.endswith("labels.csv") and row == 8 and "swimming" in msg


def test_constant_covariate_is_rejected(study):
    _, _, _, cfg_path = study
    df = read_csv(cfg_path.parent / "covariates.csv", dtype={"individual_id": str})
    df["temperature"] = 3.0
    df.to_csv(cfg_path.parent / "covariates.csv", index=False)
    with pytest.raises(ValidationError, match="zero standard deviation"):
        io.load_inputs(io.load_config(cfg_path))


def test_non_stochastic_probability_row(study):
    _, _, _, cfg_path = study
    df = read_csv(cfg_path.parent / "probabilities.csv", dtype={"individual_id": str})
    df.loc[10, "p_flying"] += 0.1
    df.to_csv(cfg_path.parent / "probabilities.csv", index=False, float_format="%.17g")
    with pytest.raises(ValidationError) as err:
        io.load_inputs(io.load_config(cfg_path))
    assert [r for _, r, _ in err.value.issues] == [12]


def test_misaligned_timestamps(study):
    _, _, _, cfg_path = study
    df = read_csv(cfg_path.parent / "probabilities.csv", dtype={"individual_id": str})
    df.loc[3, "timestamp"] += 17
    df.to_csv(cfg_path.parent / "probabilities.csv", index=False, float_format="%.17g")
    with pytest.raises(ValidationError) as err:
        io.load_inputs(io.load_config(cfg_path))
    msgs = [m for _, _, m in err.value.issues]
    assert any("no row for individual" in m for m in msgs)
    assert any(r == 5 for _, r, _ in err.value.issues)


def test_duplicate_fix_and_missing_column(study):
    _, _, _, cfg_path = study
    path = cfg_path.parent / "covariates.csv"
    df = read_csv(path, dtype={"individual_id": str})
    pd.concat([df, df.iloc[[2]]]).to_csv(path, index=False, float_format="%.17g")
    with pytest.raises(ValidationError, match="duplicate"):
        io.load_inputs(io.load_config(cfg_path))
    df.drop(columns="temperature").to_csv(path, index=False)
    with pytest.raises(ValidationError, match="missing column"):
        io.load_inputs(io.load_config(cfg_path))


def test_positional_probability_columns(study):
    _, _, probs, cfg_path = study
    path = cfg_path.parent / "probabilities.csv"
    df = read_csv(path, dtype={"individual_id": str})
    df.columns = ["individual_id", "timestamp", "p_1", "p_2", "p_3", "p_4"]
    df.to_csv(path, index=False, float_format="%.17g")
    inputs = io.load_inputs(io.load_config(cfg_path))
    np.testing.assert_array_equal(inputs.probs, probs)


def test_habitat_map_regroups(study):
    _, _, _, cfg_path = study
    (cfg_path.parent / "map.csv").write_text("habitat,group\ncorn,crop\nwetland,water\nopen_water,water\n")
    edit_config(cfg_path, data={"habitat_map": "map.csv"}, design={"habitats": None})
    inputs = io.load_inputs(io.load_config(cfg_path))
    assert inputs.data.layout.habitats == ("crop", "water")
    edit_config(cfg_path, data={"habitat_map": None}, design={"habitats": ["corn", "wetland"]})
    with pytest.raises(ValidationError, match="unknown habitat 'open_water'"):
        io.load_inputs(io.load_config(cfg_path))


def test_longitude_shifts_solar_time(study):
    _, data, _, cfg_path = study
    edit_config(cfg_path, design={"longitude": -90.0})
    d = io.load_inputs(io.load_config(cfg_path)).data
    q = d.layout.quantitative.index("cos_time")
    col = d.layout.quantitative_slice.start + q
    secs = np.mod(data.timestamps - 6 * 3600, 86400)
    np.testing.assert_allclose(d.X[:, col], np.cos(2 * np.pi * secs / 86400), atol=1e-12)


def test_gaps_split_segments(tmp_path):
    rows = ["individual_id,timestamp,habitat,x"]
    ts = [0, 360, 720, 5000, 5360]
    for k, t in enumerate(ts):
        rows.append(f"a,{t},h,{k * 1.5}")
    (tmp_path / "cov.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "lab.csv").write_text(
        "individual_id,timestamp,state\n" + "".join(f"a,{t},s{k % 2}\n" for k, t in enumerate(ts))
    )
    cfg = {"states": ["s0", "s1"], "data": {"labels": "lab.csv", "covariates": "cov.csv"},
           "design": {"quantitative": ["x"]}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    inputs = io.load_inputs(io.load_config(tmp_path / "c.yaml"))
    np.testing.assert_array_equal(inputs.data.seg_len, [3, 2])
    assert inputs.report["n_transitions"] == 3


@pytest.mark.parametrize(
    "cfg",
    [{}, {"states": ["a", "b"]}, {"states": ["a", "b"], "data": {"labels": "l.csv"}},
     {"states": ["a", "b"], "data": {"labels": "l", "covariates": "c"}, "sampler": {"bogus": 1}},
     {"states": ["a", "b"], "data": {"labels": "l", "covariates": "c"}, "sampler": {"thin": 0}}],
)
def test_bad_configs(cfg):
    with pytest.raises(ConfigurationError):
        io.parse_config(cfg)


def test_chain_export_is_deterministic_and_loads(tmp_path):
    _, data = simulate_sequences(SimScenario(n_steps=150, seed=2), np.random.default_rng(2))
    cfg = SamplerConfig(n_iterations=60, burn_in=10, seed=5, n_chains=2)
    a = io.save_chain(run_chain(data, config=cfg), tmp_path / "a")
    b = io.save_chain(run_chain(data, config=cfg), tmp_path / "b")
    for name in ("beta.npy", "mu.npy", "dataset.npy", "chain.json", "draws.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    back = io.load_chain(a)
    np.testing.assert_array_equal(back.beta, run_chain(data, config=cfg).beta)
    assert back.layout == data.layout and back.config.seed == 5
    draws = read_csv(a / "draws.csv")
    assert len(draws) == 2 * 50
    col = f"beta[s1->s2:{data.layout.column_names[-1]}]"
    np.testing.assert_array_equal(draws[col].to_numpy(), back.beta[:, :, 0, 1, -1].ravel())


def test_manifest_contents(tmp_path, study):
    _, _, _, cfg_path = study
    cfg = io.load_config(cfg_path)
    inputs = io.load_inputs(cfg)
    path = io.write_manifest(tmp_path, "fit", ["fit"], cfg, 3, inputs.files)
    doc = json.loads(path.read_text())
    assert doc["config_hash"] == cfg.hash() and len(doc["config_hash"]) == 64
    assert doc["seed"] == 3 and "numpy" in doc["versions"]
    assert doc["inputs"]["covariates"]["sha256"] == io.file_sha256(cfg.covariates)


# --- command line -----------------------------------------------------------


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["fit", "--no-such-flag"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main([]) != 0


def test_validate_malformed_csv(study, capsys):
    _, _, _, cfg_path = study
    df = read_csv(cfg_path.parent / "covariates.csv", dtype={"individual_id": str})
    df["temperature"] = df["temperature"].astype(object)
    df.loc[4, "temperature"] = "warm"
    df.to_csv(cfg_path.parent / "covariates.csv", index=False)
    assert main(["validate", "--config", str(cfg_path)]) == 1
    err = capsys.readouterr().err
    assert "covariates.csv:6" in err and "temperature" in err


def test_validate_ok(study, capsys, tmp_path):
    _, _, _, cfg_path = study
    assert main(["validate", "--config", str(cfg_path), "--out", str(tmp_path / "v")]) == 0
    assert "habitat frequency" in capsys.readouterr().out
    assert (tmp_path / "v" / "validation.json").exists()


def test_argmax_fit_equals_degenerate_imputation_fit(tmp_path):
    spec = SimScenario(n_steps=200, seed=8)
    _, data = simulate_sequences(spec, np.random.default_rng(8))
    onehot = np.eye(spec.n_states)[data.labels]
    cfg = io.write_simulated(spec, data, tmp_path / "s", onehot)
    common = ["--config", str(cfg), "--iterations", "80", "--burn-in", "20", "--seed", "3"]
    assert main(["fit", "--argmax", "--out", str(tmp_path / "a")] + common) == 0
    assert main(["fit", "--m-imputations", "50", "--out", str(tmp_path / "b")] + common) == 0
    a = np.load(tmp_path / "a" / "chain" / "beta.npy")
    b = np.load(tmp_path / "b" / "chain" / "beta.npy")
    np.testing.assert_array_equal(a, b)
    for d in ("a", "b"):
        assert main(["summarize", "--chain", str(tmp_path / d / "chain"), "--out", str(tmp_path / d / "sum")]) == 0
    assert (tmp_path / "a/sum/summary.csv").read_bytes() == (tmp_path / "b/sum/summary.csv").read_bytes()


def test_cli_pipeline_small(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main(["simulate", "--out", str(out), "--n-steps", "150", "--seed", "1"]) == 0
    cfg = str(out / "config.yaml")
    assert main(["impute", "--config", cfg, "--m-imputations", "5"]) == 0
    assert ImputationSetExists(out / "out" / "imputations")
    assert main(["fit", "--config", cfg, "--imputations", str(out / "out" / "imputations"),
                 "--iterations", "60", "--burn-in", "20", "--chains", "2", "--threads", "2"]) == 0
    chain = out / "out" / "fit" / "chain"
    assert main(["summarize", "--chain", str(chain), "--truth", str(out / "truth.json")]) == 0
    assert main(["gof", "--config", cfg, "--chain", str(chain), "--replicates", "20"]) == 0
    for f in ("summary/summary.csv", "summary/coverage.csv", "summary/intervals.csv",
              "gof/gof.csv", "diagnostics.csv", "manifest.json"):
        assert (out / "out" / "fit" / f).exists(), f
    assert "coverage" in capsys.readouterr().out


def test_reference_state_flag(tmp_path):
    out = tmp_path / "demo"
    assert main(["simulate", "--out", str(out), "--n-steps", "60"]) == 0
    cfg = str(out / "config.yaml")
    assert main(["fit", "--config", cfg, "--argmax", "--iterations", "10", "--burn-in", "5",
                 "--reference-state", "flying"]) == 0
    back = io.load_chain(out / "out" / "fit" / "chain")
    assert back.alphabet.reference == "flying"
    assert np.all(back.beta[:, :, :, 0] == 0)
    assert main(["fit", "--config", cfg, "--reference-state", "nope"]) == 1


def ImputationSetExists(path):
    return (path / "labels.npy").exists() and (path / "manifest.json").exists()
