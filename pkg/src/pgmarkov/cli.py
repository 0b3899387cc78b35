"""Command-line interface: simulate, impute, fit, summarize, gof, validate.

Every command writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import io
from .errors import (
    ConfigurationError,
    DimensionError,
    NumericError,
    ParameterError,
    ValidationError,
)
from .gibbs import THREADS_ENV, diagnostics, run_chain
from .imputation import ImputationSet, argmax_labels, draw_imputations
from .simulate import SimScenario, demo_scenario, noisy_probabilities, simulate_sequences

log = logging.getLogger("pgmarkov")

SCENARIOS = {
    "demo": lambda seed, n: demo_scenario(seed=seed, n_steps=n or 1500),
    "calibration": lambda seed, n: SimScenario(seed=seed, n_steps=n or 4000),
}


def _add_sampler_flags(p):
    p.add_argument("--seed", type=int, help="sampler seed (overrides config)")
    p.add_argument("--chains", type=int, help="number of chains")
    p.add_argument("--iterations", type=int, help="total Gibbs iterations per chain")
    p.add_argument("--burn-in", type=int, help="iterations discarded before storing")
    p.add_argument("--thin", type=int, help="store every k-th post burn-in draw")
    p.add_argument("--init", choices=("zero", "random"), help="starting values")
    p.add_argument("--threads", type=int, help=f"from-state worker threads (default ${THREADS_ENV} or 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="pgmarkov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic study with known coefficients")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="demo")
    p.add_argument("--seed", type=int, default=2018)
    p.add_argument("--n-steps", type=int, help="fixes per individual")
    p.add_argument("--confidence", type=float, default=0.8, help="weight of the true label in the simulated probabilities")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("validate", help="check input files and print a report")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--reference-state")
    p.add_argument("--out", type=Path, help="also write validation.json here")

    p = sub.add_parser("impute", help="draw M label datasets from classification probabilities")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--m-imputations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference-state")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("--config", type=Path, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--imputations", type=Path, help="directory written by 'impute'")
    src.add_argument("--argmax", action="store_true", help="fit the most probable label per fix")
    p.add_argument("--m-imputations", type=int, help="draw this many datasets when no --imputations is given")
    p.add_argument("--reference-state")
    p.add_argument("--out", type=Path)
    _add_sampler_flags(p)

    p = sub.add_parser("summarize", help="odds ratios, intervals and habitat contrasts")
    p.add_argument("--chain", type=Path, required=True, help="chain directory written by 'fit'")
    p.add_argument("--truth", type=Path, help="truth.json for a coverage report")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("gof", help="posterior-predictive goodness of fit")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference-state")
    p.add_argument("--out", type=Path)
    return parser


def _config(args):
    cfg = io.load_config(args.config)
    ref = getattr(args, "reference_state", None)
    if ref:
        cfg.reference = ref
        cfg.alphabet  # validate
    m = getattr(args, "m_imputations", None)
    if m is not None:
        if m < 1:
            raise ConfigurationError("--m-imputations must be at least 1")
        cfg.m_imputations = m
    over = {
        "seed": getattr(args, "seed", None),
        "n_chains": getattr(args, "chains", None),
        "n_iterations": getattr(args, "iterations", None),
        "burn_in": getattr(args, "burn_in", None),
        "thin": getattr(args, "thin", None),
        "init": getattr(args, "init", None),
        "n_threads": getattr(args, "threads", None),
    }
    over = {k: v for k, v in over.items() if v is not None}
    if over:
        cfg.sampler = dataclasses.replace(cfg.sampler, **over)
    return cfg


def _outdir(args, cfg, default_sub):
    out = args.out if args.out is not None else Path(cfg.output) / default_sub
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, argv):
    spec = SCENARIOS[args.scenario](args.seed, args.n_steps)
    rng = np.random.default_rng(args.seed)
    _, data = simulate_sequences(spec, rng)
    if not 0.0 < args.confidence <= 1.0:
        raise ConfigurationError("--confidence must be in (0, 1]")
    probs = noisy_probabilities(data.labels, spec.n_states, args.confidence, rng)
    cfg_path = io.write_simulated(spec, data, args.out, probs)
    io.write_manifest(args.out, "simulate", argv, seed=args.seed, extra={"scenario": args.scenario})
    print(f"wrote simulated study to {args.out} (config {cfg_path.name})")
    return 0


def cmd_validate(args, argv):
    cfg = _config(args)
    inputs = io.load_inputs(cfg)
    r = inputs.report
    print(f"{r['n_fixes']} fixes, {r['n_individuals']} individuals, "
          f"{r['n_segments']} segments, {r['n_transitions']} transitions")
    if r["habitat_frequency"]:
        print("habitat frequency: " + ", ".join(f"{k}={v}" for k, v in r["habitat_frequency"].items()))
    if r["state_frequency"]:
        print("state frequency: " + ", ".join(f"{k}={v}" for k, v in r["state_frequency"].items()))
    print("design columns: " + ", ".join(r["design_columns"]))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        io.write_json(r, args.out / "validation.json")
        io.write_manifest(args.out, "validate", argv, cfg, inputs=inputs.files)
    print("OK")
    return 0


def _impute(cfg, inputs):
    if inputs.probs is None:
        raise ConfigurationError("imputation needs a probabilities file")
    rng = np.random.default_rng(cfg.sampler.seed)
    d = inputs.data
    return draw_imputations(inputs.probs, cfg.m_imputations, rng, d.individual, d.timestamps)


def cmd_impute(args, argv):
    cfg = _config(args)
    inputs = io.load_inputs(cfg)
    imps = _impute(cfg, inputs)
    out = _outdir(args, cfg, "imputations")
    imps.save(out)
    io.write_manifest(out, "impute", argv, cfg, cfg.sampler.seed, inputs.files)
    print(f"wrote {imps.M} imputed datasets to {out}")
    return 0


def _progress(total):
    step = max(1, total // 10)

    def report(it):
        if (it + 1) % step == 0:
            log.info("iteration %d/%d", it + 1, total)

    return report


def cmd_fit(args, argv):
    cfg = _config(args)
    inputs = io.load_inputs(cfg)
    data = inputs.data
    imps = None
    mode = "labels"
    if args.argmax:
        if inputs.probs is None:
            raise ConfigurationError("--argmax needs a probabilities file")
        data = data.with_labels(argmax_labels(inputs.probs))
        mode = "argmax"
    elif args.imputations is not None:
        imps = ImputationSet.load(args.imputations)
        mode = "imputations"
    elif inputs.probs is not None:
        imps = _impute(cfg, inputs)
        mode = "imputations"
    out = _outdir(args, cfg, "fit")
    chain = run_chain(data, cfg.prior, cfg.sampler, imps, progress=_progress(cfg.sampler.n_iterations))
    io.save_chain(chain, out / "chain")
    diag = diagnostics(chain)
    if diag:
        io.write_frame(pd.DataFrame(diag), out / "diagnostics.csv")
    io.write_json(inputs.report, out / "validation.json")
    files = dict(inputs.files)
    io.write_manifest(
        out, "fit", argv, cfg, cfg.sampler.seed, files,
        {"labels": mode, "M": None if imps is None else imps.M},
    )
    print(f"stored {chain.n_chains} x {chain.n_draws} draws in {out / 'chain'}")
    return 0


def _safe(label):
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)


def cmd_summarize(args, argv):
    from . import summary

    chain = io.load_chain(args.chain)
    out = args.out if args.out is not None else args.chain.parent / "summary"
    out.mkdir(parents=True, exist_ok=True)
    table = summary.summary_table(chain)
    io.write_frame(table, out / "summary.csv")
    io.write_frame(summary.interval_frame(chain), out / "intervals.csv")
    labels = chain.alphabet.labels
    if chain.layout.n_habitats >= 2:
        pw = out / "pairwise"
        pw.mkdir(exist_ok=True)
        for i, j in chain.transitions():
            m = summary.pairwise_habitat(chain, i, j)
            m.to_frame().to_csv(
                pw / f"{_safe(labels[i])}__{_safe(labels[j])}.csv",
                float_format="%.6f", lineterminator="\n",
            )
    inputs = {"beta": args.chain / "beta.npy"}
    extra = {}
    if args.truth is not None:
        truth = io.read_truth(args.truth)
        cov = summary.coverage_report(chain, truth)
        io.write_frame(cov, out / "coverage.csv")
        frac = float(cov["covered"].mean())
        io.write_json({"coverage": frac, "n_coefficients": int(len(cov))}, out / "coverage.json")
        extra["coverage"] = frac
        inputs["truth"] = args.truth
        print(f"95% interval coverage of the truth: {frac:.3f} over {len(cov)} coefficients")
    io.write_manifest(out, "summarize", argv, inputs=inputs, extra=extra)
    sig = table[table["significance"].isin(["positive", "negative"])]
    print(f"wrote summaries for {len(table)} coefficients to {out}; {len(sig)} significant quantitative effects")
    return 0


def cmd_gof(args, argv):
    from . import summary

    cfg = _config(args)
    inputs = io.load_inputs(cfg)
    chain = io.load_chain(args.chain)
    data = inputs.data
    if data.labels is None:
        data = data.with_labels(argmax_labels(inputs.probs))
    if chain.layout != data.layout or chain.alphabet != data.alphabet:
        raise ConfigurationError("chain was fit with a different design or state alphabet")
    rng = np.random.default_rng(args.seed)
    res = summary.goodness_of_fit(chain, data, rng, args.replicates)
    out = args.out if args.out is not None else args.chain.parent / "gof"
    out.mkdir(parents=True, exist_ok=True)
    frame = res.to_frame()
    io.write_frame(frame, out / "gof.csv")
    lo, hi = res.band("stay")
    io.write_json(
        {
            "stay_observed": res.observed["stay"],
            "stay_band": [float(lo), float(hi)],
            "stay_inside": bool(res.inside("stay")),
            "fraction_inside": float(frame["inside"].mean()),
            "replicates": args.replicates,
        },
        out / "gof.json",
    )
    io.write_manifest(out, "gof", argv, cfg, args.seed, inputs.files)
    print(f"observed stay fraction {res.observed['stay']:.4f}, replicate band [{lo:.4f}, {hi:.4f}]")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "impute": cmd_impute,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "gof": cmd_gof,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args, argv)
    except ValidationError as exc:
        print("validation failed:\n" + exc.format(), file=sys.stderr)
        return 1
    except (ConfigurationError, DimensionError, NumericError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
