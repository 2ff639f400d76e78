"""Command-line surface: fit, summarize, and simulate subcommands.

Every command writes a run manifest (resolved config, seed, input digests);
re-running from the manifest reproduces outputs bitwise on the same
platform. Exit codes: 0 success, 2 usage, 3 data/schema, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .data import IngestionConfig, load_dataset
from .errors import IntegrityError, PsbartError
from .io import (
    MANIFEST,
    read_draws,
    read_manifest,
    sha256_file,
    write_draws,
    write_manifest,
)
from .projection import project_draws
from .sampler import SamplerConfig, run_mcmc
from .simulate import run_monotonicity_study, run_mse_inflation_study
from .summaries import (
    Profile,
    centroid_profile,
    contrast,
    curve_summary,
    envelope,
    prediction_band,
    toggled_pair,
)


def _default_jobs() -> int:
    return int(os.environ.get("PSBART_THREADS", "1"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psbart")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the MCMC and write posterior draws")
    fit.add_argument("--data", help="delimited data file")
    fit.add_argument("--config", help="ingestion config (JSON)")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--monotone", action="store_true",
                     help="project draws onto the monotone cone before writing")
    fit.add_argument("--coarsening-width", type=float, default=None,
                     help="override coarsening width c; 0 disables coarsening")
    fit.add_argument("--trees", type=int, default=200)
    fit.add_argument("--burn", type=int, default=1000)
    fit.add_argument("--save", type=int, default=1000)
    fit.add_argument("--thin", type=int, default=1)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--theta", type=float, default=None)
    fit.add_argument("--predict-profiles", default=None,
                     help="CSV of x profiles to evaluate (defaults to the centroid)")
    fit.add_argument("--contrast-covariate", default=None,
                     help="add flag-toggled profile pairs for contrasts")
    fit.add_argument("--envelope-profiles", choices=["none", "distinct"],
                     default="none",
                     help="also add toggled pairs for every distinct observed profile")
    fit.add_argument("--from-manifest", default=None,
                     help="re-run a previous fit from its manifest")

    summ = sub.add_parser("summarize", help="summarize a fit directory")
    summ.add_argument("--fit-dir", required=True)
    summ.add_argument("--out", required=True)
    summ.add_argument("--flag-covariate", default=None,
                      help="covariate name for contrast / envelope tables")
    summ.add_argument("--seed", type=int, default=0,
                      help="seed for the prediction-band noise draws")

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("--study", choices=["mse-inflation", "monotonicity"])
    sim.add_argument("--scale", choices=["desk", "full"], default="desk")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--sigmas", default=None,
                     help="comma-separated sigma sweep for mse-inflation")
    sim.add_argument("--jobs", type=int, default=None,
                     help="worker count (default: PSBART_THREADS or 1)")
    sim.add_argument("--from-manifest", default=None,
                     help="re-run a previous study from its manifest")
    return parser


def _fit_config_from_args(args) -> dict:
    return {
        "data": args.data,
        "config": args.config,
        "monotone": bool(args.monotone),
        "coarsening_width": args.coarsening_width,
        "trees": args.trees,
        "burn": args.burn,
        "save": args.save,
        "thin": args.thin,
        "seed": args.seed,
        "theta": args.theta,
        "predict_profiles": args.predict_profiles,
        "contrast_covariate": args.contrast_covariate,
        "envelope_profiles": args.envelope_profiles,
    }


def _build_profiles(data, cfg: dict):
    """Prediction-grid profiles: centroid first, then optional toggled
    pairs and file-supplied profiles."""
    names = [c.name for c in data.schema]
    centroid = centroid_profile(data)
    profiles = [centroid]
    flag = cfg.get("contrast_covariate")
    if flag is not None:
        j = data.covariate_index(flag)
        profiles.extend(toggled_pair(centroid, j))
        if cfg.get("envelope_profiles") == "distinct":
            base = np.array(data.x)
            base[:, j] = 0.0
            distinct = np.unique(base, axis=0)
            for k, row in enumerate(distinct):
                profiles.extend(toggled_pair(Profile(row, label=f"obs{k}"), j))
    path = cfg.get("predict_profiles")
    if path:
        frame = pd.read_csv(path)
        missing = [n for n in names if n not in frame.columns]
        if missing:
            raise IntegrityError(f"profile file missing columns: {missing}")
        for k, row in enumerate(frame[names].to_numpy(float)):
            profiles.append(Profile(row, label=f"file{k}"))
    x = np.stack([p.x for p in profiles])
    labels = [p.label for p in profiles]
    return x, labels


def cmd_fit(args) -> int:
    if args.from_manifest:
        cfg = read_manifest(args.from_manifest)["config"]
    else:
        cfg = _fit_config_from_args(args)
    if not cfg.get("data") or not cfg.get("config"):
        raise IntegrityError("fit needs --data and --config (or --from-manifest)")

    ingest = IngestionConfig.from_file(cfg["config"])
    if cfg.get("coarsening_width") is not None:
        ingest.coarsening_width = cfg["coarsening_width"]
    data = load_dataset(cfg["data"], ingest)

    sampler_cfg = SamplerConfig(
        n_burn=cfg["burn"], n_save=cfg["save"], thin=cfg["thin"],
        m=cfg["trees"], seed=cfg["seed"], theta=cfg.get("theta"),
    )
    profiles, labels = _build_profiles(data, cfg)
    draws = run_mcmc(data, sampler_cfg, profiles)
    if cfg.get("monotone"):
        draws = project_draws(draws)

    out = Path(args.out)
    outputs = write_draws(out, draws, labels, [c.name for c in data.schema],
                          config=cfg, seed=cfg["seed"])
    inputs = {str(cfg["data"]): sha256_file(cfg["data"]),
              str(cfg["config"]): sha256_file(cfg["config"])}
    write_manifest(out, "fit", cfg, cfg["seed"], inputs, outputs)
    print(f"fit complete: {out}")
    return 0


def cmd_summarize(args) -> int:
    draws, sidecar = read_draws(args.fit_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = sidecar["profile_labels"]
    names = sidecar["covariates"]
    rng = np.random.default_rng(args.seed)

    rows = []
    for i, label in enumerate(labels):
        f_band = curve_summary(draws, i)
        y_band = prediction_band(draws, i, rng)
        for k, t in enumerate(draws.mesh):
            rows.append({
                "profile": label, "t": t,
                "mean": f_band["mean"][k],
                "f_q025": f_band["q025"][k], "f_q975": f_band["q975"][k],
                "y_q025": y_band["q025"][k], "y_q975": y_band["q975"][k],
            })
    curves = pd.DataFrame(rows)
    curves.to_csv(out / "curves.csv", index=False)
    outputs = {"curves.csv": sha256_file(out / "curves.csv")}

    if args.flag_covariate:
        if args.flag_covariate not in names:
            raise IntegrityError(f"no covariate named {args.flag_covariate!r} in fit")
        j = names.index(args.flag_covariate)
        base_labels = [
            lab[:-6] for lab in labels
            if lab.endswith("_flag0") and f"{lab[:-6]}_flag1" in labels
        ]
        if not base_labels:
            raise IntegrityError("fit has no toggled profile pairs for a contrast")
        con_rows = []
        env_profiles = []
        for lab in base_labels:
            i0 = labels.index(f"{lab}_flag0")
            base = Profile(draws.profiles[i0], label=lab)
            res = contrast(draws, j, base)
            env_profiles.append(base)
            for k, t in enumerate(draws.mesh):
                con_rows.append({
                    "profile": lab, "t": t, "mean": res.mean[k],
                    "q025": res.q025[k], "q975": res.q975[k],
                })
        pd.DataFrame(con_rows).to_csv(out / "contrast.csv", index=False)
        outputs["contrast.csv"] = sha256_file(out / "contrast.csv")
        lo, hi = envelope(draws, j, env_profiles)
        env = pd.DataFrame({"t": draws.mesh, "lo": lo, "hi": hi})
        env.to_csv(out / "envelope.csv", index=False)
        outputs["envelope.csv"] = sha256_file(out / "envelope.csv")

    inputs = {
        name: digest
        for name, digest in read_manifest(Path(args.fit_dir) / MANIFEST)["outputs"].items()
    }
    cfg = {"fit_dir": str(args.fit_dir), "flag_covariate": args.flag_covariate,
           "seed": args.seed}
    write_manifest(out, "summarize", cfg, args.seed, inputs, outputs)
    print(f"summary complete: {out}")
    return 0


def cmd_simulate(args) -> int:
    if args.from_manifest:
        cfg = read_manifest(args.from_manifest)["config"]
    else:
        if not args.study:
            raise IntegrityError("simulate needs --study (or --from-manifest)")
        cfg = {
            "study": args.study,
            "scale": args.scale,
            "seed": args.seed,
            "sigmas": args.sigmas,
            "jobs": args.jobs if args.jobs is not None else _default_jobs(),
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}

    if cfg["study"] == "mse-inflation":
        sigmas = (
            tuple(float(s) for s in cfg["sigmas"].split(","))
            if cfg.get("sigmas") else (0.3, 0.6, 1.0, 2.0, 3.0)
        )
        n_mc = 200 if cfg["scale"] == "desk" else 1000
        rows = run_mse_inflation_study(sigmas=sigmas, n_mc=n_mc, seed=cfg["seed"])
        frame = pd.DataFrame(rows)
        frame.to_csv(out / "mse_inflation.csv", index=False)
        outputs["mse_inflation.csv"] = sha256_file(out / "mse_inflation.csv")
    elif cfg["study"] == "monotonicity":
        if cfg["scale"] == "desk":
            replicates, sampler_cfg = 10, SamplerConfig(m=50, n_burn=500, n_save=500)
        else:
            replicates, sampler_cfg = 50, SamplerConfig(m=200, n_burn=1000, n_save=1000)
        result = run_monotonicity_study(
            replicates=replicates, sampler_cfg=sampler_cfg,
            seed=cfg["seed"], n_jobs=cfg.get("jobs", 1),
        )
        pd.DataFrame(result.rows).to_csv(out / "replicates.csv", index=False)
        agg = pd.DataFrame(result.aggregate())
        agg = agg.rename(columns={
            "scenario": "Scenario", "mse_default": "MSE Default",
            "mse_monotone": "MSE Monotone", "pct_reduction": "Percent MSE Reduction",
        })
        agg.to_csv(out / "aggregate.csv", index=False)
        outputs["replicates.csv"] = sha256_file(out / "replicates.csv")
        outputs["aggregate.csv"] = sha256_file(out / "aggregate.csv")
    else:
        raise IntegrityError(f"unknown study {cfg['study']!r}")

    write_manifest(out, "simulate", cfg, cfg["seed"], {}, outputs)
    print(f"simulation complete: {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {"fit": cmd_fit, "summarize": cmd_summarize, "simulate": cmd_simulate}
    try:
        return handler[args.command](args)
    except PsbartError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
