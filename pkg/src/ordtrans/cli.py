"""``ordtrans`` command line: simulate, impute, fit, predict, pvalues, evaluate.

Exit codes:

    0  success
    1  input could not be read or parsed (missing file, bad manifest/config/CSV)
    2  fit stopped at max_iter without converging
    3  fit diverged (no valid starting point or non-finite likelihood)
    4  ``predict --strict`` met an invalid probability vector

Every numeric option may also come from a YAML ``--config`` file; flags win
over the file.  The effective configuration is written into every output.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import _backend
from .data import DataError, FeatureEncoder, load_dataset, read_manifest, write_dataset
from .estimation import fit
from .evaluation import DiagonalModel, LRDeltaModel, LRRowModel, NewModel, cross_validate
from .imputation import DEFAULT_NEIGHBORS, impute_all
from .inference import (
    improving_feature_p_values,
    predict_dataset,
    rank_improving_features,
    to_delta,
)
from .model import DELTA, HyperParams, InvalidProbabilityError, ModelParams
from .optim import DivergenceError
from .simulation import FEATURE_DIM, SimSpec, generate, k_table, reduced_table

EXIT_OK, EXIT_PARSE, EXIT_MAXITER, EXIT_DIVERGED, EXIT_INVALID = 0, 1, 2, 3, 4

MODEL_FORMAT = "ordtrans-model"
MODEL_VERSION = 1

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "folds": 5,
    "multiplier": 20,
    "k": 3,
    "feature_dim": FEATURE_DIM,
    "bootstrap_reps": 500,
    "m_neighbors": DEFAULT_NEIGHBORS,
    "impute_first": False,
    "delta": False,
    "auto_c": True,
    "hyperparams": {},
}


class CliError(click.ClickException):
    def __init__(self, message, code=EXIT_PARSE):
        super().__init__(message)
        self.exit_code = code


def _load_config(path, overrides: dict) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    if path:
        p = Path(path)
        if not p.exists():
            raise CliError(f"config not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise CliError(f"cannot parse config {p}: {exc}")
        if not isinstance(loaded, dict):
            raise CliError(f"config {p} must be a mapping")
        unknown = set(loaded) - set(DEFAULTS) - set(HyperParams.__dataclass_fields__)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        for key, value in loaded.items():
            if key == "hyperparams":
                cfg["hyperparams"].update(value or {})
            elif key in DEFAULTS:
                cfg[key] = value
            else:
                cfg["hyperparams"][key] = value
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    try:
        hp = HyperParams.from_dict({**cfg["hyperparams"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid hyperparameters: {exc}")
    cfg["hyperparams"] = hp.to_dict()
    for key in ("folds", "multiplier", "k", "feature_dim", "bootstrap_reps", "m_neighbors", "threads"):
        if int(cfg[key]) < 1:
            raise CliError(f"{key} must be >= 1")
    return cfg


def _hp(cfg) -> HyperParams:
    return HyperParams.from_dict(cfg["hyperparams"])


def _load(data, manifest):
    if not data or not manifest:
        raise CliError("--data and --manifest are required")
    try:
        return load_dataset(data, manifest)
    except (FileNotFoundError, DataError, yaml.YAMLError) as exc:
        raise CliError(str(exc))


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare(ds, cfg):
    if not ds.fully_observed():
        if not cfg["impute_first"]:
            raise CliError("dataset has missing values; run `impute` first or pass --impute-first")
        ds, _ = impute_all(ds, int(cfg["m_neighbors"]), int(cfg["seed"]))
        if not ds.fully_observed():
            raise CliError("missing initial or final levels cannot be imputed")
    return to_delta(ds) if cfg["delta"] else ds


def _fit_model(ds, cfg):
    """Encode, pick C, fit; returns (encoder, hp, report)."""
    enc = FeatureEncoder.fit(ds)
    hp = _hp(cfg)
    if cfg["auto_c"] and ds.mode != DELTA:
        from .data import build_contingency
        from .model import default_c

        try:
            hp = hp.with_(c_weight=default_c(build_contingency(ds)))
        except ValueError:
            pass
    try:
        report = fit(enc.transform(ds), hp)
    except DivergenceError as exc:
        raise CliError(f"fit diverged: {exc}", EXIT_DIVERGED)
    except (ValueError, InvalidProbabilityError) as exc:
        raise CliError(str(exc))
    return enc, hp, report


def _model_document(enc, hp, report, cfg):
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": report.params.to_dict(),
        "hyperparams": hp.to_dict(),
        "encoder": enc.to_dict(),
        "fit": report.to_dict(),
        "config": cfg,
    }


def _read_model(path):
    p = Path(path)
    if not p.exists():
        raise CliError(f"model not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"cannot parse model {p}: {exc}")
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise CliError(f"{p} is not a version {MODEL_VERSION} {MODEL_FORMAT} file")
    return (
        ModelParams.from_dict(doc["params"]),
        HyperParams.from_dict(doc["hyperparams"]),
        FeatureEncoder.from_dict(doc["encoder"]),
        doc,
    )


def _out_dir(out) -> Path:
    if not out:
        raise CliError("--out is required")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- options


def common(*names):
    opts = {
        "data": click.option("--data", type=click.Path(), help="Input CSV."),
        "manifest": click.option("--manifest", type=click.Path(), help="Column-role manifest (YAML)."),
        "config": click.option("--config", type=click.Path(), help="YAML config; flags override it."),
        "model": click.option("--model", type=click.Path(), help="Fitted model JSON."),
        "out": click.option("--out", type=click.Path(), help="Output directory."),
        "seed": click.option("--seed", type=int, default=None),
        "threads": click.option("--threads", type=int, default=None, help="Worker threads (default: all cores)."),
        "folds": click.option("--folds", type=int, default=None),
        "multiplier": click.option("--multiplier", type=int, default=None, help="Scale of the reduced table."),
        "k": click.option("--k", "k", type=int, default=None, help="Number of levels; selects one of the built-in K=3..6 tables."),
        "bootstrap_reps": click.option("--bootstrap-reps", type=int, default=None),
        "m_neighbors": click.option("--m-neighbors", type=int, default=None),
        "impute_first": click.option("--impute-first", is_flag=True, default=None,
                                     help="Impute missing feature cells before fitting."),
        "delta": click.option("--delta", is_flag=True, default=None,
                              help="Model the sign of the level change instead of the final level."),
    }

    def deco(f):
        for n in reversed(names):
            f = opts[n](f)
        return f

    return deco


class _Group(click.Group):
    """Reports bad flags with exit 1, keeping 2 free for the max-iter outcome."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as exc:
            raise CliError(exc.format_message()) from exc

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            raise CliError(exc.format_message()) from exc


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def main():
    """Ordinal transition model: fitting, prediction, p-values and evaluation."""


@main.command()
@common("config", "out", "seed", "multiplier", "k")
@click.option("--feature-dim", type=int, default=None)
def simulate(config, out, seed, multiplier, k, feature_dim):
    """Generate a synthetic dataset (CSV + manifest).

    Without --k the reduced 3-level table is scaled by --multiplier; with
    --k 4..6 the corresponding N=5500 table is used.
    """
    cfg = _load_config(config, {"seed": seed, "multiplier": multiplier, "k": k, "feature_dim": feature_dim})
    out = _out_dir(out)
    if int(cfg["k"]) != 3:
        try:
            spec = SimSpec(k_table(int(cfg["k"])), 1, int(cfg["feature_dim"]), int(cfg["seed"]))
        except ValueError as exc:
            raise CliError(str(exc))
    else:
        spec = SimSpec(reduced_table(), int(cfg["multiplier"]), int(cfg["feature_dim"]), int(cfg["seed"]))
    ds = generate(spec)
    write_dataset(ds, out / "data.csv", out / "manifest.yaml")
    _dump_json({"config": cfg, "n_obs": ds.n_obs, "table": spec.table.tolist()}, out / "simulate.json")
    click.echo(f"wrote {ds.n_obs} observations to {out / 'data.csv'}")


@main.command()
@common("data", "manifest", "config", "out", "seed", "m_neighbors")
def impute(data, manifest, config, out, seed, m_neighbors):
    """Fill missing feature cells; writes the imputed CSV and a fill report."""
    cfg = _load_config(config, {"seed": seed, "m_neighbors": m_neighbors})
    ds = _load(data, manifest)
    out = _out_dir(out)
    filled, report = impute_all(ds, int(cfg["m_neighbors"]), int(cfg["seed"]))
    src = read_manifest(manifest)
    names = [n for n, s in src.columns.items() if s["role"] == "c_initial"] + \
            [n for n, s in src.columns.items() if s["role"] == "c_final"]
    write_dataset(filled, out / "imputed.csv", out / "manifest.yaml", names=tuple(names))
    with open(out / "fill_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "filled"])
        w.writerows(report.rows())
    _dump_json({"config": cfg, "filled": report.counts}, out / "impute.json")
    click.echo(f"filled {sum(report.counts.values())} cells")


@main.command(name="fit")
@common("data", "manifest", "config", "out", "seed", "impute_first", "m_neighbors", "delta")
@click.option("--max-iter", type=int, default=None)
@click.option("--trace", is_flag=True, help="Also write the per-iteration objective as CSV.")
def fit_cmd(data, manifest, config, out, seed, impute_first, m_neighbors, delta, max_iter, trace):
    """Fit the transition model; writes model.json (exit 2 if max_iter was hit)."""
    cfg = _load_config(config, {"seed": seed, "impute_first": impute_first,
                                "m_neighbors": m_neighbors, "delta": delta})
    if max_iter is not None:
        try:
            cfg["hyperparams"] = _hp(cfg).with_(max_iter=max_iter).to_dict()
        except ValueError as exc:
            raise CliError(str(exc))
    ds = _prepare(_load(data, manifest), cfg)
    out = _out_dir(out)
    enc, hp, report = _fit_model(ds, cfg)
    _dump_json(_model_document(enc, hp, report, cfg), out / "model.json")
    if trace:
        with open(out / "trace.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective"])
            w.writerows((t, repr(v)) for t, v in enumerate(report.trace))
    click.echo(f"iterations={report.iterations} converged={report.converged} "
               f"loglik={report.log_likelihood:.6f} backend={_backend.BACKEND}")
    if not report.converged:
        sys.exit(EXIT_MAXITER)


@main.command()
@common("data", "manifest", "model", "out", "delta")
@click.option("--strict", is_flag=True, help="Fail (exit 4) on an invalid probability vector.")
def predict(data, manifest, model, out, delta, strict):
    """Predicted final level and probability vector per observation."""
    params, hp, enc, doc = _read_model(model)
    ds = _load(data, manifest)
    if delta or params.mode == DELTA:
        ds = to_delta(ds)
    out = _out_dir(out)
    try:
        pred = predict_dataset(params, hp, enc.transform(ds), strict=strict)
    except InvalidProbabilityError as exc:
        raise CliError(str(exc), EXIT_INVALID)
    except (ValueError, DataError) as exc:
        raise CliError(str(exc))
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "c_initial", "predicted", *(f"p{j + 1}" for j in range(params.n_cols)), "valid"])
        for r in range(ds.n_obs):
            w.writerow([r, int(ds.c_initial[r]), int(pred.levels[r]),
                        *(repr(float(v)) for v in pred.probabilities[r]), int(not pred.invalid[r])])
    _dump_json({"config": doc["config"], "model": str(model), "n_obs": ds.n_obs,
                "invalid_vectors": pred.n_invalid}, out / "predict.json")
    click.echo(f"predicted {ds.n_obs} observations ({pred.n_invalid} invalid probability vectors)")


@main.command()
@common("data", "manifest", "config", "out", "seed", "threads", "bootstrap_reps", "impute_first", "m_neighbors")
def pvalues(data, manifest, config, out, seed, threads, bootstrap_reps, impute_first, m_neighbors):
    """Rank y-features by their effect on improvement, with bootstrap p-values."""
    cfg = _load_config(config, {"seed": seed, "threads": threads, "bootstrap_reps": bootstrap_reps,
                                "impute_first": impute_first, "m_neighbors": m_neighbors, "delta": True})
    ds = _prepare(_load(data, manifest), cfg)
    out = _out_dir(out)
    enc, hp, report = _fit_model(ds, cfg)
    names = enc.encoded_names()[1]
    if not report.converged:
        raise CliError("delta-mode fit did not converge; raise max_iter", EXIT_MAXITER)
    try:
        p = improving_feature_p_values(enc.transform(ds), hp, report.params,
                                       int(cfg["bootstrap_reps"]), int(cfg["seed"]), int(cfg["threads"]))
    except RuntimeError as exc:
        raise CliError(str(exc), EXIT_DIVERGED)
    ranking = rank_improving_features(report, names, p)
    ranking.to_csv(out / "ranking.csv")
    (out / "ranking.md").write_text(ranking.to_markdown() + "\n")
    _dump_json({"config": cfg, "fit": report.to_dict()}, out / "pvalues.json")
    click.echo(ranking.to_markdown())


@main.command()
@common("data", "manifest", "config", "out", "seed", "threads", "folds", "multiplier", "k",
        "impute_first", "m_neighbors")
@click.option("--models", default="NEW,LR,LR_row", show_default=True)
def evaluate(data, manifest, config, out, seed, threads, folds, multiplier, k,
             impute_first, m_neighbors, models):
    """Cross-validate NEW against the LR baselines (DIAG, no change, on request).

    Uses --data/--manifest when given, otherwise simulates data as `simulate` would.
    """
    cfg = _load_config(config, {"seed": seed, "threads": threads, "folds": folds, "multiplier": multiplier,
                                "k": k, "impute_first": impute_first, "m_neighbors": m_neighbors})
    if data or manifest:
        ds = _prepare(_load(data, manifest), cfg)
    else:
        kk = int(cfg["k"])
        table = k_table(kk) if kk != 3 else None
        spec = SimSpec(table, 1, int(cfg["feature_dim"]), int(cfg["seed"])) if table else \
            SimSpec(reduced_table(), int(cfg["multiplier"]), int(cfg["feature_dim"]), int(cfg["seed"]))
        ds = generate(spec)
    out = _out_dir(out)
    hp = _hp(cfg)
    factories = {
        "NEW": lambda: NewModel(hp, auto_c=bool(cfg["auto_c"])),
        "LR": LRDeltaModel,
        "LR_row": LRRowModel,
        "DIAG": DiagonalModel,
    }
    chosen = [m.strip() for m in models.split(",") if m.strip()]
    bad = [m for m in chosen if m not in factories]
    if bad:
        raise CliError(f"unknown models {bad}; choose from {sorted(factories)}")
    try:
        report = cross_validate(ds, {m: factories[m] for m in chosen}, int(cfg["folds"]),
                                int(cfg["seed"]), int(cfg["threads"]))
    except DivergenceError as exc:
        raise CliError(f"fit diverged: {exc}", EXIT_DIVERGED)
    except (DataError, ValueError) as exc:
        raise CliError(str(exc))
    report.to_csv(out / "evaluation.csv")
    (out / "summary.txt").write_text(report.summary() + "\n")
    _dump_json({"config": cfg, "report": report.to_dict(),
                "assignment": report.assignment.tolist()}, out / "evaluation.json")
    click.echo(report.summary())


if __name__ == "__main__":  # pragma: no cover
    main()
