"""Command-line pipeline: simulate, ingest, quantize, history, train,
predict, evaluate, and effects reports.

Every subcommand is config-file-first: a single JSON document can describe
the whole experiment, and individual flags override config values. All
randomness flows from explicit seeds, so rerunning a command with the same
config and inputs reproduces its artifacts byte for byte (logging aside).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import history as hist
from . import ingest, quantize, synth
from .errors import DataError, NumericalError
from .hazard import DEFAULT_BREAKPOINTS
from .inference import ArrayDataset, TrainConfig, train, write_training_log
from .model import (DecompositionConfig, LatticeSurvivalModel, ModelConfig,
                    load_checkpoint, save_checkpoint)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise DataError("config must be a JSON object")
    return config


def _pick(flag, config: dict, key: str, default=None):
    """Flag value if given, else config value, else default."""
    if flag is not None:
        return flag
    return config.get(key, default)


def _require(value, what: str):
    if value is None:
        raise UsageError(f"missing required setting: {what}")
    return value


def _cohort_dims(lattice: dict) -> tuple[str, ...]:
    dims = tuple(d for d in lattice if d != "race")
    return dims if dims else tuple(lattice)


def _decomposition(section: dict, key: str, fallback_dims: tuple[str, ...],
                   fallback_order: int) -> DecompositionConfig:
    if key in section:
        return DecompositionConfig.from_dict(section[key])
    order = min(fallback_order, len(fallback_dims))
    return DecompositionConfig(fallback_dims, order)


def _model_config(config: dict, lattice: dict, n_features: int) -> ModelConfig:
    section = config.get("model", {})
    cohort = _cohort_dims(lattice)
    slope_dims = ("race",) if "race" in lattice else cohort
    return ModelConfig(
        lattice=lattice,
        n_features=n_features,
        breakpoints=tuple(config.get("breakpoints", DEFAULT_BREAKPOINTS)),
        baseline=_decomposition(section, "baseline", cohort, 2),
        slopes=_decomposition(section, "slopes", slope_dims, 1),
        effects=_decomposition(section, "effects", cohort, 2),
        thresholds=_decomposition(section, "thresholds", cohort, 2),
        base_scale=float(section.get("base_scale", 5.0)),
        scale_decay=float(section.get("scale_decay", 0.1)),
        covariate_placement=bool(section.get("covariate_placement", False)),
        exceedance_covariates=bool(section.get("exceedance_covariates", True)),
    )


def _train_config(config: dict, args) -> TrainConfig:
    section = dict(config.get("train", {}))
    overrides = {
        "batch_size": args.batch_size,
        "param_samples": args.param_samples,
        "learning_rate": args.learning_rate,
        "patience": args.patience,
        "max_epochs": args.max_epochs,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    try:
        return TrainConfig(**section)
    except TypeError as exc:
        raise DataError(f"bad train config: {exc}") from exc


def _dataset_from_file(path: str, lattice: dict) -> tuple[ArrayDataset, list]:
    records = ingest.read_episode_records(path)
    data = ingest.records_to_dataset(records, lattice)
    return ArrayDataset(data), records


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    section = dict(config.get("simulate", {}))
    lattice = _require(config.get("lattice"), "lattice")
    lattice = {str(k): int(v) for k, v in lattice.items()}
    seed = int(_pick(args.seed, config, "seed", 0))
    n_rows = int(_require(_pick(args.n_rows, section, "n_rows"), "n_rows"))
    n_features = int(_require(section.get("n_features"), "simulate.n_features"))
    cohort = _cohort_dims(lattice)
    slope_dims = ("race",) if "race" in lattice else cohort
    truth = synth.random_truth(
        lattice, n_features,
        tuple(section.get("baseline_dims", cohort)),
        tuple(section.get("slope_dims", slope_dims)),
        baseline_order=int(section.get("baseline_order", min(2, len(cohort)))),
        slope_order=int(section.get("slope_order", min(1, len(slope_dims)))),
        breakpoints=tuple(config.get("breakpoints", DEFAULT_BREAKPOINTS)),
        baseline_level=float(section.get("baseline_level", -3.5)),
        amplitude=float(section.get("amplitude", 0.5)),
        decay=float(section.get("decay", 0.5)),
        slope_amplitude=float(section.get("slope_amplitude", 0.3)),
        effect_amplitude=float(section.get("effect_amplitude", 0.5)),
        threshold_start=float(section.get("threshold_start", 1.5)),
        seed=seed,
    )
    shift = section.get("covariate_shift")
    spec = synth.GeneratorSpec(
        lattice=lattice, n_rows=n_rows,
        baseline=truth["baseline"], slopes=truth["slopes"],
        effects=truth["effects"], thresholds=truth["thresholds"],
        covariate_shift=None if shift is None else np.asarray(shift, dtype=float),
        feature_rate=float(section.get("feature_rate", 0.3)),
        confounding=float(_pick(args.confounding, section, "confounding", 0.0)),
        severity_noise=float(section.get("severity_noise", 0.0)),
        censor_window=float(section.get("censor_window", 90.0)),
        breakpoints=tuple(config.get("breakpoints", DEFAULT_BREAKPOINTS)),
        seed=seed,
    )
    result = synth.generate(spec)
    ingest.write_episode_records(result.records, args.out)
    if args.truth:
        synth.save_truth(spec, args.truth)
    events = sum(r.event for r in result.records)
    print(f"wrote {len(result.records)} episodes ({events} events) to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    config = _load_config(args.config)
    observation_end = _require(
        _pick(args.observation_end, config, "observation_end"),
        "observation_end")
    claims, rejected = ingest.read_claims(args.claims)
    episodes, bad = ingest.group_claims(claims)
    rejected.extend(bad)
    flags = [ep.unplanned for ep in episodes]
    end_day = ingest.to_day_index(observation_end)
    waits = ingest.compute_wait(episodes, flags, end_day)
    records = [
        ingest.EpisodeRecord(
            person_id=ep.person_id, admit_date=ep.admit_date,
            discharge_date=ep.discharge_date,
            covariates=np.zeros(0), cohort_coords={},
            wait_days=wait, event=event)
        for ep, wait, event in waits
    ]
    ingest.write_episode_records(records, args.out)
    print(f"wrote {len(records)} episodes to {args.out}; "
          f"rejected {len(rejected)} rows")
    return 0


def _cmd_quantize(args) -> int:
    if args.action == "fit":
        table, _ = _read_table(args.table, args.id_column)
        grid = tuple(float(g) for g in args.grid.split(",")) if args.grid \
            else quantize.DEFAULT_GRID
        qmap = quantize.fit(table, grid)
        qmap.save(args.out)
        print(f"fit {qmap.n_columns} binary columns "
              f"({len(qmap.dropped)} features dropped) to {args.out}")
        return 0
    if not args.map:
        raise UsageError("quantize apply requires --map")
    table, ids = _read_table(args.table, args.id_column)
    qmap = quantize.QuantizationMap.load(args.map)
    matrix, names = quantize.transform(table, qmap)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(([args.id_column] if ids is not None else []) + names)
        for i in range(matrix.shape[0]):
            prefix = [ids[i]] if ids is not None else []
            writer.writerow(prefix + [int(v) for v in matrix[i]])
    print(f"encoded {matrix.shape[0]} rows x {matrix.shape[1]} columns "
          f"to {args.out}")
    return 0


def _read_table(path: str, id_column: str | None):
    """CSV -> (dict of float columns, optional id list)."""
    try:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty table")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read table {path}: {exc}") from exc
    ids = None
    names = list(reader.fieldnames)
    if id_column is not None:
        if id_column not in names:
            raise DataError(f"id column {id_column!r} not in table")
        names.remove(id_column)
        ids = [r[id_column] for r in rows]
    table = {}
    for name in names:
        try:
            table[name] = np.array([float(r[name]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise DataError(f"column {name!r} is not numeric: {exc}") from exc
    return table, ids


def _cmd_history(args) -> int:
    table, ids = _read_table(args.counts, args.id_column)
    counts = np.column_stack([table[k] for k in table])
    if args.action == "fit":
        model = hist.fit_factorization(
            counts, latent_dim=args.latent_dim,
            sparsity_weight=args.sparsity_weight, seed=args.seed or 0)
        model.save(args.out)
        print(f"fit {model.latent_dim}-dimensional encoder on "
              f"{counts.shape[0]} rows; final loss "
              f"{model.loss_trace[-1]:.6g}")
        return 0
    if not args.model:
        raise UsageError("history encode requires --model")
    model = hist.FactorizationModel.load(args.model)
    encodings = hist.encode_history(counts, model)
    rule = hist.fit_group_rule(encodings)
    groups = hist.assign_group(encodings, rule)
    if args.rule_out:
        rule.save(args.rule_out)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ([args.id_column] if ids is not None else []) \
            + [f"z{j}" for j in range(model.latent_dim)] + ["history_group"]
        writer.writerow(header)
        for i in range(encodings.shape[0]):
            prefix = [ids[i]] if ids is not None else []
            writer.writerow(prefix + [f"{float(v)!r}" for v in encodings[i]]
                            + [int(groups[i])])
    print(f"encoded {encodings.shape[0]} rows into "
          f"{rule.n_groups} history groups")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    lattice = _require(config.get("lattice"), "lattice")
    lattice = {str(k): int(v) for k, v in lattice.items()}
    dataset, records = _dataset_from_file(args.episodes, lattice)
    n_features = records[0].covariates.size
    if n_features == 0:
        raise DataError("episodes carry no covariates; quantize them first")
    model = LatticeSurvivalModel(_model_config(config, lattice, n_features))
    train_config = _train_config(config, args)
    result = train(model, dataset, train_config)
    save_checkpoint(args.out, model, result.posterior)
    if args.log:
        write_training_log(result.history, args.log)
    print(f"trained {model.config.n_features}-feature model on "
          f"{len(dataset)} episodes: best loss {result.best_loss:.6g} "
          f"at epoch {result.best_epoch}/{len(result.history)}")
    return 0


def _cmd_predict(args) -> int:
    config = _load_config(args.config)
    model, posterior = load_checkpoint(args.checkpoint)
    dataset, records = _dataset_from_file(args.episodes, model.config.lattice)
    batch = dataset.take(np.arange(len(dataset)))
    horizons = _horizons(args, config)
    draws = int(_pick(args.draws, config, "draws", 200))
    seed = int(_pick(args.seed, config, "seed", 0))
    score_cols = {}
    for d in horizons:
        score_cols[d] = model.predict_event_probability(
            posterior, batch, d, draws=draws, seed=seed)
    log_haz = model.interval_log_hazards(model.mean_parameters(posterior), batch)
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id"]
                        + [f"p{int(d) if float(d).is_integer() else d}"
                           for d in horizons]
                        + [f"log_hazard{i}" for i in range(model.n_intervals)])
        for i, rec in enumerate(records):
            writer.writerow([rec.person_id]
                            + [f"{float(score_cols[d][i])!r}" for d in horizons]
                            + [f"{float(v)!r}" for v in log_haz[i]])
    print(f"scored {len(records)} episodes at horizons {list(horizons)}")
    return 0


def _horizons(args, config) -> tuple[float, ...]:
    raw = _pick(args.horizons, config, "horizons", (30.0, 90.0))
    if isinstance(raw, str):
        raw = [float(h) for h in raw.split(",")]
    horizons = tuple(float(h) for h in raw)
    if not horizons or any(h <= 0 for h in horizons):
        raise UsageError("horizons must be positive")
    return horizons


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    records = ingest.read_episode_records(args.episodes)
    wait = np.array([r.wait_days for r in records])
    event = np.array([r.event for r in records])
    scores_by_col, ids = _read_scores(args.scores)
    if len(ids) != len(records):
        raise DataError("scores and episodes differ in length")
    horizons = _horizons(args, config)
    resamples = int(_pick(args.bootstrap, config, "bootstrap", 0))
    seed = int(_pick(args.seed, config, "seed", 0))
    metrics: dict = {"n_episodes": len(records)}
    for d in horizons:
        key = f"p{int(d) if float(d).is_integer() else d}"
        if key not in scores_by_col:
            raise DataError(f"scores file lacks column {key!r}")
        labels, included, n_excluded = ev.horizon_labels(wait, event, d)
        scores = scores_by_col[key][included]
        entry = {
            "auroc": ev.auroc(scores, labels),
            "auprc": ev.auprc(scores, labels),
            "n_scored": int(labels.size),
            "n_excluded_censored": n_excluded,
            "prevalence": float(labels.mean()),
        }
        if resamples:
            entry["auroc_bootstrap_sd"] = ev.bootstrap_sd(
                scores, labels, ev.auroc, resamples=resamples, seed=seed)
            entry["auprc_bootstrap_sd"] = ev.bootstrap_sd(
                scores, labels, ev.auprc, resamples=resamples, seed=seed)
        metrics[f"horizon_{key[1:]}"] = entry
    ev.write_metrics_json(metrics, args.out)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _read_scores(path: str):
    try:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read scores {path}: {exc}") from exc
    if not rows:
        raise DataError("empty scores file")
    ids = [r["person_id"] for r in rows]
    cols = {}
    for name in rows[0]:
        if name == "person_id":
            continue
        cols[name] = np.array([float(r[name]) for r in rows])
    return cols, ids


def _cmd_effects(args) -> int:
    config = _load_config(args.config)
    model, posterior = load_checkpoint(args.checkpoint)
    draws = int(_pick(args.draws, config, "draws", 200))
    seed = int(_pick(args.seed, config, "seed", 0))
    table = ev.cohort_effect_summary(model, posterior, draws=draws, seed=seed)
    table.write_csv(args.out)
    outputs = [args.out]
    if args.baseline_out:
        ev.baseline_hazard_report(model, posterior).write_csv(args.baseline_out)
        outputs.append(args.baseline_out)
    if args.thresholds_out:
        ev.threshold_report(model, posterior, draws=draws,
                            seed=seed).write_csv(args.thresholds_out)
        outputs.append(args.thresholds_out)
    print(f"wrote {', '.join(outputs)}")
    return 0


# ---------------------------------------------------------------------------
# wiring


def _build_parser() -> _Parser:
    parser = _Parser(prog="latticesurv",
                     description="Cohort-lattice survival modeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="draw a synthetic episode dataset")
    common(p)
    p.add_argument("--out", required=True, help="episodes JSONL path")
    p.add_argument("--truth", help="ground-truth manifest path prefix")
    p.add_argument("--n-rows", type=int)
    p.add_argument("--confounding", type=float)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("ingest", help="claims file -> episode records")
    common(p)
    p.add_argument("--claims", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--observation-end")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("quantize", help="fit or apply percentile encodings")
    common(p)
    p.add_argument("action", choices=("fit", "apply"))
    p.add_argument("--table", required=True, help="numeric CSV")
    p.add_argument("--id-column")
    p.add_argument("--grid", help="comma-separated percentiles (fit)")
    p.add_argument("--map", help="fitted map JSON (apply)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("history", help="fit or apply the history encoder")
    common(p)
    p.add_argument("action", choices=("fit", "encode"))
    p.add_argument("--counts", required=True, help="utilization count CSV")
    p.add_argument("--id-column")
    p.add_argument("--latent-dim", type=int, default=5)
    p.add_argument("--sparsity-weight", type=float, default=0.1)
    p.add_argument("--model", help="fitted factorization JSON (encode)")
    p.add_argument("--rule-out", help="where to store the grouping rule")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_history)

    p = sub.add_parser("train", help="fit the joint model on episodes")
    common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True, help="checkpoint path prefix")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--param-samples", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score episodes with a checkpoint")
    common(p)
    p.add_argument("--episodes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--horizons")
    p.add_argument("--draws", type=int)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="metrics from scores + episodes")
    common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--horizons")
    p.add_argument("--bootstrap", type=int)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("effects", help="cohort effect report from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-out")
    p.add_argument("--thresholds-out")
    p.add_argument("--draws", type=int)
    p.set_defaults(func=_cmd_effects)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid value: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
