"""Command-line interface: ``vnnkit <command> [options]``.

Every command accepts ``--seed``, ``--config`` (JSON object whose keys are
option names of that command; explicit flags win) and ``--out`` (falls back
to ``$VNNKIT_OUT``).  Outputs are deterministic given config and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .brainage import (cohort_summary, combined_covariance, delta_age_report, ensemble_predictions,
                       robustness_count, synthetic_cohort)
from .covariance import FeatureMatrix, estimate_sample_covariance, normalize_spectrum
from .errors import ConfigError, ShapeError, VnnError
from .graphon import SHIPPED_GRAPHONS, dominance_check, get_graphon, sample_covariance_from_graphon
from .model import ARCH_PRESETS, VnnArchitecture, deserialize, parameter_count, predict, serialize
from .training import TrainConfig, train_ensemble
from .transfer import (SIGNALS, convergence_series, get_signal, graphon_cohort, stability_sweep,
                       transfer_batch, transfer_sweep)

log = logging.getLogger("vnnkit")

SWEEP_HEADER = ("axis", "median", "q25", "q75")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _arch(args) -> VnnArchitecture:
    spec = ARCH_PRESETS.get(args.arch, args.arch)
    return VnnArchitecture.parse(spec, args.nonlinearity, not args.linear_output)


def _train_config(args, ensemble_size: int | None = None) -> TrainConfig:
    return TrainConfig(test_fraction=args.test_fraction, val_fraction=args.val_fraction,
                       batch_size=args.batch_size, max_epochs=args.epochs, learning_rate=args.lr,
                       ensemble_size=ensemble_size or args.ensemble_size, seed=args.seed, n_jobs=args.jobs)


def _load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: model file not found") from None
    return deserialize(text)


# --- commands ------------------------------------------------------------


def cmd_synth(args, out: Path) -> dict:
    if args.kind == "brainage":
        cohort, truth = synthetic_cohort(n_hc=args.n_hc, n_d=args.n_d, m=args.m, graphon=args.graphon,
                                         n_planted=args.n_planted, shift_sd=args.shift_sd, seed=args.seed)
        io.write_json(out / "planted.json", {"regions": [cohort.feature_names[j] for j in truth.regions],
                                              "region_index": list(truth.regions), "shift_sd": truth.shift_sd,
                                              "eigen_index": truth.eigen_index})
    else:
        cohort = graphon_cohort(get_graphon(args.graphon), args.m, args.n, args.seed)
    io.write_features(out / "features.csv", cohort.subject_ids, FeatureMatrix(cohort.features, cohort.feature_names))
    io.write_phenotype(out / "phenotype.csv", cohort)
    return {"kind": args.kind, "n": cohort.n, "m": cohort.m, "graphon": args.graphon, "seed": args.seed}


def cmd_train(args, out: Path) -> dict:
    join = io.ingest_cohort(args.features, args.phenotype, ("age",))
    cohort = join.cohort
    if args.hc_only:
        cohort = cohort.group("HC")
    arch = _arch(args)
    ens = train_ensemble(cohort, arch, _train_config(args), args.seed)
    io.write_dict_rows(out / "members.csv", [m.metrics_row() for m in ens.members])
    for mem in ens.members:
        meta = {"seed": mem.seed, "epochs": mem.epochs_run, "best_epoch": mem.best_epoch,
                "val_mse": mem.val_mse, "member_id": mem.member_id, "master_seed": args.seed}
        name = "model.json" if mem.member_id == 0 else f"model-{mem.member_id:03d}.json"
        (out / name).write_text(serialize(arch, mem.params, meta, ens.covariance), encoding="utf-8")
    pred = predict(arch, ens.members[0].params, ens.covariance, cohort.features)
    return {"architecture": arch.describe(), "parameters": parameter_count(arch), "n": cohort.n,
            "members": len(ens), "covariance_digest": ens.covariance_digest,
            "full_mae": float(np.mean(np.abs(pred - cohort.age))),
            "unmatched_features": join.only_in_features, "unmatched_phenotype": join.only_in_phenotype,
            "test_mae": [m.test_mae for m in ens.members]}


def _check_dims(doc, feats: FeatureMatrix) -> None:
    if doc.covariance is None:
        raise ConfigError("model document carries no covariance; use 'transfer' to supply one")
    if doc.covariance.m != feats.m:
        raise ShapeError(f"features have {feats.m} columns but the model covariance is "
                         f"{doc.covariance.m} x {doc.covariance.m}")


def cmd_predict(args, out: Path) -> dict:
    doc = _load_model(args.model)
    ids, feats = io.read_features(args.features)
    _check_dims(doc, feats)
    pred = predict(doc.arch, doc.params, doc.covariance, feats.values)
    summary = {"n": len(ids)}
    rows = [[sid, p] for sid, p in zip(ids, pred)]
    header = ["subject_id", "prediction"]
    if args.phenotype:
        join = io.join_cohort(ids, feats, io.read_phenotype(args.phenotype, ("age",)))
        where = {s: i for i, s in enumerate(ids)}
        sel = [where[s] for s in join.cohort.subject_ids]
        summary["mae"] = float(np.mean(np.abs(pred[sel] - join.cohort.age)))
        summary["unmatched_features"] = join.only_in_features
        age = dict(zip(join.cohort.subject_ids, join.cohort.age))
        header.append("age")
        for r in rows:
            r.append(age.get(r[0], float("nan")))
    io.write_csv(out / "predictions.csv", header, rows)
    return summary


def cmd_transfer(args, out: Path) -> dict:
    doc = _load_model(args.model)
    ids, feats = io.read_features(args.features)
    cov = normalize_spectrum(estimate_sample_covariance(feats.values))
    readout = transfer_batch(doc.params, doc.arch, cov, feats.values)
    io.write_csv(out / "transfer.csv", ["subject_id", "readout"], zip(ids, readout))
    return {"n": len(ids), "m": feats.m, "source_digest": doc.covariance_digest, "target_digest": cov.digest}


def _default_model(args):
    """Model from ``--model`` or one trained on a synthetic graphon cohort at ``m_train``."""
    if args.model:
        doc = _load_model(args.model)
        return doc.arch, doc.params
    arch = _arch(args)
    cohort = graphon_cohort(get_graphon(args.graphon), args.m_train, args.n_train, args.seed)
    ens = train_ensemble(cohort, arch, _train_config(args, 1), args.seed)
    return arch, ens.members[0].params


def _write_sweep(out: Path, stem: str, report) -> dict:
    io.write_csv(out / f"{stem}.csv", SWEEP_HEADER, report.rows())
    summary = report.summary()
    if report.samples is not None:
        summary["samples"] = report.samples.tolist()
    io.write_json(out / f"{stem}.json", summary)
    return summary


def cmd_sweep_stability(args, out: Path) -> dict:
    args.m_train = args.m
    arch, params = _default_model(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = stability_sweep(get_graphon(args.graphon), args.m, arch, params, args.counts, args.trials,
                              args.seed, exact_moments=args.exact_moments)
    for w in caught:
        log.warning("%s", w.message)
    return _write_sweep(out, "stability", rep)


def cmd_sweep_transfer(args, out: Path) -> dict:
    args.m_train = args.sizes[0]
    arch, params = _default_model(args)
    rep = transfer_sweep(get_graphon(args.graphon), get_signal(args.signal), arch, params, args.sizes)
    return _write_sweep(out, "transfer", rep)


def cmd_cutdist(args, out: Path) -> dict:
    spec = get_graphon(args.graphon)
    cross = get_graphon(args.cross_graphon) if args.cross_graphon else None
    rep = convergence_series(spec, args.sizes, overlay=args.overlay, cross_spec=cross,
                             cross_sizes=args.sizes if cross is not None else (), seed=args.seed)
    io.write_csv(out / "cutdist.csv", ["m1", "m2", "distance", "exact"],
                 ([a, b, d, e] for a, b, d, e in zip(rep.sizes, rep.sizes[1:], rep.distances, rep.exact)))
    summary = rep.summary()
    summary["dominance"] = {str(m): dominance_check(sample_covariance_from_graphon(spec, m), 1.0)
                            for m in args.sizes}
    io.write_json(out / "cutdist.json", summary)
    return summary


def cmd_brainage(args, out: Path) -> dict:
    join = io.ingest_cohort(args.features, args.phenotype, ("age", "sex", "diagnosis"))
    cohort = join.cohort
    arch = _arch(args)
    ens = train_ensemble(cohort.group("HC"), arch, _train_config(args), args.seed)
    cov = combined_covariance(cohort)
    pred = ensemble_predictions(ens, cohort.features, cov)
    rep = delta_age_report(pred, cohort)
    rob = robustness_count(ens, cohort, cov)
    io.write_csv(out / "delta_age.csv", ["subject_id", "age", "diagnosis", "prediction", "corrected", "delta"],
                 zip(cohort.subject_ids, cohort.age, cohort.diagnosis, rep.predictions, rep.corrected, rep.delta))
    io.write_dict_rows(out / "regions.csv", rob.reports[0].rows())
    io.write_dict_rows(out / "robustness.csv", rob.rows(cohort.feature_names))
    io.write_dict_rows(out / "members.csv", [m.metrics_row() for m in ens.members])
    return {"cohort": cohort_summary(cohort), "delta_age": rep.summary(), "members": len(ens),
            "robust_regions": [n for n, c in zip(cohort.feature_names, rob.counts) if c >= 0.8 * len(ens)],
            "unmatched_features": join.only_in_features, "unmatched_phenotype": join.only_in_phenotype}


def cmd_inspect(args, out: Path) -> dict:
    if args.model:
        doc = _load_model(args.model)
        info = {"architecture": doc.arch.describe(), "nonlinearity": doc.arch.nonlinearity,
                "final_activation": doc.arch.final_activation, "parameters": parameter_count(doc.arch),
                "covariance_digest": doc.covariance_digest,
                "covariance_m": doc.covariance.m if doc.covariance is not None else None,
                "metadata": doc.meta}
    elif args.graphon:
        spec = get_graphon(args.graphon)
        info = {"name": spec.name, "eigenvalues": list(spec.eigenvalues), "indices": list(spec.indices),
                "lipschitz_constant": spec.lipschitz_constant}
    else:
        info = {"graphons": sorted(SHIPPED_GRAPHONS), "signals": sorted(SIGNALS),
                "architectures": {k: {"layers": v, "parameters": parameter_count(VnnArchitecture.parse(v))}
                                  for k, v in ARCH_PRESETS.items()}}
    print(json.dumps(info, indent=1, sort_keys=True))
    return info


# --- parser --------------------------------------------------------------


def _add_model_opts(p):
    p.add_argument("--arch", default="small", help="layer string 'fin,fout,taps;...' or preset name")
    p.add_argument("--nonlinearity", default="relu", choices=("relu", "tanh", "identity"))
    p.add_argument("--linear-output", action="store_true", help="no nonlinearity after the last layer")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--ensemble-size", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.12)
    p.add_argument("--jobs", type=int, default=1, help="parallel ensemble workers")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file of option defaults for this command")
    common.add_argument("--out", help=f"output directory (default ${io.OUT_ENV} or ./{io.DEFAULT_OUT})")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vnnkit", description="coVariance neural network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--kind", choices=("linear", "brainage"), default="linear")
    p.add_argument("--graphon", default="cosine2", choices=sorted(SHIPPED_GRAPHONS))
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--n-hc", type=int, default=400)
    p.add_argument("--n-d", type=int, default=150)
    p.add_argument("--shift-sd", type=float, default=2.0)
    p.add_argument("--n-planted", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a VNN (or ensemble) on a cohort")
    p.add_argument("--features", required=True)
    p.add_argument("--phenotype", required=True)
    p.add_argument("--hc-only", action="store_true", help="train on the HC rows only")
    _add_model_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--phenotype")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transfer", parents=[common], help="apply a model on a new covariance")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_transfer)

    for name, func, helptext in (("sweep-stability", cmd_sweep_stability, "output error against sample count"),
                                 ("sweep-transfer", cmd_sweep_transfer, "output convergence across sizes")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--graphon", default="cosine2", choices=sorted(SHIPPED_GRAPHONS))
        p.add_argument("--model", help="model document (default: train one on a synthetic cohort)")
        p.add_argument("--n-train", type=int, default=400)
        _add_model_opts(p)
        if name == "sweep-stability":
            p.add_argument("--m", type=int, default=40)
            p.add_argument("--counts", type=_ints, default=[100, 400, 1600, 6400])
            p.add_argument("--trials", type=int, default=20)
            p.add_argument("--exact-moments", action="store_true")
        else:
            p.add_argument("--sizes", type=_ints, default=[32, 64, 128, 256])
            p.add_argument("--signal", default="quadratic", choices=sorted(SIGNALS))
        p.set_defaults(func=func)

    p = sub.add_parser("cutdist", parents=[common], help="cut-distance convergence series")
    p.add_argument("--graphon", default="cosine2", choices=sorted(SHIPPED_GRAPHONS))
    p.add_argument("--sizes", type=_ints, default=[8, 16, 32, 64])
    p.add_argument("--cross-graphon", choices=sorted(SHIPPED_GRAPHONS))
    p.add_argument("--overlay", default="interval", choices=("interval", "product"))
    p.set_defaults(func=cmd_cutdist)

    p = sub.add_parser("brainage", parents=[common], help="Delta-Age and regional residual analysis")
    p.add_argument("--features", required=True)
    p.add_argument("--phenotype", required=True)
    _add_model_opts(p)
    p.set_defaults(func=cmd_brainage)

    p = sub.add_parser("inspect", parents=[common], help="describe a model, a graphon, or the presets")
    p.add_argument("--model")
    p.add_argument("--graphon", choices=sorted(SHIPPED_GRAPHONS))
    p.set_defaults(func=cmd_inspect)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
        allowed = {a.dest for a in sub._actions if a.dest not in ("help", "config", "func")}
        allowed |= {d.replace("_", "-") for d in allowed}
        cfg = io.load_config(args.config, allowed)
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)  # explicit flags override config values
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except VnnError as exc:
        print(f"vnnkit: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = io.resolve_output_dir(args.out) if args.command != "inspect" or args.out else None
        summary = args.func(args, out)
        if out is not None and args.command != "inspect":
            io.write_json(out / f"{args.command}.summary.json", summary)
    except (VnnError, OSError) as exc:
        print(f"vnnkit: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
