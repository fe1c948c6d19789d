"""Command-line surface: synth, extract, fit, eval, importance.

Every command is deterministic given its flags and seeds, writes files
atomically (temp + rename), and prints a JSON summary to stdout.  Exit codes:
0 ok, 2 input parse error, 3 degenerate data, 4 model/data incompatibility,
64 usage error.

Temperature scaling notes: the ranker's original logits are not stored, so
fitting reconstructs pseudo-logits as ln(p) of the k scores plus a residual
class holding 1 - sum(p), and evaluation reads the calibrated confidence off
softmax(pseudo / T).  This is an approximation of scaling the true logits.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import warnings

import numpy as np

from . import calibrators, features, gbm, metrics, model_io, synth
from .data_model import RankedQueryRecord, load_records
from .errors import CompatibilityError, DegenerateDataError, RecordError, ResortWarning

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DEGENERATE = 3
EXIT_INCOMPATIBLE = 4
EXIT_USAGE = 64

RESIDUAL_FLOOR = 1e-300


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    raw = os.environ.get("CALIBKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _atomic(path, write_fn) -> None:
    """Run write_fn against a temp path, then rename it onto path."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_counting_resorts(path, k) -> tuple[list[RankedQueryRecord], int]:
    """load_records, with the unsorted-candidate warnings folded into a count."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ResortWarning)
        records = load_records(path, k=k)
    return records, sum(issubclass(w.category, ResortWarning) for w in caught)


def split_is_val(query_id: str, split_seed: int, val_fraction: float = 0.2) -> bool:
    """Deterministic holdout assignment by hashing (split_seed, query_id)."""
    digest = hashlib.blake2b(f"{split_seed}:{query_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") < val_fraction * 2.0**64


def select_split(records: list[RankedQueryRecord], which: str, split_seed: int,
                 val_fraction: float) -> list[RankedQueryRecord]:
    if which == "all":
        return records
    keep_val = which == "val"
    out = [r for r in records
           if split_is_val(r.query_id, split_seed, val_fraction) == keep_val]
    if not out:
        raise DegenerateDataError(f"the {which} split is empty")
    return out


def _parse_target(target: str, k: int) -> int | None:
    """None for the record label, else a 0-based candidate rank."""
    if target == "label":
        return None
    if target.startswith("rank"):
        r = int(target[4:])
        if 1 <= r <= k:
            return r - 1
    raise CompatibilityError(f"target {target!r} not available for k={k}")


def _scores_and_targets(records, target: str):
    """Raw confidence and binary target per record for a scalar calibrator."""
    k = len(records[0].candidates)
    rank = _parse_target(target, k)
    idx = 0 if rank is None else rank
    scores = np.array([r.candidates[idx].softmax_score for r in records])
    if rank is None:
        y = np.array([r.label for r in records], dtype=int)
    else:
        flags = [r.candidates[rank].is_correct for r in records]
        if any(f is None for f in flags):
            raise DegenerateDataError(
                f"target {target} needs is_correct flags on every record")
        y = np.array(flags, dtype=int)
    return scores, y


def topk_pseudo_logits(records) -> np.ndarray:
    """ln of the k stored scores plus a residual class ln(1 - sum)."""
    p = np.array([[c.softmax_score for c in r.candidates] for r in records])
    resid = np.clip(1.0 - p.sum(axis=1, keepdims=True), RESIDUAL_FLOOR, None)
    return np.log(np.clip(np.hstack([p, resid]), RESIDUAL_FLOOR, None))


def correct_class_indices(records) -> np.ndarray:
    """Rank of the first correct candidate per record, or k when none is."""
    k = len(records[0].candidates)
    out = np.empty(len(records), dtype=int)
    for i, r in enumerate(records):
        flags = [c.is_correct for c in r.candidates]
        if any(f is None for f in flags):
            raise DegenerateDataError(
                "temperature fitting needs is_correct flags on every candidate")
        out[i] = next((j for j, f in enumerate(flags) if f), k)
    return out


def model_confidences(model, records, target: str, head_mode="mean") -> np.ndarray:
    """Calibrated confidence per record for any model kind."""
    scores, _ = _scores_and_targets(records, target)
    if isinstance(model, model_io.IdentityModel):
        return scores
    if isinstance(model, calibrators.PlattModel):
        return np.asarray(calibrators.apply_platt(model, calibrators.prob_to_logit(scores)))
    if isinstance(model, calibrators.IsotonicModel):
        return np.asarray(calibrators.apply_isotonic(model, scores))
    if isinstance(model, calibrators.TemperatureModel):
        pseudo = topk_pseudo_logits(records)
        k = pseudo.shape[1] - 1
        rank = _parse_target(target, k)
        cal = np.vstack([calibrators.apply_temperature(model, row) for row in pseudo])
        if rank is None:
            return np.clip(1.0 - cal[:, k], calibrators.PROB_CLAMP, 1.0 - calibrators.PROB_CLAMP)
        return np.clip(cal[:, rank], calibrators.PROB_CLAMP, 1.0 - calibrators.PROB_CLAMP)
    if isinstance(model, gbm.GbmEnsemble):
        config = _config_from_names(model.feature_names, head_mode)
        rows = []
        for r in records:
            vec = features.build_features(r, config)
            if vec.names != tuple(model.feature_names):
                raise CompatibilityError(
                    "extracted feature names do not match the model's feature_names")
            rows.append(vec.values)
        return gbm.predict_gbm_matrix(model, np.vstack(rows))
    raise CompatibilityError(f"cannot evaluate model {type(model).__name__}")


def _config_from_names(names, head_mode) -> features.FeatureConfig:
    names = set(names)
    return features.FeatureConfig(
        head_mode=head_mode,
        include_flow_entropy=any(n.endswith("_flow_entropy") for n in names),
        include_flow_deltas=any("_flow_delta_" in n for n in names),
        include_flow_mean=any(n.endswith("_flowmean") for n in names),
    )


def _feature_config(args) -> features.FeatureConfig:
    head_mode = args.head_mode if args.head_mode == "mean" else int(args.head_mode)
    return features.FeatureConfig(
        head_mode=head_mode,
        include_flow_entropy=not args.no_flow_entropy,
        include_flow_deltas=not args.no_flow_deltas,
        include_flow_mean=not args.no_flowmean,
    )


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_synth(args) -> int:
    if args.mode == "miscalibrated":
        records = synth.gen_miscalibrated(
            n=args.n, k=args.k, sharpen=args.t0, seed=args.seed,
            layers=args.layers, heads=args.heads)
    else:
        records = synth.gen_flow_signal(
            n=args.n, layers=args.layers, heads=args.heads,
            signal_strength=args.signal_strength, seed=args.seed, k=args.k)
    from .data_model import dump_records

    _atomic(args.out, lambda p: dump_records(records, p))
    _print_json({
        "command": "synth", "mode": args.mode, "n": args.n, "k": args.k,
        "t0": args.t0, "signal_strength": args.signal_strength,
        "layers": args.layers, "heads": args.heads, "seed": args.seed,
        "latent_scale": synth.LATENT_SCALE, "out": args.out,
    })
    return EXIT_OK


def cmd_extract(args) -> int:
    records, resorts = _load_counting_resorts(args.records, args.k)
    config = _feature_config(args)
    _atomic(args.out, lambda p: features.write_feature_csv(records, config, p, threads=_threads()))
    _print_json({"command": "extract", "rows": len(records),
                 "resort_warnings": resorts, "out": args.out})
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.features and args.records:
        raise CompatibilityError("pass --records or --features, not both")
    summary = {"command": "fit", "method": args.method}

    if args.method == "gbm":
        cfg = gbm.GbmConfig(
            num_rounds=args.rounds, max_depth=args.max_depth,
            learning_rate=args.learning_rate,
            l2_leaf_regularization=args.l2_lambda,
            min_split_gain=args.min_split_gain,
            min_child_weight=args.min_child_weight,
            rng_seed=args.seed,
        )
        if args.features:
            names, X, y = features.read_feature_csv(args.features)
            if args.split != "all":
                raise CompatibilityError(
                    "--split needs query ids; fit gbm from --records to use splits")
        else:
            records = load_records(args.records, k=args.k)
            records = select_split(records, args.split, args.split_seed, args.val_fraction)
            config = _feature_config(args)
            vecs = [features.build_features(r, config) for r in records]
            names = list(vecs[0].names)
            X = np.vstack([v.values for v in vecs])
            rank = _parse_target(args.target, len(records[0].candidates))
            if rank is None:
                y = np.array([r.label for r in records], dtype=float)
            else:
                _, y = _scores_and_targets(records, args.target)
        model = gbm.fit_gbm(X, y.astype(int), cfg, feature_names=names)
        pred = gbm.predict_gbm_matrix(model, X)
        summary.update({
            "n_fit": int(X.shape[0]), "rounds": len(model.trees),
            "nll_before": metrics.nll(np.full(len(y), y.mean()), y.astype(int)),
            "nll_after": metrics.nll(pred, y.astype(int)),
        })
    else:
        if args.features:
            names, X, y_f = features.read_feature_csv(args.features)
            if args.target != "label":
                raise CompatibilityError("feature CSVs only carry the record label target")
            if "top1_softmax" not in names:
                raise CompatibilityError("feature CSV lacks a top1_softmax column")
            scores = X[:, names.index("top1_softmax")]
            y = y_f.astype(int)
            records = None
        else:
            records = load_records(args.records, k=args.k)
            records = select_split(records, args.split, args.split_seed, args.val_fraction)
            scores, y = _scores_and_targets(records, args.target)
        if args.method == "platt":
            model = calibrators.fit_platt(calibrators.prob_to_logit(scores), y)
            cal = calibrators.apply_platt(model, calibrators.prob_to_logit(scores))
            summary.update({"a": model.a, "b": model.b})
        elif args.method == "isotonic":
            model = calibrators.fit_isotonic(scores, y)
            cal = calibrators.apply_isotonic(model, scores)
            summary.update({"n_bins": len(model.values)})
        else:  # temperature
            if records is None:
                raise CompatibilityError("temperature fitting needs --records")
            pseudo = topk_pseudo_logits(records)
            classes = correct_class_indices(records)
            model = calibrators.fit_temperature(pseudo, classes)
            cal = model_confidences(model, records, args.target)
            summary.update({"t": model.t})
        summary.update({
            "n_fit": int(len(y)),
            "nll_before": metrics.nll(scores, y),
            "nll_after": metrics.nll(cal, y),
        })

    _atomic(args.out, lambda p: model_io.save_model(model, p))
    summary["out"] = args.out
    _print_json(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = (model_io.IdentityModel() if args.model == "identity"
             else model_io.load_model(args.model))
    records = load_records(args.records, k=args.k)
    records = select_split(records, args.split, args.split_seed, args.val_fraction)
    head_mode = args.head_mode if args.head_mode == "mean" else int(args.head_mode)
    conf = model_confidences(model, records, args.target, head_mode)
    _, y = _scores_and_targets(records, args.target)
    report = metrics.evaluate(conf, y, M=args.bins)
    _atomic(args.out_prefix + ".report.json", lambda p: metrics.write_summary_json(report, p))
    _atomic(args.out_prefix + ".reliability.csv",
            lambda p: metrics.write_reliability_csv(report.reliability, p))
    _atomic(args.out_prefix + ".roc.csv", lambda p: metrics.write_roc_csv(report.roc, p))
    _print_json(report.summary())
    return EXIT_OK


def cmd_importance(args) -> int:
    model = model_io.load_model(args.model)
    if not isinstance(model, gbm.GbmEnsemble):
        raise CompatibilityError("feature importance needs a gbm model file")
    ranking = gbm.feature_importance(model)

    def write(path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("feature,score\n")
            for name, count in ranking:
                fh.write(f"{name},{count}\n")

    _atomic(args.out, write)
    _print_json({"command": "importance", "features": len(ranking), "out": args.out})
    return EXIT_OK


def _add_split_flags(p):
    p.add_argument("--split", choices=["train", "val", "all"], default=None)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)


def _add_feature_flags(p):
    p.add_argument("--head-mode", default="mean",
                   help="'mean' or a head index (default: mean)")
    p.add_argument("--no-flow-entropy", action="store_true")
    p.add_argument("--no-flow-deltas", action="store_true")
    p.add_argument("--no-flowmean", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="calibkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic record files")
    p.add_argument("--mode", choices=["miscalibrated", "flow-signal"], default="miscalibrated")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--t0", type=float, default=2.67, help="sharpening factor (miscalibrated)")
    p.add_argument("--signal-strength", type=float, default=0.7)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("extract", help="records -> feature CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--k", type=int, default=3)
    _add_feature_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("fit", help="fit a calibrator on the training split")
    p.add_argument("--method", choices=["platt", "temperature", "isotonic", "gbm"],
                   required=True)
    p.add_argument("--records")
    p.add_argument("--features", help="feature CSV (gbm, platt, isotonic)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--target", default="label",
                   help="'label' (any correct in top-k) or 'rankN' (candidate N correct)")
    _add_split_flags(p)
    _add_feature_flags(p)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2-lambda", type=float, default=1.0)
    p.add_argument("--min-split-gain", type=float, default=0.0)
    p.add_argument("--min-child-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a model on the validation split")
    p.add_argument("--model", required=True, help="model JSON path, or 'identity'")
    p.add_argument("--records", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--target", default="label")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--head-mode", default="mean")
    _add_split_flags(p)
    p.add_argument("--out-prefix", required=True,
                   help="writes PREFIX.report.json, PREFIX.reliability.csv, PREFIX.roc.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("importance", help="gbm split-count importances -> CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_importance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "split", None) is None and hasattr(args, "split"):
        args.split = "train" if args.fn is cmd_fit else "val"
    if getattr(args, "layers", None) is None and hasattr(args, "layers"):
        args.layers = 4 if args.mode == "miscalibrated" else 12
    if getattr(args, "heads", None) is None and hasattr(args, "heads"):
        args.heads = 2 if args.mode == "miscalibrated" else 4
    if hasattr(args, "records") and hasattr(args, "features"):
        if not args.records and not args.features:
            parser.error("one of --records or --features is required")
    try:
        return args.fn(args)
    except RecordError as e:
        print(f"calibkit: {e}", file=sys.stderr)
        return EXIT_PARSE
    except DegenerateDataError as e:
        print(f"calibkit: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except CompatibilityError as e:
        print(f"calibkit: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except OSError as e:
        print(f"calibkit: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
