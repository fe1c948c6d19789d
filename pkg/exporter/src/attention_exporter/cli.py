"""Command line: encode a pairs CSV into a calibkit record file.

Example:
    attention-exporter --model tiny-2x2 --pairs pairs.csv --out records.ndjson
"""

from __future__ import annotations

import argparse
import json
import sys

from .encoder import encoder_from_model_id
from .export import PairsFileError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attention-exporter", description=__doc__)
    parser.add_argument("--model", required=True,
                        help="encoder id, e.g. tiny-2x2 or tiny-12x12")
    parser.add_argument("--pairs", required=True, help="CSV of query/paragraph pairs")
    parser.add_argument("--out", required=True, help="output record file (ndjson)")
    parser.add_argument("--k", type=int, default=3, help="candidates per query")
    parser.add_argument("--sep-choice", choices=["first", "last"], default="first",
                        help="which [SEP] the flow tracks (default: first, "
                             "the end of the query segment)")
    parser.add_argument("--include-cls-row", action="store_true",
                        help="store the full [CLS] attention row per layer/head")
    parser.add_argument("--max-len", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0, help="encoder weight seed")
    parser.add_argument("--errors-out", default=None,
                        help="sidecar error report path (default: <out>.errors.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    errors_path = args.errors_out or args.out + ".errors.json"
    try:
        encoder = encoder_from_model_id(args.model, seed=args.seed, max_len=args.max_len)
        result = export(encoder, args.pairs, args.out, k=args.k,
                        sep_choice=args.sep_choice,
                        include_cls_row=args.include_cls_row,
                        errors_path=errors_path)
    except (PairsFileError, OSError, ValueError) as e:
        print(f"attention-exporter: {e}", file=sys.stderr)
        return 2
    print(json.dumps({
        "records_written": result.records_written,
        "queries_skipped": result.queries_skipped,
        "errors": len(result.errors),
        "out": args.out,
        "errors_out": errors_path,
    }, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
