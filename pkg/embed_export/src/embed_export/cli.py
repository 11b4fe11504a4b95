"""CLI: embed-export export --dataset PATH --model NAME --pooling {cls,mean} --out PATH"""

import argparse
import sys

from .exporter import ExportError, export


def build_parser():
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Write pretrained language-model sentence embeddings in the "
        "pipeline's embedding CSV format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="encode one dataset and write the CSV")
    exp.add_argument("--dataset", required=True, help="dataset JSONL file")
    exp.add_argument("--model", required=True, help="model name or local path")
    exp.add_argument("--pooling", choices=("cls", "mean"), default="mean")
    exp.add_argument("--out", required=True, help="output CSV path")
    exp.add_argument("--expect-dim", type=int, default=None,
                     help="fail unless the model hidden size matches")
    exp.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        count = export(args.dataset, args.model, args.pooling, args.out,
                       expect_dim=args.expect_dim, batch_size=args.batch_size)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
