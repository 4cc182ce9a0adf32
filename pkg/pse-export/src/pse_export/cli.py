"""pse-export command line: embed an article corpus for the engine."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .encoders import DEFAULT_MODEL, ModelLoadError
from .export import ExportJob, InputParseError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pse-export",
        description="Run a pretrained sentence encoder over an articles JSONL "
        "corpus and write the engine's embedding file.",
    )
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="sentence-transformers checkpoint or 'hashing:<dim>'")
    parser.add_argument("--in", dest="input_path", required=True, help="articles JSONL")
    parser.add_argument("--out", dest="output_path", required=True, help="output .scem file")
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--device", default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExportJob(
        input_path=Path(args.input_path),
        output_path=Path(args.output_path),
        model=args.model,
        batch_size=args.batch,
        device=args.device,
    )
    try:
        count = export(job)
    except ModelLoadError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except (InputParseError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} articles to {args.output_path}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
