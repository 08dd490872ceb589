"""Command-line entry point: qacal-embed."""

import argparse
import sys

from . import __version__
from .exporter import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_MODEL,
    TextPairError,
    export_embeddings,
    manifest_path,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit code 1 for usage problems instead of argparse's SystemExit(2)
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(
        prog="qacal-embed",
        description="Embed question-answer text pairs into calibration dataset records.",
    )
    p.add_argument("--version", action="version", version=f"qacal-embed {__version__}")
    p.add_argument("--in", dest="in_path", required=True, help="TextPair JSONL input")
    p.add_argument("--out", dest="out_path", required=True, help="dataset JSONL output")
    p.add_argument("--model", default=DEFAULT_MODEL, help="model name or local path")
    p.add_argument("--revision", default=None, help="pinned model revision")
    p.add_argument("--batch", type=int, default=DEFAULT_BATCH_SIZE)
    p.add_argument("--device", default="cpu")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        count = export_embeddings(
            args.in_path,
            args.out_path,
            model_name=args.model,
            batch_size=args.batch,
            revision=args.revision,
            device=args.device,
        )
    except (TextPairError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {count} records -> {args.out_path} (manifest: {manifest_path(args.out_path)})")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
