"""Command-line front end: export.

Reads a JSONL post manifest, encodes the requested modalities, writes an
NMEB bundle to --out, and drops a run manifest (resolved config, input and
output hashes, skip reasons, wall time) alongside at <out>.manifest.json.
Exit codes: 0 ok, 1 usage, 2 data error. Skipped posts are warnings on
stderr, not failures; a run that skips everything is a data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import nmeb_export
from nmeb_export.errors import ExportError
from nmeb_export.export import MODALITY_NAMES, POOLING, ExportConfig, export
from nmeb_export.manifest import load_manifest


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_modalities(text: str) -> tuple[str, ...]:
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    if not names:
        raise UsageError("--modalities must name at least one modality")
    return names


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def build_parser() -> CliParser:
    parser = CliParser(prog="nmeb-export", description="export media posts to an NMEB embedding bundle")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="encode manifest posts and write one NMEB bundle")
    p.add_argument("--manifest", required=True, help="JSONL post manifest; paths resolve against its directory")
    p.add_argument(
        "--modalities",
        default="text,image,video",
        help=f"comma-separated subset of {','.join(MODALITY_NAMES)}, in output order (default text,image,video)",
    )
    p.add_argument("--out", required=True, help="output bundle; a .manifest.json lands alongside")
    p.add_argument(
        "--encoder",
        choices=("hashed", "pretrained"),
        default="hashed",
        help="hashed: offline, content-addressed, exactly repeatable (default); pretrained: published transformer checkpoints",
    )
    p.add_argument("--image-size", type=int, default=224, help="square pixel size images and frames are resized to (default 224)")
    p.add_argument("--workers", type=int, default=None, help="encoding threads (default: up to 8)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = ExportConfig(
            modalities=_parse_modalities(args.modalities),
            encoder=args.encoder,
            image_size=args.image_size,
            workers=args.workers,
        )
        config.check()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    started = time.perf_counter()
    try:
        posts = load_manifest(args.manifest)
        report = export(posts, config, args.out)
    except ExportError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - started

    for skip in report.skipped:
        _warn(f"skipping post {skip.post_id}: {skip.reason}")
    manifest = {
        "command": "export",
        "config": {
            "modalities": list(config.modalities),
            "encoder": config.encoder,
            "image_size": config.image_size,
            "frame_count": config.frame_count,
            "min_words": config.min_words,
            "min_frames": config.min_frames,
            "pooling": {m: POOLING[m] for m in config.modalities},
        },
        "inputs": {args.manifest: _sha256(args.manifest)},
        "outputs": {args.out: _sha256(args.out)},
        "written": report.written,
        "skipped": [{"post_id": s.post_id, "reason": s.reason} for s in report.skipped],
        "wall_seconds": wall,
        "version": nmeb_export.__version__,
    }
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(
        f"wrote {len(report.written)} posts x {len(config.modalities)} modalities to {args.out}"
        + (f" (skipped {len(report.skipped)})" if report.skipped else "")
    )
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
