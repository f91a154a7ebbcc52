"""Post manifest parsing.

The manifest is JSONL: one post per line with a post id, an account label,
paths to the media files, and an optional stance label. Paths may be
relative, in which case they resolve against the manifest's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from nmeb_export.errors import ManifestError

STANCE_UNKNOWN = -1

_PATH_KEYS = ("text_path", "image_path", "video_path", "audio_path")
_KNOWN_KEYS = {"post_id", "account", "stance"} | set(_PATH_KEYS)


@dataclass(frozen=True)
class PostManifest:
    """One post's worth of media references.

    text_path is mandatory; a post is a caption plus whatever media it
    carries. image_path is optional because the image modality can be
    served by a spare video frame instead.
    """

    post_id: str
    account: str
    text_path: Path
    image_path: Path | None = None
    video_path: Path | None = None
    audio_path: Path | None = None
    stance: int = STANCE_UNKNOWN


def _require_str(row: dict, key: str, where: str) -> str:
    value = row.get(key)
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{where}: {key!r} must be a non-empty string")
    return value


def _optional_path(row: dict, key: str, base: Path, where: str) -> Path | None:
    value = row.get(key)
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{where}: {key!r} must be a non-empty string when present")
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ManifestError(f"{where}: {key} {str(path)!r} does not exist")
    return path


def _parse_stance(row: dict, where: str) -> int:
    value = row.get("stance")
    if value is None:
        return STANCE_UNKNOWN
    if not isinstance(value, int) or isinstance(value, bool) or value not in (0, 1):
        raise ManifestError(f"{where}: stance must be 0, 1, or omitted, got {value!r}")
    return value


def parse_row(row: dict, base: Path, where: str) -> PostManifest:
    if not isinstance(row, dict):
        raise ManifestError(f"{where}: expected a JSON object")
    unknown = set(row) - _KNOWN_KEYS
    if unknown:
        raise ManifestError(f"{where}: unknown keys {sorted(unknown)}")
    post_id = _require_str(row, "post_id", where)
    account = _require_str(row, "account", where)
    text_path = _optional_path(row, "text_path", base, where)
    if text_path is None:
        raise ManifestError(f"{where}: 'text_path' is required")
    if text_path.stat().st_size == 0:
        raise ManifestError(f"{where}: text file {str(text_path)!r} is empty")
    return PostManifest(
        post_id=post_id,
        account=account,
        text_path=text_path,
        image_path=_optional_path(row, "image_path", base, where),
        video_path=_optional_path(row, "video_path", base, where),
        audio_path=_optional_path(row, "audio_path", base, where),
        stance=_parse_stance(row, where),
    )


def load_manifest(path) -> list[PostManifest]:
    """Parse a JSONL manifest file into validated PostManifest rows.

    Raises ManifestError on malformed rows, missing files, empty text
    files, or duplicate post ids; the message names the offending line.
    """
    path = Path(path)
    base = path.parent
    posts: list[PostManifest] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{where}: invalid JSON ({exc.msg})") from None
            post = parse_row(row, base, where)
            if post.post_id in seen:
                raise ManifestError(f"{where}: duplicate post id {post.post_id!r}")
            seen.add(post.post_id)
            posts.append(post)
    if not posts:
        raise ManifestError(f"{path.name}: manifest contains no posts")
    return posts
