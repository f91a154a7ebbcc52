"""Writer for the NMEB embedding interchange format, version 1.

Byte layout, all little-endian:

    magic b"NMEB"
    u16 version (1), u16 modality count
    per modality: u8 name length, UTF-8 name, u32 dimension
    u64 post count
    per post: u16 id length, UTF-8 id,
              u16 account length, UTF-8 account,
              i8 stance (-1 unknown, 0, or 1),
              one f32 vector of the declared dimension per modality,
              in header order

No padding, no trailing bytes. Vectors are stored as f32; consumers widen
as they see fit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from nmeb_export.errors import ExportError

NMEB_MAGIC = b"NMEB"
NMEB_VERSION = 1


def write_nmeb(sink, modalities, posts) -> None:
    """Write a bundle; modalities is [(name, dim)], posts is
    [(post_id, account, stance, [vector per modality])]."""
    names = [n for n, _ in modalities]
    if not modalities:
        raise ExportError("cannot write a bundle with no modalities")
    if len(set(names)) != len(names):
        raise ExportError(f"duplicate modality names {names}")
    own = isinstance(sink, (str, Path))
    fh = open(sink, "wb") if own else sink
    try:
        fh.write(NMEB_MAGIC)
        fh.write(struct.pack("<HH", NMEB_VERSION, len(modalities)))
        for name, dim in modalities:
            raw = name.encode("utf-8")
            if not 0 < len(raw) <= 0xFF:
                raise ExportError(f"modality name {name!r} must encode to 1..255 bytes")
            if dim < 1:
                raise ExportError(f"modality {name!r} has dimension {dim}")
            fh.write(struct.pack("<B", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(posts)))
        seen: set[str] = set()
        for post_id, account, stance, vectors in posts:
            if post_id in seen:
                raise ExportError(f"duplicate post id {post_id!r}")
            seen.add(post_id)
            pid = post_id.encode("utf-8")
            acct = account.encode("utf-8")
            if len(pid) > 0xFFFF or len(acct) > 0xFFFF:
                raise ExportError(f"id or account too long on post {post_id!r}")
            if stance not in (-1, 0, 1):
                raise ExportError(f"post {post_id!r} has stance {stance}, expected -1, 0, or 1")
            if len(vectors) != len(modalities):
                raise ExportError(f"post {post_id!r} has {len(vectors)} vectors for {len(modalities)} modalities")
            fh.write(struct.pack("<H", len(pid)))
            fh.write(pid)
            fh.write(struct.pack("<H", len(acct)))
            fh.write(acct)
            fh.write(struct.pack("<b", stance))
            for (name, dim), vec in zip(modalities, vectors):
                out = np.asarray(vec, dtype="<f4")
                if out.shape != (dim,):
                    raise ExportError(f"post {post_id!r} modality {name!r}: shape {out.shape}, expected ({dim},)")
                if not np.all(np.isfinite(out)):
                    raise ExportError(f"post {post_id!r} modality {name!r} has non-finite values")
                fh.write(out.tobytes())
    finally:
        if own:
            fh.close()
