"""Embedding containers, the NMEB binary format, and synthetic data.

An :class:`EmbeddingBundle` is the unit of storage: a set of posts, each with
exactly one raw embedding vector per declared modality plus optional stance
and account labels.  Bundles serialize to the single-file NMEB format (f32 at
rest, widened to f64 on load) and to a JSONL debug form for eyeballing.

``generate_synthetic`` fabricates a multimodal corpus from a latent-factor
model: every post owns a latent vector that all of its modalities express
through fixed random linear maps, so the ground-truth tuple structure a real
corpus would provide is present by construction and its difficulty can be
dialed with the noise level.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from nmodal.errors import DimMismatchError, MagicError, SchemaError, TruncationError, VersionError
from nmodal.seeding import rng_for

STANCE_UNKNOWN = -1
STANCE_CLASS0 = 0
STANCE_CLASS1 = 1

NMEB_MAGIC = b"NMEB"
NMEB_VERSION = 1

# Scale of the per-(account, modality) offset relative to the unit-variance
# latent signal; large enough that accounts form recoverable clusters, small
# enough that post identity still dominates cross-modal similarity.
ACCOUNT_OFFSET_STD = 0.5


@dataclass
class Post:
    """One social-media post: an id, optional labels, one vector per modality."""

    post_id: str
    account_label: str = ""
    stance_label: int = STANCE_UNKNOWN
    vectors: list[np.ndarray] = field(default_factory=list)


@dataclass
class EmbeddingBundle:
    """Posts with aligned per-modality raw embeddings."""

    modalities: list[tuple[str, int]]
    posts: list[Post]

    def check(self) -> None:
        if len(self.modalities) == 0:
            raise SchemaError("bundle declares no modalities")
        names = [n for n, _ in self.modalities]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate modality names")
        seen: set[str] = set()
        for idx, post in enumerate(self.posts):
            if post.post_id in seen:
                raise SchemaError(f"duplicate post id {post.post_id!r}")
            seen.add(post.post_id)
            if len(post.vectors) != len(self.modalities):
                raise DimMismatchError(
                    f"post {idx} ({post.post_id!r}) has {len(post.vectors)} vectors, "
                    f"expected {len(self.modalities)}"
                )
            for (name, dim), vec in zip(self.modalities, post.vectors):
                if vec.shape != (dim,):
                    raise DimMismatchError(
                        f"post {idx} ({post.post_id!r}) modality {name!r}: got shape {vec.shape}, expected ({dim},)"
                    )
                if not np.all(np.isfinite(vec)):
                    raise SchemaError(f"post {idx} ({post.post_id!r}) modality {name!r} has non-finite values")

    @property
    def modality_names(self) -> list[str]:
        return [n for n, _ in self.modalities]

    @property
    def post_count(self) -> int:
        return len(self.posts)

    def post_ids(self) -> list[str]:
        return [p.post_id for p in self.posts]

    def matrix(self, modality: str) -> np.ndarray:
        """All posts' raw vectors for one modality, stacked (P, dim)."""
        try:
            m = self.modality_names.index(modality)
        except ValueError:
            raise KeyError(f"unknown modality {modality!r}") from None
        return np.stack([p.vectors[m] for p in self.posts], axis=0)

    def subset(self, indices) -> "EmbeddingBundle":
        return EmbeddingBundle(modalities=list(self.modalities), posts=[self.posts[i] for i in indices])


@dataclass
class SynthConfig:
    """Knobs for the latent-post synthetic corpus."""

    post_count: int = 1000
    modalities: list[tuple[str, int]] = field(
        default_factory=lambda: [("text", 768), ("image", 768), ("video", 768)]
    )
    latent_dim: int = 32
    noise_sigma: float = 0.1
    account_count: int = 33
    stance_mix: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.post_count < 1:
            raise ValueError("post_count must be >= 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.account_count < 1:
            raise ValueError("account_count must be >= 1")
        if not 0.0 < self.stance_mix < 1.0:
            raise ValueError("stance_mix must lie strictly between 0 and 1")
        if len(self.modalities) == 0:
            raise ValueError("at least one modality required")


def generate_synthetic(cfg: SynthConfig) -> EmbeddingBundle:
    """Draw a deterministic multimodal corpus from the latent-post model.

    Per post p: latent u_p ~ N(0, I_L); per modality m a fixed map A_m
    (entries N(0, 1/L)) expresses the latent, an account-and-modality offset
    shifts it, and isotropic noise of scale ``noise_sigma`` is added:

        vector[p, m] = A_m @ u_p + offset[account(p), m] + sigma * n

    Accounts are assigned round-robin (exactly balanced).  The stance label
    is the sign of a fixed random linear functional of u_p, thresholded so
    class 1 has expected fraction ``stance_mix``.
    """
    mods = cfg.modalities
    lat = cfg.latent_dim

    rng_maps = rng_for(cfg.seed, "synth:maps")
    maps = [rng_maps.standard_normal((dim, lat)) / math.sqrt(lat) for _, dim in mods]

    rng_acct = rng_for(cfg.seed, "synth:accounts")
    offsets = [
        [rng_acct.standard_normal(dim) * ACCOUNT_OFFSET_STD for _, dim in mods]
        for _ in range(cfg.account_count)
    ]

    rng_stance = rng_for(cfg.seed, "synth:stance")
    w = rng_stance.standard_normal(lat)
    w /= np.linalg.norm(w)
    threshold = float(ndtri(1.0 - cfg.stance_mix))

    rng_posts = rng_for(cfg.seed, "synth:posts")
    posts: list[Post] = []
    for p in range(cfg.post_count):
        u = rng_posts.standard_normal(lat)
        acct = p % cfg.account_count
        vectors = []
        for m, (_, dim) in enumerate(mods):
            noise = rng_posts.standard_normal(dim)
            vectors.append(maps[m] @ u + offsets[acct][m] + cfg.noise_sigma * noise)
        stance = STANCE_CLASS1 if float(w @ u) > threshold else STANCE_CLASS0
        posts.append(
            Post(
                post_id=f"post-{p:06d}",
                account_label=f"acct-{acct:03d}",
                stance_label=stance,
                vectors=vectors,
            )
        )
    bundle = EmbeddingBundle(modalities=list(mods), posts=posts)
    bundle.check()
    return bundle


def split_bundle(bundle: EmbeddingBundle) -> tuple[EmbeddingBundle, EmbeddingBundle]:
    """Deterministic train/held-out split by generation order.

    The last max(ceil(P/10), 100) posts are reserved for evaluation, capped
    at P-1 so at least one training post always remains.
    """
    p = bundle.post_count
    eval_count = min(max(math.ceil(p / 10), 100), max(p - 1, 0))
    cut = p - eval_count
    train = bundle.subset(range(cut))
    heldout = bundle.subset(range(cut, p))
    return train, heldout


def sample_batches(bundle: EmbeddingBundle, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Disjoint shuffled index batches for one epoch; the remainder is dropped.

    The shuffle is keyed by (seed, epoch), so re-running an epoch reproduces
    its batches exactly.
    """
    p = bundle.post_count
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > p:
        raise ValueError(f"batch_size {batch_size} exceeds post count {p}")
    perm = rng_for(seed, f"shuffle:{epoch}").permutation(p)
    return [perm[k * batch_size : (k + 1) * batch_size] for k in range(p // batch_size)]


# --- NMEB serialization ---------------------------------------------------


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(f"file ended while reading {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def write_bundle(bundle: EmbeddingBundle, sink) -> None:
    """Serialize to NMEB: little-endian, f32 vectors, stream-parseable."""
    bundle.check()
    if len(bundle.modalities) > 0xFFFF:
        raise SchemaError("too many modalities for the format")
    own = isinstance(sink, (str, Path))
    fh = open(sink, "wb") if own else sink
    try:
        fh.write(NMEB_MAGIC)
        fh.write(struct.pack("<HH", NMEB_VERSION, len(bundle.modalities)))
        for name, dim in bundle.modalities:
            raw = name.encode("utf-8")
            if len(raw) > 0xFF:
                raise SchemaError(f"modality name too long: {name!r}")
            fh.write(struct.pack("<B", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(bundle.posts)))
        for post in bundle.posts:
            pid = post.post_id.encode("utf-8")
            acct = post.account_label.encode("utf-8")
            if len(pid) > 0xFFFF or len(acct) > 0xFFFF:
                raise SchemaError(f"id or account label too long on post {post.post_id!r}")
            fh.write(struct.pack("<H", len(pid)))
            fh.write(pid)
            fh.write(struct.pack("<H", len(acct)))
            fh.write(acct)
            fh.write(struct.pack("<b", post.stance_label))
            for vec in post.vectors:
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
    finally:
        if own:
            fh.close()


def read_bundle(source) -> EmbeddingBundle:
    """Parse an NMEB file; vectors are widened to f64."""
    own = isinstance(source, (str, Path))
    fh = open(source, "rb") if own else source
    try:
        magic = _read_exact(fh, 4, "magic")
        if magic != NMEB_MAGIC:
            raise MagicError(f"bad magic {magic!r}, expected {NMEB_MAGIC!r}")
        version, mod_count = struct.unpack("<HH", _read_exact(fh, 4, "header"))
        if version != NMEB_VERSION:
            raise VersionError(f"unsupported version {version}, expected {NMEB_VERSION}")
        if mod_count == 0:
            raise SchemaError("bundle declares no modalities")
        modalities: list[tuple[str, int]] = []
        for m in range(mod_count):
            (name_len,) = struct.unpack("<B", _read_exact(fh, 1, f"modality {m} name length"))
            try:
                name = _read_exact(fh, name_len, f"modality {m} name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise SchemaError(f"modality {m} name is not valid UTF-8") from exc
            (dim,) = struct.unpack("<I", _read_exact(fh, 4, f"modality {m} dim"))
            if dim == 0:
                raise DimMismatchError(f"modality {name!r} declares dimension 0")
            modalities.append((name, dim))
        (post_count,) = struct.unpack("<Q", _read_exact(fh, 8, "post count"))
        posts: list[Post] = []
        for p in range(post_count):
            where = f"post {p}"
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"{where} id length"))
            try:
                pid = _read_exact(fh, id_len, f"{where} id").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise SchemaError(f"{where} id is not valid UTF-8") from exc
            (acct_len,) = struct.unpack("<H", _read_exact(fh, 2, f"{where} account length"))
            acct = _read_exact(fh, acct_len, f"{where} account").decode("utf-8", errors="strict")
            (stance,) = struct.unpack("<b", _read_exact(fh, 1, f"{where} stance"))
            if stance not in (STANCE_UNKNOWN, STANCE_CLASS0, STANCE_CLASS1):
                raise SchemaError(f"{where} has invalid stance byte {stance}")
            vectors = []
            for name, dim in modalities:
                raw = _read_exact(fh, 4 * dim, f"{where} modality {name!r} vector")
                vectors.append(np.frombuffer(raw, dtype="<f4").astype(np.float64))
            posts.append(Post(post_id=pid, account_label=acct, stance_label=stance, vectors=vectors))
        trailing = fh.read(1)
        if trailing:
            raise SchemaError("trailing bytes after the last declared post")
        bundle = EmbeddingBundle(modalities=modalities, posts=posts)
        bundle.check()
        return bundle
    finally:
        if own:
            fh.close()


def bundle_to_bytes(bundle: EmbeddingBundle) -> bytes:
    buf = io.BytesIO()
    write_bundle(bundle, buf)
    return buf.getvalue()


def write_jsonl(bundle: EmbeddingBundle, sink) -> None:
    """Debug exporter: one post per line, vectors as plain arrays."""
    own = isinstance(sink, (str, Path))
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        header = {"modalities": [[n, d] for n, d in bundle.modalities]}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for post in bundle.posts:
            row = {
                "post_id": post.post_id,
                "account": post.account_label,
                "stance": post.stance_label,
                "vectors": {name: post.vectors[i].tolist() for i, (name, _) in enumerate(bundle.modalities)},
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    finally:
        if own:
            fh.close()
