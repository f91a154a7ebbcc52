"""The export pipeline: manifest rows in, one NMEB bundle out.

Per post, each requested modality is loaded, normalized, and encoded to a
768-d vector. Posts that fall below the corpus thresholds (too few words of
text, too few video frames) or whose media cannot be read are skipped and
reported, never fatal. Encoding runs on a thread pool over posts; the
bundle is written single-threaded at the end, in manifest order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from nmeb_export.encoders import EMBED_DIM, HashedEncoder, PretrainedEncoder
from nmeb_export.errors import ExportError, MediaError
from nmeb_export.frames import FRAME_COUNT, residual_frame_index, sample_frame_indices
from nmeb_export.manifest import PostManifest
from nmeb_export.media import count_frames, load_audio, load_frames, load_image, load_text, resize_pixels
from nmeb_export.nmeb import write_nmeb

MODALITY_NAMES = ("text", "image", "video", "audio")

MIN_WORDS = 5
MIN_FRAMES = 64

POOLING = {"text": "mean", "image": "leading-token", "video": "mean", "audio": "mean"}


@dataclass(frozen=True)
class ExportConfig:
    modalities: tuple[str, ...] = ("text", "image", "video")
    encoder: str = "hashed"
    image_size: int = 224
    frame_count: int = FRAME_COUNT
    min_words: int = MIN_WORDS
    min_frames: int = MIN_FRAMES
    workers: int | None = None

    def check(self) -> None:
        if not self.modalities:
            raise ValueError("at least one modality is required")
        if len(set(self.modalities)) != len(self.modalities):
            raise ValueError(f"duplicate modalities in {self.modalities}")
        unknown = [m for m in self.modalities if m not in MODALITY_NAMES]
        if unknown:
            raise ValueError(f"unknown modalities {unknown}; choose from {', '.join(MODALITY_NAMES)}")
        if self.encoder not in ("hashed", "pretrained"):
            raise ValueError(f"encoder must be 'hashed' or 'pretrained', got {self.encoder!r}")
        if self.image_size < 1:
            raise ValueError("image_size must be >= 1")
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        if self.min_words < 1 or self.min_frames < self.frame_count:
            raise ValueError("thresholds must keep posts encodable")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class SkippedPost:
    post_id: str
    reason: str


@dataclass
class ExportReport:
    written: list[str] = field(default_factory=list)
    skipped: list[SkippedPost] = field(default_factory=list)


def make_encoder(config: ExportConfig):
    if config.encoder == "hashed":
        return HashedEncoder(EMBED_DIM)
    return PretrainedEncoder(image_size=config.image_size, frame_count=config.frame_count)


def _encode_post(post: PostManifest, config: ExportConfig, encoder) -> list[np.ndarray] | SkippedPost:
    need = set(config.modalities)
    try:
        text = None
        if "text" in need:
            text = load_text(post.text_path)
            words = len(text.split())
            if words < config.min_words:
                return SkippedPost(post.post_id, f"text has {words} words, need {config.min_words}")

        image_from_frame = "image" in need and post.image_path is None
        sampled = None
        residual = None
        if "video" in need or image_from_frame:
            if post.video_path is None:
                reason = "no video file" if "video" in need else "no image or video file"
                return SkippedPost(post.post_id, reason)
            total = count_frames(post.video_path)
            if total < config.min_frames:
                return SkippedPost(post.post_id, f"video has {total} frames, need {config.min_frames}")
            indices = sample_frame_indices(total, config.frame_count)
            wanted = list(indices)
            if image_from_frame:
                wanted.append(residual_frame_index(indices))
            loaded = load_frames(post.video_path, wanted)
            sampled = loaded[: config.frame_count]
            if image_from_frame:
                residual = loaded[-1]

        if "audio" in need and post.audio_path is None:
            return SkippedPost(post.post_id, "no audio track")

        vectors = []
        for modality in config.modalities:
            if modality == "text":
                vectors.append(encoder.encode_text(text))
            elif modality == "image":
                pixels = load_image(post.image_path) if post.image_path is not None else residual
                vectors.append(encoder.encode_image(resize_pixels(pixels, config.image_size)))
            elif modality == "video":
                frames = np.stack([resize_pixels(f, config.image_size) for f in sampled])
                vectors.append(encoder.encode_video(frames))
            else:
                vectors.append(encoder.encode_audio(load_audio(post.audio_path)))
        return vectors
    except MediaError as exc:
        return SkippedPost(post.post_id, str(exc))


def export(posts: list[PostManifest], config: ExportConfig, out_path) -> ExportReport:
    """Encode every exportable post and write the bundle to out_path.

    Returns the ids written and the posts skipped with reasons. Raises
    ExportError if nothing survives the thresholds, in which case no file
    is written.
    """
    config.check()
    encoder = make_encoder(config)
    workers = config.workers if config.workers is not None else min(8, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda p: _encode_post(p, config, encoder), posts))

    report = ExportReport()
    rows = []
    for post, result in zip(posts, results):
        if isinstance(result, SkippedPost):
            report.skipped.append(result)
        else:
            rows.append((post.post_id, post.account, post.stance, result))
            report.written.append(post.post_id)
    if not rows:
        raise ExportError(f"all {len(posts)} posts were skipped; nothing to write")
    write_nmeb(out_path, [(m, encoder.dim) for m in config.modalities], rows)
    return report
