"""Video frame selection.

The video encoder consumes a small fixed number of frames sampled evenly
across the clip. One additional frame, taken from the middle of the widest
gap between sampled positions, stands in for the image modality when a post
has no separate image file: it is related to the video but never seen by
the video encoder.
"""

from __future__ import annotations

import numpy as np

FRAME_COUNT = 16


def sample_frame_indices(total: int, count: int = FRAME_COUNT) -> np.ndarray:
    """Evenly spaced frame indices covering [0, total), endpoints included."""
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if total < count:
        raise ValueError(f"cannot sample {count} frames from a {total}-frame video")
    return np.round(np.linspace(0, total - 1, num=count)).astype(np.int64)


def residual_frame_index(indices: np.ndarray) -> int:
    """Index of the frame at the midpoint of the widest sampling gap.

    Ties go to the earliest gap. With the default sampling on any video of
    at least four times the sample count, the result is never itself one of
    the sampled indices.
    """
    indices = np.asarray(indices)
    if indices.ndim != 1 or indices.size < 2:
        raise ValueError("need at least two sampled indices")
    gaps = np.diff(indices)
    widest = int(np.argmax(gaps))
    return int((indices[widest] + indices[widest + 1]) // 2)


def frame_to_image(frames: np.ndarray, frame_index: int | None = None) -> np.ndarray:
    """Pick one frame of a (T, H, W, 3) clip to serve as an image input.

    By default the frame comes from the middle of the widest gap left by
    sample_frame_indices over the clip's full length.
    """
    if frame_index is None:
        frame_index = residual_frame_index(sample_frame_indices(frames.shape[0]))
    return frames[frame_index]
