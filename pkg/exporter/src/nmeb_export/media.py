"""Media file loading and normalization.

Arrays saved with numpy (.npy) load with no extra backends and are the
format the test fixtures use: images as (H, W, 3) uint8, videos as
(T, H, W, 3) uint8, audio as a 1-D float waveform already at 16 kHz.
Regular image files decode through Pillow, WAV audio through the standard
library, and other video containers through imageio when it is installed.
Anything undecodable raises MediaError so the caller can skip the post.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from PIL import Image

from nmeb_export.errors import MediaError

AUDIO_RATE = 16000


def _load_npy(path: Path) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise MediaError(f"cannot read array file {path.name!r}: {exc}") from None


def _check_pixels(arr: np.ndarray, path: Path, ndim: int, kind: str) -> np.ndarray:
    if arr.ndim != ndim or arr.shape[-1] != 3:
        raise MediaError(f"{kind} array {path.name!r} has shape {arr.shape}, expected {'(T, H, W, 3)' if ndim == 4 else '(H, W, 3)'}")
    if arr.dtype != np.uint8:
        raise MediaError(f"{kind} array {path.name!r} has dtype {arr.dtype}, expected uint8")
    return arr


def resize_pixels(arr: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) uint8 image to (size, size, 3)."""
    if arr.shape[0] == size and arr.shape[1] == size:
        return arr
    img = Image.fromarray(arr, mode="RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def load_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MediaError(f"text file {path.name!r} is not valid UTF-8: {exc.reason}") from None


def load_image(path: Path) -> np.ndarray:
    """Decode an image file to (H, W, 3) uint8."""
    if path.suffix == ".npy":
        return _check_pixels(_load_npy(path), path, 3, "image")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise MediaError(f"cannot decode image {path.name!r}: {exc}") from None


def count_frames(path: Path) -> int:
    """Number of frames in a video file without loading them all."""
    if path.suffix == ".npy":
        try:
            arr = np.load(path, mmap_mode="r", allow_pickle=False)
        except (ValueError, OSError) as exc:
            raise MediaError(f"cannot read array file {path.name!r}: {exc}") from None
        if arr.ndim != 4:
            raise MediaError(f"video array {path.name!r} has shape {arr.shape}, expected (T, H, W, 3)")
        return int(arr.shape[0])
    total = 0
    for _ in _iter_video(path):
        total += 1
    return total


def load_frames(path: Path, indices) -> np.ndarray:
    """Load the given frame indices of a video as (len(indices), H, W, 3) uint8."""
    wanted = np.asarray(indices, dtype=np.int64)
    if path.suffix == ".npy":
        arr = _check_pixels(_load_npy(path), path, 4, "video")
        if wanted.size and wanted.max() >= arr.shape[0]:
            raise MediaError(f"frame index {int(wanted.max())} out of range for {path.name!r}")
        return arr[wanted].copy()
    want = {int(i) for i in wanted.tolist()}
    got: dict[int, np.ndarray] = {}
    for pos, frame in enumerate(_iter_video(path)):
        if pos in want:
            got[pos] = _frame_to_rgb(frame, path)
            if len(got) == len(want):
                break
    missing = want - set(got)
    if missing:
        raise MediaError(f"frame index {min(missing)} out of range for {path.name!r}")
    return np.stack([got[int(i)] for i in wanted])


def _video_backend(path: Path):
    try:
        import imageio.v3 as iio
    except ImportError:
        raise MediaError(
            f"cannot decode video {path.name!r}: imageio is not installed (pip install nmeb-export[media])"
        ) from None
    return iio


def _iter_video(path: Path):
    iio = _video_backend(path)
    try:
        yield from iio.imiter(path)
    except (OSError, ValueError) as exc:
        raise MediaError(f"cannot decode video {path.name!r}: {exc}") from None


def _frame_to_rgb(frame, path: Path) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] < 3:
        raise MediaError(f"video {path.name!r} yields frames of shape {arr.shape}")
    return arr[..., :3].astype(np.uint8)


def load_audio(path: Path) -> np.ndarray:
    """Decode audio to a mono float32 waveform at 16 kHz.

    WAV files are read with the standard library and resampled linearly if
    their rate differs; .npy files are taken as waveforms already at the
    target rate.
    """
    if path.suffix == ".npy":
        arr = _load_npy(path)
        if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.floating):
            raise MediaError(f"audio array {path.name!r} must be a 1-D float waveform")
        if arr.size == 0:
            raise MediaError(f"audio {path.name!r} is empty")
        return arr.astype(np.float32)
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise MediaError(f"cannot decode audio {path.name!r}: {exc}") from None
    if width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    elif width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float32) / 2147483648.0
    else:
        raise MediaError(f"audio {path.name!r} has unsupported sample width {width}")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if samples.size == 0:
        raise MediaError(f"audio {path.name!r} is empty")
    if rate != AUDIO_RATE and samples.size:
        duration = samples.size / rate
        target = np.arange(int(round(duration * AUDIO_RATE))) / AUDIO_RATE
        samples = np.interp(target, np.arange(samples.size) / rate, samples).astype(np.float32)
    return samples.astype(np.float32)
