"""Per-modality encoders producing fixed-width float vectors.

Two families share one interface (encode_text, encode_image, encode_video,
encode_audio, each returning a float64 vector of length dim):

HashedEncoder derives vectors from content bytes alone. Equal inputs map to
bit-identical vectors, nothing is downloaded, and runs are exactly
repeatable, which makes it the default and the one the tests exercise.

PretrainedEncoder wraps published transformer checkpoints. The heavy
imports happen inside the encode calls, so constructing it, or never
selecting it, costs nothing; the first call per modality fetches the
checkpoint if it is not already cached locally.
"""

from __future__ import annotations

import hashlib

import numpy as np

EMBED_DIM = 768

_AUDIO_CHUNK = 4096


def _tagged_digest(tag: str, *parts: bytes) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(tag.encode("utf-8"))
    for part in parts:
        h.update(len(part).to_bytes(8, "little"))
        h.update(part)
    return int.from_bytes(h.digest(), "little")


def _array_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    head = f"{arr.dtype.str}:{arr.shape}".encode("ascii")
    return head + b"|" + arr.tobytes()


class HashedEncoder:
    """Content-addressed stand-in for the pretrained encoders.

    Every input unit (a word, a frame, an audio chunk, a whole image) seeds
    a PCG64 stream whose first draws form a unit vector; sequences are
    mean-pooled over their units with the unit's position folded into the
    seed, so order matters the way it does for a real sequence encoder.
    """

    kind = "hashed"

    def __init__(self, dim: int = EMBED_DIM):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def _vec(self, tag: str, *parts: bytes) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(_tagged_digest(tag, *parts)))
        v = rng.standard_normal(self.dim)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        return v / norm

    def _pool(self, vecs: list[np.ndarray], fallback_tag: str, fallback: bytes) -> np.ndarray:
        pooled = np.mean(vecs, axis=0)
        if np.linalg.norm(pooled) < 1e-12:
            # vanishingly unlikely cancellation; fall back to one whole-content vector
            return self._vec(fallback_tag, fallback)
        return pooled

    def encode_text(self, text: str) -> np.ndarray:
        words = text.split()
        if not words:
            raise ValueError("cannot encode empty text")
        vecs = [self._vec("text:word", str(i).encode(), w.encode("utf-8")) for i, w in enumerate(words)]
        return self._pool(vecs, "text", text.encode("utf-8"))

    def encode_image(self, pixels: np.ndarray) -> np.ndarray:
        return self._vec("image", _array_bytes(pixels))

    def encode_video(self, frames: np.ndarray) -> np.ndarray:
        if frames.ndim != 4:
            raise ValueError(f"expected (T, H, W, C) frames, got shape {frames.shape}")
        vecs = [self._vec("video:frame", str(i).encode(), _array_bytes(f)) for i, f in enumerate(frames)]
        return self._pool(vecs, "video", _array_bytes(frames))

    def encode_audio(self, waveform: np.ndarray) -> np.ndarray:
        wf = np.asarray(waveform, dtype=np.float32)
        if wf.ndim != 1 or wf.size == 0:
            raise ValueError("expected a non-empty 1-D waveform")
        vecs = [
            self._vec("audio:chunk", str(i).encode(), _array_bytes(wf[s : s + _AUDIO_CHUNK]))
            for i, s in enumerate(range(0, wf.size, _AUDIO_CHUNK))
        ]
        return self._pool(vecs, "audio", _array_bytes(wf))


class PretrainedEncoder:
    """Published transformer checkpoints, one per modality, all 768-d.

    Text and audio mean-pool the final hidden states (text under its
    attention mask); the image model contributes its leading token state
    and the video model, which has no such token, is mean-pooled. Models
    run on CPU in eval mode with gradients off.
    """

    kind = "pretrained"

    text_checkpoint = "distilbert-base-multilingual-cased"
    image_checkpoint = "facebook/vit-mae-base"
    video_checkpoint = "MCG-NJU/videomae-base"
    audio_checkpoint = "facebook/wav2vec2-base"

    dim = EMBED_DIM

    def __init__(self, image_size: int = 224, frame_count: int = 16):
        self.image_size = image_size
        self.frame_count = frame_count
        self._cache: dict[str, tuple] = {}

    def _torch(self):
        try:
            import torch
        except ImportError:
            raise RuntimeError(
                "pretrained encoders need torch and transformers (pip install nmeb-export[pretrained])"
            ) from None
        return torch

    def _load(self, modality: str):
        if modality in self._cache:
            return self._cache[modality]
        self._torch()
        import transformers

        if modality == "text":
            pre = transformers.AutoTokenizer.from_pretrained(self.text_checkpoint)
            model = transformers.AutoModel.from_pretrained(self.text_checkpoint)
        elif modality == "image":
            pre = transformers.AutoImageProcessor.from_pretrained(self.image_checkpoint)
            model = transformers.AutoModel.from_pretrained(self.image_checkpoint)
        elif modality == "video":
            pre = transformers.AutoImageProcessor.from_pretrained(self.video_checkpoint)
            model = transformers.AutoModel.from_pretrained(self.video_checkpoint)
        elif modality == "audio":
            pre = transformers.AutoFeatureExtractor.from_pretrained(self.audio_checkpoint)
            model = transformers.AutoModel.from_pretrained(self.audio_checkpoint)
        else:
            raise ValueError(f"unknown modality {modality!r}")
        model.eval()
        self._cache[modality] = (pre, model)
        return pre, model

    def encode_text(self, text: str) -> np.ndarray:
        torch = self._torch()
        tok, model = self._load("text")
        enc = tok(text, return_tensors="pt", truncation=True)
        with torch.no_grad():
            states = model(**enc).last_hidden_state[0]
        mask = enc["attention_mask"][0].unsqueeze(-1).to(states.dtype)
        pooled = (states * mask).sum(dim=0) / mask.sum()
        return pooled.numpy().astype(np.float64)

    def encode_image(self, pixels: np.ndarray) -> np.ndarray:
        torch = self._torch()
        proc, model = self._load("image")
        enc = proc(images=pixels, return_tensors="pt")
        with torch.no_grad():
            states = model(**enc).last_hidden_state[0]
        return states[0].numpy().astype(np.float64)

    def encode_video(self, frames: np.ndarray) -> np.ndarray:
        torch = self._torch()
        proc, model = self._load("video")
        enc = proc(images=list(frames), return_tensors="pt")
        with torch.no_grad():
            states = model(**enc).last_hidden_state[0]
        return states.mean(dim=0).numpy().astype(np.float64)

    def encode_audio(self, waveform: np.ndarray) -> np.ndarray:
        torch = self._torch()
        proc, model = self._load("audio")
        enc = proc(waveform, sampling_rate=16000, return_tensors="pt")
        with torch.no_grad():
            states = model(**enc).last_hidden_state[0]
        return states.mean(dim=0).numpy().astype(np.float64)
