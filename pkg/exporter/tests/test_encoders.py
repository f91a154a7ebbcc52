import numpy as np
import pytest

pytest.importorskip("nmeb_export")

from nmeb_export.encoders import EMBED_DIM, HashedEncoder, PretrainedEncoder


@pytest.fixture(scope="module")
def enc():
    return HashedEncoder()


def test_default_width(enc):
    assert enc.dim == EMBED_DIM == 768
    assert enc.encode_text("one two three four five").shape == (768,)


def test_custom_width():
    small = HashedEncoder(dim=32)
    assert small.encode_image(np.zeros((4, 4, 3), dtype=np.uint8)).shape == (32,)
    with pytest.raises(ValueError):
        HashedEncoder(dim=0)


def test_text_repeatable_and_content_sensitive(enc):
    a = enc.encode_text("the quick brown fox jumps")
    assert np.array_equal(a, enc.encode_text("the quick brown fox jumps"))
    assert not np.allclose(a, enc.encode_text("the quick brown fox jumped"))
    assert np.isfinite(a).all() and np.linalg.norm(a) > 0


def test_text_sees_word_order_not_spacing(enc):
    assert np.array_equal(
        enc.encode_text("alpha beta  gamma"),
        enc.encode_text("alpha beta gamma"),
    )
    assert not np.allclose(
        enc.encode_text("alpha beta gamma delta epsilon"),
        enc.encode_text("epsilon delta gamma beta alpha"),
    )


def test_empty_text_rejected(enc):
    with pytest.raises(ValueError):
        enc.encode_text("   ")


def test_image_shape_is_part_of_identity(enc):
    flat = np.arange(18, dtype=np.uint8)
    a = enc.encode_image(flat.reshape(2, 3, 3))
    b = enc.encode_image(flat.reshape(3, 2, 3))
    assert not np.allclose(a, b)
    assert np.array_equal(a, enc.encode_image(flat.reshape(2, 3, 3)))


def test_video_sees_frame_order(enc):
    g = np.random.Generator(np.random.PCG64(0))
    frames = g.integers(0, 256, size=(16, 6, 6, 3), dtype=np.uint8)
    a = enc.encode_video(frames)
    assert np.array_equal(a, enc.encode_video(frames))
    assert not np.allclose(a, enc.encode_video(frames[::-1]))
    assert np.isfinite(a).all() and np.linalg.norm(a) > 0
    with pytest.raises(ValueError):
        enc.encode_video(frames[0])


def test_audio_chunking_and_dtype_stability(enc):
    g = np.random.Generator(np.random.PCG64(1))
    wf = g.standard_normal(4096 + 100).astype(np.float32)
    a = enc.encode_audio(wf)
    assert np.array_equal(a, enc.encode_audio(wf.astype(np.float64)))
    assert not np.allclose(a, enc.encode_audio(wf[:4096]))
    assert np.isfinite(a).all() and np.linalg.norm(a) > 0
    with pytest.raises(ValueError):
        enc.encode_audio(np.zeros((0,), dtype=np.float32))


def test_modalities_never_collide(enc):
    # same byte content fed to different modalities must not alias
    pixels = np.zeros((2, 2, 3), dtype=np.uint8)
    frames = pixels[None]
    assert not np.allclose(enc.encode_image(pixels), enc.encode_video(frames))


def test_pretrained_is_lazy():
    enc = PretrainedEncoder(image_size=224)
    assert enc.kind == "pretrained" and enc.dim == 768
    assert enc.image_size == 224
