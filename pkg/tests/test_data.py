import io
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from nmodal.data import (
    EmbeddingBundle,
    Post,
    SynthConfig,
    bundle_to_bytes,
    generate_synthetic,
    read_bundle,
    sample_batches,
    split_bundle,
    write_bundle,
    write_jsonl,
)
from nmodal.errors import (
    DimMismatchError,
    MagicError,
    SchemaError,
    TruncationError,
    VersionError,
)

GOLDEN = Path(__file__).parent / "golden" / "reference.nmeb"

GOLDEN_CONFIG = SynthConfig(
    post_count=6,
    modalities=[("text", 5), ("image", 4)],
    latent_dim=3,
    noise_sigma=0.05,
    account_count=3,
    stance_mix=0.5,
    seed=1234,
)


def tiny_bundle():
    return generate_synthetic(
        SynthConfig(
            post_count=7,
            modalities=[("a", 3), ("b", 2)],
            latent_dim=2,
            noise_sigma=0.1,
            account_count=2,
            seed=5,
        )
    )


class TestFormatRoundTrip:
    def test_vectors_survive_as_f32(self):
        bundle = tiny_bundle()
        back = read_bundle(io.BytesIO(bundle_to_bytes(bundle)))
        assert back.modalities == bundle.modalities
        assert back.post_ids() == bundle.post_ids()
        for orig, re in zip(bundle.posts, back.posts):
            assert re.account_label == orig.account_label
            assert re.stance_label == orig.stance_label
            for v_orig, v_re in zip(orig.vectors, re.vectors):
                np.testing.assert_array_equal(v_re, v_orig.astype(np.float32).astype(np.float64))

    def test_loaded_dtype_is_f64(self):
        back = read_bundle(io.BytesIO(bundle_to_bytes(tiny_bundle())))
        assert all(v.dtype == np.float64 for p in back.posts for v in p.vectors)

    def test_second_serialization_is_byte_identical(self):
        bundle = tiny_bundle()
        assert bundle_to_bytes(bundle) == bundle_to_bytes(bundle)

    def test_path_round_trip(self, tmp_path):
        bundle = tiny_bundle()
        path = tmp_path / "x.nmeb"
        write_bundle(bundle, path)
        back = read_bundle(path)
        assert back.post_ids() == bundle.post_ids()


class TestExactLayout:
    def test_hand_assembled_bytes(self):
        post = Post(
            post_id="p1",
            account_label="acct",
            stance_label=1,
            vectors=[np.array([1.0, -2.0]), np.array([0.5])],
        )
        bundle = EmbeddingBundle(modalities=[("m1", 2), ("m2", 1)], posts=[post])
        expected = b"NMEB"
        expected += struct.pack("<HH", 1, 2)
        expected += struct.pack("<B", 2) + b"m1" + struct.pack("<I", 2)
        expected += struct.pack("<B", 2) + b"m2" + struct.pack("<I", 1)
        expected += struct.pack("<Q", 1)
        expected += struct.pack("<H", 2) + b"p1"
        expected += struct.pack("<H", 4) + b"acct"
        expected += struct.pack("<b", 1)
        expected += np.array([1.0, -2.0], dtype="<f4").tobytes()
        expected += np.array([0.5], dtype="<f4").tobytes()
        assert bundle_to_bytes(bundle) == expected

    def test_golden_file_still_produced_bit_for_bit(self):
        regenerated = bundle_to_bytes(generate_synthetic(GOLDEN_CONFIG))
        assert regenerated == GOLDEN.read_bytes()

    def test_golden_file_parses(self):
        bundle = read_bundle(GOLDEN)
        assert bundle.modalities == [("text", 5), ("image", 4)]
        assert bundle.post_count == 6
        assert bundle.posts[0].post_id == "post-000000"


class TestFormatErrors:
    def corrupt(self, mutate):
        raw = bytearray(bundle_to_bytes(tiny_bundle()))
        mutate(raw)
        return io.BytesIO(bytes(raw))

    def test_bad_magic(self):
        src = self.corrupt(lambda b: b.__setitem__(slice(0, 4), b"XXXX"))
        with pytest.raises(MagicError):
            read_bundle(src)

    def test_bad_version(self):
        src = self.corrupt(lambda b: b.__setitem__(slice(4, 6), struct.pack("<H", 2)))
        with pytest.raises(VersionError):
            read_bundle(src)

    def test_truncation_names_the_post(self):
        raw = bundle_to_bytes(tiny_bundle())
        with pytest.raises(TruncationError, match="post 6"):
            read_bundle(io.BytesIO(raw[:-3]))

    def test_truncated_header(self):
        raw = bundle_to_bytes(tiny_bundle())
        with pytest.raises(TruncationError):
            read_bundle(io.BytesIO(raw[:5]))

    def test_empty_file(self):
        with pytest.raises(TruncationError):
            read_bundle(io.BytesIO(b""))

    def test_trailing_bytes(self):
        raw = bundle_to_bytes(tiny_bundle())
        with pytest.raises(SchemaError, match="trailing"):
            read_bundle(io.BytesIO(raw + b"\x00"))

    def test_invalid_stance_byte(self):
        bundle = EmbeddingBundle(
            modalities=[("m", 1)],
            posts=[Post(post_id="p", account_label="", stance_label=0, vectors=[np.zeros(1)])],
        )
        raw = bytearray(bundle_to_bytes(bundle))
        # stance byte sits right before the final 4-byte f32 vector
        raw[-5] = 7
        with pytest.raises(SchemaError, match="stance"):
            read_bundle(io.BytesIO(bytes(raw)))

    def test_zero_dim_modality(self):
        raw = b"NMEB" + struct.pack("<HH", 1, 1)
        raw += struct.pack("<B", 1) + b"m" + struct.pack("<I", 0)
        raw += struct.pack("<Q", 0)
        with pytest.raises(DimMismatchError):
            read_bundle(io.BytesIO(raw))

    def test_invalid_utf8_modality_name(self):
        raw = b"NMEB" + struct.pack("<HH", 1, 1)
        raw += struct.pack("<B", 2) + b"\xff\xfe" + struct.pack("<I", 1)
        raw += struct.pack("<Q", 0)
        with pytest.raises(SchemaError, match="UTF-8"):
            read_bundle(io.BytesIO(raw))

    def test_zero_modalities(self):
        raw = b"NMEB" + struct.pack("<HH", 1, 0) + struct.pack("<Q", 0)
        with pytest.raises(SchemaError):
            read_bundle(io.BytesIO(raw))


class TestBundleValidation:
    def test_duplicate_post_ids(self):
        posts = [Post(post_id="p", vectors=[np.zeros(1)]) for _ in range(2)]
        bundle = EmbeddingBundle(modalities=[("m", 1)], posts=posts)
        with pytest.raises(SchemaError, match="duplicate"):
            bundle.check()

    def test_wrong_vector_count(self):
        bundle = EmbeddingBundle(
            modalities=[("m", 1), ("n", 1)],
            posts=[Post(post_id="p", vectors=[np.zeros(1)])],
        )
        with pytest.raises(DimMismatchError):
            bundle.check()

    def test_wrong_dim(self):
        bundle = EmbeddingBundle(
            modalities=[("m", 2)], posts=[Post(post_id="p", vectors=[np.zeros(3)])]
        )
        with pytest.raises(DimMismatchError):
            bundle.check()

    def test_non_finite(self):
        bundle = EmbeddingBundle(
            modalities=[("m", 2)], posts=[Post(post_id="p", vectors=[np.array([1.0, np.inf])])]
        )
        with pytest.raises(SchemaError, match="finite"):
            bundle.check()

    def test_matrix_access(self):
        bundle = tiny_bundle()
        assert bundle.matrix("a").shape == (7, 3)
        with pytest.raises(KeyError):
            bundle.matrix("nope")


class TestSynthetic:
    def test_deterministic(self):
        cfg = SynthConfig(post_count=5, modalities=[("a", 4)], latent_dim=2, seed=9)
        b1 = generate_synthetic(cfg)
        b2 = generate_synthetic(cfg)
        for p1, p2 in zip(b1.posts, b2.posts):
            assert p1.post_id == p2.post_id
            assert p1.stance_label == p2.stance_label
            np.testing.assert_array_equal(p1.vectors[0], p2.vectors[0])

    def test_seed_changes_output(self):
        cfg1 = SynthConfig(post_count=5, modalities=[("a", 4)], latent_dim=2, seed=9)
        cfg2 = SynthConfig(post_count=5, modalities=[("a", 4)], latent_dim=2, seed=10)
        v1 = generate_synthetic(cfg1).posts[0].vectors[0]
        v2 = generate_synthetic(cfg2).posts[0].vectors[0]
        assert not np.array_equal(v1, v2)

    def test_round_robin_accounts(self):
        cfg = SynthConfig(post_count=10, modalities=[("a", 2)], latent_dim=2, account_count=3, seed=1)
        labels = [p.account_label for p in generate_synthetic(cfg).posts]
        assert labels == [f"acct-{i % 3:03d}" for i in range(10)]

    def test_both_stance_classes_appear(self):
        cfg = SynthConfig(post_count=100, modalities=[("a", 4)], latent_dim=8, seed=3)
        stances = {p.stance_label for p in generate_synthetic(cfg).posts}
        assert stances == {0, 1}

    def test_stance_mix_shifts_balance(self):
        base = dict(post_count=400, modalities=[("a", 2)], latent_dim=6, seed=4)
        lo = generate_synthetic(SynthConfig(stance_mix=0.2, **base))
        hi = generate_synthetic(SynthConfig(stance_mix=0.8, **base))
        frac = lambda b: sum(p.stance_label for p in b.posts) / b.post_count
        assert frac(lo) < 0.35 < 0.65 < frac(hi)

    def test_noise_enters_linearly(self):
        # the same noise draws are scaled by sigma, so doubling sigma exactly
        # doubles the deviation from the noiseless corpus
        base = dict(post_count=4, modalities=[("a", 6), ("b", 3)], latent_dim=2, seed=6)
        b0 = generate_synthetic(SynthConfig(noise_sigma=0.0, **base))
        b1 = generate_synthetic(SynthConfig(noise_sigma=0.1, **base))
        b2 = generate_synthetic(SynthConfig(noise_sigma=0.2, **base))
        for p0, p1, p2 in zip(b0.posts, b1.posts, b2.posts):
            for m in range(2):
                d1 = p1.vectors[m] - p0.vectors[m]
                d2 = p2.vectors[m] - p0.vectors[m]
                np.testing.assert_allclose(d2, 2.0 * d1, rtol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(post_count=0)
        with pytest.raises(ValueError):
            SynthConfig(stance_mix=1.0)
        with pytest.raises(ValueError):
            SynthConfig(noise_sigma=-0.1)
        with pytest.raises(ValueError):
            SynthConfig(modalities=[])


class TestSplit:
    def split_sizes(self, p):
        cfg = SynthConfig(post_count=p, modalities=[("a", 2)], latent_dim=2, seed=0)
        train, heldout = split_bundle(generate_synthetic(cfg))
        return train.post_count, heldout.post_count

    def test_large_corpus_takes_tenth(self):
        assert self.split_sizes(1112) == (1000, 112)

    def test_floor_of_one_hundred(self):
        assert self.split_sizes(500) == (400, 100)

    def test_tiny_corpus_keeps_one_training_post(self):
        assert self.split_sizes(50) == (1, 49)

    def test_single_post(self):
        assert self.split_sizes(1) == (1, 0)

    def test_split_preserves_order_and_partitions(self):
        cfg = SynthConfig(post_count=250, modalities=[("a", 2)], latent_dim=2, seed=0)
        bundle = generate_synthetic(cfg)
        train, heldout = split_bundle(bundle)
        assert train.post_ids() + heldout.post_ids() == bundle.post_ids()


class TestBatching:
    def test_partition_drops_remainder(self):
        bundle = tiny_bundle()  # 7 posts
        batches = sample_batches(bundle, batch_size=3, seed=0, epoch=0)
        assert len(batches) == 2
        flat = np.concatenate(batches)
        assert len(flat) == 6
        assert len(set(flat.tolist())) == 6

    def test_keyed_shuffle_reproducible(self):
        bundle = tiny_bundle()
        a = sample_batches(bundle, 3, seed=4, epoch=2)
        b = sample_batches(bundle, 3, seed=4, epoch=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epochs_differ(self):
        bundle = tiny_bundle()
        a = np.concatenate(sample_batches(bundle, 3, seed=4, epoch=0))
        b = np.concatenate(sample_batches(bundle, 3, seed=4, epoch=1))
        assert not np.array_equal(a, b)

    def test_batch_size_bounds(self):
        bundle = tiny_bundle()
        with pytest.raises(ValueError):
            sample_batches(bundle, 0, seed=0, epoch=0)
        with pytest.raises(ValueError):
            sample_batches(bundle, 8, seed=0, epoch=0)
        whole = sample_batches(bundle, 7, seed=0, epoch=0)
        assert len(whole) == 1 and len(whole[0]) == 7


class TestJsonl:
    def test_layout(self):
        bundle = tiny_bundle()
        buf = io.StringIO()
        write_jsonl(bundle, buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 1 + bundle.post_count
        header = json.loads(lines[0])
        assert header["modalities"] == [["a", 3], ["b", 2]]
        row = json.loads(lines[1])
        assert row["post_id"] == "post-000000"
        assert set(row["vectors"]) == {"a", "b"}
        assert len(row["vectors"]["a"]) == 3
