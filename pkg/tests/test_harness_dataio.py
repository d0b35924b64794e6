import hashlib
import struct

import numpy as np
import pytest

from mmrobust.errors import FormatError
from mmrobust.harness import dataio
from mmrobust.harness.dataio import (
    load_dataset,
    load_dataset_csv,
    load_embeddings_csv,
    save_dataset,
    save_dataset_csv,
    save_embeddings_csv,
)
from mmrobust.harness.synthetic import SyntheticConfig, generate_synthetic

# frozen byte-level fingerprint of the binary format for a fixed seed;
# any change to the layout or the generator stream shows up here
GOLDEN_SHA256 = "d8457ca9b5e6b877ff7e10ff786356cebc7d93266b29fd9b3797739acc1fff3b"


def golden_dataset():
    return generate_synthetic(SyntheticConfig(
        n_classes=3, samples_per_class=10, d_audio=4, d_video=3,
        cluster_spread=0.3, shapes=("blob", "crescent", "ring"),
        class_separation=1.2, shape_radius=0.6,
        cross_modal_correlation=0.7, seed=99,
    ))


def datasets_equal(a, b) -> bool:
    if (a.d_audio, a.d_video, a.n_classes, a.multi_label, len(a)) != (
        b.d_audio, b.d_video, b.n_classes, b.multi_label, len(b)
    ):
        return False
    for sa, sb in zip(a.samples, b.samples):
        if not (np.array_equal(sa.x_audio, sb.x_audio)
                and np.array_equal(sa.x_video, sb.x_video)
                and np.array_equal(sa.label, sb.label)):
            return False
    return True


class TestBinaryFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        dataset = golden_dataset()
        path = tmp_path / "data.mmr"
        save_dataset(dataset, path)
        assert datasets_equal(load_dataset(path), dataset)

    def test_multilabel_flag_round_trip(self, tmp_path):
        cfg = SyntheticConfig(n_classes=4, samples_per_class=6, multi_label=True, seed=5)
        dataset = generate_synthetic(cfg)
        path = tmp_path / "ml.mmr"
        save_dataset(dataset, path)
        loaded = load_dataset(path)
        assert loaded.multi_label
        assert datasets_equal(loaded, dataset)

    def test_golden_file_bytes_stable(self, tmp_path):
        path = tmp_path / "golden.mmr"
        save_dataset(golden_dataset(), path)
        assert hashlib.sha256(path.read_bytes()).hexdigest() == GOLDEN_SHA256

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "data.mmr"
        save_dataset(golden_dataset(), path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_truncation_reports_byte_offset(self, tmp_path):
        path = tmp_path / "data.mmr"
        save_dataset(golden_dataset(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match=rf"byte {len(blob) - 10}"):
            load_dataset(path)

    def test_oversized_sample_count_reports_offset(self, tmp_path):
        path = tmp_path / "data.mmr"
        dataset = golden_dataset()
        save_dataset(dataset, path)
        blob = bytearray(path.read_bytes())
        # bump the n_samples header field ten past the payload
        blob[8:12] = struct.pack("<I", len(dataset) + 10)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match=rf"byte {len(blob)}"):
            load_dataset(path)

    def test_header_truncation(self, tmp_path):
        path = tmp_path / "data.mmr"
        path.write_bytes(b"MMR1\x01\x00")
        with pytest.raises(FormatError, match="header"):
            load_dataset(path)


class TestCsvFormat:
    def test_round_trip(self, tmp_path):
        dataset = golden_dataset()
        path = tmp_path / "data.csv"
        save_dataset_csv(dataset, path)
        assert datasets_equal(load_dataset_csv(path), dataset)

    def test_header_validation(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(FormatError, match="header"):
            load_dataset_csv(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("audio_0,video_0,label_0,label_1\n1.0,2.0,1.0\n")
        with pytest.raises(FormatError, match="line 2"):
            load_dataset_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("audio_0,video_0,label_0,label_1\n1.0,x,1.0,0.0\n")
        with pytest.raises(FormatError, match="line 2"):
            load_dataset_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError):
            load_dataset_csv(path)


class TestEmbeddingsCsv:
    def test_round_trip(self, tmp_path, rng):
        emb = rng.standard_normal((12, 5))
        labels = (rng.random((12, 3)) < 0.5).astype(float)
        path = tmp_path / "emb.csv"
        save_embeddings_csv(path, emb, labels, splits=["train"] * 6 + ["test"] * 6)
        emb2, labels2 = load_embeddings_csv(path)
        np.testing.assert_array_equal(emb2, emb)
        np.testing.assert_array_equal(labels2, labels)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("sample_index,split\n0,train\n")
        with pytest.raises(FormatError):
            load_embeddings_csv(path)
