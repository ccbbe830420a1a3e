import numpy as np
import pytest

from subjadapt import dataio as io
from subjadapt.errors import CapacityError, FormatError, LengthError, RangeError, ValidationError

from conftest import make_records


def header_for(records, **kw):
    d, t = records[0].signal.shape
    return io.DatasetHeader(
        n_samples=len(records), n_channels=d, n_timesteps=t,
        n_classes=max(r.label for r in records) + 1,
        n_subjects=max(r.subject_id for r in records) + 1, **kw)


def quantized(records):
    return [io.EEGRecord(r.subject_id, r.label, r.signal.astype(np.float32).astype(np.float64))
            for r in records]


def test_round_trip_is_bit_exact(tmp_path):
    records = make_records(3, 4, 2, shape=(3, 7))
    header = header_for(records, sampling_rate_hz=250)
    path = tmp_path / "d.eegs"
    io.write_dataset(path, header, records)
    h2, r2 = io.load_dataset(path)
    assert h2 == header
    assert r2 == quantized(records)
    # writing the loaded data reproduces the file byte for byte
    io.write_dataset(tmp_path / "again.eegs", h2, r2)
    assert (tmp_path / "again.eegs").read_bytes() == path.read_bytes()


def test_header_layout(tmp_path):
    records = make_records(1, 1, 1, shape=(2, 3))
    path = tmp_path / "d.eegs"
    io.write_dataset(path, header_for(records), records)
    raw = path.read_bytes()
    assert raw[:4] == b"EEGS"
    assert len(raw) == 36 + 4 + 4 * 6


def test_bad_magic_and_truncation(tmp_path):
    records = make_records(2, 2, 2)
    path = tmp_path / "d.eegs"
    io.write_dataset(path, header_for(records), records)
    raw = path.read_bytes()
    bad = tmp_path / "bad.eegs"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        io.load_dataset(bad)
    for cut in (10, len(raw) - 1):
        bad.write_bytes(raw[:cut])
        with pytest.raises(LengthError):
            io.load_dataset(bad)
    bad.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        io.load_dataset(bad)


def test_out_of_range_ids_name_record(tmp_path):
    records = make_records(2, 2, 1)
    header = header_for(records)
    records[3] = io.EEGRecord(5, 0, records[3].signal)
    with pytest.raises(ValidationError, match="record 3"):
        io.write_dataset(tmp_path / "x", header, records)


def test_six_subject_forty_class_sample_count():
    header = io.DatasetHeader(n_samples=6 * 40 * 50, n_channels=128, n_timesteps=500,
                              n_classes=40, n_subjects=6)
    assert header.n_samples == 12000


def test_import_text(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    expected = []
    for i, (s, c) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        sig = rng.normal(size=(3, 4))
        np.savetxt(tmp_path / f"r{i}.txt", sig, delimiter="," if i % 2 else " ")
        lines.append(f"{s},{c},r{i}.txt" if i % 2 else f"{s} {c} r{i}.txt")
        expected.append(io.EEGRecord(s, c, sig))
    (tmp_path / "manifest.txt").write_text("# subject label path\n" + "\n".join(lines) + "\n")
    header, records = io.import_text(tmp_path / "manifest.txt", tmp_path / "out.eegs")
    assert (header.n_subjects, header.n_classes, header.n_channels, header.n_timesteps) == (2, 2, 3, 4)
    for got, want in zip(records, expected):
        np.testing.assert_allclose(got.signal, want.signal, rtol=1e-15)
    h2, r2 = io.load_dataset(tmp_path / "out.eegs")
    assert h2 == header and len(r2) == 4


def test_import_bad_manifest(tmp_path):
    (tmp_path / "m.txt").write_text("0 1\n")
    with pytest.raises(FormatError):
        io.import_text(tmp_path / "m.txt")


# -- cropping -------------------------------------------------------------------

def test_crop_examples():
    rec = io.EEGRecord(0, 0, np.arange(2 * 500, dtype=float).reshape(2, 500))
    out = io.crop_interval(rec, 320, 480, 1000)
    assert out.signal.shape == (2, 160)
    assert out.signal[0, 0] == 320
    full = io.crop_interval(rec, 0, 500, 1000)
    np.testing.assert_array_equal(full.signal, rec.signal)
    half_rate = io.crop_interval(rec, 320, 480, 500)
    assert half_rate.signal.shape == (2, 80)


def test_crop_beyond_recording_names_counts():
    rec = io.EEGRecord(0, 0, np.zeros((2, 440)))
    with pytest.raises(RangeError, match="480.*440"):
        io.crop_interval(rec, 320, 480, 1000)


# -- episodes -------------------------------------------------------------------

def test_episode_sizes_and_partition():
    records = make_records(3, 40, 12, shape=(1, 2))
    for k, seed in [(1, 0), (5, 3)]:
        split = io.build_episode(records, 1, k, seed)
        assert len(split.target_train) == 40 * k
        parts = [split.target_train, split.target_val, split.target_test, split.target_unused]
        ids = [id(r) for part in parts for r in part]
        assert len(ids) == len(set(ids)) == 40 * 12
        assert sorted(split.source) == [0, 2]
        assert all(r.subject_id == 1 for part in parts for r in part)
        counts = np.bincount([r.label for r in split.target_train], minlength=40)
        assert (counts == k).all()


def test_remainder_empty_when_fractions_exhaust_pool():
    records = make_records(2, 3, 6, shape=(1, 1))
    split = io.build_episode(records, 0, 4, 0)
    assert split.target_unused == []
    assert len(split.target_val) == len(split.target_test) == 3


def test_capacity_error_lists_classes():
    records = make_records(2, 3, 6, shape=(1, 1))
    with pytest.raises(CapacityError, match="class 0: has 6"):
        io.build_episode(records, 0, 5, 0)


def test_episode_is_seeded():
    records = make_records(2, 4, 10, shape=(1, 1))
    a = io.build_episode(records, 0, 2, 9)
    b = io.build_episode(records, 0, 2, 9)
    assert a.target_train == b.target_train and a.target_test == b.target_test


def test_batch_rule_five_sources_forty_classes():
    records = make_records(6, 40, 10, shape=(1, 1))
    split = io.build_episode(records, 0, 1, 0)
    split.source = {s: pool * 30 for s, pool in split.source.items()}  # 1200 per source
    batch = io.compose_batch(split, io.BatchSpec(), np.random.default_rng(0))
    assert len(batch) == 5 * 200 + 40
    assert {r.subject_id for r in batch} == set(range(6))


def test_batch_takes_small_source_whole_without_duplicates():
    records = make_records(3, 2, 10, shape=(1, 1))
    split = io.build_episode(records, 2, 1, 0)
    batch = io.compose_batch(split, io.BatchSpec(per_source_count=500), np.random.default_rng(0))
    ids = [id(r) for r in batch]
    assert len(ids) == len(set(ids)) == 20 + 20 + 2


def test_batch_is_deterministic_in_rng():
    records = make_records(3, 2, 10, shape=(1, 1))
    split = io.build_episode(records, 0, 1, 0)
    spec = io.BatchSpec(per_source_count=7)
    a = io.compose_batch(split, spec, np.random.default_rng(4))
    b = io.compose_batch(split, spec, np.random.default_rng(4))
    assert [id(r) for r in a] == [id(r) for r in b]


def test_batch_empty_source_rejected():
    records = make_records(2, 2, 10, shape=(1, 1))
    split = io.build_episode(records, 0, 1, 0)
    split.source[1] = []
    with pytest.raises(CapacityError):
        io.compose_batch(split, io.BatchSpec(), np.random.default_rng(0))
