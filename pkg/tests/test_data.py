import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotcatt.data import (
    CAVITY,
    MYOCARDIUM,
    TUBE,
    DataError,
    VolumePair,
    generate_phantom,
    geometry_for_seed,
    load_labels,
    load_volume,
    normalize,
    save_labels,
    save_volume,
    slice_assignment,
    slice_batches,
    window_starts,
)


def test_phantom_deterministic():
    a, b = generate_phantom(3), generate_phantom(3)
    assert np.array_equal(a.intensities, b.intensities)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.intensities, generate_phantom(4).intensities)
    assert a.intensities.dtype == np.float32 and a.labels.dtype == np.uint8
    assert a.shape == (16, 64, 64)


@pytest.mark.parametrize("seed", range(10))
def test_tube_present_on_every_slice_of_its_range(seed):
    pair = generate_phantom(seed)
    geom = geometry_for_seed(seed)
    z_range = geom.tube_slices()
    assert len(z_range) >= 0.6 * pair.num_slices
    for s in z_range:
        ty, tx = geom.tube_center(s)
        assert (pair.labels[s] == TUBE).sum() >= 1
        assert pair.labels[s, int(round(ty)), int(round(tx))] == TUBE
    outside = [s for s in range(pair.num_slices) if s not in z_range]
    assert all((pair.labels[s] == TUBE).sum() == 0 for s in outside)


@pytest.mark.parametrize("seed", range(10))
def test_phantom_composition(seed):
    pair = generate_phantom(seed)
    counts = np.bincount(pair.labels.ravel(), minlength=4)
    assert counts[0] > 0.5 * pair.labels.size
    assert all(counts[c] > 0 for c in (MYOCARDIUM, TUBE, CAVITY))
    geom = geometry_for_seed(seed)
    assert 3 <= len(geom.blobs) <= 6
    # distractors are bright like the shell but labeled background
    bg = pair.intensities[pair.labels == 0]
    shell = pair.intensities[pair.labels == MYOCARDIUM]
    assert (bg > shell.mean() - 0.1).sum() > 50


@pytest.mark.parametrize("seed", range(5))
def test_tube_intensity_separated_from_background(seed):
    pair = generate_phantom(seed)
    z, y, x = np.meshgrid(*map(np.arange, pair.shape), indexing="ij")
    geom = geometry_for_seed(seed)
    far = np.ones(pair.shape, bool)
    for bz, by, bx, r in geom.blobs:
        far &= ((z - bz) / (1.5 * r)) ** 2 + ((y - by) / r) ** 2 + ((x - bx) / r) ** 2 > 1.0
    bg = pair.intensities[(pair.labels == 0) & far]
    tube = pair.intensities[pair.labels == TUBE]
    sigma = bg.std()
    assert tube.mean() - bg.mean() >= 3 * sigma


def test_phantom_more_classes_and_errors():
    pair = generate_phantom(0, num_classes=6)
    assert set(np.unique(pair.labels)) == set(range(6))
    three = generate_phantom(0, num_classes=3)
    assert set(np.unique(three.labels)) == {0, 1, 2}
    with pytest.raises(DataError):
        generate_phantom(0, num_classes=2)
    with pytest.raises(DataError):
        generate_phantom(0, S=2)


def test_normalize():
    assert np.array_equal(normalize(np.full((2, 3, 3), 7.0)), np.zeros((2, 3, 3)))
    v = np.linspace(0, 10, 11)
    assert np.array_equal(normalize(v), v / 10)
    with pytest.raises(DataError):
        normalize(np.array([0.0, np.nan]))


@given(st.integers(0, 10_000), st.floats(0.1, 100))
@settings(max_examples=40, deadline=None)
def test_normalize_idempotent(seed, scale):
    v = np.random.default_rng(seed).normal(size=(3, 4, 5)) * scale
    once = normalize(v)
    assert once.min() == 0.0 and once.max() == 1.0
    assert np.allclose(normalize(once), once, atol=1e-15)


def test_window_starts():
    assert window_starts(16, 8, "train") == [0, 8]
    assert window_starts(16, 8, "eval") == [0, 6, 8]
    assert window_starts(8, 8, "train") == window_starts(8, 8, "eval") == [0]
    assert window_starts(17, 8, "train") == [0, 8]
    with pytest.raises(DataError):
        window_starts(5, 8, "train")
    with pytest.raises(ValueError):
        window_starts(16, 8, "bogus")


@given(st.integers(3, 12), st.integers(0, 30))
@settings(max_examples=80, deadline=None)
def test_eval_windows_cover_every_interior_slice(B, extra):
    S = B + extra
    starts = window_starts(S, B, "eval")
    assert starts == sorted(set(starts))
    interior = set()
    for st_ in starts:
        interior.update(range(st_ + 1, st_ + B - 1))
    assert interior >= set(range(1, S - 1))
    picks = slice_assignment(S, B, starts)
    for s, (w, off) in enumerate(picks):
        assert starts[w] + off == s
        if 0 < s < S - 1:
            assert 0 < off < B - 1


def test_slice_batches():
    pair = generate_phantom(0)
    batches = slice_batches(pair, 8, "train")
    assert [b.start for b in batches] == [0, 8]
    assert batches[0].images.shape == (8, 1, 64, 64)
    assert batches[1].labels.shape == (8, 64, 64)
    assert np.array_equal(batches[1].images[:, 0], pair.intensities[8:16])
    assert [b.start for b in slice_batches(pair, 8, "eval")] == [0, 6, 8]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_volume_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pair = VolumePair(rng.random((4, 8, 8), dtype=np.float32), rng.integers(0, 5, (4, 8, 8)).astype(np.uint8),
                      (2.5, 0.7, 0.7), 5)
    base = save_volume(pair, tmp_path / "case")
    back = load_volume(base)
    assert np.array_equal(back.intensities, pair.intensities)
    assert back.intensities.tobytes() == pair.intensities.tobytes()
    assert np.array_equal(back.labels, pair.labels)
    assert back.spacing == pair.spacing and back.num_classes == 5
    meta = json.loads((tmp_path / "case.json").read_text())
    assert meta == {"shape": [4, 8, 8], "dtype": "f32", "spacing": [2.5, 0.7, 0.7], "classes": 5, "version": 1}
    # explicit little-endian payload, independent of host order
    raw = np.frombuffer((tmp_path / "case.vol").read_bytes(), dtype="<f4")
    assert np.array_equal(raw.reshape(4, 8, 8), pair.intensities)
    # saving again is byte-identical
    first = _sha(tmp_path / "case.vol")
    save_volume(back, tmp_path / "case")
    assert _sha(tmp_path / "case.vol") == first


def test_truncated_payload_rejected(tmp_path):
    base = save_volume(generate_phantom(0, S=4, H=32, W=32), tmp_path / "p")
    vol = base.with_suffix(".vol")
    vol.write_bytes(vol.read_bytes()[:-4])
    with pytest.raises(DataError, match="bytes"):
        load_volume(base)


@pytest.mark.parametrize("header", [
    "not json",
    '{"shape": [4, 32], "dtype": "f32", "spacing": [1, 1, 1], "classes": 4, "version": 1}',
    '{"shape": [4, 32, 32], "dtype": "f64", "spacing": [1, 1, 1], "classes": 4, "version": 1}',
    '{"shape": [4, 32, 32], "dtype": "f32", "spacing": [1, 1, 1], "classes": 4, "version": 9}',
    '{"dtype": "f32"}',
])
def test_corrupt_header_rejected(tmp_path, header):
    base = save_volume(generate_phantom(0, S=4, H=32, W=32), tmp_path / "p")
    base.with_suffix(".json").write_text(header)
    with pytest.raises(DataError):
        load_volume(base)


def test_label_volume_round_trip(tmp_path):
    labels = np.random.default_rng(1).integers(0, 4, (3, 5, 5)).astype(np.uint8)
    base = save_labels(labels, tmp_path / "pred.lbl", (1.0, 1.0, 1.0), 4)
    assert np.array_equal(load_labels(base), labels)
    assert json.loads((tmp_path / "pred.json").read_text())["dtype"] == "u8"
    with pytest.raises(DataError):
        load_volume(base)


def test_volume_pair_validation():
    with pytest.raises(DataError):
        VolumePair(np.zeros((2, 3, 3), np.float32), np.zeros((2, 3, 4), np.uint8))
    with pytest.raises(DataError):
        VolumePair(np.zeros((2, 3, 3), np.float32), np.full((2, 3, 3), 4, np.uint8), num_classes=4)


@pytest.mark.parametrize("seed", range(20))
def test_small_grid_phantom_keeps_tube(seed):
    pair = generate_phantom(seed, S=8, H=32, W=32)
    geom = geometry_for_seed(seed, S=8, H=32, W=32)
    assert 1.0 <= geom.tube_radius <= 2.0
    for s in geom.tube_slices():
        assert (pair.labels[s] == TUBE).sum() >= 1
