import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spikeplace.data import (PatchNormalizer, PlaceDataset, generate_synthetic_dataset, load_datasets,
                             load_manifest, preprocess_image, read_image, to_grayscale,
                             write_synthetic_dataset)
from spikeplace.exceptions import ConfigError, DataError


def test_constant_image_maps_to_mid_gray():
    out = preprocess_image(np.full((40, 60), 93.0))
    assert out.shape == (784,)
    assert np.all(out == 127.5)


def test_single_tile_extremes_hit_range_ends():
    tile = np.arange(49, dtype=float).reshape(7, 7)
    out = preprocess_image(tile, width=7, height=7, patch=7)
    assert out.min() == 0.0 and out.max() == 255.0
    assert out[0] == 0.0 and out[48] == 255.0


def test_checkerboard_shape_and_range():
    board = (np.indices((56, 56)).sum(axis=0) % 2) * 255.0
    out = preprocess_image(board)
    assert out.shape == (784,)
    assert out.min() >= 0 and out.max() <= 255


def test_every_tile_spans_full_range():
    img = np.random.default_rng(0).uniform(0, 255, (28, 28))
    out = preprocess_image(img).reshape(4, 7, 4, 7).swapaxes(1, 2)
    assert np.allclose(out.min(axis=(2, 3)), 0.0, atol=1e-9)
    assert np.allclose(out.max(axis=(2, 3)), 255.0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (28, 28), elements=st.floats(0, 255)))
def test_preprocessing_is_idempotent_up_to_rounding(img):
    once = np.rint(preprocess_image(img))
    twice = preprocess_image(once.reshape(28, 28))
    assert np.max(np.abs(np.rint(twice) - once)) <= 1


def test_rgb_is_reduced_by_luma():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 1] = 100.0
    assert np.allclose(to_grayscale(rgb), 58.7)


def test_bad_inputs_are_rejected():
    with pytest.raises(DataError):
        preprocess_image(np.zeros((0, 0)))
    with pytest.raises(ConfigError):
        preprocess_image(np.zeros((28, 28)), width=30)
    with pytest.raises(DataError):
        to_grayscale(np.zeros((2, 2, 2, 2)))


def test_patch_normalizer_accepts_flat_and_2d_inputs():
    imgs = np.random.default_rng(2).uniform(0, 255, (3, 28, 28))
    norm = PatchNormalizer()
    assert np.array_equal(norm.fit_transform(imgs), norm.transform(imgs.reshape(3, -1)))
    assert norm.get_params() == {"width": 28, "height": 28, "patch": 7}


# -- synthetic data -----------------------------------------------------------

def test_identity_perturbation():
    ref, qry = generate_synthetic_dataset(5, 0.0, 0.0, seed=1)
    assert np.array_equal(ref.images, qry.images)
    assert qry.ground_truth.tolist() == list(range(5))


def test_synthetic_is_deterministic():
    a = generate_synthetic_dataset(6, 12.0, 0.2, seed=9)
    b = generate_synthetic_dataset(6, 12.0, 0.2, seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x.images, y.images)


def test_references_are_distinct_and_in_range():
    ref, qry = generate_synthetic_dataset(20, 15.0, 0.1, seed=4)
    assert len(np.unique(ref.images, axis=0)) == 20
    assert ref.images.min() == 0 and ref.images.max() == 255
    assert qry.images.min() >= 0 and qry.images.max() <= 255


def test_noise_level_matches_half_normal_mean():
    sigma = 20.0
    ref, qry = generate_synthetic_dataset(100, sigma, 0.1, seed=5)
    _, occluded_only = generate_synthetic_dataset(100, 0.0, 0.1, seed=5)
    unoccluded = occluded_only.images == ref.images
    per_image = [np.abs(qry.images[i] - ref.images[i])[unoccluded[i]].mean() for i in range(100)]
    expected = sigma * math.sqrt(2 / math.pi)
    assert expected == pytest.approx(15.96, abs=0.01)
    assert abs(np.mean(per_image) - expected) <= 0.15 * expected
    assert 0.05 <= 1 - unoccluded.mean() <= 0.15


def test_dataset_invariants():
    with pytest.raises(DataError):
        PlaceDataset("reference", [0, 2], np.zeros((2, 4)))
    with pytest.raises(ValueError):
        PlaceDataset("other", [0], np.zeros((1, 4)))
    ref = PlaceDataset("reference", [0, 1], np.zeros((2, 4)))
    qry = PlaceDataset("query", [0], np.zeros((1, 4)), ground_truth=[5])
    with pytest.raises(DataError):
        qry.check_pairing(ref)


# -- manifests and image files -------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    ref, qry = generate_synthetic_dataset(4, 5.0, 0.0, seed=0)
    path = write_synthetic_dataset(tmp_path, ref, qry, name="tiny")
    manifest = load_manifest(path)
    assert manifest.name == "tiny" and len(manifest.reference) == 4
    r, q = load_datasets(manifest)
    assert r.images.shape == (4, 784) and q.ground_truth.tolist() == [0, 1, 2, 3]
    raw = read_image(manifest.reference[0])
    assert np.max(np.abs(raw.ravel() - ref.images[0])) <= 0.5


def test_manifest_directory_entries_and_pairs(tmp_path):
    ref, qry = generate_synthetic_dataset(3, 5.0, 0.0, seed=0)
    write_synthetic_dataset(tmp_path, ref, qry)
    (tmp_path / "m.json").write_text(json.dumps(
        {"name": "dirs", "reference": "reference", "query": "query", "ground_truth": [[0, 2], [2, 0]]}))
    m = load_manifest(tmp_path / "m.json")
    assert len(m.query) == 3
    assert m.ground_truth_vector().tolist() == [2, -1, 0]


def test_unreadable_images_are_all_named(tmp_path):
    ref, qry = generate_synthetic_dataset(3, 5.0, 0.0, seed=0)
    path = write_synthetic_dataset(tmp_path, ref, qry)
    (tmp_path / "reference" / "00001.png").write_bytes(b"not a png")
    (tmp_path / "query" / "00002.png").unlink()
    with pytest.raises(DataError) as err:
        load_datasets(load_manifest(path))
    assert "00001.png" in str(err.value) and "00002.png" in str(err.value)


def test_manifest_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text(json.dumps({"name": "x"}))
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "bad.json")
