import json

import numpy as np
import pytest

from spikeplace.ensemble import EnsembleModularSNN
from spikeplace.exceptions import ArtifactError, DataError
from spikeplace.modular import ModularSNN, train_module
from spikeplace.persistence import (load_ensemble, load_matrix, load_modular, load_module, save_ensemble,
                                    save_matrix, save_modular, save_module)
from spikeplace.snn import simulate_presentation


def probe(module, image):
    return simulate_presentation(module.syn, module.theta, image, module.params, False,
                                 np.random.default_rng(123)).counts


def assert_same_module(a, b):
    assert np.array_equal(a.syn.w_pe, b.syn.w_pe)
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.assignments, b.assignments)
    assert np.array_equal(a.inert, b.inert)
    assert np.array_equal(a.response_matrix, b.response_matrix)
    assert a.params == b.params
    assert (a.weight_seed, a.shuffle_seed, a.module_index) == (b.weight_seed, b.shuffle_seed, b.module_index)
    if a.hyperactive_mask is None:
        assert b.hyperactive_mask is None
    else:
        assert np.array_equal(a.hyperactive_mask, b.hyperactive_mask)


def test_module_roundtrip_gives_identical_counts(tmp_path, toy_module, tiny_synthetic):
    save_module(toy_module, tmp_path / "m")
    loaded = load_module(tmp_path / "m")
    assert_same_module(toy_module, loaded)
    img = tiny_synthetic[1][0]
    assert np.array_equal(probe(toy_module, img), probe(loaded, img))


def test_untrained_module_roundtrips(tmp_path, small_params, tiny_synthetic):
    module = train_module(tiny_synthetic[0][:2], np.array([0, 1]), small_params, 0, None, None)
    save_module(module, tmp_path / "u")
    assert_same_module(module, load_module(tmp_path / "u"))


def test_corrupted_blob_byte_is_detected(tmp_path, toy_module):
    save_module(toy_module, tmp_path / "m")
    blob = tmp_path / "m" / "w_pe.bin"
    data = bytearray(blob.read_bytes())
    data[100] ^= 0x01
    blob.write_bytes(bytes(data))
    with pytest.raises(ArtifactError):
        load_module(tmp_path / "m")


def test_truncated_blob_is_detected(tmp_path, toy_module):
    save_module(toy_module, tmp_path / "m")
    blob = tmp_path / "m" / "theta.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(ArtifactError):
        load_module(tmp_path / "m")


def test_edited_metadata_is_detected(tmp_path, toy_module):
    save_module(toy_module, tmp_path / "m")
    doc_path = tmp_path / "m" / "module.json"
    doc = json.loads(doc_path.read_text())
    doc["assignments"][0] = 3 - doc["assignments"][0]
    doc_path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_module(tmp_path / "m")


def test_version_mismatch_is_rejected(tmp_path, toy_module):
    save_module(toy_module, tmp_path / "m")
    doc_path = tmp_path / "m" / "module.json"
    doc = json.loads(doc_path.read_text())
    doc["format_version"] = 999
    doc_path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_module(tmp_path / "m")


@pytest.fixture(scope="module")
def tiny_ensemble(small_params, tiny_synthetic):
    X, _ = tiny_synthetic
    return EnsembleModularSNN(member_count=2, seed=3, kappa=4, epochs=1, params=small_params).fit(X)


def test_modular_and_ensemble_roundtrip(tmp_path, tiny_ensemble, tiny_synthetic):
    _, Q = tiny_synthetic
    member = tiny_ensemble.members_[0]
    save_modular(member, tmp_path / "mod")
    again = load_modular(tmp_path / "mod")
    assert isinstance(again, ModularSNN)
    assert np.array_equal(member.similarity_columns(Q), again.similarity_columns(Q))

    save_ensemble(tiny_ensemble, tmp_path / "ens", extra={"note": "x"})
    loaded = load_ensemble(tmp_path / "ens")
    assert np.array_equal(tiny_ensemble.similarity_columns(Q), loaded.similarity_columns(Q))
    assert loaded.get_params()["member_count"] == 2


def test_ensemble_save_is_byte_stable(tmp_path, tiny_ensemble):
    save_ensemble(tiny_ensemble, tmp_path / "a")
    save_ensemble(load_ensemble(tmp_path / "a"), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_partition_tampering_is_detected(tmp_path, tiny_ensemble):
    save_modular(tiny_ensemble.members_[0], tmp_path / "mod")
    index = tmp_path / "mod" / "index.json"
    doc = json.loads(index.read_text())
    doc["modules"][0]["place_ids"][0] += 1
    index.write_text(json.dumps(doc))
    with pytest.raises(ArtifactError):
        load_modular(tmp_path / "mod")


@pytest.mark.parametrize("suffix", [".json", ".csv"])
def test_matrix_roundtrip(tmp_path, suffix):
    M = np.random.default_rng(0).normal(size=(5, 7))
    path = save_matrix(tmp_path / f"m{suffix}", M, method="demo")
    back, header = load_matrix(path, with_header=True)
    assert np.array_equal(M, back)
    assert header["shape"] == [5, 7]


def test_matrix_corruption(tmp_path):
    path = save_matrix(tmp_path / "m.json", np.eye(3))
    blob = path.with_suffix(".bin")
    data = bytearray(blob.read_bytes())
    data[7] ^= 0x40
    blob.write_bytes(bytes(data))
    with pytest.raises(DataError):
        load_matrix(path)
