import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from spikeplace.data import PatchNormalizer, generate_synthetic_dataset
from spikeplace.exceptions import ConfigError, DataError
from spikeplace.modular import (ModularSNN, assign_neurons, detect_hyperactive, draw_theta_threshold,
                                fuse_counts, modular_column_from_counts, modular_similarity_column,
                                module_response, partition_reference, predict_from_column, query_rng,
                                train_module)
from spikeplace.params import SimulationParams
from spikeplace.seeding import rng_for
from spikeplace.snn import SynapseState, simulate_presentation


# -- partitions ---------------------------------------------------------------

def test_partition_sizes():
    parts = partition_reference(np.arange(100), 25, shuffle_seed=1)
    assert [len(p) for p in parts] == [25, 25, 25, 25]
    assert [len(p) for p in partition_reference(np.arange(10), 25, 1)] == [10]
    assert [len(p) for p in partition_reference(np.arange(11), 5, None)] == [5, 5, 1]


def test_partition_determinism_and_identity():
    a = partition_reference(np.arange(40), 7, 5)
    b = partition_reference(np.arange(40), 7, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    ident = partition_reference(np.arange(40), 10, None)
    assert np.array_equal(np.concatenate(ident), np.arange(40))
    with pytest.raises(ConfigError):
        partition_reference(np.arange(4), 0, None)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 300), kappa=st.integers(1, 50), seed=st.one_of(st.none(), st.integers(0, 2**40)))
def test_partitions_cover_disjointly(n, kappa, seed):
    parts = partition_reference(np.arange(n), kappa, seed)
    assert len(parts) == -(-n // kappa)
    assert all(len(p) == kappa for p in parts[:-1]) and 1 <= len(parts[-1]) <= kappa
    assert np.array_equal(np.sort(np.concatenate(parts)), np.arange(n))


# -- assignment ---------------------------------------------------------------

def test_assignment_examples():
    a, inert = assign_neurons(np.array([[0, 7, 3]]), [4, 9, 13])
    assert a.tolist() == [9] and not inert[0]
    a, _ = assign_neurons(np.array([[5, 5]]), [8, 3])
    assert a.tolist() == [3]
    a, inert = assign_neurons(np.zeros((1, 3)), [6, 2, 9])
    assert inert[0] and a[0] == 2


def test_assignment_matches_brute_force_scan():
    rng = np.random.default_rng(0)
    for _ in range(20):
        S = rng.integers(0, 6, (20, 5))
        ids = rng.permutation(50)[:5]
        got, inert = assign_neurons(S, ids)
        for e in range(20):
            best_val, best_id = -1, None
            for j in range(5):
                if S[e, j] > best_val or (S[e, j] == best_val and ids[j] < best_id):
                    best_val, best_id = S[e, j], ids[j]
            assert got[e] == best_id
            assert inert[e] == (S[e].max() == 0)


# -- training -------------------------------------------------------------------

def test_two_place_module_assigns_within_partition(small_params, tiny_synthetic):
    module = train_module(tiny_synthetic[0][:2], np.array([5, 7]), small_params, 30, 0, 0)
    assert set(module.assignments.tolist()) <= {5, 7}
    assert module.response_matrix.shape == (small_params.k_e, 2)


def test_zero_epochs_keeps_initial_weights(small_params, tiny_synthetic):
    module = train_module(tiny_synthetic[0][:3], np.arange(3), small_params, 0, 11, None)
    init = SynapseState.initial(small_params, rng_for(11, "weights"))
    assert np.array_equal(module.syn.w_pe, init.w_pe)
    assert not module.theta.any()
    assert module.response_matrix.shape == (small_params.k_e, 3)


def test_training_is_deterministic(small_params, tiny_synthetic):
    runs = [train_module(tiny_synthetic[0][:3], np.arange(3), small_params, 2, 4, 9) for _ in range(2)]
    a, b = runs
    assert np.array_equal(a.syn.w_pe, b.syn.w_pe)
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.response_matrix, b.response_matrix)


def test_empty_partition_rejected(small_params):
    with pytest.raises(DataError):
        train_module(np.zeros((0, 784)), np.zeros(0, dtype=int), small_params, 1, 0, 0)


# -- hyperactivity ----------------------------------------------------------------

def test_threshold_boundaries(toy_module, tiny_synthetic):
    X = tiny_synthetic[0]
    mask = detect_hyperactive(toy_module, X, 0.0)
    assert mask.all()
    resp = module_response(toy_module, X[0], np.random.default_rng(0))
    assert not resp.any()
    mask = detect_hyperactive(toy_module, X, np.finfo(float).max)
    assert not mask.any()


def test_strongly_wired_neuron_is_flagged(small_params, tiny_synthetic):
    X = tiny_synthetic[0]
    module = train_module(X[:3], np.arange(3), small_params, 3, 2, 2)
    strongest = int(np.argmax(module.syn.w_pe.sum(axis=0)))
    module.syn.w_pe[:, strongest] = np.clip(module.syn.w_pe[:, strongest] * 20, 0, 1)
    detect_hyperactive(module, X, np.inf)
    totals = module.reference_totals
    others = np.delete(totals, strongest)
    assert totals[strongest] > others.max()
    theta = (max(np.median(totals), others.max()) + totals[strongest]) / 2
    mask = detect_hyperactive(module, X, theta)
    assert mask.tolist() == [e == strongest for e in range(small_params.k_e)]


def test_raising_threshold_never_grows_mask(toy_module, tiny_synthetic):
    detect_hyperactive(toy_module, tiny_synthetic[0], 0.0)
    totals = toy_module.reference_totals
    prev = None
    for t in np.linspace(0, totals.max() + 1, 30):
        mask = totals >= t
        if prev is not None:
            assert not np.any(mask & ~prev)
        prev = mask


def test_theta_draw_ranges():
    small = [draw_theta_threshold(s, 999) for s in range(50)]
    large = [draw_theta_threshold(s, 1000) for s in range(50)]
    assert all(40 <= t < 100 for t in small) and all(600 <= t < 800 for t in large)
    assert draw_theta_threshold(3, 10) == draw_theta_threshold(3, 10)
    assert draw_theta_threshold(0, 10, (5.0, 5.0)) == 5.0
    with pytest.raises(ConfigError):
        draw_theta_threshold(0, 10, (9.0, 1.0))


# -- fusion -----------------------------------------------------------------------

def test_response_prefers_the_presented_place():
    p = SimulationParams().replace(k_e=50, k_i=50)
    r, _ = generate_synthetic_dataset(5, 0.0, 0.0, seed=8)
    X = PatchNormalizer().transform(r.images)
    ids = np.arange(10, 15)
    module = train_module(X, ids, p, 15, 3, 3)
    detect_hyperactive(module, X, np.inf)
    hits = 0
    for probe in range(25):
        i = probe % 5
        resp = module_response(module, X[i], np.random.default_rng(1000 + probe))
        hits += module.trained_place_ids[predict_from_column(resp)] == ids[i]
    assert hits >= 0.9 * 25


def test_response_is_deterministic(toy_module, tiny_synthetic):
    a = module_response(toy_module, tiny_synthetic[1][0], np.random.default_rng(4))
    b = module_response(toy_module, tiny_synthetic[1][0], np.random.default_rng(4))
    assert np.array_equal(a, b)


def brute_force_column(modules, n_places, counts):
    col = np.zeros(n_places)
    for module, c in zip(modules, counts):
        for e in range(len(c)):
            if module.inert[e]:
                continue
            if module.hyperactive_mask is not None and module.hyperactive_mask[e]:
                continue
            col[module.assignments[e]] += c[e]
    return col


@pytest.fixture(scope="module")
def two_module_model(small_params, tiny_synthetic):
    X, _ = tiny_synthetic
    return ModularSNN(kappa=4, epochs=10, params=small_params, theta_threshold=np.inf).fit(X)


def test_column_matches_brute_force_and_order(two_module_model, tiny_synthetic):
    model = two_module_model
    q = tiny_synthetic[1][5]
    col = modular_similarity_column(model.modules_, 8, q, model.query_seed, 3)
    counts = []
    for m in model.modules_:
        counts.append(simulate_presentation(m.syn, m.theta, q, m.params, False,
                                            query_rng(model.query_seed, m.module_index, 3)).counts)
    assert np.array_equal(col, brute_force_column(model.modules_, 8, counts))
    rev = modular_similarity_column(model.modules_[::-1], 8, q, model.query_seed, 3)
    assert np.array_equal(col, rev)


def test_single_module_column_is_zero_extended(two_module_model, tiny_synthetic):
    m = two_module_model.modules_[1]
    q = tiny_synthetic[1][2]
    col = modular_similarity_column([m], 8, q, 0, 0)
    resp = module_response(m, q, query_rng(0, m.module_index, 0))
    expected = np.zeros(8)
    expected[m.trained_place_ids] = resp
    assert np.array_equal(col, expected)


def test_query_lands_in_its_module(two_module_model, tiny_synthetic):
    model = two_module_model
    second = set(model.modules_[1].trained_place_ids.tolist())
    Q = np.repeat(tiny_synthetic[0][sorted(second)], 5, axis=0)
    cols = model.similarity_columns(Q)
    hits = sum(int(np.argmax(c)) in second for c in cols)
    assert hits >= 0.9 * len(Q)


def test_unmasked_and_empty_mask_agree(two_module_model, tiny_synthetic):
    modules = two_module_model.modules_
    counts = [np.arange(m.params.k_e) % 4 for m in modules]
    with_mask = modular_column_from_counts(modules, 8, counts)
    saved = [m.hyperactive_mask for m in modules]
    try:
        for m in modules:
            m.hyperactive_mask = None
        without = modular_column_from_counts(modules, 8, counts)
    finally:
        for m, s in zip(modules, saved):
            m.hyperactive_mask = s
    assert not any(s.any() for s in saved)
    assert np.array_equal(with_mask, without)
    assert predict_from_column(with_mask) == predict_from_column(without)


def test_fuse_counts_uses_local_slots(toy_module):
    counts = np.ones(toy_module.params.k_e, dtype=int)
    fused = fuse_counts(toy_module, counts)
    assert fused.sum() == toy_module.active.sum()


# -- estimator surface ---------------------------------------------------------------

def test_estimator_api(two_module_model, tiny_synthetic):
    model = two_module_model
    assert model.n_modules_ == 2
    ids = np.concatenate([m.trained_place_ids for m in model.modules_])
    assert np.array_equal(np.sort(ids), np.arange(8))
    X, Q = tiny_synthetic
    S = model.similarity_matrix(Q)
    assert S.shape == (8, 8)
    assert np.array_equal(model.decision_function(Q), S.T)
    assert np.array_equal(model.predict(Q), np.argmax(S, axis=0))
    assert 0.0 <= model.score(Q, np.arange(8)) <= 1.0
    twin = clone(model)
    assert twin.get_params() == model.get_params() and not hasattr(twin, "modules_")
    summary = model.training_summary()
    assert summary["modules"] == 2


def test_custom_labels_and_worker_independence(small_params, tiny_synthetic):
    X, Q = tiny_synthetic
    labels = np.array([f"p{i}" for i in range(8)])
    kw = dict(kappa=3, epochs=1, params=small_params, shuffle_seed=5)
    a = ModularSNN(n_jobs=1, **kw).fit(X, labels)
    b = ModularSNN(n_jobs=2, **kw).fit(X, labels)
    assert a.n_modules_ == 3
    assert np.array_equal(a.similarity_columns(Q), b.similarity_columns(Q))
    assert set(a.predict(Q)) <= set(labels)


def test_input_validation(small_params):
    model = ModularSNN(kappa=2, epochs=0, params=small_params)
    with pytest.raises(DataError):
        model.fit(np.zeros((3, 10)))
    with pytest.raises(DataError):
        model.fit(np.full((3, 784), 300.0))
    with pytest.raises(DataError):
        model.fit(np.zeros((3, 784)), [1, 1, 2])
    with pytest.raises(ConfigError):
        ModularSNN(params={"dt": -1.0}).fit(np.zeros((2, 784)))


def test_set_theta_threshold_remasks(two_module_model):
    model = two_module_model
    try:
        model.set_theta_threshold(0.0)
        assert all(m.hyperactive_mask.all() for m in model.modules_)
    finally:
        model.set_theta_threshold(np.inf)
    assert not any(m.hyperactive_mask.any() for m in model.modules_)
