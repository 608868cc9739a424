"""Modular SNN: disjoint expert modules fused at query time.

The reference set is split into ``kappa``-sized disjoint partitions and one
expert module is trained per partition. Neurons are assigned to the place
they respond to most. Neurons that fire too much across the *whole*
reference set are masked as hyperactive. A query's similarity to place
``l`` is the total spike count of unmasked neurons assigned to ``l``,
summed over modules.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError
from .params import SimulationParams
from .seeding import derive_seed, rng_for
from .snn import SynapseState, simulate_presentation
from .validation import check_images, check_place_labels, resolve_params

logger = logging.getLogger(__name__)

SMALL_THETA_RANGE = (40.0, 100.0)
LARGE_THETA_RANGE = (600.0, 800.0)
LARGE_DATASET = 1000


@dataclass
class ModuleState:
    """One trained expert module.

    ``response_matrix`` is (k_e, kappa), columns ordered as
    ``trained_place_ids``. ``reference_totals`` holds each neuron's summed
    spikes over the full reference set once hyperactivity detection ran.
    """

    syn: SynapseState
    params: SimulationParams
    theta: np.ndarray
    trained_place_ids: np.ndarray
    assignments: np.ndarray
    inert: np.ndarray
    response_matrix: np.ndarray
    weight_seed: int | None
    shuffle_seed: int | None
    module_index: int = 0
    theta_threshold: float | None = None
    hyperactive_mask: np.ndarray | None = None
    reference_totals: np.ndarray | None = None
    silent_presentations: int = 0
    retried_presentations: int = 0
    epochs: int = 0

    @property
    def kappa(self) -> int:
        return len(self.trained_place_ids)

    @property
    def active(self) -> np.ndarray:
        """Neurons that take part in fusion."""
        mask = ~self.inert
        if self.hyperactive_mask is not None:
            mask &= ~self.hyperactive_mask
        return mask

    def assignment_slots(self) -> np.ndarray:
        """Position of each neuron's place within ``trained_place_ids``."""
        lookup = {int(p): i for i, p in enumerate(self.trained_place_ids)}
        return np.array([lookup[int(a)] for a in self.assignments], dtype=np.int64)


def partition_reference(place_ids, kappa: int, shuffle_seed: int | None) -> list[np.ndarray]:
    """Split place ids into consecutive chunks of ``kappa`` after an optional shuffle.

    ``shuffle_seed=None`` keeps traverse order. The last chunk may be short.
    """
    if kappa < 1:
        raise ConfigError("kappa must be at least 1")
    ids = np.asarray(place_ids, dtype=np.int64)
    if shuffle_seed is not None:
        ids = ids[np.random.default_rng(derive_seed(shuffle_seed, "partition")).permutation(len(ids))]
    return [ids[i:i + kappa] for i in range(0, len(ids), kappa)]


def assign_neurons(response_matrix, place_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Assign each neuron to its strongest place; lowest place wins ties.

    Returns ``(assignments, inert)``, where ``inert`` flags neurons that
    never fired during the assignment pass.
    """
    S = np.asarray(response_matrix)
    if S.ndim != 2:
        raise ValueError("response matrix must be 2-D (neurons x places)")
    ids = np.arange(S.shape[1]) if place_ids is None else np.asarray(place_ids, dtype=np.int64)
    if len(ids) != S.shape[1]:
        raise ValueError("one place id per response column required")
    # order columns by place id so argmax's first-hit rule picks the lowest id
    order = np.argsort(ids, kind="stable")
    best = order[np.argmax(S[:, order], axis=1)]
    inert = ~np.any(S > 0, axis=1)
    assignments = ids[best]
    assignments[inert] = ids.min()
    return assignments, inert


def _train_rng(weight_seed, shuffle_seed, module_index, role):
    return rng_for(weight_seed, role, shuffle_seed, module_index)


def train_module(images, place_ids, params: SimulationParams, epochs: int,
                 weight_seed: int | None, shuffle_seed: int | None,
                 module_index: int = 0) -> ModuleState:
    """Train one expert on its partition, then run the assignment pass.

    Weights are initialized from ``weight_seed`` alone, so all modules of a
    member start from the same values. Per-epoch presentation order comes
    from ``shuffle_seed`` (``None`` keeps the given order).
    """
    images = np.asarray(images, dtype=float)
    place_ids = np.asarray(place_ids, dtype=np.int64)
    if len(images) == 0:
        raise DataError("cannot train a module on an empty partition")
    if len(images) != len(place_ids):
        raise DataError("one place id per image required")
    syn = SynapseState.initial(params, rng_for(weight_seed, "weights"))
    theta = np.zeros(params.k_e)
    spikes_rng = _train_rng(weight_seed, shuffle_seed, module_index, "train-spikes")
    order_rng = None if shuffle_seed is None else rng_for(shuffle_seed, "order", module_index)
    silent = retried = 0
    for epoch in range(epochs):
        order = np.arange(len(images)) if order_rng is None else order_rng.permutation(len(images))
        for i in order:
            result = simulate_presentation(syn, theta, images[i], params, True, spikes_rng)
            silent += result.silent
            retried += result.retries > 0
        logger.debug("module %d epoch %d done", module_index, epoch)
    if silent:
        logger.warning("module %d: %d silent presentations", module_index, silent)

    assign_rng = _train_rng(weight_seed, shuffle_seed, module_index, "assign-spikes")
    S = np.empty((params.k_e, len(images)), dtype=np.int64)
    for j, image in enumerate(images):
        S[:, j] = simulate_presentation(syn, theta, image, params, False, assign_rng).counts
    assignments, inert = assign_neurons(S, place_ids)
    return ModuleState(
        syn=SynapseState(syn.w_pe, np.zeros(params.k_p), np.zeros(params.k_e)),
        params=params, theta=theta, trained_place_ids=place_ids.copy(),
        assignments=assignments, inert=inert, response_matrix=S,
        weight_seed=weight_seed, shuffle_seed=shuffle_seed, module_index=module_index,
        silent_presentations=silent, retried_presentations=retried, epochs=epochs,
    )


def draw_theta_threshold(theta_seed: int | None, n_places: int,
                         theta_range: tuple[float, float] | None = None) -> float:
    """Uniform draw of the hyperactivity threshold.

    Without an explicit range, (40, 100) for fewer than 1000 places and
    (600, 800) otherwise.
    """
    if theta_range is None:
        theta_range = SMALL_THETA_RANGE if n_places < LARGE_DATASET else LARGE_THETA_RANGE
    lo, hi = theta_range
    if hi < lo:
        raise ConfigError(f"bad theta range {theta_range}")
    return float(rng_for(theta_seed, "theta").uniform(lo, hi))


def reference_response_totals(module: ModuleState, reference_images,
                              subsample: float | None = None) -> np.ndarray:
    """Per-neuron spike totals over the reference images, learning off.

    ``subsample`` (a fraction in (0, 1]) evaluates only a seeded subset of
    the images; it is a cost knob and off by default.
    """
    images = np.asarray(reference_images, dtype=float)
    idx = np.arange(len(images))
    if subsample is not None:
        if not 0 < subsample <= 1:
            raise ConfigError("subsample must lie in (0, 1]")
        n = max(1, int(math.ceil(subsample * len(images))))
        pick = _train_rng(module.weight_seed, module.shuffle_seed, module.module_index, "hyper-subsample")
        idx = np.sort(pick.choice(len(images), n, replace=False))
    rng = _train_rng(module.weight_seed, module.shuffle_seed, module.module_index, "hyper-spikes")
    totals = np.zeros(module.params.k_e, dtype=np.int64)
    for i in idx:
        totals += simulate_presentation(module.syn, module.theta, images[i], module.params, False, rng).counts
    return totals


def detect_hyperactive(module: ModuleState, full_reference, theta_threshold: float,
                       subsample: float | None = None) -> np.ndarray:
    """Mask neurons whose total response to every reference image reaches the threshold.

    Only reference data is used. The module is updated in place and the
    mask is returned.
    """
    totals = reference_response_totals(module, full_reference, subsample=subsample)
    module.reference_totals = totals
    module.theta_threshold = float(theta_threshold)
    module.hyperactive_mask = totals >= theta_threshold
    return module.hyperactive_mask


def module_response(module: ModuleState, query_image, rng: np.random.Generator) -> np.ndarray:
    """Spike sums of unmasked neurons per place, ordered as ``trained_place_ids``."""
    counts = simulate_presentation(module.syn, module.theta, query_image, module.params, False, rng).counts
    return fuse_counts(module, counts)


def fuse_counts(module: ModuleState, counts) -> np.ndarray:
    counts = np.asarray(counts)
    out = np.zeros(module.kappa)
    np.add.at(out, module.assignment_slots()[module.active], counts[module.active])
    return out


def query_rng(query_seed: int | None, module_index: int, query_index: int) -> np.random.Generator:
    # independent of the ensemble member so identical members see identical input
    return rng_for(query_seed, "query", module_index, query_index)


def modular_column_from_counts(modules: Sequence[ModuleState], n_places: int, counts) -> np.ndarray:
    """Fuse per-module spike tallies into one similarity vector over all places.

    Partitions are disjoint, so each module fills its own slots.
    """
    column = np.zeros(n_places)
    for module, c in zip(modules, counts, strict=True):
        column[module.trained_place_ids] = fuse_counts(module, c)
    return column


def modular_similarity_column(modules: Sequence[ModuleState], n_places: int, query_image,
                              query_seed: int | None, query_index: int = 0) -> np.ndarray:
    """Length-``n_places`` similarity vector for one query.

    Each module codes the query with its own stream keyed on
    (module index, query index), so module evaluation order is irrelevant.
    """
    counts = [
        simulate_presentation(m.syn, m.theta, query_image, m.params, False,
                              query_rng(query_seed, m.module_index, query_index)).counts
        for m in modules
    ]
    return modular_column_from_counts(modules, n_places, counts)


def predict_from_column(column) -> int:
    """Best place; ``argmax`` keeps the lowest index on ties."""
    return int(np.argmax(np.asarray(column)))


# -- worker entry points (module level so joblib can pickle them) -----------

def _fit_module_task(images, place_ids, reference_images, params, epochs, weight_seed,
                     shuffle_seed, module_index, theta_threshold, subsample):
    module = train_module(images, place_ids, params, epochs, weight_seed, shuffle_seed, module_index)
    detect_hyperactive(module, reference_images, theta_threshold, subsample)
    return module


def _similarity_task(modules, n_places, X, query_seed, offset):
    return np.stack([modular_similarity_column(modules, n_places, x, query_seed, offset + i)
                     for i, x in enumerate(X)])


def _chunks(n: int, n_chunks: int) -> list[slice]:
    n_chunks = max(1, min(n, n_chunks))
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _n_workers(n_jobs) -> int:
    from joblib import effective_n_jobs
    return effective_n_jobs(n_jobs)


class ModularSNN(ClassifierMixin, BaseEstimator):
    """Modular spiking place recognizer.

    ``fit`` takes reference images (one flattened image per row) with
    optional place labels, ``decision_function`` returns per-place spike
    sums for each query and ``predict`` the best place label.

    Parameters
    ----------
    kappa : int
        Places per expert module.
    epochs : int
        Training epochs per module.
    params : SimulationParams or dict, optional
        Module constants; a dict overrides individual defaults.
    weight_seed, shuffle_seed, theta_seed, query_seed : int or None
        Seeds for weight initialization, partition/presentation order,
        the hyperactivity threshold draw, and query rate coding.
        ``shuffle_seed=None`` keeps traverse order.
    theta_range : (float, float), optional
        Hyperactivity threshold range; default depends on place count.
    theta_threshold : float, optional
        Fixed threshold, bypassing the random draw.
    hyperactive_subsample : float, optional
        Fraction of reference images used for hyperactivity detection.
    n_jobs : int, optional
        joblib workers; results do not depend on it.
    """

    def __init__(self, kappa=25, epochs=30, params=None, weight_seed=0, shuffle_seed=None,
                 theta_seed=0, query_seed=0, theta_range=None, theta_threshold=None,
                 hyperactive_subsample=None, n_jobs=None):
        self.kappa = kappa
        self.epochs = epochs
        self.params = params
        self.weight_seed = weight_seed
        self.shuffle_seed = shuffle_seed
        self.theta_seed = theta_seed
        self.query_seed = query_seed
        self.theta_range = theta_range
        self.theta_threshold = theta_threshold
        self.hyperactive_subsample = hyperactive_subsample
        self.n_jobs = n_jobs

    # fitting is split in two so ensembles can pool every module into one job list
    def _fit_tasks(self, X, y=None):
        params = resolve_params(self.params)
        X = check_images(X, params.k_p)
        self.classes_, place_ids = check_place_labels(y, len(X))
        self.params_ = params
        self.n_places_ = len(X)
        self.n_features_in_ = params.k_p
        if self.theta_threshold is not None:
            self.theta_threshold_ = float(self.theta_threshold)
        else:
            self.theta_threshold_ = draw_theta_threshold(self.theta_seed, self.n_places_, self.theta_range)
        self.partitions_ = partition_reference(place_ids, self.kappa, self.shuffle_seed)
        by_id = np.empty_like(X)
        by_id[place_ids] = X
        return [
            delayed(_fit_module_task)(by_id[part], part, by_id, params, self.epochs, self.weight_seed,
                                      self.shuffle_seed, i, self.theta_threshold_,
                                      self.hyperactive_subsample)
            for i, part in enumerate(self.partitions_)
        ]

    def _set_modules(self, modules):
        self.modules_ = list(modules)
        return self

    def fit(self, X, y=None):
        tasks = self._fit_tasks(X, y)
        return self._set_modules(Parallel(n_jobs=self.n_jobs)(tasks))

    def similarity_columns(self, X, query_offset: int = 0) -> np.ndarray:
        """Per-query similarity vectors, shape (n_queries, n_places).

        Query ``i`` is rate coded with a stream keyed on ``query_offset + i``.
        """
        check_is_fitted(self, "modules_")
        X = check_images(X, self.params_.k_p)
        chunks = _chunks(len(X), _n_workers(self.n_jobs))
        parts = Parallel(n_jobs=self.n_jobs, max_nbytes=None)(
            delayed(_similarity_task)(self.modules_, self.n_places_, X[s], self.query_seed,
                                      query_offset + s.start)
            for s in chunks)
        return np.concatenate(parts) if parts else np.zeros((0, self.n_places_))

    def decision_function(self, X) -> np.ndarray:
        return self.similarity_columns(X)

    def similarity_matrix(self, X) -> np.ndarray:
        """Reference x query similarity grid."""
        return self.similarity_columns(X).T

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    @property
    def n_modules_(self) -> int:
        check_is_fitted(self, "modules_")
        return len(self.modules_)

    def set_theta_threshold(self, theta_threshold: float) -> "ModularSNN":
        """Re-mask hyperactive neurons from stored reference totals."""
        check_is_fitted(self, "modules_")
        self.theta_threshold_ = float(theta_threshold)
        for m in self.modules_:
            m.theta_threshold = self.theta_threshold_
            m.hyperactive_mask = m.reference_totals >= self.theta_threshold_
        return self

    def training_summary(self) -> dict:
        check_is_fitted(self, "modules_")
        return {
            "modules": len(self.modules_),
            "theta_threshold": self.theta_threshold_,
            "silent_presentations": [int(m.silent_presentations) for m in self.modules_],
            "hyperactive": [int(m.hyperactive_mask.sum()) for m in self.modules_],
            "inert": [int(m.inert.sum()) for m in self.modules_],
        }
