"""Ensembles of Modular SNNs.

Members are independent Modular SNNs trained on the full reference set,
diversified by weight initialization and presentation order. Their raw
spike-sum similarity vectors are added elementwise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from joblib import Parallel
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError
from .modular import ModularSNN
from .seeding import derive_seed


@dataclass(frozen=True)
class EnsembleConfig:
    """Per-member seeds plus the randomization switches that produced them."""

    weight_seeds: tuple[int, ...]
    shuffle_seeds: tuple[int | None, ...]
    theta_seeds: tuple[int, ...]
    query_seed: int
    randomize_weights: bool = True
    shuffle_order: bool = True

    def __post_init__(self) -> None:
        m = len(self.weight_seeds)
        if m < 1:
            raise ConfigError("an ensemble needs at least one member")
        if len(self.shuffle_seeds) != m or len(self.theta_seeds) != m:
            raise ConfigError("one seed of each kind per member required")
        if not self.randomize_weights and len(set(self.weight_seeds)) != 1:
            raise ConfigError("randomize_weights=False requires equal weight seeds")
        if not self.shuffle_order and any(s is not None for s in self.shuffle_seeds):
            raise ConfigError("shuffle_order=False requires identity ordering (None seeds)")

    @property
    def member_count(self) -> int:
        return len(self.weight_seeds)

    @classmethod
    def from_master_seed(cls, seed: int, member_count: int, randomize_weights: bool = True,
                         shuffle_order: bool = True) -> "EnsembleConfig":
        """Split one master seed into per-member seeds.

        With both switches off the members are exact copies, including the
        hyperactivity threshold draw.
        """
        if member_count < 1:
            raise ConfigError("member_count must be at least 1")
        members = range(member_count)
        identical = not randomize_weights and not shuffle_order
        return cls(
            weight_seeds=tuple(derive_seed(seed, "weights", m if randomize_weights else 0) for m in members),
            shuffle_seeds=tuple(derive_seed(seed, "shuffle", m) if shuffle_order else None for m in members),
            theta_seeds=tuple(derive_seed(seed, "theta", 0 if identical else m) for m in members),
            query_seed=derive_seed(seed, "query"),
            randomize_weights=randomize_weights,
            shuffle_order=shuffle_order,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def make_member(config: EnsembleConfig, m: int, **module_kwargs) -> ModularSNN:
    return ModularSNN(weight_seed=config.weight_seeds[m], shuffle_seed=config.shuffle_seeds[m],
                      theta_seed=config.theta_seeds[m], query_seed=config.query_seed, **module_kwargs)


def train_ensemble(X, config: EnsembleConfig, y=None, n_jobs=None, **module_kwargs) -> list[ModularSNN]:
    """Fit every member; all (member, module) jobs share one worker pool."""
    members = [make_member(config, m, n_jobs=n_jobs, **module_kwargs) for m in range(config.member_count)]
    tasks, spans = [], []
    for member in members:
        member_tasks = member._fit_tasks(X, y)
        spans.append((len(tasks), len(tasks) + len(member_tasks)))
        tasks.extend(member_tasks)
    modules = Parallel(n_jobs=n_jobs)(tasks)
    for member, (a, b) in zip(members, spans):
        member._set_modules(modules[a:b])
    return members


def ensemble_similarity_column(member_columns) -> np.ndarray:
    """Elementwise sum of the members' similarity vectors (or matrices)."""
    cols = [np.asarray(c, dtype=float) for c in member_columns]
    if not cols:
        raise ValueError("no member columns")
    out = np.zeros_like(cols[0])
    for c in cols:
        out = out + c
    return out


class EnsembleModularSNN(ClassifierMixin, BaseEstimator):
    """Ensemble of independently seeded :class:`ModularSNN` members.

    All member seeds derive from ``seed``. ``randomize_weights`` and
    ``shuffle_order`` switch the two diversity sources on or off.
    Remaining keyword parameters are forwarded to every member.
    """

    def __init__(self, member_count=3, seed=0, randomize_weights=True, shuffle_order=True,
                 kappa=25, epochs=30, params=None, theta_range=None, theta_threshold=None,
                 hyperactive_subsample=None, n_jobs=None):
        self.member_count = member_count
        self.seed = seed
        self.randomize_weights = randomize_weights
        self.shuffle_order = shuffle_order
        self.kappa = kappa
        self.epochs = epochs
        self.params = params
        self.theta_range = theta_range
        self.theta_threshold = theta_threshold
        self.hyperactive_subsample = hyperactive_subsample
        self.n_jobs = n_jobs

    def _member_kwargs(self) -> dict:
        return dict(kappa=self.kappa, epochs=self.epochs, params=self.params,
                    theta_range=self.theta_range, theta_threshold=self.theta_threshold,
                    hyperactive_subsample=self.hyperactive_subsample, n_jobs=self.n_jobs)

    def fit(self, X, y=None):
        self.config_ = EnsembleConfig.from_master_seed(self.seed, self.member_count,
                                                       self.randomize_weights, self.shuffle_order)
        self.members_ = train_ensemble(X, self.config_, y, **self._member_kwargs())
        self._finish()
        return self

    @classmethod
    def from_members(cls, members, config: EnsembleConfig | None = None, **kwargs) -> "EnsembleModularSNN":
        """Wrap already fitted members (e.g. loaded from disk)."""
        est = cls(member_count=len(members), **kwargs)
        est.members_ = list(members)
        est.config_ = config
        est._finish()
        return est

    def _finish(self) -> None:
        first = self.members_[0]
        for m in self.members_[1:]:
            if m.n_places_ != first.n_places_ or not np.array_equal(m.classes_, first.classes_):
                raise ConfigError("ensemble members cover different place sets")
        self.classes_ = first.classes_
        self.n_places_ = first.n_places_
        self.n_features_in_ = first.n_features_in_

    def member_similarity_columns(self, X, query_offset: int = 0) -> list[np.ndarray]:
        check_is_fitted(self, "members_")
        return [m.similarity_columns(X, query_offset) for m in self.members_]

    def similarity_columns(self, X, query_offset: int = 0) -> np.ndarray:
        return ensemble_similarity_column(self.member_similarity_columns(X, query_offset))

    def decision_function(self, X) -> np.ndarray:
        return self.similarity_columns(X)

    def similarity_matrix(self, X) -> np.ndarray:
        return self.similarity_columns(X).T

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
