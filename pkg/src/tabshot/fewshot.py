"""Episodic N-way K-shot classification on top of a conv backbone.

Two heads are available:

* ``proto`` - class prototypes are support-latent means and a query is
  scored by the negative squared Euclidean distance to each prototype.
* ``maml`` - a linear layer, zero initialised, is fitted to the support
  latents with a few full-batch gradient steps and then applied to the
  queries.  Meta-training is first order: the adapted layer is held fixed
  while the query loss is pushed back into the backbone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import backbone as bb
from .exceptions import CapacityError, DegenerateInputError, DimensionError, TrainingDivergedError
from .metrics import accuracy, auc_binary, auc_macro_ovr

HEAD_KINDS = ("proto", "maml")


@dataclass(frozen=True)
class EpisodeSpec:
    way: int
    shot: int
    query: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.way < 2 or self.shot < 1 or self.query < 1:
            raise ValueError(f"need way >= 2, shot >= 1, query >= 1; got {self}")

    @property
    def support_size(self) -> int:
        return self.way * self.shot


class ImagePool:
    """Labeled images an episode sampler draws from.

    ``images`` may be any array indexable by an integer vector (a memmap
    works); ``ids`` default to positions and identify source rows.
    """

    def __init__(self, images, labels, ids=None):
        self.images = images
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.labels) != len(images):
            raise DimensionError("one label per image required")
        self.ids = np.arange(len(self.labels)) if ids is None else np.asarray(ids, dtype=np.int64)
        self.classes = np.unique(self.labels)
        self._by_class = {int(c): np.flatnonzero(self.labels == c) for c in self.classes}

    def __len__(self):
        return len(self.labels)

    def indices_of(self, cls: int) -> np.ndarray:
        return self._by_class[int(cls)]


@dataclass
class Episode:
    spec: EpisodeSpec
    pool: ImagePool = field(repr=False)
    classes: np.ndarray  # original class id for each episode label 0..way-1
    support_index: np.ndarray
    support_labels: np.ndarray
    query_index: np.ndarray
    query_labels: np.ndarray

    @property
    def support_ids(self):
        return self.pool.ids[self.support_index]

    @property
    def query_ids(self):
        return self.pool.ids[self.query_index]

    def support_images(self):
        return np.asarray(self.pool.images[self.support_index])

    def query_images(self):
        return np.asarray(self.pool.images[self.query_index])

    def manifest(self) -> dict:
        return {
            "classes": self.classes.tolist(),
            "support_ids": self.support_ids.tolist(),
            "query_ids": self.query_ids.tolist(),
        }


def episode_rng(master_seed: int, episode_index: Optional[int] = None) -> np.random.Generator:
    if episode_index is None:
        return np.random.default_rng(master_seed)
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(episode_index)]))


def sample_episode(pool: ImagePool, spec: EpisodeSpec, episode_index: Optional[int] = None) -> Episode:
    """Draw classes, then supports and queries, all without replacement.

    The draw depends only on ``(spec.seed, episode_index)``.
    """
    need = spec.shot + spec.query
    if len(pool.classes) < spec.way:
        raise CapacityError(f"pool has {len(pool.classes)} classes, episode needs way={spec.way}")
    for c in pool.classes:
        n = len(pool.indices_of(c))
        if n < need:
            raise CapacityError(f"class {int(c)} has {n} items, need shot+query={need}")
    rng = episode_rng(spec.seed, episode_index)
    classes = rng.choice(pool.classes, size=spec.way, replace=False)
    s_idx, q_idx = [], []
    for c in classes:
        pick = rng.choice(pool.indices_of(c), size=need, replace=False)
        s_idx.append(pick[:spec.shot])
        q_idx.append(pick[spec.shot:])
    return Episode(
        spec,
        pool,
        classes,
        np.concatenate(s_idx),
        np.repeat(np.arange(spec.way), spec.shot),
        np.concatenate(q_idx),
        np.repeat(np.arange(spec.way), spec.query),
    )


def sample_episodes(pool: ImagePool, spec: EpisodeSpec, n_episodes: int) -> list:
    return [sample_episode(pool, spec, i) for i in range(n_episodes)]


# -- prototype head ---------------------------------------------------------

def prototypes(support_latents, support_labels, n_classes: Optional[int] = None) -> np.ndarray:
    z = np.asarray(support_latents, dtype=np.float64)
    y = np.asarray(support_labels, dtype=np.int64)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    out = np.empty((n_classes, z.shape[1]))
    for c in range(n_classes):
        members = z[y == c]
        if len(members) == 0:
            raise DegenerateInputError(f"class {c} has no support examples")
        out[c] = members.mean(axis=0)
    return out


def proto_classify(support_latents, support_labels, query_latents, n_classes: Optional[int] = None) -> np.ndarray:
    """Scores ``-||q - prototype_c||^2``, shape ``(n_query, n_classes)``."""
    protos = prototypes(support_latents, support_labels, n_classes)
    q = np.asarray(query_latents, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != protos.shape[1]:
        raise DimensionError(f"query latents {q.shape} do not match latent dim {protos.shape[1]}")
    return -((q[:, None, :] - protos[None, :, :]) ** 2).sum(-1)


# -- adapted linear head ----------------------------------------------------

@dataclass
class AdaptedHead:
    weight: np.ndarray  # (way, latent_dim)
    bias: np.ndarray  # (way,)
    inner_steps: int = 0
    inner_lr: float = 0.0

    @classmethod
    def zeros(cls, way: int, latent_dim: int) -> "AdaptedHead":
        return cls(np.zeros((way, latent_dim)), np.zeros(way))

    def logits(self, latents) -> np.ndarray:
        z = np.asarray(latents, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"latents {z.shape} do not match head input dim {self.weight.shape[1]}")
        return z @ self.weight.T + self.bias


def head_loss_and_grad(weight, bias, latents, labels):
    """Mean softmax cross-entropy and its exact gradient w.r.t. (weight, bias)."""
    z = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    logits = z @ weight.T + bias
    logp = log_softmax(logits, axis=1)
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return float(loss), delta.T @ z, delta.sum(axis=0)


def maml_adapt(support_latents, support_labels, way: int, init: Optional[AdaptedHead] = None,
               steps: int = 5, lr: float = 0.01) -> AdaptedHead:
    """Full-batch gradient descent on the support cross-entropy, head parameters only."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = np.asarray(support_latents, dtype=np.float64)
    head = init or AdaptedHead.zeros(way, z.shape[1])
    w, b = head.weight.astype(np.float64).copy(), head.bias.astype(np.float64).copy()
    if w.shape != (way, z.shape[1]):
        raise DimensionError(f"head shape {w.shape} does not match ({way}, {z.shape[1]})")
    for _ in range(steps):
        _, gw, gb = head_loss_and_grad(w, b, z, support_labels)
        w -= lr * gw
        b -= lr * gb
    return AdaptedHead(w, b, steps, lr)


def maml_classify(head: AdaptedHead, query_latents) -> np.ndarray:
    """Logits ``W z + b`` for every query, shape ``(n_query, way)``."""
    return head.logits(query_latents)


# -- training / evaluation --------------------------------------------------

@dataclass
class TrainingRun:
    weights: bb.ConvBackbone
    losses: list
    accuracies: list


def _episode_loss(head_kind, support_lat, query_lat, episode, inner_steps, inner_lr):
    way = episode.spec.way
    ys = torch.as_tensor(episode.support_labels)
    yq = torch.as_tensor(episode.query_labels)
    if head_kind == "proto":
        protos = torch.stack([support_lat[ys == c].mean(0) for c in range(way)])
        logits = -((query_lat[:, None, :] - protos[None]) ** 2).sum(-1)
    else:
        head = maml_adapt(support_lat.detach().numpy(), episode.support_labels, way,
                          steps=inner_steps, lr=inner_lr)
        w = torch.as_tensor(head.weight, dtype=query_lat.dtype)
        b = torch.as_tensor(head.bias, dtype=query_lat.dtype)
        logits = query_lat @ w.T + b
    loss = F.cross_entropy(logits, yq)
    acc = (logits.argmax(1) == yq).double().mean().item()
    return loss, acc


def meta_train(pool: ImagePool, spec: EpisodeSpec, weights: bb.ConvBackbone, head_kind: str = "proto",
               epochs: int = 1, episodes_per_epoch: int = 100, lr: float = 1e-3,
               inner_steps: int = 5, inner_lr: float = 0.01, log=None) -> TrainingRun:
    """Episodic SGD on the backbone; returns the final weights and per-episode loss trace.

    Support and query images of an episode are embedded as one training-mode
    batch.  Episode ``i`` draws from seed ``(spec.seed, i)``.
    """
    if head_kind not in HEAD_KINDS:
        raise ValueError(f"head_kind must be one of {HEAD_KINDS}")
    w = weights
    losses, accs = [], []
    n_s = spec.support_size
    for epoch in range(epochs):
        for i in range(episodes_per_epoch):
            idx = epoch * episodes_per_epoch + i
            ep = sample_episode(pool, spec, idx)
            w.train()
            lat = bb.forward_cached(w, np.concatenate([ep.support_images(), ep.query_images()]))
            lat = lat.clone().requires_grad_(True)
            loss, acc = _episode_loss(head_kind, lat[:n_s], lat[n_s:], ep, inner_steps, inner_lr)
            if not torch.isfinite(loss):
                w._cache = None
                raise TrainingDivergedError(idx, loss.item())
            (g,) = torch.autograd.grad(loss, lat)
            w = bb.sgd_step(w, bb.backward(w, g), lr)
            losses.append(loss.item())
            accs.append(acc)
            if log is not None:
                log(idx, losses[-1], acc)
    w.eval()
    return TrainingRun(w, losses, accs)


@dataclass
class EvalReport:
    head_kind: str
    accuracies: list
    aucs: list
    seeds: dict
    config_hash: str = ""
    manifests: list = field(default_factory=list, repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.accuracies)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "head": self.head_kind,
            "n_episodes": self.n_episodes,
            "accuracies": list(self.accuracies),
            "mean_accuracy": self.mean_accuracy,
            "aucs": list(self.aucs),
            "mean_auc": self.mean_auc,
            "auc_reduction": "per-episode; binary Mann-Whitney, multiclass macro one-vs-rest",
            "seeds": self.seeds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def score_episode(probabilities, labels):
    """``(accuracy, auc)`` for one episode's query probabilities."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    acc = accuracy(p.argmax(axis=1), y)
    if p.shape[1] == 2:
        auc = auc_binary(p[:, 1], (y == 1).astype(int))
    else:
        auc = auc_macro_ovr(p, y)
    return acc, auc


def evaluate(weights: bb.ConvBackbone, head_kind: str, episodes: Sequence[Episode],
             inner_steps: int = 5, inner_lr: float = 0.01, config_hash: str = "",
             keep_manifests: bool = False) -> EvalReport:
    """Eval-mode embedding and per-episode scoring; pure in (weights, episodes)."""
    if not episodes:
        raise ValueError("no episodes to evaluate")
    if head_kind not in HEAD_KINDS:
        raise ValueError(f"head_kind must be one of {HEAD_KINDS}")
    cache = {}
    for ep in episodes:
        need = np.unique(np.concatenate([ep.support_index, ep.query_index]))
        key = id(ep.pool)
        have = cache.setdefault(key, {})
        todo = np.array([i for i in need if i not in have], dtype=np.int64)
        if todo.size:
            lat = bb.embed(weights, np.asarray(ep.pool.images[todo]))
            have.update(zip(todo.tolist(), lat.astype(np.float64)))
    accs, aucs, manifests = [], [], []
    for ep in episodes:
        have = cache[id(ep.pool)]
        zs = np.stack([have[i] for i in ep.support_index.tolist()])
        zq = np.stack([have[i] for i in ep.query_index.tolist()])
        if head_kind == "proto":
            scores = proto_classify(zs, ep.support_labels, zq, ep.spec.way)
        else:
            head = maml_adapt(zs, ep.support_labels, ep.spec.way, steps=inner_steps, lr=inner_lr)
            scores = maml_classify(head, zq)
        acc, auc = score_episode(softmax(scores, axis=1), ep.query_labels)
        accs.append(acc)
        aucs.append(auc)
        if keep_manifests:
            manifests.append(ep.manifest())
    spec = episodes[0].spec
    seeds = {"master": spec.seed, "episode_seed_rule": "SeedSequence([master, episode_index])"}
    return EvalReport(head_kind, accs, aucs, seeds, config_hash, manifests)


def config_hash(config: dict) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON form."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- scikit-learn estimators ------------------------------------------------

class _FewShotBase(ClassifierMixin, BaseEstimator):
    def _latents(self, X):
        if self.backbone is None:
            return check_array(X, dtype=np.float64)
        return bb.embed(self.backbone, X).astype(np.float64)

    def _encode_y(self, y):
        self.classes_, y_enc = np.unique(np.asarray(y), return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes in the support set")
        return y_enc

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class PrototypeClassifier(_FewShotBase):
    """Nearest-prototype classifier.

    ``fit`` takes the support set; with a ``backbone`` ``X`` holds images
    ``(n, 3, 84, 84)``, otherwise ``X`` is already a latent matrix.
    """

    def __init__(self, backbone=None):
        self.backbone = backbone

    def fit(self, X, y):
        y_enc = self._encode_y(y)
        self.prototypes_ = prototypes(self._latents(X), y_enc, len(self.classes_))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "prototypes_")
        z = self._latents(X)
        if z.shape[1] != self.prototypes_.shape[1]:
            raise DimensionError(f"expected latent dim {self.prototypes_.shape[1]}, got {z.shape[1]}")
        return -((z[:, None, :] - self.prototypes_[None]) ** 2).sum(-1)


class AdaptedHeadClassifier(_FewShotBase):
    """Linear head fitted to the support set with a few gradient steps from zero."""

    def __init__(self, backbone=None, inner_steps=5, inner_lr=0.01):
        self.backbone = backbone
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr

    def fit(self, X, y):
        y_enc = self._encode_y(y)
        self.head_ = maml_adapt(self._latents(X), y_enc, len(self.classes_),
                                steps=self.inner_steps, lr=self.inner_lr)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        return maml_classify(self.head_, self._latents(X))
