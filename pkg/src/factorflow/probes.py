"""Downstream probes over frozen latents.

A logistic (linear) probe scores binary anomaly classification, reported as
accuracy and AUC; AUC is the Mann-Whitney rank statistic with midranks, so
ties earn half credit exactly as in pairwise enumeration.  Slice-index
regression uses a small MLP (input -> 64 -> 64 -> 1, tanh), reported as MAE
and R^2 = 1 - SS_res / SS_tot.  Splits are 70/30, seed-deterministic and
disjoint, stratified on the label for classification.  Features are
standardized with train-split statistics.

Reports are written to ``probe_report.csv`` with header
``task,feature_set,dim,metric,value,seed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tensor
from .data import Corpus
from .errors import ConfigError, DataError
from .latent import latent_features
from .model import GlowModel
from .objective import FactorSpec
from .rng import Rng

PROBE_REPORT_HEADER = "task,feature_set,dim,metric,value,seed"


# -- metrics ---------------------------------------------------------------

def auc_score(scores, labels) -> float:
    """Area under the ROC curve via midranks (ties get 0.5 credit)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return float(auc)


def accuracy_score(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    return float(np.mean((scores >= threshold) == (labels == 1)))


def mae_score(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    return float(np.mean(np.abs(predictions - targets)))


def r2_score(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0:
        raise DataError("R^2 undefined for zero-variance targets")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


# -- splits and scaling ------------------------------------------------------

def split_indices(n: int, rng: Rng, test_frac: float = 0.3, stratify=None):
    """Disjoint (train, test) index arrays; optionally stratified."""
    if not 0.0 < test_frac < 1.0:
        raise ConfigError(f"test_frac must be in (0, 1), got {test_frac}")
    if stratify is None:
        perm = rng.shuffle_index(n)
        n_test = max(1, int(round(test_frac * n)))
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    stratify = np.asarray(stratify).ravel()
    train_parts, test_parts = [], []
    for val in np.unique(stratify):
        idx = np.flatnonzero(stratify == val)
        perm = idx[rng.shuffle_index(len(idx))]
        n_test = max(1, int(round(test_frac * len(idx))))
        test_parts.append(perm[:n_test])
        train_parts.append(perm[n_test:])
    return (np.sort(np.concatenate(train_parts)),
            np.sort(np.concatenate(test_parts)))


class Standardizer:
    def __init__(self, x: np.ndarray):
        self.mean = x.mean(axis=0)
        self.std = np.maximum(x.std(axis=0), 1e-8)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


# -- models --------------------------------------------------------------------

class LogisticProbe:
    """Linear probe trained by full-batch Adam on binary cross-entropy."""

    def __init__(self, epochs: int = 300, lr: float = 0.05, weight_decay: float = 1e-4):
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.w = None
        self.b = None
        self.scaler = None

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "LogisticProbe":
        labels = np.asarray(labels, dtype=np.float64).ravel()
        if len(np.unique(labels)) < 2:
            raise DataError("classifier training data contains a single class")
        from .training import Adam  # local import to avoid a cycle

        self.scaler = Standardizer(np.asarray(features, dtype=np.float64))
        x = Tensor(self.scaler(features))
        y = Tensor(labels.reshape(-1, 1))
        d = x.shape[1]
        self.w = Tensor(np.zeros((d, 1)), requires_grad=True)
        self.b = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam([self.w, self.b], lr=self.lr)
        eps = 1e-7
        for _ in range(self.epochs):
            p = ad.sigmoid(ad.affine(x, self.w, self.b))
            nll = ad.neg(ad.add(ad.mul(y, ad.tlog(ad.add(p, eps))),
                                ad.mul(ad.sub(1.0, y), ad.tlog(ad.sub(1.0 + eps, p)))))
            loss = ad.add(ad.tmean(nll),
                          ad.mul(ad.tsum(ad.square(self.w)), self.weight_decay))
            opt.zero_grad()
            loss.backward()
            opt.step()
        return self

    def scores(self, features: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            p = ad.sigmoid(ad.affine(Tensor(self.scaler(features)), self.w, self.b))
        return p.data.ravel()

    def evaluate(self, features: np.ndarray, labels: np.ndarray):
        s = self.scores(features)
        return accuracy_score(s, labels), auc_score(s, labels)


class MlpRegressor:
    """4-layer regressor (input -> 64 -> 64 -> 1, tanh) trained with Adam."""

    def __init__(self, hidden: int = 64, epochs: int = 500, lr: float = 3e-3):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.params = None
        self.scaler = None

    def _forward(self, x: Tensor) -> Tensor:
        w1, b1, w2, b2, w3, b3 = self.params
        h = ad.tanh(ad.affine(x, w1, b1))
        h = ad.tanh(ad.affine(h, w2, b2))
        return ad.affine(h, w3, b3)

    def fit(self, features: np.ndarray, targets: np.ndarray,
            rng: Rng | None = None) -> "MlpRegressor":
        targets = np.asarray(targets, dtype=np.float64).ravel()
        if np.any(targets < 0) or np.any(targets > 1):
            raise ConfigError("regression targets must lie in [0, 1]")
        rng = rng or Rng(0)
        from .training import Adam

        self.scaler = Standardizer(np.asarray(features, dtype=np.float64))
        x = Tensor(self.scaler(features))
        y = Tensor(targets.reshape(-1, 1))
        d, h = x.shape[1], self.hidden

        def init(n_in, n_out):
            return Tensor(rng.normal((n_in, n_out)) / np.sqrt(n_in), requires_grad=True)

        self.params = [init(d, h), Tensor(np.zeros(h), requires_grad=True),
                       init(h, h), Tensor(np.zeros(h), requires_grad=True),
                       init(h, 1), Tensor(np.zeros(1), requires_grad=True)]
        opt = Adam(self.params, lr=self.lr)
        for _ in range(self.epochs):
            pred = self._forward(x)
            loss = ad.tmean(ad.square(ad.sub(pred, y)))
            opt.zero_grad()
            loss.backward()
            opt.step()
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            out = self._forward(Tensor(self.scaler(features)))
        return out.data.ravel()

    def evaluate(self, features: np.ndarray, targets: np.ndarray):
        pred = self.predict(features)
        return mae_score(pred, targets), r2_score(pred, targets)


# -- reports ----------------------------------------------------------------------

@dataclass
class ProbeReport:
    """Evaluation of one probe on one feature set."""

    task: str  # "classification" or "regression"
    feature_set: str
    dim: int
    metrics: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for key in ("accuracy", "auc"):
            if key in self.metrics and not 0.0 <= self.metrics[key] <= 1.0:
                raise DataError(f"{key} outside [0, 1]: {self.metrics[key]}")
        if "r2" in self.metrics and self.metrics["r2"] > 1.0:
            raise DataError(f"R^2 above 1: {self.metrics['r2']}")


def classification_report(features, labels, seed: int = 0,
                          feature_set: str = "") -> ProbeReport:
    features = np.asarray(features, dtype=np.float64)
    rng = Rng(seed)
    train_idx, test_idx = split_indices(len(features), rng, stratify=labels)
    probe = LogisticProbe().fit(features[train_idx], np.asarray(labels)[train_idx])
    acc, auc = probe.evaluate(features[test_idx], np.asarray(labels)[test_idx])
    return ProbeReport(task="classification", feature_set=feature_set,
                       dim=features.shape[1], metrics={"accuracy": acc, "auc": auc},
                       seed=seed)


def regression_report(features, targets, seed: int = 0,
                      feature_set: str = "") -> ProbeReport:
    features = np.asarray(features, dtype=np.float64)
    rng = Rng(seed)
    train_idx, test_idx = split_indices(len(features), rng)
    probe = MlpRegressor().fit(features[train_idx], np.asarray(targets)[train_idx],
                               rng=Rng(seed).spawn(1))
    mae, r2 = probe.evaluate(features[test_idx], np.asarray(targets)[test_idx])
    return ProbeReport(task="regression", feature_set=feature_set,
                       dim=features.shape[1], metrics={"mae": mae, "r2": r2},
                       seed=seed)


def factor_vs_residual_report(model: GlowModel, spec: FactorSpec, corpus: Corpus,
                              seed: int = 0, cls_factor: str = None,
                              reg_factor: str = None) -> list:
    """Probe each semantic factor against alternatives on its own task.

    Classification compares the designated factor with the residual factor;
    regression compares the slice factor with the anomaly factor.
    """
    cls_factor = cls_factor or spec.names[0]
    reg_factor = reg_factor or (spec.names[1] if spec.n_factors > 2 else spec.names[0])
    residual = spec.names[-1]
    feats = {name: latent_features(model, spec, corpus, which=name)
             for name in spec.names}
    reports = [
        classification_report(feats[cls_factor], corpus.anomaly, seed, cls_factor),
        classification_report(feats[residual], corpus.anomaly, seed, residual),
        regression_report(feats[reg_factor], corpus.slice_index, seed, reg_factor),
        regression_report(feats[cls_factor], corpus.slice_index, seed, cls_factor),
    ]
    return reports


def write_probe_report(path, reports) -> None:
    with open(path, "w") as fh:
        fh.write(PROBE_REPORT_HEADER + "\n")
        for r in reports:
            for metric in sorted(r.metrics):
                fh.write(f"{r.task},{r.feature_set},{r.dim},{metric},"
                         f"{r.metrics[metric]!r},{r.seed}\n")


def noise_auc_table(model: GlowModel, spec: FactorSpec, corpus: Corpus,
                    weights=(0.0, 0.05, 0.1, 0.2, 0.3), seed: int = 0,
                    which: str = None) -> list:
    """AUC of anomaly classification vs input-noise weight.

    The probe is fit once on clean train-split latents; each weight replaces
    the test-split inputs with noisy versions before encoding.
    """
    from .latent import noise_sweep

    which = which or spec.names[0]
    sweep = noise_sweep(model, spec, corpus, weights, rng=Rng(seed).spawn(7),
                        which=which)
    labels = np.asarray(corpus.anomaly)
    rng = Rng(seed)
    train_idx, test_idx = split_indices(len(corpus), rng, stratify=labels)
    clean = latent_features(model, spec, corpus, which=which)
    probe = LogisticProbe().fit(clean[train_idx], labels[train_idx])
    table = []
    for w in weights:
        feats = sweep[float(w)]
        _, auc = probe.evaluate(feats[test_idx], labels[test_idx])
        table.append((float(w), auc))
    return table


def write_noise_table(path, table) -> None:
    with open(path, "w") as fh:
        fh.write("weight,auc\n")
        for w, auc in table:
            fh.write(f"{w!r},{auc!r}\n")
