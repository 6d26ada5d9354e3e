"""Semantic decoding from higher-visual-cortex voxels.

A small two-hidden-layer classifier (Tanh between hidden layers, per-class
sigmoid output) is trained on HVC voxels; its penultimate activations are
the semantic feature space, and per-category means of those features supply
the augmentation vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import Dataset, TrialRecord
from .errors import ConfigError, DataError
from .nn import Linear
from .optim import Adam
from .serial import read_array, write_array
from .tensor import Tensor

NET_MAGIC = b"SEM1"


@dataclass
class SemanticNetConfig:
    in_dim: int
    n_classes: int
    hidden1: int = 256
    hidden2: int = 64  # semantic feature dimension
    epochs: int = 60
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden2 < 2:
            raise ConfigError("hidden2 must be >= 2")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")


class SemanticNet:
    def __init__(self, config: SemanticNetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.l1 = Linear(config.in_dim, config.hidden1, rng)
        self.l2 = Linear(config.hidden1, config.hidden2, rng)
        self.l3 = Linear(config.hidden2, config.n_classes, rng)
        # input standardization, frozen from the training set
        self.x_mean = np.zeros(config.in_dim, dtype=np.float32)
        self.x_std = np.ones(config.in_dim, dtype=np.float32)

    def parameters(self):
        return self.l1.parameters() + self.l2.parameters() + self.l3.parameters()

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.x_mean) / self.x_std).astype(np.float32)

    def penultimate(self, x: Tensor) -> Tensor:
        return T.tanh(self.l2(T.tanh(self.l1(x))))

    def scores(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.l3(self.penultimate(x)))


def train_semantic(ds: Dataset, config: SemanticNetConfig | None = None,
                   roi_set: str = "HVC", seed: int = 0) -> SemanticNet:
    """Fit the classifier on one ROI set with per-class sigmoid cross-entropy."""
    train = ds.split_records("train")
    labels = np.array([r.category_id for r in train])
    if len(set(labels.tolist())) < 2:
        raise ConfigError("training set has a single category")
    idx = ds.layout.indices(roi_set)
    if config is None:
        config = SemanticNetConfig(in_dim=len(idx), n_classes=ds.n_categories,
                                   seed=seed)
    if config.in_dim != len(idx):
        raise ConfigError("config.in_dim %d != ROI voxel count %d"
                          % (config.in_dim, len(idx)))
    x = np.stack([r.voxels[idx] for r in train]).astype(np.float32)
    net = SemanticNet(config)
    net.x_mean = x.mean(axis=0)
    net.x_std = x.std(axis=0) + 1e-6
    xn = net._normalize(x)
    onehot = np.zeros((len(train), config.n_classes), dtype=np.float32)
    onehot[np.arange(len(train)), labels] = 1.0

    opt = Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    n = len(train)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch):
            sel = order[lo : lo + config.batch]
            s = net.scores(Tensor(xn[sel]))
            t = Tensor(onehot[sel])
            loss = T.tmean(-(t * T.log_clamped(s)
                             + (1.0 - t) * T.log_clamped(1.0 - s)))
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.roi_set = roi_set
    return net


def semantic_features(net: SemanticNet, record: TrialRecord, layout) -> np.ndarray:
    """Penultimate Tanh activations for one record; values in (-1, 1)."""
    x = record.voxels[layout.indices(net.roi_set)]
    return net.penultimate(Tensor(net._normalize(x)[None])).data[0]


def classify(net: SemanticNet, record: TrialRecord, layout) -> int:
    """Argmax over sigmoid output scores; ties break to the lowest index."""
    x = record.voxels[layout.indices(net.roi_set)]
    scores = net.scores(Tensor(net._normalize(x)[None])).data[0]
    return int(np.argmax(scores))


def accuracy(net: SemanticNet, ds: Dataset, records) -> float:
    hits = [classify(net, r, ds.layout) == r.category_id for r in records]
    return float(np.mean(hits))


def category_average(features, labels) -> dict:
    """Arithmetic mean of semantic features per category (the R_sm table)."""
    features = [np.asarray(f) for f in features]
    if not features or len(features) != len(labels):
        raise DataError("features and labels must be nonempty and aligned")
    sums, counts = {}, {}
    for f, lab in zip(features, labels):
        lab = int(lab)
        if lab not in sums:
            sums[lab] = np.zeros(f.shape, dtype=np.float64)
            counts[lab] = 0
        sums[lab] += f
        counts[lab] += 1
    return {lab: (sums[lab] / counts[lab]).astype(np.float32) for lab in sums}


# -- persistence --------------------------------------------------------

def save_semantic_net(net: SemanticNet, path) -> None:
    blob = json.dumps({
        "in_dim": net.config.in_dim, "n_classes": net.config.n_classes,
        "hidden1": net.config.hidden1, "hidden2": net.config.hidden2,
        "epochs": net.config.epochs, "lr": net.config.lr,
        "batch": net.config.batch, "seed": net.config.seed,
        "roi_set": getattr(net, "roi_set", "HVC"),
    }).encode()
    with open(path, "wb") as fh:
        fh.write(NET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        write_array(fh, net.x_mean)
        write_array(fh, net.x_std)
        for p in net.parameters():
            write_array(fh, p.data)


def load_semantic_net(path) -> SemanticNet:
    with open(path, "rb") as fh:
        if fh.read(4) != NET_MAGIC:
            raise DataError("bad semantic-net magic")
        (ln,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(ln).decode())
        roi_set = meta.pop("roi_set")
        net = SemanticNet(SemanticNetConfig(**meta))
        net.roi_set = roi_set
        net.x_mean = read_array(fh)
        net.x_std = read_array(fh)
        for p in net.parameters():
            p.data = read_array(fh).reshape(p.shape)
    return net
