"""Conditional encoder-decoder GAN fusing decoded shapes and semantics.

The generator is a U-Net built from stride-2 4x4 (de)convolutions with the
semantic vector broadcast and channel-concatenated at the 1x1 bottleneck.
The discriminator scores (shape, image) channel pairs patch-wise.  Training
alternates one discriminator step and one generator step per batch.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import binarize_mask
from .errors import ConfigError, DataError, DimensionError, NumericalError
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Sequentialish
from .optim import Adam
from .patches import extract_patch_features, upsample_nearest
from .serial import read_array, write_array
from .shape_decoder import decode_shape
from .semantic import semantic_features
from .tensor import Tensor

CHECKPOINT_MAGIC = b"GAN1"


@dataclass
class GanTrainConfig:
    resolution: int = 32
    lambda_img: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 10
    epochs: int = 200
    decay_start: int = 120
    base_channels: int = 16
    semantic_dim: int = 64  # 0 disables semantic conditioning
    disc_mode: str = "patch"  # or "global"
    seed: int = 0

    def __post_init__(self):
        s = self.resolution
        if s < 16 or s & (s - 1):
            raise ConfigError("resolution must be a power of two >= 16")
        if not self.decay_start < self.epochs:
            raise ConfigError("decay_start must be < epochs")
        if self.semantic_dim < 0:
            raise ConfigError("semantic_dim must be >= 0")
        if self.disc_mode not in ("patch", "global"):
            raise ConfigError("disc_mode must be 'patch' or 'global'")


def _channel_schedule(base: int, depth: int):
    return [min(base * 2 ** i, 8 * base) for i in range(depth)]


class GeneratorNet(Sequentialish):
    """U-Net: depth log2(S) encoder/decoder with level-wise skips."""

    def __init__(self, config: GanTrainConfig, rng: np.random.Generator):
        self.config = config
        s = config.resolution
        self.depth = int(np.log2(s))
        ch = _channel_schedule(config.base_channels, self.depth)
        self.enc = []
        self.enc_bn = []
        prev = 1
        for i, c in enumerate(ch):
            self.enc.append(Conv2d(prev, c, 4, 2, 1, rng))
            # no norm on the first layer or the 1x1 bottleneck output
            self.enc_bn.append(BatchNorm2d(c) if 0 < i < self.depth - 1 else None)
            prev = c
        self.dec = []
        self.dec_bn = []
        in_ch = ch[-1] + config.semantic_dim
        for j in range(1, self.depth + 1):
            out_ch = ch[self.depth - 1 - j] if j < self.depth else 1
            self.dec.append(ConvTranspose2d(in_ch, out_ch, 4, 2, 1, rng))
            self.dec_bn.append(BatchNorm2d(out_ch) if j < self.depth else None)
            if j < self.depth:
                in_ch = out_ch + ch[self.depth - 1 - j]
        self.layers = [l for l in self.enc + self.enc_bn + self.dec + self.dec_bn
                       if l is not None]

    def forward(self, shape_img: Tensor, semantics: Tensor | None) -> Tensor:
        feats = []
        h = shape_img
        for i, conv in enumerate(self.enc):
            if i > 0:
                h = T.leaky_relu(h, 0.2)
            h = conv(h)
            if self.enc_bn[i] is not None:
                h = self.enc_bn[i](h)
            feats.append(h)
        if self.config.semantic_dim:
            if semantics is None:
                raise DimensionError("generator expects a semantic vector")
            sem = T.reshape(semantics, (semantics.shape[0], -1, 1, 1))
            h = T.concat([h, sem], axis=1)
        for j, deconv in enumerate(self.dec):
            h = deconv(T.relu(h))
            if self.dec_bn[j] is not None:
                h = self.dec_bn[j](h)
            skip = self.depth - 2 - j
            if skip >= 0:
                h = T.concat([h, feats[skip]], axis=1)
        out = T.tanh(h)
        return 0.5 * (out + 1.0)


class DiscriminatorNet(Sequentialish):
    """Patch discriminator over channel-concatenated (shape, image) pairs."""

    def __init__(self, config: GanTrainConfig, rng: np.random.Generator):
        self.config = config
        b = config.base_channels
        self.convs = [
            Conv2d(2, b, 4, 2, 1, rng),
            Conv2d(b, 2 * b, 4, 2, 1, rng),
            Conv2d(2 * b, 4 * b, 4, 2, 1, rng),
        ]
        self.bns = [None, BatchNorm2d(2 * b), BatchNorm2d(4 * b)]
        self.head = Conv2d(4 * b, 1, 4, 1, 1, rng)
        self.layers = [l for l in self.convs + self.bns + [self.head]
                       if l is not None]

    def forward(self, shape_img: Tensor, image: Tensor) -> Tensor:
        h = T.concat([shape_img, image], axis=1)
        for conv, bn in zip(self.convs, self.bns):
            h = conv(h)
            if bn is not None:
                h = bn(h)
            h = T.leaky_relu(h, 0.2)
        logits = self.head(h)
        if self.config.disc_mode == "global":
            logits = T.reshape(T.tmean(logits), (1, 1, 1, 1)) if logits.shape[0] == 1 \
                else _spatial_mean(logits)
        return T.sigmoid(logits)


def _spatial_mean(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = T.reshape(x, (n, c * h * w))
    ones = Tensor(np.full((c * h * w, 1), 1.0 / (c * h * w), dtype=np.float32))
    return T.reshape(T.matmul(flat, ones), (n, 1, 1, 1))


def build_generator(config: GanTrainConfig, seed_offset: int = 0) -> GeneratorNet:
    return GeneratorNet(config, np.random.default_rng(config.seed + seed_offset))


def build_discriminator(config: GanTrainConfig) -> DiscriminatorNet:
    return DiscriminatorNet(config, np.random.default_rng(config.seed + 1))


# -- losses -------------------------------------------------------------

def generator_loss(d_scores_on_fake: Tensor, fake_image: Tensor,
                   target_image, lambda_img: float):
    """Adversarial + weighted L1 term; returns (total, adv_part, l1_part)."""
    target = target_image if isinstance(target_image, Tensor) else Tensor(target_image)
    if fake_image.shape != target.shape:
        raise DimensionError("fake %s vs target %s" % (fake_image.shape, target.shape))
    adv = T.tmean(-T.log_clamped(d_scores_on_fake))
    l1 = T.tmean(T.tabs(target - fake_image))
    total = adv + float(lambda_img) * l1
    return total, adv, l1


def discriminator_loss(d_scores_on_real: Tensor, d_scores_on_fake: Tensor) -> Tensor:
    real = T.tmean(-T.log_clamped(d_scores_on_real))
    fake = T.tmean(-T.log_clamped(1.0 - d_scores_on_fake))
    return real + fake


def lr_at_epoch(config: GanTrainConfig, epoch: int) -> float:
    """Constant until decay_start, then linear to 0 at the final epoch."""
    if epoch <= config.decay_start:
        return config.lr
    return config.lr * (config.epochs - epoch) / (config.epochs - config.decay_start)


# -- training -----------------------------------------------------------

@dataclass
class AugmentedPair:
    """Shape + category-average semantics from an external image; no voxels."""

    shape: np.ndarray  # S x S in [0, 1]
    semantics: np.ndarray  # (semantic_dim,)
    image: np.ndarray  # S x S target


def make_augmented_pairs(images_with_labels, category_averages: dict,
                         m: int = 8, threshold="auto"):
    """Build {R_sp, R_sm} pairs from external labeled images.

    Images whose label has no category-average feature are rejected; returns
    (pairs, rejected_count).
    """
    pairs, rejected = [], 0
    for image, label in images_with_labels:
        if int(label) not in category_averages:
            rejected += 1
            continue
        mask = binarize_mask(image, threshold)
        grid = extract_patch_features(mask, m)
        pairs.append(AugmentedPair(upsample_nearest(grid, m),
                                   category_averages[int(label)],
                                   np.asarray(image, dtype=np.float32)))
    return pairs, rejected


def train(generator: GeneratorNet, discriminator: DiscriminatorNet, pairs,
          config: GanTrainConfig):
    """Alternating D/G optimization; returns the per-epoch loss log.

    ``pairs``: list of (shape S x S, semantics vector or None, target S x S).
    The non-trained net is frozen during each step: the discriminator sees
    detached fakes, and generator steps never touch discriminator state.
    """
    if not pairs:
        raise DataError("no training pairs")
    s = config.resolution
    shapes = np.stack([np.asarray(p[0], dtype=np.float32) for p in pairs])[:, None]
    targets = np.stack([np.asarray(p[2], dtype=np.float32) for p in pairs])[:, None]
    if shapes.shape[-1] != s:
        raise DimensionError("pair resolution %d != config %d" % (shapes.shape[-1], s))
    if config.semantic_dim:
        sems = np.stack([np.asarray(p[1], dtype=np.float32) for p in pairs])
        if sems.shape[1] != config.semantic_dim:
            raise DimensionError("semantic dim %d != config %d"
                                 % (sems.shape[1], config.semantic_dim))
    else:
        sems = None

    opt_g = Adam(generator.parameters(), config.lr, config.beta1, config.beta2)
    opt_d = Adam(discriminator.parameters(), config.lr, config.beta1, config.beta2)
    rng = np.random.default_rng(config.seed + 2)
    generator.set_training(True)
    discriminator.set_training(True)
    log = []
    n = len(pairs)
    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(config, epoch)
        opt_g.lr = opt_d.lr = lr
        order = rng.permutation(n)
        sums = np.zeros(4, dtype=np.float64)
        batches = 0
        for lo in range(0, n, config.batch):
            sel = order[lo : lo + config.batch]
            x_sp = Tensor(shapes[sel])
            y = Tensor(targets[sel])
            sem = Tensor(sems[sel]) if sems is not None else None

            # discriminator step (generator frozen via detach)
            fake = generator.forward(x_sp, sem).detach()
            d_loss = discriminator_loss(discriminator.forward(x_sp, y),
                                        discriminator.forward(x_sp, fake))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # generator step (discriminator grads discarded, never applied)
            fake = generator.forward(x_sp, sem)
            scores = discriminator.forward(x_sp, fake)
            g_total, g_adv, g_l1 = generator_loss(scores, fake, y, config.lambda_img)
            opt_g.zero_grad()
            opt_d.zero_grad()
            g_total.backward()
            opt_g.step()
            opt_d.zero_grad()

            vals = (d_loss.item(), g_adv.item(), g_l1.item(), g_total.item())
            if not all(np.isfinite(vals)):
                raise NumericalError(
                    "non-finite loss at epoch %d batch %d: d=%r adv=%r l1=%r"
                    % (epoch, batches, vals[0], vals[1], vals[2]))
            sums += vals
            batches += 1
        log.append({"epoch": epoch, "lr": lr,
                    "d_loss": sums[0] / batches, "g_adv": sums[1] / batches,
                    "g_l1": sums[2] / batches, "g_total": sums[3] / batches})
    generator.set_training(False)
    discriminator.set_training(False)
    return log


def write_loss_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "d_loss", "g_adv", "g_l1", "g_total"])
        for row in log:
            w.writerow([row["epoch"], "%.8g" % row["lr"], "%.8g" % row["d_loss"],
                        "%.8g" % row["g_adv"], "%.8g" % row["g_l1"],
                        "%.8g" % row["g_total"]])


def generate(generator: GeneratorNet, shape_img: np.ndarray,
             semantics: np.ndarray | None) -> np.ndarray:
    """Eval-mode forward pass for a single (shape, semantics) pair."""
    generator.set_training(False)
    x = Tensor(np.asarray(shape_img, dtype=np.float32)[None, None])
    sem = None
    if generator.config.semantic_dim:
        sem = Tensor(np.asarray(semantics, dtype=np.float32)[None])
    return generator.forward(x, sem).data[0, 0]


def reconstruct(generator: GeneratorNet, shape_decoder, semantic_net, record,
                layout) -> np.ndarray:
    """Full pipeline for one record: decode shape + semantics, then generate."""
    r_sp = decode_shape(shape_decoder, record, layout)
    r_sm = None
    if generator.config.semantic_dim:
        r_sm = semantic_features(semantic_net, record, layout)
    return generate(generator, r_sp, r_sm)


# -- persistence --------------------------------------------------------

def save_checkpoint(path, generator: GeneratorNet,
                    discriminator: DiscriminatorNet) -> None:
    cfg = generator.config
    blob = json.dumps({
        "resolution": cfg.resolution, "lambda_img": cfg.lambda_img,
        "lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2,
        "batch": cfg.batch, "epochs": cfg.epochs, "decay_start": cfg.decay_start,
        "base_channels": cfg.base_channels, "semantic_dim": cfg.semantic_dim,
        "disc_mode": cfg.disc_mode, "seed": cfg.seed,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in generator.state_arrays() + discriminator.state_arrays():
            write_array(fh, arr)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise DataError("bad checkpoint magic")
        (ln,) = struct.unpack("<I", fh.read(4))
        config = GanTrainConfig(**json.loads(fh.read(ln).decode()))
        generator = build_generator(config)
        discriminator = build_discriminator(config)
        for arr in generator.state_arrays() + discriminator.state_arrays():
            arr[...] = read_array(fh)
    generator.set_training(False)
    discriminator.set_training(False)
    return generator, discriminator, config
