"""SSIM metric, pairwise identification protocol, and experiment runners."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, average_test_trials
from .errors import DataError, DimensionError
from .gan import (GanTrainConfig, build_discriminator, build_generator,
                  generate, train)
from .patches import upsample_nearest
from .semantic import (SemanticNetConfig, accuracy, category_average,
                       semantic_features, train_semantic)
from .shape_decoder import decode_shape, fit_shape_decoder

# published win rates, kept in reports for orientation only, never asserted
REFERENCE_WIN_RATES = {
    "full": 0.653,
    "no_semantics": 0.625,
    "no_augmentation": 0.636,
}


@dataclass
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams | None = None) -> float:
    """Mean structural similarity over sliding Gaussian windows."""
    params = params or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError("ssim inputs differ: %s vs %s" % (a.shape, b.shape))
    win = _gaussian_window(params.window_size, params.sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, win.shape)
    wb = np.lib.stride_tricks.sliding_window_view(b, win.shape)
    mu_a = np.tensordot(wa, win, axes=2)
    mu_b = np.tensordot(wb, win, axes=2)
    ea2 = np.tensordot(wa * wa, win, axes=2)
    eb2 = np.tensordot(wb * wb, win, axes=2)
    eab = np.tensordot(wa * wb, win, axes=2)
    var_a = ea2 - mu_a ** 2
    var_b = eb2 - mu_b ** 2
    cov = eab - mu_a * mu_b
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    per_image_ssim: list
    run_win_rates: list
    mean_win_rate: float
    runs: int
    seed: int
    reference: dict = field(default_factory=lambda: dict(REFERENCE_WIN_RATES))


def pairwise_win_rate(recons, ground_truths, runs: int = 5, seed: int = 0,
                      params: SsimParams | None = None) -> EvalReport:
    """Two-alternative identification: a reconstruction wins when it is more
    similar to its own ground truth than to a random other test image."""
    if len(recons) != len(ground_truths) or len(recons) < 2:
        raise DataError("need aligned lists with at least 2 images")
    n = len(recons)
    own = [ssim(recons[i], ground_truths[i], params) for i in range(n)]
    cache = {}
    run_rates = []
    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        wins = 0.0
        for i in range(n):
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            if (i, j) not in cache:
                cache[(i, j)] = ssim(recons[i], ground_truths[j], params)
            other = cache[(i, j)]
            if own[i] > other:
                wins += 1.0
            elif own[i] == other:
                wins += 0.5
        run_rates.append(wins / n)
    return EvalReport(own, run_rates, float(np.mean(run_rates)), runs, seed)


# -- experiment runners -------------------------------------------------

def _holdout_validation(ds: Dataset, n_validation: int = 40) -> Dataset:
    """Move the last ``n_validation`` training stimuli into the test split,
    dropping the original test records."""
    train_ids = []
    for r in ds.records:
        if r.split == "train" and r.stimulus_id not in train_ids:
            train_ids.append(r.stimulus_id)
    if len(train_ids) <= n_validation:
        raise DataError("not enough training stimuli to reserve %d" % n_validation)
    held = set(train_ids[-n_validation:])
    records = []
    for r in ds.records:
        if r.split != "train":
            continue
        if r.stimulus_id in held:
            records.append(replace(r, split="test"))
        else:
            records.append(r)
    return replace(ds, records=records)


def roi_ablation(ds: Dataset, roi_sets=("V1", "V2", "V3", "LVC", "HVC", "VC"),
                 n_validation: int = 40, shape_lambda: float = 1e-2,
                 patch_size: int = 8, seed: int = 0, runs: int = 5):
    """Shape win-rate and semantic accuracy per ROI set on held-out samples."""
    if not roi_sets:
        raise DataError("roi_sets must be nonempty")
    ds2 = _holdout_validation(ds, n_validation)
    val = ds2.split_records("test")
    # identification targets at the decoder's patch resolution
    from .patches import extract_patch_features

    gts = [upsample_nearest(extract_patch_features(ds2.masks[r.stimulus_id],
                                                   patch_size), patch_size)
           for r in val]
    table = []
    for roi_set in roi_sets:
        members = ds2.layout.members(roi_set)
        dec = fit_shape_decoder(ds2, members, shape_lambda, patch_size)
        shapes = [decode_shape(dec, r, ds2.layout) for r in val]
        report = pairwise_win_rate(shapes, gts, runs=runs, seed=seed)
        net = train_semantic(ds2, roi_set=roi_set, seed=seed)
        table.append({
            "roi_set": roi_set,
            "shape_win_rate": report.mean_win_rate,
            "semantic_accuracy": accuracy(net, ds2, val),
        })
    return table


@dataclass
class PipelineResult:
    mode: str
    shape_decoder: object
    semantic_net: object
    generator: object
    discriminator: object
    loss_log: list
    reconstructions: list
    test_records: list
    report: EvalReport


def run_pipeline(ds: Dataset, gan_config: GanTrainConfig, mode: str = "full",
                 shape_lambda: float = 1e-2, patch_size: int = 8,
                 semantic_config: SemanticNetConfig | None = None,
                 augment_images=None, runs: int = 5) -> PipelineResult:
    """Train all stages on one dataset and evaluate on the averaged test set.

    ``mode``: full | no_semantics | no_augmentation.  ``augment_images`` is a
    list of (image, category_id) used for GAN data augmentation.
    """
    if mode not in ("full", "no_semantics", "no_augmentation"):
        raise DataError("unknown mode %r" % mode)
    ds = average_test_trials(ds)
    layout = ds.layout
    train_recs = ds.split_records("train")
    test_recs = ds.split_records("test")

    shape_dec = fit_shape_decoder(ds, ("V1", "V2", "V3"), shape_lambda, patch_size)

    sem_net = None
    if mode == "no_semantics":
        gan_config = replace(gan_config, semantic_dim=0)
    else:
        sem_net = train_semantic(ds, semantic_config, roi_set="HVC",
                                 seed=gan_config.seed)

    pairs = []
    feats = []
    for r in train_recs:
        r_sp = decode_shape(shape_dec, r, layout)
        r_sm = None
        if sem_net is not None:
            r_sm = semantic_features(sem_net, r, layout)
            feats.append(r_sm)
        pairs.append((r_sp, r_sm, ds.stimuli[r.stimulus_id]))

    if augment_images and mode != "no_augmentation":
        from .dataset import binarize_mask
        from .gan import make_augmented_pairs
        from .patches import extract_patch_features

        known = {r.category_id for r in train_recs}
        usable = [(img, lab) for img, lab in augment_images if int(lab) in known]
        if sem_net is not None:
            averages = category_average(feats, [r.category_id for r in train_recs])
            aug, _ = make_augmented_pairs(usable, averages, patch_size)
            pairs.extend((a.shape, a.semantics, a.image) for a in aug)
        else:
            for img, lab in usable:
                grid = extract_patch_features(binarize_mask(img), patch_size)
                pairs.append((upsample_nearest(grid, patch_size), None,
                              np.asarray(img, dtype=np.float32)))

    gen = build_generator(gan_config)
    disc = build_discriminator(gan_config)
    loss_log = train(gen, disc, pairs, gan_config)

    recons = []
    for r in test_recs:
        r_sp = decode_shape(shape_dec, r, layout)
        r_sm = semantic_features(sem_net, r, layout) if sem_net is not None else None
        recons.append(generate(gen, r_sp, r_sm))
    gts = [ds.stimuli[r.stimulus_id] for r in test_recs]
    report = pairwise_win_rate(recons, gts, runs=runs, seed=gan_config.seed)
    return PipelineResult(mode, shape_dec, sem_net, gen, disc, loss_log,
                          recons, test_recs, report)


def ablation_run(mode: str, ds: Dataset, gan_config: GanTrainConfig,
                 **kwargs) -> PipelineResult:
    """Named-mode wrapper around run_pipeline with identical seeding."""
    return run_pipeline(ds, gan_config, mode=mode, **kwargs)


# -- reports ------------------------------------------------------------

def write_report_csv(path, rows, include_reference: bool = True) -> None:
    """Rows of (metric, label, run, value); RFC-4180 via the csv module."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "label", "run", "value"])
        for metric, label, run, value in rows:
            w.writerow([metric, label, run, "%.8g" % value])
        if include_reference:
            for label, value in REFERENCE_WIN_RATES.items():
                w.writerow(["reference_win_rate", label, "", "%.8g" % value])


def report_rows(report: EvalReport, label: str):
    rows = [("win_rate", label, i, r) for i, r in enumerate(report.run_win_rates)]
    rows.append(("mean_win_rate", label, "", report.mean_win_rate))
    rows.extend(("ssim", label, i, s) for i, s in enumerate(report.per_image_ssim))
    return rows


def write_montage(path, triplets) -> None:
    """Grid of (ground truth, decoded shape, reconstruction) rows as one PGM."""
    from .dataset import write_pgm

    if not triplets:
        raise DataError("no triplets to render")
    s = np.asarray(triplets[0][0]).shape[0]
    gap = 2
    rows = len(triplets)
    canvas = np.ones((rows * s + (rows - 1) * gap, 3 * s + 2 * gap), dtype=np.float32)
    for r, triple in enumerate(triplets):
        for c, img in enumerate(triple):
            y0 = r * (s + gap)
            x0 = c * (s + gap)
            canvas[y0 : y0 + s, x0 : x0 + s] = np.clip(img, 0.0, 1.0)
    write_pgm(path, canvas)
