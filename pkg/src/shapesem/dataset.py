"""Dataset model, on-disk format, preprocessing and the synthetic cortex
simulator used as the verification oracle for the whole pipeline.

Directory layout::

    root/
      manifest.json     # ROI layout, categories, record table
      voxels.bin        # "VOX1", u32 n_records, u32 n_voxels, float32 rows
      stimuli/<id>.pgm  # binary P5, maxval 255, grayscale in [0,1]
      masks/<id>.pgm    # binary P5, values 0/255
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, LayoutError
from .patches import extract_patch_features

REQUIRED_ROIS = ("V1", "V2", "V3", "LOC", "FFA", "PPA")
LVC_ROIS = ("V1", "V2", "V3")
HVC_ROIS = ("LOC", "FFA", "PPA")
VOXEL_MAGIC = b"VOX1"


@dataclass(frozen=True)
class RoiLayout:
    """Ordered (roi_name, (start, stop)) voxel index ranges."""

    rois: tuple

    def __post_init__(self):
        names = [n for n, _ in self.rois]
        for req in REQUIRED_ROIS:
            if req not in names:
                raise LayoutError("missing required ROI %r" % req)
        if len(set(names)) != len(names):
            raise LayoutError("duplicate ROI names")
        spans = sorted((lo, hi) for _, (lo, hi) in self.rois)
        pos = 0
        for lo, hi in spans:
            if lo != pos or hi <= lo:
                raise LayoutError("ROI ranges must be disjoint and cover [0, n)")
            pos = hi
        object.__setattr__(self, "rois", tuple((n, (int(lo), int(hi)))
                                               for n, (lo, hi) in self.rois))

    @property
    def total_voxels(self) -> int:
        return max(hi for _, (_, hi) in self.rois)

    def members(self, set_name: str):
        """Expand an ROI-set name to its constituent ROIs."""
        if set_name == "LVC":
            return list(LVC_ROIS)
        if set_name == "HVC":
            return list(HVC_ROIS)
        if set_name == "VC":
            return list(REQUIRED_ROIS)
        if set_name in dict(self.rois):
            return [set_name]
        raise LayoutError("unknown ROI or ROI set %r" % set_name)

    def indices(self, set_name: str) -> np.ndarray:
        spans = dict(self.rois)
        idx = []
        for name in self.members(set_name):
            lo, hi = spans[name]
            idx.append(np.arange(lo, hi))
        return np.concatenate(idx)


@dataclass
class TrialRecord:
    stimulus_id: str
    category_id: int
    split: str  # "train" | "test"
    trial_index: int
    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.split not in ("train", "test"):
            raise DataError("bad split %r" % self.split)
        if not np.all(np.isfinite(self.voxels)):
            raise DataError("non-finite voxels in record %s" % self.stimulus_id)


@dataclass
class Dataset:
    layout: RoiLayout
    records: list
    stimuli: dict  # stimulus_id -> S x S float image in [0, 1]
    masks: dict  # stimulus_id -> S x S float binary mask
    category_names: list

    def __post_init__(self):
        n = self.layout.total_voxels
        seen = set()
        train_ids, test_ids = set(), set()
        for r in self.records:
            if len(r.voxels) != n:
                raise DataError("record %s has %d voxels, layout wants %d"
                                % (r.stimulus_id, len(r.voxels), n))
            key = (r.stimulus_id, r.split, r.trial_index)
            if key in seen:
                raise DataError("duplicate record %s" % (key,))
            seen.add(key)
            if r.stimulus_id not in self.stimuli:
                raise DataError("record %s has no stimulus image" % r.stimulus_id)
            if r.category_id >= len(self.category_names):
                raise DataError("category id %d out of range" % r.category_id)
            (train_ids if r.split == "train" else test_ids).add(r.stimulus_id)
        if train_ids & test_ids:
            raise DataError("train and test stimulus sets overlap")

    @property
    def image_size(self) -> int:
        return next(iter(self.stimuli.values())).shape[0]

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    def split_records(self, split: str):
        return [r for r in self.records if r.split == split]


# -- PGM I/O ------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0,1] float image as binary P5, maxval 255."""
    data = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    px = np.round(data * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (px.shape[1], px.shape[0]))
        fh.write(px.tobytes())


def read_pgm(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError("unreadable image %s: %s" % (path, exc))
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(raw):
            raise DataError("truncated PGM header in %s" % path)
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end > pos:
            fields.append(raw[pos:end])
        pos = end + 1
    if fields[0] != b"P5":
        raise DataError("%s is not a binary PGM" % path)
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    px = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if px.size != w * h:
        raise DataError("truncated PGM payload in %s" % path)
    return (px.reshape(h, w).astype(np.float32) / maxval).astype(np.float32)


# -- save / load --------------------------------------------------------

def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "stimuli").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    manifest = {
        "rois": [[name, lo, hi] for name, (lo, hi) in ds.layout.rois],
        "categories": list(ds.category_names),
        "image_size": ds.image_size,
        "records": [
            {"stimulus_id": r.stimulus_id, "category_id": r.category_id,
             "split": r.split, "trial_index": r.trial_index}
            for r in ds.records
        ],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    n = ds.layout.total_voxels
    with open(root / "voxels.bin", "wb") as fh:
        fh.write(VOXEL_MAGIC)
        fh.write(struct.pack("<II", len(ds.records), n))
        for r in ds.records:
            fh.write(np.ascontiguousarray(r.voxels, dtype="<f4").tobytes())
    for sid, img in ds.stimuli.items():
        write_pgm(root / "stimuli" / (sid + ".pgm"), img)
    for sid, mask in ds.masks.items():
        write_pgm(root / "masks" / (sid + ".pgm"), mask)


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError("cannot read manifest: %s" % exc)
    layout = RoiLayout(tuple((name, (lo, hi)) for name, lo, hi in manifest["rois"]))
    with open(root / "voxels.bin", "rb") as fh:
        if fh.read(4) != VOXEL_MAGIC:
            raise DataError("bad voxel file magic")
        n_rec, n_vox = struct.unpack("<II", fh.read(8))
        if n_vox != layout.total_voxels:
            raise DataError("voxel count %d does not match layout %d"
                            % (n_vox, layout.total_voxels))
        if n_rec != len(manifest["records"]):
            raise DataError("record count mismatch between manifest and voxels.bin")
        rows = np.frombuffer(fh.read(4 * n_rec * n_vox), dtype="<f4")
        if rows.size != n_rec * n_vox:
            raise DataError("truncated voxels.bin")
        rows = rows.reshape(n_rec, n_vox)
    records = [
        TrialRecord(m["stimulus_id"], int(m["category_id"]), m["split"],
                    int(m["trial_index"]), rows[i].astype(np.float32))
        for i, m in enumerate(manifest["records"])
    ]
    stimuli, masks = {}, {}
    for m in manifest["records"]:
        sid = m["stimulus_id"]
        if sid not in stimuli:
            stimuli[sid] = read_pgm(root / "stimuli" / (sid + ".pgm"))
            mask_path = root / "masks" / (sid + ".pgm")
            if mask_path.exists():
                masks[sid] = read_pgm(mask_path)
    return Dataset(layout, records, stimuli, masks, list(manifest["categories"]))


# -- preprocessing ------------------------------------------------------

def average_test_trials(ds: Dataset) -> Dataset:
    """Collapse repeated test trials of one stimulus into their mean."""
    order = []
    groups = {}
    for r in ds.records:
        if r.split != "test":
            continue
        if r.stimulus_id not in groups:
            order.append(r.stimulus_id)
            groups[r.stimulus_id] = []
        groups[r.stimulus_id].append(r)
    new_records = [r for r in ds.records if r.split == "train"]
    for sid in order:
        trials = groups[sid]
        mean = np.mean([t.voxels for t in trials], axis=0, dtype=np.float64)
        new_records.append(TrialRecord(sid, trials[0].category_id, "test", 0,
                                       mean.astype(np.float32)))
    return replace(ds, records=new_records)


def binarize_mask(image: np.ndarray, threshold="auto") -> np.ndarray:
    """Threshold a [0,1] grayscale image to a {0,1} mask.

    ``threshold="auto"`` uses Otsu's method on a 256-bin histogram.  A
    constant image under auto thresholding yields an all-background mask and
    a RuntimeWarning rather than an error.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.min() < 0 or image.max() > 1:
        raise DataError("image values must lie in [0, 1]")
    if threshold == "auto":
        if image.max() == image.min():
            warnings.warn("constant image: auto threshold yields empty mask",
                          RuntimeWarning)
            return np.zeros_like(image, dtype=np.float32)
        threshold = otsu_threshold(image)
    return (image >= float(threshold)).astype(np.float32)


def otsu_threshold(image: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing between-class variance of the histogram."""
    hist, edges = np.histogram(np.asarray(image).ravel(), bins=bins, range=(0.0, 1.0))
    p = hist.astype(np.float64) / hist.sum()
    centers = (edges[:-1] + edges[1:]) / 2.0
    omega = np.cumsum(p)
    mu = np.cumsum(p * centers)
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = -1.0
    k = int(np.argmax(sigma_b))
    return float(edges[k + 1])


# -- synthetic simulator ------------------------------------------------

DEFAULT_VOXELS = {"V1": 500, "V2": 500, "V3": 500, "LOC": 400, "FFA": 400, "PPA": 400}
MAX_CATEGORIES = 30  # 3 template families x 10 size bands


@dataclass
class SyntheticConfig:
    image_size: int = 32
    patch_size: int = 8
    categories: int = 10
    n_train: int = 300
    n_test: int = 40
    train_trials: int = 1
    test_trials: int = 3
    voxels_per_roi: dict = field(default_factory=lambda: dict(DEFAULT_VOXELS))
    noise_sigma: object = 0.1  # scalar or {roi: sigma}
    hvc_shape_leak: float = 0.1
    identical_shapes: bool = False
    seed: int = 0

    def __post_init__(self):
        s = self.image_size
        if s < 16 or s & (s - 1):
            raise ConfigError("image_size must be a power of two >= 16")
        if s % self.patch_size:
            raise ConfigError("patch_size must divide image_size")
        if not 1 <= self.categories <= MAX_CATEGORIES:
            raise ConfigError("categories must be in [1, %d]" % MAX_CATEGORIES)
        for roi in REQUIRED_ROIS:
            if roi not in self.voxels_per_roi:
                raise ConfigError("voxels_per_roi missing %r" % roi)
        if np.min(list(self.sigma_map().values())) < 0:
            raise ConfigError("noise_sigma must be >= 0")

    def sigma_map(self) -> dict:
        if isinstance(self.noise_sigma, dict):
            return {roi: float(self.noise_sigma.get(roi, 0.0)) for roi in REQUIRED_ROIS}
        return {roi: float(self.noise_sigma) for roi in REQUIRED_ROIS}


@dataclass
class SimTruth:
    """Hidden ground-truth encoders, kept out of the Dataset on purpose."""

    lvc_maps: dict  # roi -> A (d x g^2)
    hvc_cat_maps: dict  # roi -> E (d x n_categories)
    hvc_shape_maps: dict  # roi -> F (d x g^2)
    patch_grids: dict  # stimulus_id -> g x g grid
    intensities: np.ndarray  # per-category foreground gray level


def _category_intensity(n: int) -> np.ndarray:
    if n == 1:
        return np.array([0.8])
    return 0.35 + 0.6 * np.arange(n) / (n - 1)


def _render_template(category: int, s: int, rng: np.random.Generator,
                     identical: bool) -> np.ndarray:
    """Raster one jittered shape template as a binary S x S mask."""
    c = 0 if identical else category
    family, band = c % 3, c // 3
    scale = (0.15 + 0.018 * band) * s
    scale *= rng.uniform(0.85, 1.15)
    aspect = rng.uniform(0.8, 1.2)
    cx = s / 2 + rng.uniform(-0.08, 0.08) * s
    cy = s / 2 + rng.uniform(-0.08, 0.08) * s
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    if family == 0:  # ellipse
        mask = ((xx - cx) / scale) ** 2 + ((yy - cy) / (scale * aspect)) ** 2 <= 1.0
    elif family == 1:  # rectangle
        mask = (np.abs(xx - cx) <= scale) & (np.abs(yy - cy) <= 0.8 * scale * aspect)
    else:  # upright isoceles triangle, enlarged to match the other areas
        a = 1.4 * scale
        h = 1.6 * a
        y0 = cy - h / 2
        inside = (yy >= y0) & (yy <= y0 + h)
        half_width = a * (yy - y0) / h
        mask = inside & (np.abs(xx - cx) <= half_width)
    return mask.astype(np.float32)


def simulate(config: SyntheticConfig):
    """Generate a synthetic dataset plus its hidden encoders.

    Voxel model: LVC ROIs respond linearly to the patch-feature vector p;
    HVC ROIs respond to the category one-hot plus a small shape leak.
    """
    rng = np.random.default_rng(config.seed)
    s, m = config.image_size, config.patch_size
    g2 = (s // m) ** 2
    ncat = config.categories
    sigma = config.sigma_map()

    lvc_maps, hvc_cat_maps, hvc_shape_maps = {}, {}, {}
    for roi in LVC_ROIS:
        d = config.voxels_per_roi[roi]
        lvc_maps[roi] = (rng.standard_normal((d, g2)) / np.sqrt(g2)).astype(np.float32)
    for roi in HVC_ROIS:
        d = config.voxels_per_roi[roi]
        hvc_cat_maps[roi] = rng.standard_normal((d, ncat)).astype(np.float32)
        hvc_shape_maps[roi] = (rng.standard_normal((d, g2)) / np.sqrt(g2)).astype(np.float32)

    spans = []
    pos = 0
    for roi in REQUIRED_ROIS:
        d = config.voxels_per_roi[roi]
        spans.append((roi, (pos, pos + d)))
        pos += d
    layout = RoiLayout(tuple(spans))

    intensities = _category_intensity(ncat)
    stimuli, masks, patch_grids = {}, {}, {}
    stim_cats = {}
    for split, count in (("train", config.n_train), ("test", config.n_test)):
        for i in range(count):
            sid = "%s_%04d" % (split, i)
            cat = i % ncat
            mask = _render_template(cat, s, rng, config.identical_shapes)
            stimuli[sid] = (mask * intensities[cat]).astype(np.float32)
            masks[sid] = mask
            patch_grids[sid] = extract_patch_features(mask, m)
            stim_cats[sid] = cat

    def encode(sid: str) -> np.ndarray:
        p = patch_grids[sid].reshape(-1).astype(np.float64)
        onehot = np.zeros(ncat)
        onehot[stim_cats[sid]] = 1.0
        parts = []
        for roi in REQUIRED_ROIS:
            d = config.voxels_per_roi[roi]
            if roi in LVC_ROIS:
                mean = lvc_maps[roi].astype(np.float64) @ p
            else:
                mean = (hvc_cat_maps[roi].astype(np.float64) @ onehot
                        + config.hvc_shape_leak
                        * (hvc_shape_maps[roi].astype(np.float64) @ p))
            noise = sigma[roi] * rng.standard_normal(d) if sigma[roi] > 0 else 0.0
            parts.append(mean + noise)
        return np.concatenate(parts).astype(np.float32)

    records = []
    for split, count, trials in (("train", config.n_train, config.train_trials),
                                 ("test", config.n_test, config.test_trials)):
        for i in range(count):
            sid = "%s_%04d" % (split, i)
            for t in range(trials):
                records.append(TrialRecord(sid, stim_cats[sid], split, t, encode(sid)))

    ds = Dataset(layout, records, stimuli, masks,
                 ["category_%02d" % c for c in range(ncat)])
    truth = SimTruth(lvc_maps, hvc_cat_maps, hvc_shape_maps, patch_grids,
                     np.asarray(intensities))
    return ds, truth
