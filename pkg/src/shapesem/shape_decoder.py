"""Shape decoding from lower-visual-cortex voxels.

Per-ROI linear base decoders map voxel vectors to patch grids; a per-pixel
least-squares combiner merges the ROI predictions, and the combined grid is
block-replicated back to stimulus resolution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, TrialRecord
from .errors import DataError
from .linalg import ridge_solve
from .patches import extract_patch_features, upsample_nearest
from .serial import read_array, write_array

DECODER_MAGIC = b"SHD1"
DEFAULT_LAMBDA = 1e-2  # scaled by trace(X'X)/d at fit time


@dataclass
class BaseShapeDecoder:
    """Affine map from one ROI's voxels to the flattened patch grid."""

    roi: str
    weights: np.ndarray  # (d_voxels, g*g)
    bias: np.ndarray  # (g*g,)
    grid: int
    lam: float

    def predict(self, voxels: np.ndarray) -> np.ndarray:
        """Affine map then clip to [0,1]; returns a g x g grid."""
        out = voxels.astype(np.float64) @ self.weights + self.bias
        return np.clip(out, 0.0, 1.0).astype(np.float32).reshape(self.grid, self.grid)


@dataclass
class ShapeCombiner:
    """Per-pixel linear weights across ROI predictions (no intercept)."""

    rois: list
    weights: np.ndarray  # (g, g, K)

    def combine(self, predictions: dict) -> np.ndarray:
        stack = np.stack([predictions[r] for r in self.rois], axis=-1)
        out = np.einsum("ijk,ijk->ij", stack.astype(np.float64), self.weights)
        return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class ShapeDecoder:
    decoders: dict  # roi -> BaseShapeDecoder
    combiner: ShapeCombiner
    patch_size: int


def _targets(ds: Dataset, records, m: int) -> np.ndarray:
    return np.stack([
        extract_patch_features(ds.masks[r.stimulus_id], m).reshape(-1)
        for r in records
    ])


def fit_base_decoders(ds: Dataset, rois, lam: float = DEFAULT_LAMBDA,
                      m: int = 8) -> dict:
    """Ridge-fit one base decoder per ROI against the patch-grid targets.

    Inputs and targets are centered so the bias absorbs the means; ``lam``
    is scaled by trace(X'X)/d to make the default resolution independent of
    voxel count and signal scale.
    """
    train = ds.split_records("train")
    if len(train) < 2:
        raise DataError("need at least 2 training records")
    g = ds.image_size // m
    p = _targets(ds, train, m).astype(np.float64)
    p_mean = p.mean(axis=0)
    out = {}
    for roi in rois:
        idx = ds.layout.indices(roi)
        x = np.stack([r.voxels[idx] for r in train]).astype(np.float64)
        x_mean = x.mean(axis=0)
        xc, pc = x - x_mean, p - p_mean
        lam_eff = lam * np.trace(xc.T @ xc) / xc.shape[1] if lam > 0 else 0.0
        w = ridge_solve(xc, pc, lam_eff)
        bias = p_mean - x_mean @ w
        out[roi] = BaseShapeDecoder(roi, w, bias, g, lam)
    return out


def predict_base(decoder: BaseShapeDecoder, record: TrialRecord,
                 layout) -> np.ndarray:
    return decoder.predict(record.voxels[layout.indices(decoder.roi)])


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def fit_combiner(base_predictions: dict, targets: np.ndarray,
                 convex: bool = False) -> ShapeCombiner:
    """Solve the per-pixel least-squares weighting across ROIs.

    ``base_predictions``: roi -> (n, g, g) stacked predictions on the
    training set; ``targets``: (n, g, g).  Singular pixels take the
    minimum-norm solution; an all-zero pixel falls back to uniform 1/K.
    ``convex`` projects each pixel's weights onto the probability simplex
    (nonnegative, summing to one).
    """
    rois = list(base_predictions)
    stack = np.stack([base_predictions[r] for r in rois], axis=-1).astype(np.float64)
    n, g, _, k = stack.shape
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.zeros((g, g, k))
    for i in range(g):
        for j in range(g):
            a = stack[:, i, j, :]
            if not a.any():
                weights[i, j, :] = 1.0 / k
                continue
            w = np.linalg.lstsq(a, targets[:, i, j], rcond=None)[0]
            weights[i, j, :] = _project_simplex(w) if convex else w
    return ShapeCombiner(rois, weights)


def fit_shape_decoder(ds: Dataset, rois=("V1", "V2", "V3"),
                      lam: float = DEFAULT_LAMBDA, m: int = 8,
                      convex: bool = False) -> ShapeDecoder:
    decoders = fit_base_decoders(ds, rois, lam, m)
    train = ds.split_records("train")
    preds = {
        roi: np.stack([predict_base(dec, r, ds.layout) for r in train])
        for roi, dec in decoders.items()
    }
    g = ds.image_size // m
    targets = _targets(ds, train, m).reshape(-1, g, g)
    return ShapeDecoder(decoders, fit_combiner(preds, targets, convex), m)


def decode_shape(decoder: ShapeDecoder, record: TrialRecord, layout) -> np.ndarray:
    """Full-resolution decoded shape image in [0,1]."""
    preds = {roi: predict_base(dec, record, layout)
             for roi, dec in decoder.decoders.items()}
    grid = decoder.combiner.combine(preds)
    return upsample_nearest(grid, decoder.patch_size)


# -- persistence --------------------------------------------------------

def save_shape_decoder(decoder: ShapeDecoder, path) -> None:
    rois = list(decoder.decoders)
    with open(path, "wb") as fh:
        fh.write(DECODER_MAGIC)
        fh.write(struct.pack("<II", len(rois), decoder.patch_size))
        for roi in rois:
            name = roi.encode()
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
        for roi in rois:
            dec = decoder.decoders[roi]
            fh.write(struct.pack("<Id", dec.grid, dec.lam))
            write_array(fh, dec.weights)
            write_array(fh, dec.bias)
        write_array(fh, decoder.combiner.weights)


def load_shape_decoder(path) -> ShapeDecoder:
    with open(path, "rb") as fh:
        if fh.read(4) != DECODER_MAGIC:
            raise DataError("bad shape-decoder magic")
        n_roi, m = struct.unpack("<II", fh.read(8))
        rois = []
        for _ in range(n_roi):
            (ln,) = struct.unpack("<I", fh.read(4))
            rois.append(fh.read(ln).decode())
        decoders = {}
        for roi in rois:
            grid, lam = struct.unpack("<Id", fh.read(12))
            w = read_array(fh).astype(np.float64)
            b = read_array(fh).astype(np.float64)
            decoders[roi] = BaseShapeDecoder(roi, w, b, grid, lam)
        cw = read_array(fh).astype(np.float64)
    return ShapeDecoder(decoders, ShapeCombiner(rois, cw), m)
