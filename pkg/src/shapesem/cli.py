"""Command-line entry point for the full pipeline.

One flat key = value config namespace is shared by all subcommands; a config
file (``--config``, '#' comments) supplies defaults and command-line flags win
over the file.  Every run writes a JSON manifest next to its artifacts with
the resolved config, the seed, and sha256 checksums of everything it wrote.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

from .dataset import (Dataset, SyntheticConfig, average_test_trials,
                      load_dataset, save_dataset, simulate, write_pgm)
from .errors import NumericalError, ShapesemError
from .evaluation import (ablation_run, pairwise_win_rate, report_rows,
                         roi_ablation, write_montage, write_report_csv)
from .gan import (GanTrainConfig, build_discriminator, build_generator,
                  generate, load_checkpoint, save_checkpoint, train,
                  write_loss_log)
from .patches import extract_patch_features, upsample_nearest
from .semantic import (SemanticNetConfig, accuracy, load_semantic_net,
                       save_semantic_net, semantic_features, train_semantic)
from .shape_decoder import (decode_shape, fit_shape_decoder,
                            load_shape_decoder, save_shape_decoder)


class CliError(ShapesemError):
    """Usage/validation problem; maps to exit code 1."""


def _parse_bool(s):
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError("not a boolean: %r" % s)


# key -> (converter, default); one namespace shared by every subcommand
KNOWN_KEYS = {
    "dataset": (str, None),
    "out": (str, None),
    "seed": (int, 0),
    "threads": (int, 1),
    "tolerance_mode": (_parse_bool, False),
    "runs": (int, 5),
    "mode": (str, "full"),
    "metric": (str, "recon"),
    # simulator
    "image_size": (int, 32),
    "patch_size": (int, 8),
    "categories": (int, 10),
    "n_train": (int, 300),
    "n_test": (int, 40),
    "train_trials": (int, 1),
    "test_trials": (int, 3),
    "noise_sigma": (float, 0.1),
    "identical_shapes": (_parse_bool, False),
    # shape decoder
    "shape_lambda": (float, 1e-2),
    # semantic decoder
    "sem_hidden1": (int, 256),
    "sem_hidden2": (int, 64),
    "sem_epochs": (int, 60),
    "sem_lr": (float, 1e-3),
    "sem_batch": (int, 32),
    # GAN
    "gan_epochs": (int, 200),
    "gan_decay_start": (int, 120),
    "gan_batch": (int, 10),
    "gan_lr": (float, 2e-4),
    "gan_lambda_img": (float, 100.0),
    "gan_base_channels": (int, 16),
    "gan_semantic_dim": (int, 64),
    "gan_disc_mode": (str, "patch"),
}


def parse_config_file(path):
    """key = value lines with '#' comments; unknown keys are fatal."""
    if not os.path.exists(path):
        raise CliError("config file not found: %s" % path)
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError("%s:%d: expected key = value, got: %s"
                               % (path, lineno, raw.rstrip()))
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in KNOWN_KEYS:
                raise CliError("%s:%d: unknown key in line: %s"
                               % (path, lineno, raw.rstrip()))
            values[key] = val.strip()
    return values


def resolve_config(args):
    """File defaults, then --set overrides, then explicit flags."""
    cfg = {k: default for k, (_, default) in KNOWN_KEYS.items()}
    raw = {}
    if getattr(args, "config", None):
        raw.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError("--set expects key=value, got: %s" % item)
        key, _, val = item.partition("=")
        if key.strip() not in KNOWN_KEYS:
            raise CliError("unknown key in --set: %s" % item)
        raw[key.strip()] = val.strip()
    for key, val in raw.items():
        conv = KNOWN_KEYS[key][0]
        try:
            cfg[key] = conv(val)
        except (ValueError, TypeError):
            raise CliError("bad value for %s: %r" % (key, val))
    for key in ("dataset", "out", "seed", "runs", "mode", "metric"):
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    if cfg["threads"] < 1:
        raise CliError("threads must be >= 1")
    return cfg


def _require_out(cfg):
    if not cfg["out"]:
        raise CliError("an output directory is required (--out)")
    os.makedirs(cfg["out"], exist_ok=True)
    if not os.access(cfg["out"], os.W_OK):
        raise CliError("output dir not writable: %s" % cfg["out"])
    return cfg["out"]


def _load_ds(cfg) -> Dataset:
    if not cfg["dataset"]:
        raise CliError("a dataset directory is required (--dataset)")
    if not os.path.exists(os.path.join(cfg["dataset"], "manifest.json")):
        raise CliError("missing artifact: %s"
                       % os.path.join(cfg["dataset"], "manifest.json"))
    return load_dataset(cfg["dataset"])


def _artifact(cfg, name, required=False):
    path = os.path.join(cfg["out"], name)
    if required and not os.path.exists(path):
        raise CliError("missing artifact: %s" % path)
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, subcommand, cfg, written):
    """Deterministic provenance record for one run."""
    checksums = {}
    for path in sorted(written):
        rel = os.path.relpath(path, out_dir)
        checksums[rel] = _sha256(path)
    doc = {
        "subcommand": subcommand,
        "seed": cfg["seed"],
        # paths are machine-local, so they stay out of the snapshot to keep
        # equal-config runs byte-identical
        "config": {k: cfg[k] for k in sorted(KNOWN_KEYS)
                   if k not in ("dataset", "out")},
        "artifacts": checksums,
    }
    path = os.path.join(out_dir, "run_manifest_%s.json" % subcommand.replace("-", "_"))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _sim_config(cfg) -> SyntheticConfig:
    return SyntheticConfig(image_size=cfg["image_size"],
                           patch_size=cfg["patch_size"],
                           categories=cfg["categories"],
                           n_train=cfg["n_train"], n_test=cfg["n_test"],
                           train_trials=cfg["train_trials"],
                           test_trials=cfg["test_trials"],
                           noise_sigma=cfg["noise_sigma"],
                           identical_shapes=cfg["identical_shapes"],
                           seed=cfg["seed"])


def _sem_config(cfg, ds: Dataset) -> SemanticNetConfig:
    in_dim = len(ds.layout.indices("HVC"))
    return SemanticNetConfig(in_dim=in_dim, n_classes=ds.n_categories,
                             hidden1=cfg["sem_hidden1"],
                             hidden2=cfg["sem_hidden2"],
                             epochs=cfg["sem_epochs"], lr=cfg["sem_lr"],
                             batch=cfg["sem_batch"], seed=cfg["seed"])


def _gan_config(cfg, resolution, semantic_dim=None) -> GanTrainConfig:
    return GanTrainConfig(resolution=resolution,
                          lambda_img=cfg["gan_lambda_img"],
                          lr=cfg["gan_lr"], batch=cfg["gan_batch"],
                          epochs=cfg["gan_epochs"],
                          decay_start=cfg["gan_decay_start"],
                          base_channels=cfg["gan_base_channels"],
                          semantic_dim=(cfg["gan_semantic_dim"]
                                        if semantic_dim is None else semantic_dim),
                          disc_mode=cfg["gan_disc_mode"], seed=cfg["seed"])


def _image_resolution(ds: Dataset) -> int:
    return next(iter(ds.stimuli.values())).shape[0]


def _projected_masks(ds, records, m):
    return [upsample_nearest(extract_patch_features(ds.masks[r.stimulus_id], m), m)
            for r in records]


# -- subcommand bodies --------------------------------------------------

def cmd_simulate(cfg):
    out = _require_out(cfg)
    ds, _ = simulate(_sim_config(cfg))
    save_dataset(ds, out)
    written = [os.path.join(dirpath, f)
               for dirpath, _, files in os.walk(out) for f in files
               if not f.startswith("run_manifest")]
    write_manifest(out, "simulate", cfg, written)
    print("simulate: wrote dataset with %d records to %s" % (len(ds.records), out))
    return 0


def cmd_preprocess(cfg):
    ds = _load_ds(cfg)
    out = _require_out(cfg)
    save_dataset(average_test_trials(ds), out)
    written = [os.path.join(dirpath, f)
               for dirpath, _, files in os.walk(out) for f in files
               if not f.startswith("run_manifest")]
    write_manifest(out, "preprocess", cfg, written)
    print("preprocess: averaged test trials into %s" % out)
    return 0


def cmd_train_shape(cfg):
    ds = average_test_trials(_load_ds(cfg))
    out = _require_out(cfg)
    dec = fit_shape_decoder(ds, ("V1", "V2", "V3"), cfg["shape_lambda"],
                            cfg["patch_size"])
    path = _artifact(cfg, "shape_decoder.shd")
    save_shape_decoder(dec, path)
    write_manifest(out, "train-shape", cfg, [path])
    print("train-shape: wrote %s" % path)
    return 0


def cmd_train_semantic(cfg):
    ds = average_test_trials(_load_ds(cfg))
    out = _require_out(cfg)
    net = train_semantic(ds, _sem_config(cfg, ds), roi_set="HVC",
                         seed=cfg["seed"])
    path = _artifact(cfg, "semantic_net.sem")
    save_semantic_net(net, path)
    acc = accuracy(net, ds, ds.split_records("train"))
    write_manifest(out, "train-semantic", cfg, [path])
    print("train-semantic: wrote %s (train accuracy %.3f)" % (path, acc))
    return 0


def cmd_train_gan(cfg):
    ds = average_test_trials(_load_ds(cfg))
    out = _require_out(cfg)
    dec = load_shape_decoder(_artifact(cfg, "shape_decoder.shd", required=True))
    no_sem = cfg["mode"] == "no_semantics"
    sem_net = None
    if not no_sem:
        sem_net = load_semantic_net(_artifact(cfg, "semantic_net.sem",
                                              required=True))
    gan_cfg = _gan_config(cfg, _image_resolution(ds),
                          semantic_dim=0 if no_sem else None)
    pairs = []
    for r in ds.split_records("train"):
        r_sp = decode_shape(dec, r, ds.layout)
        r_sm = (semantic_features(sem_net, r, ds.layout)
                if sem_net is not None else None)
        pairs.append((r_sp, r_sm, ds.stimuli[r.stimulus_id]))
    gen = build_generator(gan_cfg)
    disc = build_discriminator(gan_cfg)
    log = train(gen, disc, pairs, gan_cfg)
    ckpt = _artifact(cfg, "gan.ckpt")
    save_checkpoint(ckpt, gen, disc)
    loss_csv = _artifact(cfg, "gan_loss.csv")
    write_loss_log(loss_csv, log)
    write_manifest(out, "train-gan", cfg, [ckpt, loss_csv])
    print("train-gan: %d epochs, final g_total %.4f, wrote %s"
          % (len(log), log[-1]["g_total"], ckpt))
    return 0


def _reconstruct_all(cfg, ds):
    dec = load_shape_decoder(_artifact(cfg, "shape_decoder.shd", required=True))
    gen, _, gan_cfg = load_checkpoint(_artifact(cfg, "gan.ckpt", required=True))
    sem_net = None
    if gan_cfg.semantic_dim > 0:
        sem_net = load_semantic_net(_artifact(cfg, "semantic_net.sem",
                                              required=True))
    shapes, recons = [], []
    for r in ds.split_records("test"):
        r_sp = decode_shape(dec, r, ds.layout)
        r_sm = (semantic_features(sem_net, r, ds.layout)
                if sem_net is not None else None)
        shapes.append(r_sp)
        recons.append(generate(gen, r_sp, r_sm))
    return dec, shapes, recons


def cmd_reconstruct(cfg):
    ds = average_test_trials(_load_ds(cfg))
    out = _require_out(cfg)
    _, shapes, recons = _reconstruct_all(cfg, ds)
    test = ds.split_records("test")
    written = []
    for i, img in enumerate(recons):
        path = _artifact(cfg, "recon_%04d.pgm" % i)
        write_pgm(path, img)
        written.append(path)
    montage = _artifact(cfg, "montage.pgm")
    triplets = [(ds.stimuli[r.stimulus_id], sp, rc)
                for r, sp, rc in zip(test, shapes, recons)]
    write_montage(montage, triplets)
    written.append(montage)
    write_manifest(out, "reconstruct", cfg, written)
    print("reconstruct: wrote %d reconstructions and %s" % (len(recons), montage))
    return 0


def cmd_evaluate(cfg):
    ds = average_test_trials(_load_ds(cfg))
    out = _require_out(cfg)
    test = ds.split_records("test")
    if cfg["metric"] == "shape":
        dec = load_shape_decoder(_artifact(cfg, "shape_decoder.shd",
                                           required=True))
        preds = [decode_shape(dec, r, ds.layout) for r in test]
        gts = _projected_masks(ds, test, cfg["patch_size"])
        label = "shape"
    elif cfg["metric"] == "recon":
        _, _, preds = _reconstruct_all(cfg, ds)
        gts = [ds.stimuli[r.stimulus_id] for r in test]
        label = cfg["mode"]
    else:
        raise CliError("unknown metric %r (expected shape or recon)"
                       % cfg["metric"])
    report = pairwise_win_rate(preds, gts, runs=cfg["runs"], seed=cfg["seed"])
    path = _artifact(cfg, "report_%s.csv" % cfg["metric"])
    write_report_csv(path, report_rows(report, label))
    write_manifest(out, "evaluate", cfg, [path])
    print("evaluate[%s]: mean win rate %.4f over %d runs -> %s"
          % (cfg["metric"], report.mean_win_rate, cfg["runs"], path))
    return 0


def cmd_ablate(cfg, which):
    ds = _load_ds(cfg)
    out = _require_out(cfg)
    path = _artifact(cfg, "ablation_%s.csv" % which)
    if which == "roi":
        n_train_stims = len({r.stimulus_id for r in ds.split_records("train")})
        n_val = min(40, max(2, n_train_stims // 4))
        table = roi_ablation(ds, n_validation=n_val,
                             shape_lambda=cfg["shape_lambda"],
                             patch_size=cfg["patch_size"], seed=cfg["seed"],
                             runs=cfg["runs"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["roi_set", "shape_win_rate", "semantic_accuracy"])
            for row in table:
                w.writerow([row["roi_set"], "%.8g" % row["shape_win_rate"],
                            "%.8g" % row["semantic_accuracy"]])
        summary = ", ".join("%s=%.3f" % (r["roi_set"], r["shape_win_rate"])
                            for r in table)
    else:
        drop_mode = {"semantics": "no_semantics",
                     "augmentation": "no_augmentation"}[which]
        gan_cfg = _gan_config(cfg, _image_resolution(ds))
        aug = None
        if which == "augmentation":
            # reuse training stimuli as extra labelled images without voxels
            aug = [(ds.stimuli[r.stimulus_id], r.category_id)
                   for r in ds.split_records("train")]
        common = dict(shape_lambda=cfg["shape_lambda"],
                      patch_size=cfg["patch_size"], augment_images=aug,
                      runs=cfg["runs"])
        full = ablation_run("full", ds, gan_cfg, **common)
        drop = ablation_run(drop_mode, ds, gan_cfg, **common)
        rows = report_rows(full.report, "full") + report_rows(drop.report,
                                                              drop_mode)
        write_report_csv(path, rows)
        summary = "full=%.3f %s=%.3f" % (full.report.mean_win_rate, drop_mode,
                                         drop.report.mean_win_rate)
    write_manifest(out, "ablate-%s" % which, cfg, [path])
    print("ablate[%s]: %s -> %s" % (which, summary, path))
    return 0


def cmd_report(cfg):
    out = _require_out(cfg)
    names = sorted(f for f in os.listdir(out)
                   if f.endswith(".csv") and (f.startswith("report_")
                                              or f.startswith("ablation_")))
    if not names:
        raise CliError("no report CSVs found in %s (run evaluate/ablate first)"
                       % out)
    for name in names:
        print("== %s ==" % name)
        with open(os.path.join(out, name), newline="") as fh:
            for row in csv.reader(fh):
                print("  " + ", ".join(row))
    return 0


# -- argument parsing ---------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="shapesem",
        description="Shape/semantic decoding and GAN reconstruction pipeline. "
                    "All CSV outputs use a fixed (metric,label,run,value) "
                    "schema except ablation_roi.csv "
                    "(roi_set,shape_win_rate,semantic_accuracy).")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_dataset=True, needs_seed=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int,
                       required=needs_seed, help="random seed")
        p.add_argument("--runs", type=int, help="identification runs")
        if needs_dataset:
            p.add_argument("--dataset", help="dataset directory")
        return p

    add("simulate", "generate a synthetic dataset", needs_dataset=False,
        needs_seed=True)
    add("preprocess", "average repeated test trials into one record each")
    add("train-shape", "fit the patch-grid shape decoder", needs_seed=True)
    add("train-semantic", "train the category classifier", needs_seed=True)
    p = add("train-gan", "train the conditional reconstruction GAN",
            needs_seed=True)
    p.add_argument("--mode", choices=["full", "no_semantics"],
                   help="drop semantic conditioning if no_semantics")
    add("reconstruct", "reconstruct every test record and emit a montage")
    p = add("evaluate", "pairwise identification win rate to CSV")
    p.add_argument("--metric", choices=["shape", "recon"],
                   help="evaluate decoded shapes or GAN reconstructions")
    p = add("ablate", "run one ablation experiment", needs_seed=True)
    p.add_argument("which", choices=["roi", "semantics", "augmentation"])
    add("report", "print all CSV reports in the output dir",
        needs_dataset=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train-shape":
            return cmd_train_shape(cfg)
        if args.command == "train-semantic":
            return cmd_train_semantic(cfg)
        if args.command == "train-gan":
            return cmd_train_gan(cfg)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.which)
        if args.command == "report":
            return cmd_report(cfg)
        raise CliError("unknown command %r" % args.command)
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 2
    except ShapesemError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
