"""``ielseg`` command line.

Every subcommand echoes its resolved configuration as one JSON line on
stderr (prefixed ``config:``) before doing any work. Exit codes: 0 success,
1 failure (failed suite, unreadable input), 2 usage error.
"""
import argparse
import csv
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ielseg import autodiff as ad
from ielseg import curvemotion as cm
from ielseg import fileio, verify
from ielseg.autodiff import LossVariant
from ielseg.diffusion import DiffusionConfig, apply_iels, apply_merged, fel_array, merged_coeffs
from ielseg.field import Field, LabelMask

VARIANTS = {
    "plain": "plain",
    "iel-heat": "iel_heat",
    "fel-heat": "fel_heat",
    "curve-iel": "curve_iel",
    "grad-loss": "grad_penalty",
    "l2": "weight_decay",
}
DEFAULT_LAMBDA = {"grad_penalty": 1.0, "weight_decay": 0.1}


class UsageError(Exception):
    pass


def _radii(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or any(v <= 0 for v in vals) or vals != sorted(set(vals)):
        raise argparse.ArgumentTypeError(f"radii must be positive and strictly ascending, got {text!r}")
    return tuple(vals)


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _count(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.HelpFormatter
    p = argparse.ArgumentParser(prog="ielseg", description="Inverse evolution layers for segmentation.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("gen-data", help="write a synthetic train/val dataset", formatter_class=fmt)
    s.add_argument("--n", type=_positive_int, default=200, help="training images")
    s.add_argument("--n-val", type=_count, default=None, help="validation images (default n // 4)")
    s.add_argument("--size", type=_positive_int, default=64, help="image side in pixels")
    s.add_argument("--classes", type=int, default=2, help="label classes including background")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("inject-noise", help="add window label noise to the training split", formatter_class=fmt)
    s.add_argument("--in", dest="src", required=True, help="dataset directory")
    s.add_argument("--window", type=_positive_int, default=3, help="window side k")
    s.add_argument("--fraction", type=float, default=0.2, help="corrupted area fraction p")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("evolve", help="apply evolution layers to an FLD file", formatter_class=fmt)
    s.add_argument("--mode", choices=["fel", "iel"], required=True)
    s.add_argument("--pde", choices=["heat", "curve"], required=True)
    s.add_argument("--dt", type=_positive_float, default=0.1)
    s.add_argument("--steps", type=_count, default=1)
    s.add_argument("--radii", type=_radii, default=(5, 10, 15), help="curve: disc radii K")
    s.add_argument("--dilation", type=_count, default=3, help="curve: band width d")
    s.add_argument("--channel", type=_count, default=0, help="curve: channel holding the score")
    s.add_argument("--in", dest="src", required=True, help="input FLD file")
    s.add_argument("--out", required=True, help="output FLD file")

    s = sub.add_parser("convexity", help="write the concave-set map of a binary PGM mask", formatter_class=fmt)
    s.add_argument("--in", dest="src", required=True, help="input PGM (nonzero = foreground)")
    s.add_argument("--radii", type=_radii, default=(5, 10, 15))
    s.add_argument("--out", required=True, help="output PGM (1 = violating pixel)")

    s = sub.add_parser("verify", help="run a property suite", formatter_class=fmt)
    s.add_argument("--suite", choices=list(verify.SUITES) + ["all"], required=True)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("train", help="train the U-Net on a dataset directory", formatter_class=fmt)
    s.add_argument("--variant", choices=list(VARIANTS), default="plain")
    s.add_argument("--dt", type=_positive_float, default=0.1, help="time step of the evolution layers")
    s.add_argument("--layers", type=_count, default=10, help="number of evolution layers")
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="penalty weight (grad-loss default 1.0, l2 default 0.1)")
    s.add_argument("--radii", type=_radii, default=(5, 10, 15), help="curve-iel: disc radii K")
    s.add_argument("--dilation", type=_count, default=3, help="curve-iel: band width d")
    s.add_argument("--epochs", type=_positive_int, default=30)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--batch", type=_positive_int, default=4)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--preprocess-steps", type=_count, default=0,
                   help="forward heat steps applied to the training labels before training")
    s.add_argument("--track-train", action="store_true", help="evaluate the training split every epoch")
    s.add_argument("--data", required=True, help="dataset directory with train/ and val/")
    s.add_argument("--out", required=True, help="output directory for params.fld, variant.json, metrics.csv")

    s = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    s.add_argument("--params", required=True, help="params.fld written by train (variant.json beside it is honoured)")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--split", choices=["val", "train"], default="val")
    s.add_argument("--postprocess-steps", type=_count, default=0,
                   help="forward heat steps on the logits before the argmax")
    s.add_argument("--postprocess-dt", type=_positive_float, default=0.1)

    s = sub.add_parser("bench-merge", help="time sequential vs merged inverse heat layers", formatter_class=fmt)
    s.add_argument("--layers", type=_positive_int, default=10)
    s.add_argument("--dt", type=_positive_float, default=0.1)
    s.add_argument("--size", type=_positive_int, default=64)
    s.add_argument("--repeats", type=_positive_int, default=20)
    s.add_argument("--seed", type=int, default=0)
    for sp in [p] + list(sub.choices.values()):
        for action in sp._actions:
            _add_default(action)
    return p


def _add_default(action):
    """Append the default to every optional flag's help text."""
    if action.required or action.default in (None, argparse.SUPPRESS):
        return
    default = action.default
    if isinstance(default, tuple):
        default = ",".join(map(str, default))
    action.help = f"{action.help or ''} (default: {default})".strip()


def _echo(args):
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}
    print("config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)


def _split_dir(root: Path, split: str) -> Path:
    """``root/split`` when present, else ``root`` itself (a single-split directory)."""
    return root / split if (root / split / "meta.json").exists() else root


# ------------------------------------------------------------------ commands

def cmd_gen_data(args):
    from ielseg.data import gen_splits

    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    n_val = args.n // 4 if args.n_val is None else args.n_val
    train, val = gen_splits(args.n, n_val, args.size, args.classes, args.seed)
    out = Path(args.out)
    fileio.save_dataset(train, out / "train")
    if n_val:
        fileio.save_dataset(val, out / "val")
    print(f"wrote {len(train)} train / {n_val} val images to {out}")
    return 0


def cmd_inject_noise(args):
    from ielseg.data import NoiseSpec, noisify

    src, out = Path(args.src), Path(args.out)
    train_dir = _split_dir(src, "train")
    ds = fileio.load_dataset(train_dir)
    if ds.split != "train":
        raise ValueError(f"{train_dir} holds a {ds.split} split; noise goes on training data only")
    try:
        spec = NoiseSpec(args.window, args.fraction, ds.classes, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    noisy = noisify(ds, spec)
    if train_dir == src:
        fileio.save_dataset(noisy, out)
    else:
        fileio.save_dataset(noisy, out / "train")
        if (src / "val").is_dir():
            shutil.copytree(src / "val", out / "val", dirs_exist_ok=True)
    changed = sum(int((a.ids != b.ids).sum()) for a, b in zip(noisy.noisy_masks, noisy.clean_masks))
    total = sum(m.ids.size for m in noisy.clean_masks)
    print(f"corrupted {changed} of {total} training pixels ({changed / total:.4f})")
    return 0


def cmd_evolve(args):
    if args.pde == "curve" and args.mode == "fel":
        raise UsageError("only the inverse (--mode iel) curve-motion layer is defined")
    fields = fileio.read_fld_records(args.src)
    out = []
    for U in fields:
        if args.pde == "heat":
            if args.mode == "iel":
                V = apply_iels(U, DiffusionConfig(args.dt, args.steps, U.spacing))
            else:
                V = U.with_values(fel_array(U.values, args.dt, args.steps, U.spacing))
        else:
            if args.channel >= U.channels:
                raise UsageError(f"--channel {args.channel} out of range for {U.channels} channels")
            cfg = cm.CurveMotionConfig(args.dt, args.steps, args.dilation, args.radii)
            V = cm.run_curve_motion_iels(U, args.channel, cfg)
        out.append(V)
    fileio.write_fld(args.out, out)
    print(f"evolved {len(out)} field(s) -> {args.out}")
    return 0


def cmd_convexity(args):
    m = fileio.read_pgm(args.src)
    f = LabelMask((m.ids > 0).astype(np.int64), 2)
    c = cm.concave_set(f, args.radii)
    fileio.write_pgm(args.out, c)
    print(f"{int(c.ids.sum())} violating pixels for K={list(args.radii)}")
    return 0


def cmd_verify(args):
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    ok = True
    for name in names:
        res = verify.run_suite(name, seed=args.seed)
        for line in res.lines():
            print(line)
        print(f"suite {name}: {'PASS' if res.passed else 'FAIL'} ({res.seconds:.2f}s)")
        ok &= res.passed
    return 0 if ok else 1


def make_variant(args) -> LossVariant:
    tag = VARIANTS[args.variant]
    if tag in ("iel_heat", "fel_heat"):
        return LossVariant(tag, diffusion=DiffusionConfig(args.dt, args.layers))
    if tag == "curve_iel":
        return LossVariant.curve_iel(cm.CurveMotionConfig(args.dt, args.layers, args.dilation, args.radii))
    if tag in DEFAULT_LAMBDA:
        lam = DEFAULT_LAMBDA[tag] if args.lam is None else args.lam
        return LossVariant(tag, lam=lam)
    return LossVariant.plain()


def _variant_meta(v: LossVariant) -> dict:
    meta = {"tag": v.tag, "lam": v.lam}
    if v.diffusion is not None:
        meta["diffusion"] = [v.diffusion.dt, v.diffusion.n_layers]
    if v.curve is not None:
        c = v.curve
        meta["curve"] = [c.dt, c.n_steps, c.dilation, list(c.radii)]
    return meta


def _variant_from_meta(meta: dict) -> LossVariant:
    diffusion = DiffusionConfig(*meta["diffusion"]) if "diffusion" in meta else None
    curve = None
    if "curve" in meta:
        dt, n, d, radii = meta["curve"]
        curve = cm.CurveMotionConfig(dt, n, d, tuple(radii))
    return LossVariant(meta["tag"], diffusion, curve, meta.get("lam", 0.0))


def cmd_train(args):
    from ielseg.data import preprocess_labels
    from ielseg.trainer import ExperimentConfig, train

    try:
        variant = make_variant(args)
        cfg = ExperimentConfig(args.epochs, args.lr, args.batch, args.seed, variant, track_train=args.track_train)
    except ValueError as exc:
        raise UsageError(str(exc))
    root = Path(args.data)
    train_set = fileio.load_dataset(_split_dir(root, "train"))
    val_dir = root / "val"
    val_set = fileio.load_dataset(val_dir) if (val_dir / "meta.json").exists() else None
    if args.preprocess_steps:
        smoothed = [preprocess_labels(m, args.preprocess_steps, args.dt) for m in train_set.targets]
        train_set = replace(train_set, noisy_masks=smoothed)
    params, history = train(cfg, train_set, val_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.save_params(out / "params.fld", params)
    (out / "variant.json").write_text(json.dumps(_variant_meta(variant), sort_keys=True) + "\n")
    fileio.write_metrics_csv(out / "metrics.csv", history)
    (out / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    last = history[-1]
    print(f"final {last['split']} dice={last['dice']:.6f} miou={last['miou']:.6f} noise_rate={last['noise_rate']:.6f}")
    return 0


def cmd_eval(args):
    from ielseg.trainer import evaluate, predict_logits

    params = fileio.load_params(args.params)
    sidecar = Path(args.params).with_name("variant.json")
    variant = _variant_from_meta(json.loads(sidecar.read_text())) if sidecar.exists() else LossVariant.plain()
    ds = fileio.load_dataset(_split_dir(Path(args.data), args.split))
    post = (args.postprocess_steps, args.postprocess_dt) if args.postprocess_steps else None
    logits = predict_logits(params, ds.image_batch(), variant)
    loss = float(ad.softmax_cross_entropy(ad.tensor(logits), ds.mask_batch(ds.clean_masks)).value)
    rec = evaluate(params, ds, variant, postprocess=post, loss=loss)
    row = {"epoch": "", "split": ds.split, "variant": variant.tag, "dice": rec.mean_dice,
           "miou": rec.miou, "noise_rate": rec.noise_rate, "loss": rec.loss}
    sys.stdout.write(fileio.format_metrics_csv([row]))
    return 0


def cmd_bench_merge(args):
    from ielseg.verify import time_merge

    rng = np.random.default_rng(args.seed)
    U = Field(rng.standard_normal((1, args.size, args.size)))
    seq, mer = time_merge(U, args.layers, args.dt, args.repeats)
    ref = apply_iels(U, DiffusionConfig(args.dt, args.layers)).values.astype(np.float64)
    got = apply_merged(U, merged_coeffs(args.layers, args.dt)).values.astype(np.float64)
    rel = float(np.abs(got - ref).max() / np.abs(ref).max())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["layers", "dt", "size", "sequential_s", "merged_s", "ratio", "max_rel_diff"])
    w.writerow([args.layers, args.dt, args.size, f"{seq:.9f}", f"{mer:.9f}", f"{mer / seq:.4f}", f"{rel:.3e}"])
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "inject-noise": cmd_inject_noise,
    "evolve": cmd_evolve,
    "convexity": cmd_convexity,
    "verify": cmd_verify,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-merge": cmd_bench_merge,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _echo(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ielseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"ielseg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())
