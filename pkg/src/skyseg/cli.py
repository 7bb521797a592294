"""``skyseg`` command line: gen-data, train, eval, infer, verify.

Exit codes: 0 success, 1 config error, 2 data or I/O error, 3 numeric
divergence during training, 4 failed verification property.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data import netpbm
from .data.dataset import DatasetError, generate_dataset, load_dataset
from .data.transforms import rescale_gsd
from .network import ConfigError as NetConfigError
from .network import WeightFormatError, assign_weights, build, head_classes, read_weights

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4

log = logging.getLogger("skyseg")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> C.RunConfig:
    try:
        cfg = C.load(args.config)
        over = {}
        for key in ("data_dir", "out_dir", "weights"):
            val = getattr(args, key, None)
            if val:
                over[key] = str(val)
        for key in ("epochs", "max_steps", "seed"):
            val = getattr(args, key, None)
            if val is not None:
                over[key] = val
        return cfg.with_(**over) if over else cfg
    except (C.ConfigError, NetConfigError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def _load_net(cfg: C.RunConfig, path: str):
    if not path:
        raise CliError(EXIT_CONFIG, "no weights given (--weights or 'weights' in the config)")
    try:
        tensors = read_weights(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read weights: {exc}") from exc
    except WeightFormatError as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    net_cfg = cfg.network()
    heads = head_classes(tensors)
    want = {i: c for i, (_, c) in enumerate(net_cfg.branch_specs)}
    if heads != want:
        raise CliError(EXIT_DATA, f"class counts in weights {heads} do not match task {cfg.task} {want}")
    net = build(net_cfg)
    try:
        assign_weights(net, tensors)
    except WeightFormatError as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    return net


def cmd_gen_data(args) -> int:
    try:
        entries = generate_dataset(args.out, args.count, args.size, args.seed, class_set=args.class_set,
                                   extended=args.extended)
    except OSError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    print(f"wrote {len(entries)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import DivergenceError, train

    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    try:
        samples = load_dataset(cfg.data_dir)
    except DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']} step {row['step']} loss {row['loss']:.4f} pa {row['train_pa']:.4f}",
                  flush=True)

    try:
        res = train(cfg, samples, out, progress)
    except DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    except DivergenceError as exc:
        raise CliError(EXIT_DIVERGED, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    (out / "run.cfg").write_text(C.dump(cfg), encoding="utf-8")
    if cfg.plots:
        from .plotting import loss_curves

        loss_curves(res.rows, out / "loss_curves.png", title=f"{cfg.task} training")
    print(f"trained {res.steps} steps; weights at {out / 'weights.ssnw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import branch_class_names, evaluate, write_reports

    cfg = _load_config(args)
    try:
        samples = load_dataset(cfg.data_dir)
    except DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    net = None if args.oracle else _load_net(cfg, cfg.weights)
    specs = cfg.network().branch_specs
    try:
        cms = evaluate(net, samples, cfg.task, specs, cfg.tile_size, cfg.infer_overlap, cfg.edge_radius,
                       oracle=args.oracle)
    except (DatasetError, ValueError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    out = Path(cfg.out_dir)
    paths = write_reports(cms, cfg.task, out)
    if cfg.plots:
        from .plotting import confusion_figure

        for name, cm in cms.items():
            confusion_figure(cm.counts, branch_class_names(cfg.task, name, cm.n_classes),
                             out / f"confusion_{name}.png", title=name)
    from .metrics import summary

    for name, cm in cms.items():
        s = summary(cm)
        print(f"{name}: miou {s['miou']:.4f} fwiou {s['fwiou']:.4f} pa {s['pixel_accuracy']:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _parse_gsd(text: str) -> tuple[float, float]:
    try:
        src, dst = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"--gsd expects SRC:DST in cm/px, got {text!r}") from exc
    if src <= 0 or dst <= 0:
        raise CliError(EXIT_CONFIG, "GSD values must be positive")
    return src, dst


def cmd_infer(args) -> int:
    from .pipeline import predict_labels

    cfg = _load_config(args)
    gsd = _parse_gsd(args.gsd) if args.gsd else None
    try:
        rgb = netpbm.read_ppm(args.image)
    except (OSError, netpbm.NetpbmError) as exc:
        raise CliError(EXIT_DATA, f"cannot read image: {exc}") from exc
    net = _load_net(cfg, cfg.weights)
    if gsd is not None:
        rgb, _ = rescale_gsd(rgb, None, *gsd)
    wanted = list(net.config.branch_names)
    labels = predict_labels(net, rgb, cfg.tile_size, cfg.infer_overlap)
    main = wanted[0]
    edge_branch = next((n for n in ("edge_binary", "lane_binary", "edge_multi") if n in wanted and n != main), None)
    if args.edges and edge_branch is None:
        raise CliError(EXIT_CONFIG, f"task {cfg.task} has no edge branch")
    try:
        netpbm.write(args.out, labels[main])
        if args.edges:
            edge = labels[edge_branch]
            # binary maps are written as 0/255 so they are visible
            netpbm.write(args.edges, edge * 255 if edge_branch.endswith("_binary") else edge)
    except OSError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    h, w = labels[main].shape
    print(f"wrote {args.out} ({w}x{h}, branch {main})")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES

    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        res = SUITES[name](seed=args.seed)
        print(res.render(), flush=True)
        ok &= res.passed
    return EXIT_OK if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skyseg", description="Aerial-image segmentation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--size", type=int, default=512)
    g.add_argument("--out", required=True)
    g.add_argument("--class-set", default="dense20", choices=("dense20", "lane13", "category11"))
    g.add_argument("--extended", action="store_true", help="use all 20 dense classes")
    g.set_defaults(func=cmd_gen_data)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--data", dest="data_dir", help="dataset directory (overrides config)")
        sp.add_argument("--out", dest="out_dir", help="output directory (overrides config)")

    t = sub.add_parser("train", help="train a network")
    common(t)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a network on a dataset")
    common(e)
    e.add_argument("--weights")
    e.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="label one image")
    i.add_argument("image")
    i.add_argument("--config")
    i.add_argument("--weights")
    i.add_argument("--out", required=True, help="output P5 mask")
    i.add_argument("--edges", help="also write the edge branch as P5")
    i.add_argument("--gsd", help="rescale SRC:DST cm/px before inference")
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("--suite", default="all", choices=("all", "gradcheck", "loss-oracle", "metric-oracle",
                                                       "tile-roundtrip"))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"skyseg: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
