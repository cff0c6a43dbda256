"""Command-line entry point: ``steam-eeg <subcommand> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Every subcommand writes ``run-config.json`` with the effective configuration
into its output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
COMMANDS = ("decompose", "image", "train", "evaluate", "ablate", "viz-features")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="steam-eeg", description="SSA + field-imaging EEG classifier")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "decompose": "write trend/seasonal/noise CSVs per sample and channel",
        "image": "write the field image of every sample as a binary PGM",
        "train": "fit a model; writes checkpoint, history and metrics",
        "evaluate": "score a checkpoint on a labelled file",
        "ablate": "train the full model and each single-component removal",
        "viz-features": "dump field images and per-layer 2D feature maps",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--input", help="dataset file (.ts or .tsv)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--config", help="JSON run configuration; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--window", type=int, help="SSA embedding window")
        p.add_argument("--segments", type=int, help="time segments per channel in the region grid")
        p.add_argument("--states", type=int, help="discrete states per region")
        p.add_argument("--threads", type=int, help="worker thread cap (env STEAM_EEG_THREADS)")
        p.add_argument("--ablation", action="append", choices=("no_ssa", "no_mtf", "no_ccsa"),
                       help="remove a component (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "ablate"):
            p.add_argument("--test-input", help="held-out file scored after training")
            p.add_argument("--epochs", type=int)
        if name in ("image", "evaluate", "viz-features"):
            p.add_argument("--checkpoint", help="trained model (required for evaluate)")
        if name in ("decompose", "image", "viz-features"):
            p.add_argument("--limit", type=int, help="process only the first N samples")
        if name in ("decompose", "train", "ablate", "viz-features"):
            p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    return parser


def _set_threads(args):
    threads = args.threads
    if threads is None and os.environ.get("STEAM_EEG_THREADS"):
        try:
            threads = int(os.environ["STEAM_EEG_THREADS"])
        except ValueError:
            raise UsageError("STEAM_EEG_THREADS must be an integer") from None
    if threads is not None:
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        # only effective when numerical libraries are not yet loaded
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    return threads


def resolve_config(args):
    from dataclasses import replace

    from .config import RunConfig

    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.input:
        config.input = args.input
    if getattr(args, "test_input", None):
        config.test_input = args.test_input
    if args.out:
        config.out = args.out
    if args.window is not None:
        config.ssa = replace(config.ssa, window=args.window)
    if args.segments is not None:
        config.mtf = replace(config.mtf, segments=args.segments)
    if args.states is not None:
        config.mtf = replace(config.mtf, states=args.states)
    train = config.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.ablation:
        train = replace(train, ablation=tuple(sorted(set(train.ablation) | set(args.ablation))))
    if getattr(args, "epochs", None) is not None:
        train = replace(train, epochs=args.epochs)
    config.train = train
    config.threads = args.threads
    return config


def _require_file(path, what):
    from .errors import ConfigError

    if not path:
        raise UsageError(f"{what} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} {path!r} does not exist")


def _prepare_out(config):
    os.makedirs(config.out, exist_ok=True)
    config.save(os.path.join(config.out, "run-config.json"))


def _limit(dataset, args):
    n = getattr(args, "limit", None)
    return dataset if n is None else dataset.subset(range(min(n, len(dataset))))


def _sample_name(item, i):
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in item.id)
    return safe or f"sample{i}"


# -- subcommands -----------------------------------------------------------
def cmd_decompose(args, config):
    from .dataio import export_csv, parse_ts
    from .ssa import decompose

    _require_file(config.input, "--input")
    dataset = _limit(parse_ts(config.input), args)
    _prepare_out(config)
    for i, item in enumerate(dataset.items):
        result = decompose(item.values, config.ssa)
        name = _sample_name(item, i)
        for c in range(item.channel_count):
            table = {
                "t": list(range(item.length)),
                "raw": item.values[c].tolist(),
                "trend": result.trend[c].tolist(),
                "seasonal": result.seasonal[c].tolist(),
                "noise": result.noise[c].tolist(),
            }
            export_csv(table, os.path.join(config.out, f"{name}_ch{c}.csv"))
        if i == 0 and not args.no_figures:
            from .plotting import plot_decomposition

            plot_decomposition(item.values[0], result.trend[0], result.seasonal[0], result.noise[0],
                               os.path.join(config.out, f"{name}_ch0.png"), f"{name} channel 0")
    logging.getLogger(__name__).info("decomposed %d samples (window %s)", len(dataset),
                                     config.ssa.window or "auto")
    return 0


def _model_for(dataset, config, args):
    from .model import SteamModel
    from .train import load_checkpoint

    if getattr(args, "checkpoint", None):
        _require_file(args.checkpoint, "--checkpoint")
        model, saved, _ = load_checkpoint(args.checkpoint)
        config.ssa, config.mtf, config.net = saved.ssa, saved.mtf, saved.net
        config.train = saved.train
        return model
    t = config.train
    return SteamModel(dataset.channel_count, dataset.items[0].length, max(dataset.class_count, 2),
                      config.net, config.mtf, t.ablation, t.seed)


def _images(model, dataset, config):
    from . import tensor as T
    from .model import prepare_inputs
    from .tensor import Tensor

    inputs = prepare_inputs(dataset, config.ssa, model.ablation, config.train.normalize)
    model.eval()
    with T.no_grad():
        maps, _, _ = model.extractor(Tensor(inputs))
        images, _, levels = model.images(maps, with_levels=True)
    return images, levels


def cmd_image(args, config):
    from .dataio import export_csv, export_image, parse_ts
    from .errors import ConfigError

    _require_file(config.input, "--input")
    dataset = _limit(parse_ts(config.input), args)
    model = _model_for(dataset, config, args)
    if model.mtf is None:
        raise ConfigError("the no_mtf ablation produces no images")
    _prepare_out(config)
    images, levels = _images(model, dataset, config)
    names = []
    for i, (item, img) in enumerate(zip(dataset.items, images)):
        names.append(_sample_name(item, i))
        export_image(img, os.path.join(config.out, f"{names[-1]}.pgm"))
    # one row per sample, one column per region (row-major channel x segment)
    table = {"sample": names}
    for j in range(levels.shape[1]):
        table[f"node{j}"] = levels[:, j].tolist()
    export_csv(table, os.path.join(config.out, "node_levels.csv"))
    return 0


def cmd_train(args, config):
    from .dataio import export_csv, parse_ts
    from .train import evaluate, fit, history_table, save_checkpoint

    _require_file(config.input, "--input")
    if config.test_input:
        _require_file(config.test_input, "--test-input")
    train = parse_ts(config.input)
    test = parse_ts(config.test_input, train.class_names) if config.test_input else None
    _prepare_out(config)
    result = fit(train, config)
    save_checkpoint(result, os.path.join(config.out, "checkpoint.json"))
    export_csv(history_table(result.history), os.path.join(config.out, "history.csv"))
    if test is not None:
        metrics = evaluate(result.model, test, config)
        export_csv(metrics.rows(), os.path.join(config.out, "metrics.csv"))
        print(f"test accuracy {metrics.accuracy:.4f}  macro F1 {metrics.macro_f1:.4f}")
    if not args.no_figures:
        from .plotting import plot_history

        plot_history(result.history, os.path.join(config.out, "history.png"))
    return 0


def cmd_evaluate(args, config):
    from .dataio import export_csv, parse_ts
    from .train import evaluate, load_checkpoint

    _require_file(args.checkpoint, "--checkpoint")
    _require_file(config.input, "--input")
    model, saved, meta = load_checkpoint(args.checkpoint)
    saved.input, saved.out = config.input, config.out
    dataset = parse_ts(config.input, meta.get("class_names") or None)
    _prepare_out(saved)
    metrics = evaluate(model, dataset, saved)
    export_csv(metrics.rows(), os.path.join(saved.out, "metrics.csv"))
    conf = {f"pred{j}": metrics.confusion[:, j].tolist() for j in range(metrics.confusion.shape[1])}
    export_csv({"true": list(range(metrics.confusion.shape[0])), **conf},
               os.path.join(saved.out, "confusion.csv"))
    print(f"accuracy {metrics.accuracy:.4f}  macro F1 {metrics.macro_f1:.4f}")
    return 0


def cmd_ablate(args, config):
    from dataclasses import replace

    from .dataio import parse_ts
    from .train import ablate

    _require_file(config.input, "--input")
    _require_file(config.test_input, "--test-input")
    if config.train.ablation:
        raise UsageError("ablate runs every variant itself; drop --ablation")
    train = parse_ts(config.input)
    test = parse_ts(config.test_input, train.class_names)
    _prepare_out(config)
    table = ablate(train, test, replace(config), path=os.path.join(config.out, "ablation.csv"))
    if not args.no_figures:
        from .plotting import plot_ablation

        plot_ablation(table, os.path.join(config.out, "ablation.png"))
    for v, a, d in zip(table["variant"], table["accuracy"], table["delta"]):
        print(f"{v:8s} accuracy {a:.4f}  delta {d:+.4f}")
    return 0


def cmd_viz_features(args, config):
    import numpy as np

    from .dataio import export_image, parse_ts
    from .errors import ConfigError

    _require_file(config.input, "--input")
    dataset = _limit(parse_ts(config.input), args)
    model = _model_for(dataset, config, args)
    if model.mtf is None:
        raise ConfigError("the no_mtf ablation has no 2D feature maps")
    _prepare_out(config)
    from .model import prepare_inputs

    inputs = prepare_inputs(dataset, config.ssa, model.ablation, config.train.normalize)
    model.eval()
    images, layers = model.feature_maps(inputs)
    for i, item in enumerate(dataset.items):
        name = _sample_name(item, i)
        export_image(images[i], os.path.join(config.out, f"{name}_image.pgm"))
        per_sample = []
        for layer, maps in layers:
            sample_maps = maps[i]
            per_sample.append((layer, sample_maps))
            for c, fmap in enumerate(sample_maps):
                lo, hi = float(fmap.min()), float(fmap.max())
                scaled = (fmap - lo) / (hi - lo) if hi > lo else np.zeros_like(fmap)
                export_image(scaled, os.path.join(config.out, f"{name}_{layer}_ch{c}.pgm"))
        if not args.no_figures:
            from .plotting import plot_feature_maps

            plot_feature_maps(images[i], per_sample, os.path.join(config.out, f"{name}_features.png"))
    return 0


HANDLERS = {
    "decompose": cmd_decompose,
    "image": cmd_image,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "viz-features": cmd_viz_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _set_threads(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import SteamError

    try:
        config = resolve_config(args)
        return int(HANDLERS[args.command](args, config))
    except UsageError as exc:
        print(f"steam-eeg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (SteamError, ValueError, OSError, KeyError, ArithmeticError) as exc:
        print(f"steam-eeg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
