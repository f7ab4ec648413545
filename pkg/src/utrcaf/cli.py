"""Command-line front end: ``utrcaf <command> --config <path> [flags]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical
divergence. Every output is written to a temporary sibling and renamed into
place, and its path is printed on success.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import caf, data, evaluate, model, utr
from .config import RunConfig, load_config
from .errors import DivergenceError, UtrcafError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _existing(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _announce(*paths) -> None:
    for p in paths:
        print(p)


def cmd_synth(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out) if args.out else None
    src_path = out_dir / "source.csv" if out_dir else Path(cfg.paths.source_data)
    tgt_path = out_dir / "target.csv" if out_dir else Path(cfg.paths.target_data)
    man_path = out_dir / "manifest.json" if out_dir else Path(cfg.paths.manifest)
    source, target, manifest = data.gen_planted_shift(cfg.data)
    manifest = dataclasses.replace(manifest, source_path=str(src_path), target_path=str(tgt_path))
    data.save_dataset(source, src_path)
    data.save_dataset(target, tgt_path)
    data.save_manifest(manifest, man_path)
    _announce(src_path, tgt_path, man_path)
    return EXIT_OK


def cmd_train_source(cfg: RunConfig, args) -> int:
    ds = data.load_dataset(_existing(args.data or cfg.paths.source_data, "source data"), "source")
    params = model.train_source(ds, cfg.arch, cfg.train)
    out = Path(args.out or cfg.paths.source_model)
    model.save_params(params, out)
    _announce(out)
    return EXIT_OK


def cmd_utr(cfg: RunConfig, args) -> int:
    params = model.load_params(_existing(args.model or cfg.paths.source_model, "model"))
    ds = data.load_dataset(_existing(args.data or cfg.paths.target_data, "data"))
    out = Path(args.out or cfg.paths.utr_dir)
    spectrum = utr.channel_ud(params, ds.features, cfg.perturb, model_tag=str(args.model or cfg.paths.source_model))
    paths = (out / "spectrum.csv", out / "utr_d.csv", out / "utr_i.csv")
    utr.save_spectrum(spectrum, paths[0])
    utr.save_vector(utr.utr_domain(spectrum), paths[1])
    utr.save_vector(utr.utr_instance(spectrum), paths[2])
    _announce(*paths)
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, args) -> int:
    params = model.load_params(_existing(args.source_model or cfg.paths.source_model, "source model"))
    ds = data.load_dataset(_existing(args.target_data or cfg.paths.target_data, "target data"), "target")
    # adaptation is unsupervised: drop any labels the file carries
    unlabeled = model.Dataset(ds.features, None, ds.name)
    state = caf.run_caf(params, unlabeled, cfg.caf)
    out = Path(args.out or cfg.paths.adapt_dir)
    paths = (out / "adapted_model.json", out / "adapted_state.json", out / "loss_history.csv")
    caf.save_state(state, cfg.caf, paths[0], paths[1])
    caf.save_history(state.loss_history, paths[2])
    _announce(*paths)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    params = model.load_params(_existing(args.source_model or cfg.paths.source_model, "source model"))
    source = data.load_dataset(_existing(args.source_data or cfg.paths.source_data, "source data"), "source")
    target = data.load_dataset(_existing(args.target_data or cfg.paths.target_data, "target data"), "target")
    target_labels = target.require_labels()
    d = params.arch.bottleneck_dim
    m = args.split_m or cfg.eval.split_m or d // 2
    spectrum = utr.channel_ud(params, target.features, cfg.perturb)
    split = evaluate.split_channels(utr.utr_domain(spectrum), m)
    report = evaluate.build_report(
        params,
        source,
        target,
        split,
        seed=cfg.eval.seed,
        angle_k=cfg.eval.angle_k,
        logme_max_iter=cfg.eval.logme_max_iter,
        logme_tol=cfg.eval.logme_tol,
    )
    utr_i = utr.utr_instance(spectrum)
    correct = model.predict(params, target.features) == target_labels
    curve = evaluate.accuracy_utr_curve(utr_i, correct, evaluate.default_thresholds(utr_i, cfg.eval.num_thresholds))
    out = Path(args.out or cfg.paths.eval_dir)
    paths = (out / "report.json", out / "report.csv", out / "curve.csv")
    evaluate.save_report(report, paths[0], paths[1])
    evaluate.save_curve(curve, paths[2])
    _announce(*paths)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-source": cmd_train_source,
    "utr": cmd_utr,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="utrcaf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        p.add_argument("--out", default=None, help="output file or directory")
        return p

    add("synth", "generate a planted-shift source/target pair")
    p = add("train-source", "train the source model")
    p.add_argument("--data", default=None, help="labeled source CSV")
    p = add("utr", "compute the uncertainty spectrum and its aggregates")
    p.add_argument("--model", default=None, help="model checkpoint JSON")
    p.add_argument("--data", default=None, help="dataset CSV")
    p = add("adapt", "adapt the source model to unlabeled target data")
    p.add_argument("--source-model", default=None)
    p.add_argument("--target-data", default=None)
    p = add("eval", "score the low/high channel halves and the accuracy curve")
    p.add_argument("--source-model", default=None)
    p.add_argument("--source-data", default=None)
    p.add_argument("--target-data", default=None)
    p.add_argument("--split-m", type=int, default=None, help="size of the low-uncertainty half")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UtrcafError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
