"""``tcblstm`` command line: gen, train, asgd, eval, verify.

Exit codes: 0 success, 1 user or configuration error, 2 internal or oracle
failure.
"""

import argparse
import logging
import os
import sys

from . import config as config_mod
from .asgd import AsgdEpochRecord, asgd_train
from .data import (
    extract_windows,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    summarize,
)
from .errors import OracleError, ShardFailure, TcBlstmError
from .model import evaluate, init_params
from .optim import EpochRecord, train
from .verify import run_checks

log = logging.getLogger("tcblstm")

SPLITS = ("train", "dev", "test")
EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


def dataset_path(directory, split):
    return os.path.join(directory, f"{split}.tcbd")


def _experiment(args):
    exp = config_mod.load(args.config) if args.config else config_mod.Experiment()
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    return exp.validate()


def _data_dir(exp, args):
    return exp.data.dir or args.out


def _load_windows(directory, split, model_config):
    utts = load_dataset(dataset_path(directory, split))
    ds = extract_windows(utts, model_config.tc.context_frames)
    width = model_config.tc.context_frames * model_config.feat_dim
    if ds.windows.shape[1] != width:
        raise config_mod.ConfigError(
            f"{split} frames have {ds.windows.shape[1] // model_config.tc.context_frames} features, "
            f"model expects feat_dim={model_config.feat_dim}"
        )
    return ds


def cmd_gen(args, out=sys.stdout):
    exp = _experiment(args)
    if not os.path.isdir(args.out):
        raise FileNotFoundError(f"output directory {args.out!r} does not exist")
    data = generate_synthetic(exp.data.spec)
    for split in SPLITS:
        save_dataset(dataset_path(args.out, split), getattr(data, split))
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        for split in SPLITS:
            fh.write(f"[{split}]\n")
            fh.write(summarize(getattr(data, split), exp.data.spec.num_classes))
    print(f"wrote {', '.join(dataset_path(args.out, s) for s in SPLITS)}", file=out)
    return EXIT_OK


def _write_asgd_log(directory, records):
    with open(os.path.join(directory, "asgd.log"), "w", encoding="utf-8") as fh:
        fh.write("#" + "\t".join(AsgdEpochRecord.COLUMNS) + "\n")
        for record in records:
            fh.write(record.line() + "\n")


def cmd_train(args, out=sys.stdout):
    exp = _experiment(args)
    mc = exp.model
    data_dir = _data_dir(exp, args)
    train_set = _load_windows(data_dir, "train", mc)
    dev_set = _load_windows(data_dir, "dev", mc)

    state = best = None
    if args.resume:
        ckpt = load_checkpoint(args.resume, variant=mc.variant)
        if ckpt.config != mc:
            raise config_mod.ConfigError(f"checkpoint {args.resume} was trained with a different model config")
        params, state, best = ckpt.params, ckpt.state, ckpt.best_params
    else:
        params = init_params(mc)

    log_path = os.path.join(args.out, "train.log")
    fh = open(log_path, "a" if args.resume else "w", encoding="utf-8")
    if not args.resume:
        fh.write("#" + "\t".join(EpochRecord.COLUMNS) + "\n")

    def on_epoch(record, st, current, best_so_far):
        fh.write(record.line() + "\n")
        fh.flush()
        print(record.line(), file=out)
        save_checkpoint(os.path.join(args.out, "last.tckp"), mc, current, st, best_so_far)

    try:
        result = train(mc, params, train_set, dev_set, exp.optim, state=state, best_params=best,
                       seed=exp.seed, on_epoch=on_epoch)
    finally:
        fh.close()
    save_checkpoint(os.path.join(args.out, "best.tckp"), mc, result.params, result.state)
    if not args.resume and not result.log:
        save_checkpoint(os.path.join(args.out, "last.tckp"), mc, result.last_params, result.state)
    return EXIT_OK


def cmd_asgd(args, out=sys.stdout):
    exp = _experiment(args)
    mc = exp.model
    data_dir = _data_dir(exp, args)
    train_set = _load_windows(data_dir, "train", mc)
    dev_set = _load_windows(data_dir, "dev", mc)
    try:
        result = asgd_train(mc, init_params(mc), train_set, dev_set, exp.asgd, seed=exp.seed)
    except ShardFailure as exc:
        _write_asgd_log(args.out, getattr(exc, "log", []))
        raise
    _write_asgd_log(args.out, result.log)
    for record in result.log:
        print(record.line(), file=out)
    save_checkpoint(os.path.join(args.out, "best.tckp"), mc, result.params, result.state)
    return EXIT_OK


def cmd_eval(args, out=sys.stdout):
    exp = _experiment(args)
    ckpt_path = args.checkpoint or os.path.join(args.out, "best.tckp")
    ckpt = load_checkpoint(ckpt_path)
    mc = ckpt.config
    if args.dataset:
        directory, name = os.path.split(args.dataset)
        split = name[: -len(".tcbd")] if name.endswith(".tcbd") else name
        ds = _load_windows(directory or ".", split, mc)
    else:
        ds = _load_windows(_data_dir(exp, args), "dev", mc)
    loss, acc = evaluate(ckpt.params, mc, ds.windows, ds.targets)
    print(f"frame_accuracy\t{acc!r}", file=out)
    print(f"cross_entropy\t{loss!r}", file=out)
    return EXIT_OK


def cmd_verify(args, out=sys.stdout):
    seed = args.seed if args.seed is not None else 0
    results = run_checks(seed=seed)
    for r in results:
        print(r.line(), file=out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_INTERNAL if failed else EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "asgd": cmd_asgd, "eval": cmd_eval, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="tcblstm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value experiment file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        if name == "train":
            p.add_argument("--resume", help="continue from a last.tckp checkpoint")
        if name == "eval":
            p.add_argument("--checkpoint", help="default: OUT/best.tckp")
            p.add_argument("--dataset", help="default: the dev split in the data directory")
    return parser


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, out=out)
    except (OracleError, ShardFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (TcBlstmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # anything else is a bug
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
