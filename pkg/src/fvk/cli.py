"""Command-line entry point.

Subcommands mirror the experiment pipeline:

    corpus-gen -> train-multispeaker -> train-encoder -> clone / evaluate
              -> morph -> report

Settings come from per-subcommand flags, optionally seeded from a
``key=value`` config file (--config); flags override the file. Unknown
flags or config keys exit with status 2, runtime failures with 1. The
FVK_THREADS environment variable caps worker threads in parallel sections.
"""

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from . import experiments
from .experiments import MissingArtifact, StageError


class ConfigError(ValueError):
    pass


def _int_pair(text):
    lo, hi = text.split(",")
    return (int(lo), int(hi))


def _int_list(text):
    return tuple(int(tok) for tok in text.split(","))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fvk",
        description="few-shot voice cloning toolkit (synthetic-corpus scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_seed):
        p.add_argument("--out", required=True, help="output directory (one owner at a time)")
        p.add_argument("--config", help="key=value file with defaults for this subcommand")
        p.add_argument("--seed", type=int, required=need_seed,
                       default=None if need_seed else 0)

    p = sub.add_parser("corpus-gen", help="render the synthetic speaker corpus")
    common(p, need_seed=True)
    p.add_argument("--train-speakers", type=int, default=60)
    p.add_argument("--cloning-speakers", type=int, default=16)
    p.add_argument("--texts-per-speaker", type=int, default=24)
    p.add_argument("--cloning-texts-per-speaker", type=int, default=37)
    p.add_argument("--validation-per-speaker", type=int, default=4)
    p.add_argument("--text-symbols", type=_int_pair, default=(3, 6),
                   help="min,max symbols per training text")
    p.add_argument("--cloning-text-symbols", type=_int_pair, default=(4, 8))

    p = sub.add_parser("train-multispeaker", help="train a multi-speaker base model")
    common(p, need_seed=True)
    p.add_argument("--tag", default="adapt128", help="checkpoint tag, e.g. adapt128")
    p.add_argument("--embedding-dim", type=int, default=128)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.0006)
    p.add_argument("--anneal", type=float, default=0.6)
    p.add_argument("--anneal-interval", type=int, default=8000)

    p = sub.add_parser("train-encoder", help="train a speaker encoder for one set size")
    common(p, need_seed=True)
    p.add_argument("--samples", type=int, required=True, help="cloning-set size")
    p.add_argument("--base-tag", default="encoder512")
    p.add_argument("--iterations", type=int, default=220)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.0006)
    p.add_argument("--no-attention", action="store_true",
                   help="plain-averaging ablation instead of sample attention")
    p.add_argument("--val-speakers", type=int, default=25)

    p = sub.add_parser("clone", help="clone held-out speakers and write audio")
    common(p, need_seed=True)
    p.add_argument("--method", required=True,
                   choices=experiments.METHODS)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--base-tag", default=None)
    p.add_argument("--eval-texts", type=int, default=4)
    p.add_argument("--gl-iterations", type=int, default=30)
    p.add_argument("--speaker", action="append", dest="speakers",
                   help="restrict to specific cloning speakers (repeatable)")

    p = sub.add_parser("evaluate", help="run the full cloning benchmark")
    common(p, need_seed=False)
    p.add_argument("--counts", type=_int_list, default=(1, 2, 3, 5, 10))
    p.add_argument("--eval-texts", type=int, default=16)
    p.add_argument("--gl-iterations", type=int, default=30)
    p.add_argument("--classifier-iterations", type=int, default=450)
    p.add_argument("--verifier-iterations", type=int, default=700)

    p = sub.add_parser("morph", help="attribute morphing via embedding arithmetic")
    common(p, need_seed=False)
    p.add_argument("--transform", choices=("gender", "accent"), default="gender")
    p.add_argument("--base-tag", default="adapt128")
    p.add_argument("--eval-texts", type=int, default=3)
    p.add_argument("--gl-iterations", type=int, default=40)
    p.add_argument("--keep-audio", action="store_true")

    p = sub.add_parser("report", help="aggregate benchmark CSVs into tables")
    common(p, need_seed=False)

    return parser


def apply_config_file(parser, argv):
    """Read --config key=value defaults into the chosen subparser."""
    argv = list(argv)
    if not argv or argv[0].startswith("-"):
        return argv
    command = argv[0]
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    sub_actions = next(a for a in parser._actions
                       if isinstance(a, argparse._SubParsersAction))
    if command not in sub_actions.choices:
        return argv
    subparser = sub_actions.choices[command]
    known = {}
    for action in subparser._actions:
        if action.dest not in ("help",):
            known[action.dest] = action
    defaults = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        dest = key.strip().replace("-", "_")
        if dest not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key.strip()}' "
                              f"for subcommand {command}")
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = value.strip().lower() in ("1", "true", "yes")
        elif action.type is not None:
            defaults[dest] = action.type(value.strip())
        else:
            defaults[dest] = value.strip()
    subparser.set_defaults(**defaults)
    # a config-supplied value satisfies "required"
    for action in subparser._actions:
        if action.dest in defaults:
            action.required = False
    return argv


@contextlib.contextmanager
def output_lock(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".fvk.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(
            f"output directory {out_dir} is locked by another invocation "
            f"(remove {lock} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def dispatch(args):
    out = args.out
    if args.command == "corpus-gen":
        return experiments.stage_corpus(
            out, args.seed, train_speakers=args.train_speakers,
            cloning_speakers=args.cloning_speakers,
            texts_per_speaker=args.texts_per_speaker,
            cloning_texts_per_speaker=args.cloning_texts_per_speaker,
            validation_per_speaker=args.validation_per_speaker,
            text_symbols=args.text_symbols,
            cloning_text_symbols=args.cloning_text_symbols,
        )
    if args.command == "train-multispeaker":
        return experiments.stage_train_multispeaker(
            out, args.seed, tag=args.tag, embedding_dim=args.embedding_dim,
            epochs=args.epochs, batch_size=args.batch, lr=args.lr,
            anneal=args.anneal, anneal_interval=args.anneal_interval,
        )
    if args.command == "train-encoder":
        return experiments.stage_train_encoder(
            out, args.seed, n_samples=args.samples, base_tag=args.base_tag,
            iterations=args.iterations, batch_size=args.batch, lr=args.lr,
            use_attention=not args.no_attention,
            val_speaker_count=args.val_speakers,
        )
    if args.command == "clone":
        return experiments.stage_clone(
            out, args.seed, method=args.method, samples=args.samples,
            base_tag=args.base_tag, gl_iterations=args.gl_iterations,
            eval_text_count=args.eval_texts, speakers=args.speakers,
        )
    if args.command == "evaluate":
        return experiments.stage_evaluate(
            out, args.seed, counts=args.counts,
            eval_text_count=args.eval_texts, gl_iterations=args.gl_iterations,
            classifier_iterations=args.classifier_iterations,
            verifier_iterations=args.verifier_iterations,
        )
    if args.command == "morph":
        return experiments.stage_morph(
            out, args.seed, transform=args.transform, base_tag=args.base_tag,
            eval_text_count=args.eval_texts, gl_iterations=args.gl_iterations,
            keep_audio=args.keep_audio,
        )
    if args.command == "report":
        return experiments.stage_report(out)
    raise StageError(f"unhandled subcommand {args.command}")


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FVK_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        argv = apply_config_file(parser, argv)
    except ConfigError as exc:
        print(f"fvk: config error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with output_lock(args.out):
            artifact = dispatch(args)
        print(f"fvk {args.command}: done -> {artifact}")
        return 0
    except MissingArtifact as exc:
        print(f"fvk: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"fvk: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
