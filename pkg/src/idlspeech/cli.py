"""Command-line entry point: ``idlspeech <command> ...``.

Every command writes into a run directory (``--out``; default
``$IDLSPEECH_RUN_ROOT/<command>``, falling back to ``./runs/<command>``)
that receives ``config.json`` with the resolved arguments.  A ``.lock`` file
keeps two processes from writing the same directory.

Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, pipeline
from .augment import AugmentKind, augment_segment
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import ManifestError, load_manifest, synth_corpus
from .probe import probe_report, run_probe
from .sampling import (
    apply_pseudo_labels,
    assign_pseudo_labels,
    kmeans_fit,
    read_pseudo_labels,
    write_pseudo_labels,
)
from .train import (
    TrainConfig,
    embed_segments,
    evaluate,
    finetune_ensemble,
    pretrain,
    write_loss_curve,
)

RUN_ROOT_ENV = "IDLSPEECH_RUN_ROOT"
PROFILE_LR = {"A": 1e-3, "B": 1e-2}

log = logging.getLogger("idlspeech")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@contextmanager
def run_dir(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"run directory {path} is locked by another process ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _write_config(out: Path, args: argparse.Namespace, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(resolved)
    cfg["version"] = __version__
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _manifest(args):
    entries = load_manifest(args.manifest)
    if not entries:
        raise ManifestError(f"{args.manifest}: manifest is empty")
    return entries


def _train_config(args, **overrides) -> TrainConfig:
    fields = dict(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, tau=args.tau)
    fields.update(overrides)
    return TrainConfig(**fields)


# -- commands ----------------------------------------------------------------------------


def cmd_synth(args, out: Path) -> None:
    fractions = tuple(args.split_fractions) if args.split_fractions else None
    waves, entries = synth_corpus(args.speakers, args.utts, args.seed, labeled=args.labeled,
                                  depressed_fraction=args.depressed_fraction, split_fractions=fractions,
                                  speaker_prefix=args.prefix)
    manifest = pipeline.write_corpus(out, waves, entries)
    _write_config(out, args)
    print(manifest)


def cmd_features(args, out: Path) -> None:
    entries = _manifest(args)
    pipeline.extract_features(args.manifest, entries, out / "features")
    _write_config(out, args, n_entries=len(entries))
    print(out / "features")


def cmd_pretrain(args, out: Path) -> None:
    strategy = args.strategy.upper()
    if strategy == "PIS" and args.pseudo_labels is None:
        raise UsageError("pretrain --strategy pis needs --pseudo-labels (run `cluster` on a DS checkpoint first)")
    entries = _manifest(args)
    train_entries = pipeline.select(entries, "train")
    val_entries = pipeline.select(entries, "validation")
    feats = pipeline.load_features(entries, args.features)
    pool = pipeline.pretrain_pool(train_entries, feats)
    val_pool = pipeline.pretrain_pool(val_entries, feats) if val_entries else None
    if args.pseudo_labels is not None:
        apply_pseudo_labels(pool, read_pseudo_labels(args.pseudo_labels))
    kind = AugmentKind(args.augment)
    audio = pipeline.load_audio(args.manifest, entries) if kind.signal_level else None
    init = load_checkpoint(args.init).params if args.init else None
    cfg = _train_config(args, lr0=args.lr, strategy=strategy, augment=kind.value)
    ck = pretrain(pool, cfg, val_pool=val_pool, audio=audio, init=init)
    save_checkpoint(out / "pretrain.ckpt", ck.params, ck.meta)
    write_loss_curve(out / "loss_curve.csv", ck.meta["loss_curve"])
    _write_config(out, args, train_config=cfg.to_dict(), n_segments=len(pool))
    print(out / "pretrain.ckpt")


def cmd_cluster(args, out: Path) -> None:
    entries = _manifest(args)
    ck = load_checkpoint(args.checkpoint)
    n_clusters = args.clusters or int(ck.meta.get("config", {}).get("batch_size", 20))
    pool = pipeline.pretrain_pool(pipeline.select(entries, "train"), pipeline.load_features(entries, args.features))
    emb = embed_segments(ck.params, pool)
    model = kmeans_fit(emb, n_clusters, args.seed)
    assign_pseudo_labels(pool, model, embeddings=emb)
    write_pseudo_labels(out / "pseudo_labels.jsonl", pool)
    _write_config(out, args, n_clusters=n_clusters, inertia=model.inertia, n_iter=model.n_iter,
                  cluster_sizes=np.bincount([s.pseudo_label for s in pool], minlength=n_clusters).tolist())
    print(out / "pseudo_labels.jsonl")


def cmd_finetune(args, out: Path) -> None:
    profile = args.profile.upper()
    entries = _manifest(args)
    train_entries = pipeline.select(entries, "train")
    utts = pipeline.sessions(train_entries, pipeline.load_features(train_entries, args.features))
    init = load_checkpoint(args.init) if args.init else None
    lr = args.lr if args.lr is not None else PROFILE_LR[profile]
    cfg = _train_config(args, lr0=lr)
    models = finetune_ensemble(utts, init, cfg, k_models=args.k_models, profile=profile)
    paths = []
    for m, ck in enumerate(models):
        ck.meta["init"] = str(args.init) if args.init else None
        paths.append(save_checkpoint(out / f"member_{m}.ckpt", ck.params, ck.meta))
    _write_config(out, args, train_config=cfg.to_dict(), members=[p.name for p in paths])
    for p in paths:
        print(p)


def cmd_eval(args, out: Path) -> None:
    entries = pipeline.select(_manifest(args), args.split)
    if not entries:
        raise ManifestError(f"no entries in split {args.split!r}")
    utts = pipeline.sessions(entries, pipeline.load_features(entries, args.features))
    models = [load_checkpoint(p) for p in args.checkpoints]
    report = evaluate(models, utts)
    (out / "eval_report.json").write_text(report.to_json() + "\n")
    _write_config(out, args, n_utterances=len(utts))
    print(report.to_json())


def cmd_probe(args, out: Path) -> None:
    ck = load_checkpoint(args.checkpoint)
    stage = ck.meta.get("stage")
    expected = "pretrain" if args.no_finetune else "finetune"
    if stage is not None and stage != expected:
        raise UsageError(f"probe{' --no-finetune' if args.no_finetune else ''} expects a {expected} "
                         f"checkpoint, got stage {stage!r}")
    entries = pipeline.select(_manifest(args), args.split)
    if not entries:
        raise ManifestError(f"no entries in split {args.split!r}")
    pool = pipeline.pretrain_pool(entries, pipeline.load_features(entries, args.features))
    emb = embed_segments(ck.params, pool)
    acc, _, test = run_probe(emb, [s.speaker_id for s in pool], seed=args.seed)
    source = "pretrained" if args.no_finetune else "finetuned"
    report = probe_report(acc, len({s.speaker_id for s in pool}), len(test), source)
    (out / "probe_report.json").write_text(report + "\n")
    _write_config(out, args)
    print(report)


def cmd_augment_preview(args, out: Path) -> None:
    entries = _manifest(args)
    pool = pipeline.pretrain_pool(entries, pipeline.load_features(entries, args.features))
    if not 0 <= args.index < len(pool):
        raise UsageError(f"--index must lie in [0, {len(pool)})")
    seg = pool[args.index]
    kind = AugmentKind(args.kind)
    audio = pipeline.load_audio(args.manifest, entries) if kind.signal_level else None
    after = augment_segment(seg, kind, args.seed, audio)
    np.save(out / "before.npy", seg.features)
    np.save(out / "after.npy", after)
    _write_config(out, args, segment_key=list(seg.key))
    print(out / "after.npy")


# -- parser ------------------------------------------------------------------------------


def _common_train(p, epochs=100, lr=None):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--tau", type=float, default=10.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="idlspeech", description="Instance-discrimination pre-training for speech depression detection.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", type=Path, help=f"run directory (default ${RUN_ROOT_ENV}/{name})")
        p.add_argument("--seed", type=int, default=0)
        return p

    def with_data(p):
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--features", type=Path, required=True, help="feature cache directory")
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus and manifest")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True, help="utterances per speaker")
    p.add_argument("--labeled", action="store_true", help="assign depression labels and train/validation/test splits")
    p.add_argument("--depressed-fraction", type=float, default=0.25)
    p.add_argument("--split-fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--prefix", default="spk", help="speaker id prefix")

    p = add("features", cmd_features, "extract log-mel features for every manifest entry")
    p.add_argument("--manifest", type=Path, required=True)

    p = with_data(add("pretrain", cmd_pretrain, "instance-discrimination pre-training"))
    p.add_argument("--strategy", type=str.lower, choices=["rs", "ds", "pis"], default="ds")
    p.add_argument("--augment", type=str.lower, choices=[k.value for k in AugmentKind], default="tm")
    p.add_argument("--pseudo-labels", type=Path, help="cluster output; required for --strategy pis")
    p.add_argument("--init", type=Path, help="start from this checkpoint (stage 2 of PIS)")
    _common_train(p, lr=1e-3)

    p = with_data(add("cluster", cmd_cluster, "k-means pseudo-labels from a stage-1 checkpoint"))
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--clusters", type=int, help="default: the checkpoint's batch size")

    p = with_data(add("finetune", cmd_finetune, "downstream depression classifier"))
    p.add_argument("--profile", type=str.lower, choices=["a", "b"], default="a")
    p.add_argument("--init", type=Path, help="pre-trained checkpoint; omit for the baseline")
    p.add_argument("--k-models", type=int, default=5, help="ensemble size for profile a")
    _common_train(p)

    p = with_data(add("eval", cmd_eval, "F1 report for a set of fine-tuned checkpoints"))
    p.add_argument("--checkpoints", type=Path, nargs="+", required=True)
    p.add_argument("--split", default="test")

    p = with_data(add("probe", cmd_probe, "linear speaker probe on frozen embeddings"))
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--no-finetune", action="store_true", help="probe a pre-trained (not fine-tuned) checkpoint")
    p.add_argument("--split", default="test")

    p = with_data(add("augment-preview", cmd_augment_preview, "save one segment before and after augmentation"))
    p.add_argument("--kind", type=str.lower, choices=[k.value for k in AugmentKind], default="specaug")
    p.add_argument("--index", type=int, default=0, help="segment index in the pooled manifest")
    return parser


VALIDATION_ERRORS = (UsageError, ValueError, FileNotFoundError, KeyError)


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    out = args.out or Path(os.environ.get(RUN_ROOT_ENV, "runs")) / args.command
    try:
        with run_dir(Path(out)) as path:
            args.func(args, path)
    except VALIDATION_ERRORS as exc:
        print(f"idlspeech {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"idlspeech {args.command}: runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
