"""``align`` command line entry point.

Exit codes: 0 success, 1 validation error (bad flags, missing or malformed
inputs), 2 runtime error. Results go to stdout (or ``--out``) as JSON;
per-epoch training logs go to ``--log`` or stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    build_queries,
    load_attribute_annotations,
    load_manifest,
    load_pose_sequences,
    split_dataset,
)
from .errors import (
    ContractViolation,
    IntegrityError,
    NotFoundError,
    UnsupportedVersionError,
    ValidationError,
)
from .pipeline import REMOTE_ENV, embed_ids, load_config, load_corpus, provider_for, training_set
from .retrieval import (
    RetrievalIndex,
    action_topk_accuracy,
    evaluate_retrieval,
    multilabel_f1,
    per_attribute_ndcg,
    synonym_zero_shot,
)
from .synthetic import make_action_dataset, make_gait_dataset, write_action_dataset, write_gait_dataset
from .textbridge import (
    CaptionStore,
    EmbeddingProvider,
    RemoteEmbedder,
    build_action_prompt,
    build_attribute_prompt,
    load_synonyms,
    save_embedding_table,
)
from .trainer import TrainConfig, train

_VALIDATION_ERRORS = (ValidationError, ContractViolation, NotFoundError, IntegrityError, UnsupportedVersionError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _emit(payload, out=None):
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ks(text):
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be >= 1")
    return ks


def _overrides(args):
    return {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "objective": args.objective,
        "precision": args.precision,
    }


def _open_ckpt(path):
    if not Path(path).exists():
        raise ValidationError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.train_config)
    return ckpt, config, load_corpus(config.data, config.seed)


def _eval_split(config, requested):
    if requested:
        return requested
    return "all" if config.data.get("train_on") == "all" else "test"


# ----------------------------------------------------------------------------
# subcommands

def cmd_make_synthetic(args):
    if args.kind == "action":
        data = make_action_dataset(args.classes, args.per_class, seed=args.seed)
        config = write_action_dataset(args.dir, data, dim=args.dim, seed=args.seed)
        n = len(data.sequences)
    else:
        data = make_gait_dataset(args.n, dim=args.dim, seed=args.seed)
        config = write_gait_dataset(args.dir, data, seed=args.seed)
        n = len(data.sequences)
    files = sorted(p.name for p in Path(args.dir).iterdir())
    return {"kind": args.kind, "dir": str(args.dir), "sequences": n, "files": files, "config": config}


def cmd_prepare_data(args):
    seqs = load_pose_sequences(args.poses)
    if not seqs:
        raise ValidationError("pose file contains no sequences")
    report = {
        "sequences": len(seqs),
        "joints": sorted({s.joints for s in seqs}),
        "channels": sorted({s.channels for s in seqs}),
        "frames": {"min": min(s.n_frames for s in seqs), "max": max(s.n_frames for s in seqs)},
    }
    if args.attributes:
        if not args.manifest:
            raise ValidationError("--attributes requires --manifest")
        manifest = load_manifest(args.manifest)
        ann = load_attribute_annotations(args.attributes, manifest)
        missing = sorted({s.id for s in seqs} - set(ann))
        if missing:
            raise ValidationError(f"sequences without annotations: {missing[:5]}")
        report["attributes"] = len(manifest)
        report["attribute_combinations"] = len({a.bitset for a in ann.values()})
    split = split_dataset([s.id for s in seqs], args.seed)
    report["split"] = {k: len(v) for k, v in split.to_dict().items()}
    if args.split_out:
        Path(args.split_out).write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")
        report["split_file"] = str(args.split_out)
    return report


def cmd_gen_prompts(args):
    prompts = []
    if args.attributes:
        if not args.manifest:
            raise ValidationError("--attributes requires --manifest")
        ann = load_attribute_annotations(args.attributes, load_manifest(args.manifest))
        seen = {}
        for sid in sorted(ann):
            av = ann[sid]
            if av.bitset not in seen and av.active.any():
                seen[av.bitset] = build_attribute_prompt(av)
        prompts = [{"key": k, "kind": "attributes", "prompt": seen[k]} for k in sorted(seen)]
    elif args.poses:
        labels = sorted({s.label for s in load_pose_sequences(args.poses) if s.label})
        prompts = [{"key": lb, "kind": "action", "prompt": build_action_prompt(lb)} for lb in labels]
    for label in args.label or []:
        prompts.append({"key": label, "kind": "action", "prompt": build_action_prompt(label)})
    if not prompts:
        raise ValidationError("nothing to prompt for: give --poses, --attributes or --label")
    return {"prompts": prompts}


def cmd_embed(args):
    texts = set(args.text or [])
    if args.captions:
        store = CaptionStore.load(args.captions)
        texts.update(r.text for r in store)
        texts.update(r.key for r in store if r.source == "original")
    if args.synonyms:
        for label, syns in load_synonyms(args.synonyms).items():
            texts.add(label)
            texts.update(syns)
    if not texts:
        raise ValidationError("no texts to embed: give --captions, --synonyms or --text")
    url = args.remote_url or os.environ.get(REMOTE_ENV)
    remote = RemoteEmbedder(url, args.dim, args.timeout) if url else None
    provider = EmbeddingProvider(args.dim, remote=remote, fallback=remote is None, seed=args.seed)
    ordered = sorted(texts)
    vectors = provider.embed_many(ordered)
    save_embedding_table(args.table, args.dim, dict(zip(ordered, vectors)))
    return {"table": str(args.table), "dim": args.dim, "texts": len(ordered),
            "source": "remote" if remote else "hash-fallback"}


def cmd_train(args):
    config = load_config(args.config, _overrides(args))
    corpus = load_corpus(config.data, config.seed)
    data = training_set(config, corpus)
    provider = None if config.objective == "bce-multilabel" else provider_for(config)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else sys.stderr

    def on_epoch(epoch, loss, wall_ms):
        log_fh.write(json.dumps({"epoch": epoch, "loss": loss, "wall_ms": round(wall_ms, 3)}) + "\n")
        log_fh.flush()

    try:
        ckpt = train(config, data, provider, on_epoch=on_epoch)
    finally:
        if args.log:
            log_fh.close()
    out = args.out or "checkpoint.bin"
    save_checkpoint(ckpt, out)
    return {
        "checkpoint": str(out),
        "epochs": ckpt.epoch,
        "final_loss": ckpt.loss_history[-1],
        "loss_history": ckpt.loss_history,
        "config": config.to_dict(),
    }


def _class_embeddings(config, corpus, classes, provider, use_descriptions):
    if not use_descriptions:
        return provider.embed_many(classes)
    texts = []
    for c in classes:
        generated = corpus.captions.texts(c, "generated") if corpus.captions else []
        if not generated:
            raise ValidationError(f"no generated description for class {c!r}")
        texts.append(sorted(generated)[0])
    return provider.embed_many(texts)


def _report(method, config, **extra):
    base = {"method": method, "K": [], "ndcg": [], "excluded_queries": 0, "per_attribute": {}, "topk": {}}
    base.update(extra)
    base["config"] = config.to_dict()
    return base


def cmd_eval_action(args):
    ckpt, config, corpus = _open_ckpt(args.ckpt)
    if corpus.kind != "action":
        raise ValidationError("eval-action needs an action-labelled checkpoint")
    ids = corpus.ids(_eval_split(config, args.split))
    emb = embed_ids(ckpt, corpus, ids)
    labels = [corpus.sequences[i].label for i in ids]
    classes = sorted({s.label for s in corpus.sequences.values()})
    provider = provider_for(config)
    use_desc = args.use_descriptions or config.use_descriptions
    label_emb = _class_embeddings(config, corpus, classes, provider, use_desc)
    topk = {str(k): action_topk_accuracy(emb, labels, classes, label_emb, config.metric_mode, k)
            for k in (1, 5) if k <= len(classes)}
    return _report(config.metric_mode, config, topk=topk, use_descriptions=use_desc, samples=len(ids))


def cmd_eval_synonyms(args):
    ckpt, config, corpus = _open_ckpt(args.ckpt)
    synonyms = load_synonyms(args.synonyms) if args.synonyms else corpus.synonyms
    if not synonyms:
        raise ValidationError("no synonym map: pass --synonyms or set data.synonyms")
    ids = corpus.ids(_eval_split(config, args.split))
    emb = embed_ids(ckpt, corpus, ids)
    labels = [corpus.sequences[i].label for i in ids]
    classes = sorted({s.label for s in corpus.sequences.values()})
    provider = provider_for(config)
    topk = {str(k): synonym_zero_shot(emb, labels, classes, synonyms, provider, config.metric_mode, k)
            for k in (1, 5) if k <= len(classes)}
    baseline = {str(k): action_topk_accuracy(emb, labels, classes, provider.embed_many(classes),
                                             config.metric_mode, k)
                for k in (1, 5) if k <= len(classes)}
    return _report(config.metric_mode, config, topk=topk, label_topk=baseline, samples=len(ids))


def cmd_eval_retrieval(args):
    ckpt, config, corpus = _open_ckpt(args.ckpt)
    if corpus.kind != "gait":
        raise ValidationError("eval-retrieval needs an attribute-annotated checkpoint")
    split = args.split or "test"
    ids = sorted(corpus.ids(split))
    ann = {i: corpus.annotations[i] for i in ids}
    queries = build_queries(ann, corpus.captions)
    provider = provider_for(config)
    q_emb = provider.embed_many([q.description for q in queries])
    mode = args.method if args.method != "random" else config.metric_mode
    emb = embed_ids(ckpt, corpus, ids)
    index = RetrievalIndex(ids, emb, np.stack([ann[i].active for i in ids]),
                           "euclidean" if mode == "euclidean" else "cosine")
    report = evaluate_retrieval(queries, q_emb, index, args.k, args.method, args.seed)
    if args.per_attribute:
        report.per_attribute = per_attribute_ndcg(queries, q_emb, index, corpus.manifest, 5, args.method, args.seed)
    out = report.to_dict()
    out["queries"] = len(queries)
    out["config"] = config.to_dict()
    return out


def cmd_classify(args):
    overrides = _overrides(args)
    overrides["objective"] = "bce-multilabel"
    overrides["metric_mode"] = "euclidean"
    config = load_config(args.config, overrides)
    if config.data.get("kind") != "gait":
        raise ValidationError("classify needs attribute-annotated (gait) data")
    config.data["train_on"] = "train"
    corpus = load_corpus(config.data, config.seed)
    data = training_set(config, corpus)
    ckpt = train(config, data, None)
    if args.out:
        save_checkpoint(ckpt, args.out)
    ids = corpus.ids(args.split)
    logits = embed_ids(ckpt, corpus, ids, "euclidean")
    probs = 1.0 / (1.0 + np.exp(-logits))
    targets = np.stack([corpus.annotations[i].active for i in ids])
    f1, macro = multilabel_f1(probs, targets, args.threshold)
    return {
        "split": args.split,
        "samples": len(ids),
        "per_attribute_f1": {n: float(v) for n, v in zip(corpus.manifest, f1)},
        "macro_f1": macro,
        "final_loss": ckpt.loss_history[-1],
        "checkpoint": args.out,
        "config": config.to_dict(),
    }


# ----------------------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--epochs", type=int, help="override config epochs")
    p.add_argument("--lr", type=float, help="override learning rate")
    p.add_argument("--batch-size", type=int, help="override batch size")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--objective", choices=["contrastive", "mse", "triplet", "bce-multilabel"],
                   help="override objective")
    p.add_argument("--precision", choices=["float64", "float32"], help="override numeric precision")


def build_parser():
    parser = _Parser(prog="align", description="Align skeleton motion with frozen text embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("make-synthetic", help="generate a desk-scale synthetic dataset and config")
    p.add_argument("--kind", choices=["action", "gait"], default="action", help="dataset flavour")
    p.add_argument("--dir", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--classes", type=int, default=8, help="action classes")
    p.add_argument("--per-class", type=int, default=8, help="sequences per action class")
    p.add_argument("--n", type=int, default=750, help="gait sequences")
    p.add_argument("--dim", type=int, default=64, help="text embedding dimension")
    p.add_argument("--out", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("prepare-data", help="validate pose/attribute files and emit a split file")
    p.add_argument("--poses", required=True, help="pose JSON-lines file")
    p.add_argument("--attributes", help="attribute JSON-lines file")
    p.add_argument("--manifest", help="attribute manifest JSON")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--split-out", help="where to write the split JSON")
    p.add_argument("--out", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("gen-prompts", help="emit description prompts for an external LLM")
    p.add_argument("--poses", help="pose file whose labels become action prompts")
    p.add_argument("--attributes", help="attribute file: one prompt per attribute combination")
    p.add_argument("--manifest", help="attribute manifest JSON")
    p.add_argument("--label", action="append", help="extra action label (repeatable)")
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.set_defaults(func=cmd_gen_prompts)

    p = sub.add_parser("embed", help="build an embedding table via the remote provider or hash fallback")
    p.add_argument("--captions", help="caption store JSON lines")
    p.add_argument("--synonyms", help="synonym JSON")
    p.add_argument("--text", action="append", help="extra text (repeatable)")
    p.add_argument("--dim", type=int, default=1024, help="embedding dimension")
    p.add_argument("--remote-url", help=f"remote embedder base URL (default ${REMOTE_ENV})")
    p.add_argument("--timeout", type=float, default=30.0, help="remote timeout in seconds")
    p.add_argument("--seed", type=int, default=0, help="hash fallback seed")
    p.add_argument("--table", required=True, help="output embedding table")
    p.add_argument("--out", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the pose encoder")
    _train_flags(p)
    p.add_argument("--out", help="checkpoint path (default checkpoint.bin)")
    p.add_argument("--log", help="per-epoch JSON-lines log (default stderr)")
    p.add_argument("--report", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_train, out_is_ckpt=True)

    for name, func, help_text in (
        ("eval-action", cmd_eval_action, "top-1/top-5 action recognition"),
        ("eval-synonyms", cmd_eval_synonyms, "zero-shot accuracy with synonym label embeddings"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--ckpt", required=True, help="checkpoint file")
        p.add_argument("--split", choices=["train", "val", "test", "all"], help="evaluation split")
        if name == "eval-action":
            p.add_argument("--use-descriptions", action="store_true",
                           help="match against generated descriptions instead of label names")
        else:
            p.add_argument("--synonyms", help="synonym JSON (default: from the training config)")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.set_defaults(func=func)

    p = sub.add_parser("eval-retrieval", help="NDCG@K retrieval of sequences from descriptions")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--k", type=_ks, default=[1, 3, 5], help="comma-separated K values")
    p.add_argument("--method", choices=["cosine", "euclidean", "random"], default="cosine", help="ranking")
    p.add_argument("--per-attribute", action="store_true", help="add per-attribute NDCG@5")
    p.add_argument("--split", choices=["train", "val", "test", "all"], help="corpus split (default test)")
    p.add_argument("--seed", type=int, default=0, help="random-baseline seed")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("classify", help="multi-label BCE attribute classifier with per-attribute F1")
    _train_flags(p)
    p.add_argument("--split", choices=["train", "val", "test"], default="test", help="evaluation split")
    p.add_argument("--threshold", type=float, default=0.5, help="probability threshold")
    p.add_argument("--out", help="optional checkpoint path")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_classify, out_is_ckpt=True)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        result = args.func(args)
        dest = args.report if getattr(args, "out_is_ckpt", False) else args.out
        _emit(result, dest)
        return 0
    except _VALIDATION_ERRORS as exc:
        sys.stderr.write(f"align: {exc}\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(f"align: path not found: {exc.filename}\n")
        return 1
    except Exception as exc:
        sys.stderr.write(f"align: runtime error: {exc}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
