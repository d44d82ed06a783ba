"""Command-line entry point: synthesize -> preprocess -> train -> evaluate -> index -> serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import evaluate as evl
from . import index_service, notegen, preprocess, toydata
from .corpus import load_manifest
from .notegen import STRATEGIES, STRATEGY_DISPLAY
from .train import TrainConfig, train as run_training

_STRATEGY_ORDER = ("Img",) + STRATEGIES


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermalign",
        description="Image-text co-learning pipeline for skin lesion data",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synthesize", help="generate clinical notes (or the demo corpus)")
    p.add_argument("--demo", action="store_true", help="generate the toy demo corpus instead")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("mock", "remote"), default="mock")
    p.add_argument("--endpoint", help="remote backend URL (or DERMALIGN_NOTE_ENDPOINT)")
    p.add_argument("--corruption", type=float, default=None,
                   help="mock label-corruption rate (default 0.0; P3 is metadata-free regardless)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preprocess", help="crop/resize images into a cache directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--root", help="base directory for relative image refs (default: manifest dir)")
    p.add_argument("--notes", help="optional notes file; records truncation flags in the sidecar")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="YAML config (train: hyperparameters, data: paths)")
    p.add_argument("--out", required=True, help="output directory for the checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--notes")
    p.add_argument("--cache")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--image-only", action="store_true", help="unimodal baseline (CE_img only)")

    p = sub.add_parser("evaluate", help="evaluate checkpoints and write a report")
    p.add_argument("--ckpt", nargs="+", required=True, help="one checkpoint per training seed")
    p.add_argument("--manifest", required=True)
    p.add_argument("--notes", nargs="*", default=[], help="note files (all strategies for retrieve-notes)")
    p.add_argument("--cache", required=True)
    p.add_argument("--tasks", default="classify,retrieve-notes,retrieve-images,alignment")
    p.add_argument("--seeds", type=int, help="expected number of seeds (asserted against --ckpt)")
    p.add_argument("--relevance", choices=("class", "pair"), default="class")
    p.add_argument("--report", required=True, help="output report path (JSON)")

    p = sub.add_parser("index", help="build an embedding index from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--notes", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("serve", help="serve interactive retrieval over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cache")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("report", help="merge evaluation reports into comparison tables")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", help="output prefix (writes <out>.txt and <out>.json)")

    return parser


def _cmd_synthesize(args) -> int:
    if args.demo:
        corpus = toydata.make_demo_corpus(args.out, seed=args.seed)
        print(f"demo corpus: {len(corpus)} records -> {args.out}/manifest.jsonl")
        return 0
    if not args.strategy or not args.manifest:
        print("synthesize requires --strategy and --manifest (or --demo)", file=sys.stderr)
        return 2
    corpus = load_manifest(args.manifest)
    backend = None
    if args.strategy != "M":
        if args.backend == "remote":
            import os

            endpoint = args.endpoint or os.environ.get("DERMALIGN_NOTE_ENDPOINT")
            if not endpoint:
                print("remote backend needs --endpoint or DERMALIGN_NOTE_ENDPOINT", file=sys.stderr)
                return 2
            backend = notegen.RemoteNoteBackend(endpoint)
        else:
            corruption = args.corruption
            if corruption is None:
                corruption = 1.0 if args.strategy == "P3" else 0.0
            backend = notegen.MockNoteBackend(corruption_rate=corruption)
    notes, failures = notegen.synthesize(corpus, args.strategy, backend, seed=args.seed)
    notegen.save_notes(notes, args.out)
    print(f"{len(notes)} notes ({len(failures)} failures) -> {args.out}")
    if failures:
        for f in failures[:10]:
            print(f"  failed {f.sample_id}: {f.error}", file=sys.stderr)
        return 1
    return 0


def _cmd_preprocess(args) -> int:
    corpus = load_manifest(args.manifest)
    note_texts = None
    if args.notes:
        note_texts = {n.sample_id: n.text for n in notegen.load_notes(args.notes)}
    entries = preprocess.preprocess_corpus(corpus, args.out, root=args.root, note_texts=note_texts)
    fallbacks = sum(1 for e in entries if e["fallback"])
    print(f"{len(entries)} images cached ({fallbacks} fallbacks) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg_obj: dict = {}
    data: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        cfg_obj = raw.get("train", {})
        data = raw.get("data", {})
    manifest = args.manifest or data.get("manifest")
    notes_path = args.notes or data.get("notes")
    cache = args.cache or data.get("cache")
    if not manifest or not cache:
        print("train needs --manifest and --cache (flags or config data section)", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg_obj["seed"] = args.seed
    if args.strategy is not None:
        cfg_obj["strategy"] = args.strategy
    if args.epochs is not None:
        cfg_obj["epochs"] = args.epochs
    config = TrainConfig.from_dict(cfg_obj)

    corpus = load_manifest(manifest)
    notes = []
    if not args.image_only:
        if not notes_path:
            print("multimodal training needs --notes (or data.notes in config)", file=sys.stderr)
            return 2
        notes = notegen.load_notes(notes_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.dmal"
    _, meta = run_training(
        corpus, notes, config, cache, out_path=ckpt_path, image_only=args.image_only
    )
    (out_dir / "history.json").write_text(
        json.dumps(meta["history"], indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"checkpoint -> {ckpt_path} (best epoch {meta['best_epoch']}, "
        f"val kappa {meta['best_val_kappa']:.3f})"
    )
    return 0


def _cmd_evaluate(args) -> int:
    if args.seeds is not None and args.seeds != len(args.ckpt):
        print(f"--seeds {args.seeds} but {len(args.ckpt)} checkpoints given", file=sys.stderr)
        return 2
    corpus = load_manifest(args.manifest)
    notes_by_strategy: dict[str, list] = {}
    for path in args.notes:
        notes = notegen.load_notes(path)
        if notes:
            notes_by_strategy.setdefault(notes[0].strategy, []).extend(notes)
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    report = evl.run_evaluation(
        args.ckpt, corpus, args.cache, notes_by_strategy, tasks=tasks, relevance=args.relevance
    )
    report.save(args.report)
    print(f"report ({len(report.entries)} entries) -> {args.report}")
    return 0


def _cmd_index(args) -> int:
    corpus = load_manifest(args.manifest)
    notes = notegen.load_notes(args.notes)
    index = index_service.build_index(args.ckpt, corpus, notes, args.cache)
    index.save(args.out)
    print(f"index of {len(index)} entries -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    app = index_service.create_app(args.index, args.ckpt, cache_dir=args.cache)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _format_cell(entry) -> str:
    return f"{entry.mean:.3f} +/- {entry.std:.3f}" if entry else "-"


def _cmd_report(args) -> int:
    reports = [evl.EvalReport.load(p) for p in args.reports]
    strategies = [r.meta["strategy"] for r in reports]
    if len(set(strategies)) != len(strategies):
        print("reports must cover distinct strategies", file=sys.stderr)
        return 2
    by_strategy = dict(zip(strategies, reports))
    ordered = [s for s in _STRATEGY_ORDER if s in by_strategy]

    axes: dict[str, list[tuple[str, str]]] = {}
    for rep in reports:
        for e in rep.entries:
            axes.setdefault(e.task, [])
            if (e.partition, e.dataset) not in axes[e.task]:
                axes[e.task].append((e.partition, e.dataset))
    for task, rows in axes.items():
        expected = sorted(rows)
        for rep in reports:
            have = sorted(
                {(e.partition, e.dataset) for e in rep.entries if e.task == task}
            )
            if task != "classify" and rep.meta["strategy"] == "Img":
                continue  # unimodal baselines appear only in the classification table
            if have and have != expected:
                print(f"report axes mismatch on task {task!r}", file=sys.stderr)
                return 2

    lines = []
    table_obj: dict = {}
    for task in ("classify", "retrieve-notes", "retrieve-images", "alignment"):
        if task not in axes:
            continue
        cols = [s for s in ordered if s == "Img" and task == "classify" or s != "Img"]
        header = ["partition", "dataset"] + [STRATEGY_DISPLAY.get(s, s) for s in cols]
        widths = [max(10, len(h) + 2) for h in header]
        lines.append(f"== {task} ==")
        lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
        table_obj[task] = []
        for partition, dataset in sorted(axes[task]):
            row = [partition, dataset]
            row_obj = {"partition": partition, "dataset": dataset}
            for s in cols:
                entry = by_strategy[s].lookup(dataset, task, s)
                row.append(_format_cell(entry))
                row_obj[s] = (
                    {"mean": entry.mean, "std": entry.std, "n_seeds": entry.n_seeds}
                    if entry
                    else None
                )
            lines.append("".join(c.ljust(w) for c, w in zip(row, widths)))
            table_obj[task].append(row_obj)
        lines.append("")

    text = "\n".join(lines)
    if args.out:
        Path(args.out + ".txt").write_text(text + "\n", encoding="utf-8")
        Path(args.out + ".json").write_text(
            json.dumps(table_obj, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"tables -> {args.out}.txt, {args.out}.json")
    else:
        print(text)
    return 0


_HANDLERS = {
    "synthesize": _cmd_synthesize,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "index": _cmd_index,
    "serve": _cmd_serve,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.verb](args)
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic per contract
        print(f"dermalign {args.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
