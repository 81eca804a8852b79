"""``strudel`` command line: validation, statistics, training and evaluation runs.

Every run that produces artifacts also writes ``<command>.manifest.json`` in
its output directory, recording the resolved config, input digests, seed and
timestamps.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import torch

from strudel.corpus import (
    ENTRY_KINDS,
    TaskKind,
    compute_annotation_stats,
    load_annotations,
    load_dialogues,
    load_examples,
)
from strudel.errors import CheckpointMismatch, EmptyBatch, EmptyInput, RecordError
from strudel.evaluation import evaluate
from strudel.graph import to_edge_list
from strudel.prompting import PROMPT_QUESTIONS
from strudel.reasoner import predicted_index
from strudel.training import Checkpoint, TrainConfig, build_model, finetune, posttrain

log = logging.getLogger("strudel")


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict | None
    inputs: dict[str, str]
    seed: int | None
    started: str
    finished: str | None = None
    outputs: list[str] = dataclasses.field(default_factory=list)

    @classmethod
    def start(cls, command: str, config: TrainConfig | None, inputs) -> RunManifest:
        paths = [p for p in inputs if p is not None]
        return cls(
            command=command,
            config=config.to_dict() if config else None,
            inputs={str(p): sha256_file(p) for p in paths},
            seed=config.seed if config else None,
            started=_now(),
        )

    def write(self, out_dir: Path) -> Path:
        self.finished = _now()
        path = out_dir / f"{self.command}.manifest.json"
        atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=2) + "\n")
        return path


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# config resolution


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(args) -> TrainConfig:
    """Defaults, then ``--config`` file, then ``--set`` overrides, then ``--seed``."""
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = _parse_value(raw)
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _task(args) -> TaskKind:
    return TaskKind(args.task)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    problems: list[str] = []
    dialogues, annotations = [], []
    try:
        dialogues = load_dialogues(args.dialogues)
    except RecordError as e:
        problems += [f"{args.dialogues}: {p}" for p in e.problems]
    try:
        annotations = load_annotations(args.annotations)
    except RecordError as e:
        problems += [f"{args.annotations}: {p}" for p in e.problems]
    if dialogues or not problems:
        known = {d.id for d in dialogues}
        for ann in annotations:
            if ann.dialogue_id not in known:
                problems.append(
                    f"{args.annotations}: [unknown-dialogue] annotation references "
                    f"unknown dialogue_id {ann.dialogue_id!r}"
                )
    if problems:
        print(f"FAILED: {len(problems)} violation(s)")
        for p in problems:
            print(f"  {p}")
        return 1
    print(f"OK: {len(dialogues)} dialogues, {len(annotations)} annotations")
    return 0


def format_stats_table(stats) -> str:
    rows = [("Entry", "Appearance", "Avg. words")]
    for kind in ENTRY_KINDS:
        s = stats[kind]
        rows.append(
            (kind.title, f"{float(s.appearance_fraction) * 100:.1f}%", f"{float(s.avg_length_words):.2f}")
        )
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    return "\n".join(f"{a:<{w0}}  {b:>{w1}}  {c:>10}" for a, b, c in rows)


def cmd_stats(args) -> int:
    stats = compute_annotation_stats(load_annotations(args.annotations))
    print(f"{stats.n_annotations} annotations")
    print(format_stats_table(stats))
    return 0


def _annotated_pairs(dialogue_path, annotation_path):
    dialogues = {d.id: d for d in load_dialogues(dialogue_path)}
    pairs = []
    for ann in load_annotations(annotation_path):
        if ann.dialogue_id not in dialogues:
            raise ValueError(f"annotation references unknown dialogue_id {ann.dialogue_id!r}")
        pairs.append((dialogues[ann.dialogue_id], ann))
    return pairs


def cmd_posttrain(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    manifest = RunManifest.start(
        "posttrain", cfg, [args.config, args.dialogues, args.annotations, args.examples]
    )
    pairs = _annotated_pairs(args.dialogues, args.annotations)
    examples = load_examples(args.examples, _task(args))
    result = posttrain(build_model(cfg), pairs, examples, cfg)
    ckpt = out / "posttrain.pt"
    result.checkpoint.save(ckpt)
    manifest.outputs.append(str(ckpt))
    manifest.write(out)
    print(
        f"posttrain: {cfg.steps_posttrain} steps, probe loss "
        f"{result.checkpoint.probe_before:.4f} -> {result.checkpoint.probe_after:.4f}; wrote {ckpt}"
    )
    return 0


def _checkpoint_config(args, ckpt: Checkpoint) -> TrainConfig:
    """Checkpoint config, overridden by ``--config``/``--set``/``--seed`` when given."""
    base = TrainConfig.load(args.config) if args.config else ckpt.config
    ns = argparse.Namespace(config=None, set=args.set, seed=args.seed)
    cfg = base
    if ns.set or ns.seed is not None:
        overrides = {}
        for item in ns.set or []:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip()] = _parse_value(raw)
        cfg = TrainConfig.from_dict({**base.to_dict(), **overrides})
        if ns.seed is not None:
            cfg = cfg.replace(seed=ns.seed)
    return cfg


def cmd_finetune(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    cfg = _checkpoint_config(args, ckpt)
    out = _out_dir(args)
    manifest = RunManifest.start("finetune", cfg, [args.config, args.checkpoint, args.examples])
    examples = load_examples(args.examples, _task(args))
    result = finetune(ckpt, examples, cfg)
    path = out / "finetune.pt"
    result.checkpoint.save(path)
    manifest.outputs.append(str(path))
    manifest.write(out)
    print(f"finetune: {cfg.steps_finetune} steps; wrote {path}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    out = _out_dir(args)
    manifest = RunManifest.start("evaluate", ckpt.config, [args.checkpoint, args.examples])
    model = ckpt.build()
    report = evaluate(model, load_examples(args.examples, _task(args)))
    metrics = out / "metrics.json"
    payload = {"n_examples": report.n_examples, **report.as_floats()}
    atomic_write_text(metrics, json.dumps(payload, indent=2) + "\n")
    manifest.outputs.append(str(metrics))
    if args.dump_scores:
        manifest.outputs.append(str(report.dump_scores(out / "scores.jsonl")))
    manifest.write(out)
    print(report.line())
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build()
    examples = load_examples(args.examples, _task(args))
    if args.example_id is None:
        ex = examples[0]
    else:
        by_id = {e.id: e for e in examples}
        if args.example_id not in by_id:
            raise KeyError(f"no example with id {args.example_id!r}")
        ex = by_id[args.example_id]
    with torch.no_grad():
        probs = model.predict(ex)
    best = predicted_index(probs)
    print(f"example {ex.id}")
    for i, (p, cand) in enumerate(zip(probs.tolist(), ex.candidates)):
        mark = "*" if i == best else " "
        print(f"{mark} {i}\t{p:.4f}\t{cand}")
    return 0


def cmd_prompts(args) -> int:
    for kind in ENTRY_KINDS:
        print(f"{kind.value}\t{PROMPT_QUESTIONS[kind]}")
    return 0


def cmd_graph(args) -> int:
    sys.stdout.write(to_edge_list())
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, *, config: bool = True, out: bool = True) -> None:
    if config:
        p.add_argument("--config", help="JSON training config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config field (JSON value); repeatable")
        p.add_argument("--seed", type=int)
    if out:
        p.add_argument("--out", default="runs", help="output directory (default: runs)")


def _task_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=[t.value for t in TaskKind], default="rp",
                   help="qa: question answering; rp: response prediction (default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strudel", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check annotation and dialogue files")
    p.add_argument("--dialogues", required=True)
    p.add_argument("--annotations", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="per-entry appearance rate and average length")
    p.add_argument("--annotations", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("posttrain", help="multi-task post-training")
    p.add_argument("--dialogues", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--examples", required=True)
    _task_arg(p)
    _common(p)
    p.set_defaults(func=cmd_posttrain)

    p = sub.add_parser("finetune", help="cross-entropy fine-tuning from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--examples", required=True)
    _task_arg(p)
    _common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="R@1, R@2, MRR and accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--dump-scores", action="store_true", help="also write scores.jsonl")
    _task_arg(p)
    _common(p, config=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="candidate probabilities for one example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--example-id")
    _task_arg(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("prompts", help="print the seven entry prompt questions")
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("graph", help="print the joint-graph edge list")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except (RecordError, CheckpointMismatch, EmptyBatch, EmptyInput) as e:
        print(f"error: {e}", file=sys.stderr)
    except (OSError, ValueError, KeyError, IndexError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
