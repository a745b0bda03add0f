"""Command-line entry point: ``calipso <subcommand> [options]``.

Every subcommand writes ``manifest.json`` (command line, seed, effective config,
sha256 of each artifact) and ``config.yaml`` into its output directory; ``plot``
names both after the image it writes.
Relative output directories are resolved under ``$CALIPSO_OUTPUT_ROOT`` when set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config
from .network import ConfigError

log = logging.getLogger("calipso")

OUTPUT_ROOT_ENV = "CALIPSO_OUTPUT_ROOT"


class UsageError(Exception):
    pass


def output_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, args, cfg: RunConfig, artifacts: Sequence[Path], extra: Optional[dict] = None,
                   name: str = "manifest") -> Path:
    cfg_path = cfg.dump(out / ("config.yaml" if name == "manifest" else f"{name}.config.yaml"))
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "seed": cfg.seed,
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": cfg.to_dict(),
        "artifacts": {str(Path(a).relative_to(out) if Path(a).is_relative_to(out) else a): sha256_file(a)
                      for a in [*artifacts, cfg_path]},
    }
    if extra:
        manifest.update(extra)
    path = out / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _config(args) -> RunConfig:
    return load_run_config(args.config, args.set or (), args.seed)


def _vocabulary():
    from .synthetic import DEFAULT_VOCABULARY

    return DEFAULT_VOCABULARY


# -- subcommands --------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    from .anchors import assign_anchors, assignment_records, build_anchor_grid, unassigned_boxes
    from .serialization import write_dataset
    from .synthetic import generate_dataset

    cfg = _config(args)
    out = output_dir(args.out)
    vocab = _vocabulary()
    scene_cfg = cfg.scene
    n_train = cfg.data.train_size if args.n_train is None else args.n_train
    n_test = cfg.data.test_size if args.n_test is None else args.n_test
    # the run seed offsets both split seeds so that --seed changes the data
    train_seed, test_seed = cfg.data.train_seed + 1000 * cfg.seed, cfg.data.test_seed + 1000 * cfg.seed
    artifacts = []
    for name, n, seed in (("train", n_train, train_seed), ("test", n_test, test_seed)):
        scenes = generate_dataset(scene_cfg, n, seed=seed, prefix=name)
        path = write_dataset(out / f"{name}.jsonl", scenes, vocab)
        artifacts += [path, path.with_suffix(".vocab.json")]
        log.info("wrote %d %s scenes to %s", n, name, path)
        if args.dump_anchors:
            grid = build_anchor_grid(scene_cfg.image_size, scene_cfg.anchor_levels, base_factor=scene_cfg.anchor_base_factor)
            dump = out / f"{name}.anchors.jsonl"
            with dump.open("w") as f:
                for s in scenes:
                    a = assign_anchors(grid, s.boxes)
                    f.write(json.dumps({"scene_id": s.scene_id, "assigned": assignment_records(grid, a),
                                        "unassigned_boxes": unassigned_boxes(a)}) + "\n")
            artifacts.append(dump)
    write_manifest(out, args, cfg, artifacts, {"splits": {"train": [n_train, train_seed], "test": [n_test, test_seed]}})
    print(f"wrote {n_train} train / {n_test} test scenes to {out}")
    return 0


def cmd_train(args) -> int:
    from .losses import usual_targets_from_scenes
    from .network import save_checkpoint
    from .serialization import read_dataset
    from .training import train

    cfg = _config(args)
    out = output_dir(args.out)
    scenes, vocab = read_dataset(args.data)
    net_cfg = replace(cfg.network, V=vocab.V)
    train_cfg = cfg.train if args.steps is None else replace(cfg.train, steps=args.steps)
    loss_cfg = cfg.loss_config(usual_targets_from_scenes(scenes, vocab.V))
    hist_path = out / "history.jsonl"
    t0 = time.perf_counter()
    with hist_path.open("w") as hist:
        def cb(step, report):
            hist.write(json.dumps({"step": step, **report.to_dict()}) + "\n")

        res = train(scenes, vocab, net_cfg, train_cfg, loss_cfg, seed=cfg.seed,
                    anchor_base_factor=cfg.scene.anchor_base_factor, callback=cb)
    seconds = time.perf_counter() - t0
    ckpt = save_checkpoint(out / "checkpoint.npz", res.model, {
        "vocabulary": vocab.to_dict(), "anchor_base_factor": cfg.scene.anchor_base_factor,
        "usual_targets": {str(k): sorted(v) for k, v in loss_cfg.usual_targets.items()},
    })
    write_manifest(out, args, replace(cfg, network=net_cfg, train=train_cfg), [ckpt, hist_path],
                   {"data": str(args.data), "data_sha256": sha256_file(args.data), "train_seconds": seconds})
    print(f"trained {train_cfg.steps} steps in {seconds:.1f}s; checkpoint {ckpt}")
    return 0


def _load_model(path):
    from .network import load_checkpoint
    from .types import VerbVocabulary

    model, extra = load_checkpoint(path)
    vocab = VerbVocabulary.from_dict(extra["vocabulary"]) if "vocabulary" in extra else _vocabulary()
    return model, vocab, float(extra.get("anchor_base_factor", 2.0))


def _detector(cfg: RunConfig, args):
    from .inference import DetectorAdapter

    inf = cfg.inference
    mode = args.detector or inf.detector
    return DetectorAdapter(mode=mode, drop_rate=inf.drop_rate, jitter=inf.jitter,
                           misclassification_rate=inf.misclassification_rate,
                           path=args.detections or inf.detections_path, seed=cfg.seed)


def _predict(cfg, args, model, vocab, base_factor, scenes):
    from .inference import detect_interactions

    det = _detector(cfg, args)
    thr = cfg.inference.threshold if args.threshold is None else args.threshold
    return [detect_interactions(s.image, model, det.detect(s, k), vocab, threshold=thr,
                                norm=cfg.inference.norm, anchor_base_factor=base_factor)
            for k, s in enumerate(scenes)]


def cmd_detect(args) -> int:
    from .inference import write_predictions
    from .serialization import read_dataset

    cfg = _config(args)
    out = output_dir(args.out)
    model, vocab, bf = _load_model(args.checkpoint)
    scenes, _ = read_dataset(args.data, vocab)
    if args.scene_id:
        scenes = [s for s in scenes if s.scene_id == args.scene_id]
        if not scenes:
            raise ValueError(f"scene {args.scene_id!r} not found in {args.data}")
    preds = _predict(cfg, args, model, vocab, bf, scenes)
    path = write_predictions(out / "predictions.jsonl", [s.scene_id for s in scenes], preds)
    write_manifest(out, args, cfg, [path], {"checkpoint_sha256": sha256_file(args.checkpoint)})
    print(f"{sum(map(len, preds))} interactions over {len(scenes)} scenes -> {path}")
    return 0


def format_ap_table(result, vocab) -> str:
    lines = [f"{'verb':<12} {'#gt':>5} {'AP_role':>8}"]
    for v, ap in sorted(result.per_verb.items()):
        lines.append(f"{vocab.verbs[v].name:<12} {result.num_gt[v]:>5} {ap:>8.4f}")
    lines.append(f"{'mean':<12} {'':>5} {result.mean:>8.4f}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    from .evaluation import MatchCriterion, ap_role
    from .inference import read_predictions
    from .serialization import read_dataset

    cfg = _config(args)
    out = output_dir(args.out)
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("eval needs exactly one of --checkpoint or --predictions")
    if args.checkpoint:
        model, vocab, bf = _load_model(args.checkpoint)
        scenes, _ = read_dataset(args.data, vocab)
        preds = _predict(cfg, args, model, vocab, bf, scenes)
    else:
        scenes, vocab = read_dataset(args.data)
        preds = read_predictions(args.predictions, [s.scene_id for s in scenes])
    result = ap_role(preds, scenes, vocab.V, MatchCriterion(args.iou))
    path = out / "metrics.json"
    path.write_text(json.dumps({**result.to_dict(vocab), "num_scenes": len(scenes)}, indent=2) + "\n")
    write_manifest(out, args, cfg, [path], {"data_sha256": sha256_file(args.data)})
    print(format_ap_table(result, vocab))
    return 0


def format_ablation_table(rows) -> str:
    lines = [f"{'variant':<20} {'mean':>7} {'std':>7}  per-seed"]
    for r in rows:
        lines.append(f"{r.variant:<20} {r.mean:>7.4f} {r.std:>7.4f}  " + " ".join(f"{a:.4f}" for a in r.ap))
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    from .evaluation import ABLATION_VARIANTS, run_ablation
    from .losses import usual_targets_from_scenes
    from .serialization import read_dataset

    cfg = _config(args)
    out = output_dir(args.out)
    names = args.variants.split(",") if args.variants else list(cfg.ablation.variants)
    unknown = [n for n in names if n not in ABLATION_VARIANTS]
    if unknown:
        raise UsageError(f"unknown ablation variants {unknown}; choose from {sorted(ABLATION_VARIANTS)}")
    data = Path(args.data_dir)
    train_scenes, vocab = read_dataset(data / "train.jsonl")
    test_scenes, _ = read_dataset(data / "test.jsonl", vocab)
    train_cfg = cfg.train if cfg.ablation.steps is None else replace(cfg.train, steps=cfg.ablation.steps)
    loss_cfg = cfg.loss_config(usual_targets_from_scenes(train_scenes, vocab.V))
    partial = out / "ablation_runs.jsonl"
    with partial.open("w") as f:
        def on_result(name, seed, ap):
            f.write(json.dumps({"variant": name, "seed": seed, "mean_ap_role": ap}) + "\n")
            f.flush()

        rows = run_ablation({n: ABLATION_VARIANTS[n] for n in names}, train_scenes, test_scenes, vocab,
                            seeds=cfg.ablation.seeds, base_config=replace(cfg.network, V=vocab.V),
                            train_config=train_cfg, loss_config=loss_cfg,
                            anchor_base_factor=cfg.scene.anchor_base_factor, on_result=on_result)
    path = out / "ablation.json"
    path.write_text(json.dumps([r.to_dict() for r in rows], indent=2) + "\n")
    write_manifest(out, args, cfg, [path, partial])
    print(format_ablation_table(rows))
    return 0


def parse_pairs(text: str) -> tuple[int, ...]:
    """``"1..64"`` selects the default sweep within the range; ``"1,4,16"`` is taken literally."""
    from .evaluation import DEFAULT_PAIR_SWEEP

    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
            pairs = tuple(p for p in DEFAULT_PAIR_SWEEP if lo <= p <= hi)
        else:
            pairs = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad pair sweep {text!r}; use e.g. 1..64 or 1,4,16") from None
    if not pairs or min(pairs) < 1:
        raise argparse.ArgumentTypeError(f"pair sweep {text!r} is empty or non-positive")
    return pairs


def format_benchmark_table(records) -> str:
    lines = [f"{'P':>3} {'NxM':>5} {'single-shot s':>13} {'pairwise s':>11} {'single-shot ops':>16} {'pairwise ops':>13}"]
    for r in records:
        lines.append(f"{r.P:>3} {f'{r.num_humans}x{r.num_objects}':>5} {r.calipso_seconds:>13.4f} "
                     f"{r.baseline_seconds:>11.4f} {r.calipso_ops:>16d} {r.baseline_ops:>13d}")
    return "\n".join(lines)


def cmd_benchmark(args) -> int:
    import torch

    from .evaluation import PairNet, benchmark_complexity, plot_benchmark
    from .network import CalipsoNet

    cfg = _config(args)
    out = output_dir(args.out)
    bench = cfg.benchmark if args.pairs is None else replace(cfg.benchmark, pairs=args.pairs)
    if args.repeats is not None:
        bench = replace(bench, repeats=args.repeats)
    torch.manual_seed(cfg.seed)
    if args.checkpoint:
        model, vocab, _ = _load_model(args.checkpoint)
    else:
        vocab = _vocabulary()
        model = CalipsoNet(replace(cfg.network, V=vocab.V)).eval()
    baseline = PairNet(vocab.V).eval()
    records = benchmark_complexity(model, baseline, vocab, bench.pairs, bench.image_size, bench.repeats,
                                   bench.warmup, seed=cfg.seed)
    path = out / "benchmark.json"
    path.write_text(json.dumps([r.to_dict() for r in records], indent=2) + "\n")
    plot = plot_benchmark(records, out / "benchmark.png")
    write_manifest(out, args, replace(cfg, benchmark=bench), [path, plot])
    print(format_benchmark_table(records))
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .evaluation import BenchmarkRecord, plot_benchmark

    cfg = _config(args)
    src = Path(args.input)
    out_path = Path(args.output) if args.output else src.with_suffix(".png")
    out = output_dir(str(out_path.parent))
    out_path = out / out_path.name
    if src.suffix == ".jsonl":
        hist = [json.loads(l) for l in src.read_text().splitlines() if l.strip()]
        if not hist or "total" not in hist[0]:
            raise ValueError(f"{src}: not a training history")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        steps = [h["step"] for h in hist]
        for key in ("total", "verb", "target", "embedding"):
            ax.plot(steps, [h[key] for h in hist], label=key, lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_path, dpi=120)
        plt.close(fig)
    else:
        data = json.loads(src.read_text())
        if isinstance(data, list) and data and "calipso_seconds" in data[0]:
            records = [BenchmarkRecord(**{k: v for k, v in d.items() if k != "P"}) for d in data]
            plot_benchmark(records, out_path)
        elif isinstance(data, list) and data and "variant" in data[0]:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            names = [d["variant"] for d in data]
            ax.bar(names, [np.mean(d["ap"]) for d in data],
                   yerr=[np.std(d["ap"], ddof=1) if len(d["ap"]) > 1 else 0 for d in data], capsize=3)
            ax.set_ylabel("mean AP_role")
            plt.setp(ax.get_xticklabels(), rotation=30, ha="right")
            fig.tight_layout()
            fig.savefig(out_path, dpi=120)
            plt.close(fig)
        else:
            raise ValueError(f"{src}: unrecognised input (expected benchmark.json, ablation.json or history.jsonl)")
    # named after the plot so that plotting next to a run keeps that run's manifest
    write_manifest(out, args, cfg, [out_path], {"input": str(src), "input_sha256": sha256_file(src)},
                   name=f"{out_path.stem}.manifest")
    print(f"wrote {out_path}")
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="calipso", description="Single-shot interaction detection on synthetic scenes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", parents=[common], help="render train/test synthetic datasets")
    g.add_argument("--out", default="data")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--dump-anchors", action="store_true", help="also write per-scene anchor assignments")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", parents=[common], help="train the dense interaction network")
    t.add_argument("--data", required=True, help="training dataset (.jsonl)")
    t.add_argument("--out", default="run")
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    def add_detector(q):
        q.add_argument("--detector", choices=["ground-truth", "noisy-simulated", "external-import"])
        q.add_argument("--detections", help="detections file for external-import")
        q.add_argument("--threshold", type=float)

    d = sub.add_parser("detect", parents=[common], help="write scored interactions for a dataset")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--scene-id", help="only this scene")
    d.add_argument("--out", default="detect")
    add_detector(d)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", parents=[common], help="role AP of a checkpoint or a predictions file")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--out", default="eval")
    add_detector(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="train and evaluate network variants over seeds")
    a.add_argument("--data-dir", required=True, help="directory with train.jsonl and test.jsonl")
    a.add_argument("--variants", help="comma-separated variant names")
    a.add_argument("--out", default="ablation")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("benchmark", parents=[common], help="cost sweep against the pairwise baseline")
    b.add_argument("--pairs", type=parse_pairs, help="e.g. 1..64 or 1,4,16")
    b.add_argument("--repeats", type=int)
    b.add_argument("--checkpoint")
    b.add_argument("--out", default="benchmark")
    b.set_defaults(func=cmd_benchmark)

    pl = sub.add_parser("plot", parents=[common], help="plot benchmark.json, ablation.json or history.jsonl")
    pl.add_argument("--input", required=True)
    pl.add_argument("--output")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        parser.print_usage(sys.stderr)
        print(f"calipso {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # one-line cause for any runtime failure
        if args.verbose:
            log.exception("run failed")
        print(f"calipso {args.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
