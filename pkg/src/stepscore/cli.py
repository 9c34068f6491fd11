"""Command-line entry points: synth, train, eval, ablate, metrics."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, metrics, plots
from .datamodel import FrameLabelSequence
from .synthgen import GeneratorSpec, generate_dataset


def _cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = GeneratorSpec.from_dict(json.load(fh))
    train_path, test_path = generate_dataset(spec, args.out)
    print(f"wrote {train_path}")
    print(f"wrote {test_path}")
    return 0


def _cmd_train(args) -> int:
    run_cfg = harness.RunConfig.from_json_file(args.config)
    checkpoint, log = harness.train(run_cfg)
    print(f"checkpoint: {checkpoint}")
    if log.epochs and "eval" in log.epochs[-1]:
        final = log.epochs[-1]["eval"]
        print(json.dumps(final, indent=2))
    return 0


def _cmd_eval(args) -> int:
    report, per_video = harness.evaluate_checkpoint(args.checkpoint, args.manifest)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    with open(os.path.join(args.out, "assessments.json"), "w", encoding="utf-8") as fh:
        json.dump(per_video, fh, indent=2)
        fh.write("\n")
    plots.emit_plots([], per_video, args.out)
    print(metrics.MetricsReport.table_header())
    print(report.table_row())
    return 0


def _cmd_ablate(args) -> int:
    run_cfg = harness.RunConfig.from_json_file(args.config)
    result = harness.ablate(run_cfg, args.mode)
    for row in result["rows"]:
        print(json.dumps(row))
    return 0


def _load_label_file(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for video in doc["videos"]:
        labels = FrameLabelSequence(tuple((int(c), int(n)) for c, n in video["labels"]))
        out[video["id"]] = (labels, video.get("score"))
    return out


def _cmd_metrics(args) -> int:
    pred = _load_label_file(args.pred)
    gt = _load_label_file(args.gt)
    if set(pred) != set(gt):
        missing = set(pred) ^ set(gt)
        print(f"error: video ids differ between files: {sorted(missing)}", file=sys.stderr)
        return 1
    ids = sorted(gt)
    pred_labels = [pred[i][0] for i in ids]
    gt_labels = [gt[i][0] for i in ids]
    have_scores = all(pred[i][1] is not None and gt[i][1] is not None for i in ids)
    report = metrics.aggregate_reports(
        pred_labels, gt_labels,
        [pred[i][1] for i in ids] if have_scores else None,
        [gt[i][1] for i in ids] if have_scores else None,
    )
    print(metrics.MetricsReport.table_header())
    print(report.table_row())
    print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepscore")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True, help="run config JSON file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for reports/plots")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train paired variants and compare")
    p.add_argument("--mode", required=True, choices=harness.ABLATION_MODES)
    p.add_argument("--config", required=True, help="run config JSON file")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("metrics", help="offline metric scoring of label/score files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
