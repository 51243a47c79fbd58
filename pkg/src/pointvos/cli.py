"""Command-line entry points: fixtures, runs, evaluation, simulation, serving."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import datasets, interaction, metrics, synthetic, wire
from .core import PipelineConfig
from .errors import InvalidInputError

logger = logging.getLogger("pointvos")


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return PipelineConfig.from_json(fh.read())


def _backend_factories(backend: str, datapoint):
    """builtin -> oracle backends from the sequence's scene; otherwise host:port."""
    if backend == "builtin":
        if datapoint.scene_json is None:
            raise InvalidInputError(
                f"sequence {datapoint.sequence_id} has no scene file; "
                "builtin backends only work on synthetic fixtures")
        spec = synthetic.scene_from_json(datapoint.scene_json)
        return synthetic.make_backends(spec)
    host, _, port = backend.rpartition(":")
    conn = wire.connect_tcp(host or "127.0.0.1", int(port))
    return wire.RemoteTracker(conn), wire.RemoteSegmenter(conn)


def cmd_gen_scenes(args) -> int:
    scenes = synthetic.acceptance_suite()
    if args.extra:
        scenes += [synthetic.disappearance_scene(), synthetic.reveal_scene()]
    for spec in scenes:
        video = synthetic.render(spec)
        datasets.save_sequence(args.out, spec.name, video,
                               scene_json=synthetic.scene_to_json(spec))
        print(f"rendered {spec.name}: {video.num_frames} frames, "
              f"{len(video.gt_masks)} objects")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args.config)
    points = datasets.load_davis_dir(args.dataset)
    if args.sequences:
        wanted = set(args.sequences)
        points = [dp for dp in points if dp.sequence_id in wanted]
    pairs = {}

    def backends_for(dp):
        if dp.sequence_id not in pairs:
            pairs[dp.sequence_id] = _backend_factories(args.backend, dp)
        return pairs[dp.sequence_id]

    results = datasets.run_semisupervised(
        points, config,
        tracker_factory=lambda dp: backends_for(dp)[0],
        segmenter_factory=lambda dp: backends_for(dp)[1])
    failures = 0
    for dp, res in zip(points, results):
        if res.error:
            failures += 1
            print(f"{res.sequence_id}: FAILED ({res.error})", file=sys.stderr)
            continue
        seq_dir = os.path.join(args.out, "Annotations", res.sequence_id)
        os.makedirs(seq_dir, exist_ok=True)
        by_frame: dict[int, dict] = {}
        for oid, per in res.predictions.items():
            for t, mask in per.items():
                by_frame.setdefault(t, {})[oid] = mask
        for t, masks in sorted(by_frame.items()):
            labels = datasets.masks_to_labels(masks, dp.video.width, dp.video.height)
            datasets.save_index_png(os.path.join(seq_dir, f"{t:05d}.png"), labels)
        diag_dir = os.path.join(args.out, "diagnostics")
        os.makedirs(diag_dir, exist_ok=True)
        with open(os.path.join(diag_dir, f"{res.sequence_id}.json"), "w") as fh:
            json.dump({
                "config": json.loads(config.to_json()),
                "reinit_events": [
                    {"object": e.object_id, "frame": e.frame_index, "variant": e.variant}
                    for e in res.run.reinit_events],
                "disappeared": {str(k): v for k, v in res.run.disappeared.items()},
                "segmenter_calls": res.run.segmenter_calls,
                "elapsed_seconds": res.run.elapsed_seconds,
            }, fh, indent=2)
        print(f"{res.sequence_id}: ok ({res.run.segmenter_calls} segmenter calls, "
              f"{res.run.elapsed_seconds:.1f}s)")
    return 1 if failures else 0


def cmd_run_vis(args) -> int:
    config = _load_config(args.config)
    points = datasets.load_davis_dir(args.dataset)
    for dp in points:
        tracker, segmenter = _backend_factories(args.backend, dp)
        run, _ = datasets.run_first_frame_proposals(dp.video, args.max_proposals,
                                                    config, tracker, segmenter)
        seq_dir = os.path.join(args.out, "Annotations", dp.sequence_id)
        os.makedirs(seq_dir, exist_ok=True)
        by_frame: dict[int, dict] = {}
        for oid in run.outputs:
            for t, mask in run.masks(oid).items():
                by_frame.setdefault(t, {})[oid] = mask
        for t, masks in sorted(by_frame.items()):
            labels = datasets.masks_to_labels(masks, dp.video.width, dp.video.height)
            datasets.save_index_png(os.path.join(seq_dir, f"{t:05d}.png"), labels)
        print(f"{dp.sequence_id}: {len(run.outputs)} proposal tracks")
    return 0


def cmd_convert_mots(args) -> int:
    mapping = datasets.convert_mots(args.input, args.out, max_objects=args.max_objects)
    print(f"kept {len(mapping)} objects")
    return 0


def cmd_eval(args) -> int:
    gt_points = datasets.load_davis_dir(args.gt)
    pred_root = args.pred
    if os.path.isdir(os.path.join(pred_root, "Annotations")):
        pred_root = os.path.join(pred_root, "Annotations")
    scores = []
    for dp in gt_points:
        seq_dir = os.path.join(pred_root, dp.sequence_id)
        preds: dict[int, dict] = {}
        if os.path.isdir(seq_dir):
            for fname in sorted(os.listdir(seq_dir)):
                if not fname.endswith(".png"):
                    continue
                t = int(os.path.splitext(fname)[0])
                labels = datasets.load_index_png(os.path.join(seq_dir, fname))
                # a present file is an explicit prediction for every object,
                # empty when the object id does not appear in it
                for oid in dp.video.gt_masks:
                    from pointvos.core import BinaryMask
                    preds.setdefault(oid, {})[t] = BinaryMask(labels == oid)
        scores.append(metrics.score_sequence(dp.sequence_id, preds, dp.video.gt_masks))
    summary = metrics.aggregate(scores)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"J: {summary['J']}, F: {summary['F']}, J&F: {summary['JF']} "
          f"({summary['num_objects']} objects)")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    points = datasets.load_davis_dir(args.dataset)
    budget = interaction.Budget(max_int=args.budget)
    rows = []
    for dp in points:
        tracker, segmenter = _backend_factories(args.backend, dp)
        for oid, gt_series in dp.video.gt_masks.items():
            series = list(gt_series)
            tag = f"{dp.sequence_id}:{oid}"
            if args.method == "sam-only":
                result = interaction.simulate_sam_only(
                    dp.video, series, segmenter, config,
                    int_per_frame=budget.max_int_per_frame)
            elif args.method == "online":
                result = interaction.simulate_online(dp.video, series, tracker,
                                                     segmenter, config, budget)
            else:
                result = interaction.simulate_offline(dp.video, series, tracker,
                                                      segmenter, config, budget)
            for billed, mean_iou in result.curve:
                rows.append({"budget": billed, "mean_iou": f"{mean_iou:.6f}",
                             "sequence": tag})
            print(f"{tag}: {args.method} mean IoU {result.mean_iou:.4f} "
                  f"after {len(result.events)} events")
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["budget", "mean_iou", "sequence"])
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_backend_serve(args) -> int:
    with open(args.scene) as fh:
        spec = synthetic.scene_from_json(fh.read())
    tracker, segmenter = synthetic.make_backends(spec)
    server = wire.BackendServer(tracker=tracker, segmenter=segmenter)
    if args.stdio:
        server.serve_stream(sys.stdin.buffer, sys.stdout.buffer)
        return 0
    host, port = server.serve_forever("127.0.0.1", args.port)
    print(f"serving oracle backends for {spec.name} on {host}:{port}", flush=True)
    try:
        import threading
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(sessions_root=args.sessions)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_sidecar(args) -> int:
    from . import sidecar as sidecar_mod
    config = sidecar_mod.SidecarConfig.from_file(args.config)
    if args.stdio:
        server = wire.BackendServer(tracker=sidecar_mod.load_tracker(config),
                                    segmenter=sidecar_mod.load_segmenter(config))
        server.serve_stream(sys.stdin.buffer, sys.stdout.buffer)
        return 0
    _, (host, port) = sidecar_mod.serve(config, port=args.port)
    print(f"sidecar listening on {host}:{port}", flush=True)
    import threading
    threading.Event().wait()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointvos",
                                     description="Point-propagation video segmentation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="render the synthetic fixture suite")
    p.add_argument("--out", required=True)
    p.add_argument("--extra", action="store_true",
                   help="also render the disappearance/reveal probe scenes")
    p.set_defaults(func=cmd_gen_scenes)

    for name in ("run", "run-vos"):
        p = sub.add_parser(name, help="semi-supervised run over a dataset directory")
        p.add_argument("--config", default=None, help="pipeline config JSON")
        p.add_argument("--dataset", required=True)
        p.add_argument("--backend", default="builtin", help="'builtin' or host:port")
        p.add_argument("--out", required=True)
        p.add_argument("--sequences", nargs="*", default=None)
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("run-vis", help="first-frame-proposal run (no later proposals)")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--backend", default="builtin")
    p.add_argument("--max-proposals", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_vis)

    p = sub.add_parser("convert-mots", help="MOTS annotations to semi-supervised VOS")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-objects", type=int, default=datasets.MAX_OBJECTS_PER_VIDEO)
    p.set_defaults(func=cmd_convert_mots)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="simulated interactive annotation")
    p.add_argument("--method", choices=("sam-only", "online", "offline"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--backend", default="builtin")
    p.add_argument("--budget", type=int, default=300)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("backend-serve", help="serve oracle backends over the wire protocol")
    p.add_argument("--scene", required=True)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--stdio", action="store_true")
    p.set_defaults(func=cmd_backend_serve)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8450)
    p.add_argument("--sessions", default=None, help="directory for session persistence")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("sidecar", help="serve real model checkpoints over the wire protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--stdio", action="store_true")
    p.set_defaults(func=cmd_sidecar)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
