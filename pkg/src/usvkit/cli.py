"""Command-line surface: every flag maps 1:1 onto a module parameter.

Exit codes: 0 success, 1 domain error, 2 usage or IO error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import audio_io, callsim, classifier, config as cfgmod, datastore, detection, metrics, synthgen
from .classifier import CallLabel, TileDataset
from .errors import UsvkitError
from .spectrogram import SpectrogramParams, compute_spectrogram, extract_tile


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usvkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="segment call candidates from WAV files")
    p.add_argument("wavs", nargs="+", help="input WAV paths")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="candidate JSON-lines output path")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--offset-db", type=float, default=None)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--open-radius", type=int, default=None)
    p.add_argument("--merge-gap-ms", type=float, default=None)
    p.add_argument("--baseline", action="store_true", help="use the global-percentile baseline detector")
    p.add_argument("--percentile", type=float, default=0.95)
    p.add_argument("--store", help="also import candidates into this store")
    p.add_argument("--recording-id", help="store recording id for imported candidates")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="synthesize a ground-truth recording")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(callsim.PRESET_NOISE))
    group.add_argument("--plan", help="RecordingPlan JSON file")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--store", help="also register the recording in this store")
    p.add_argument("--recording-id")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="signal-detection report and t-tests")
    p.add_argument("--candidates", help="candidate JSON-lines")
    p.add_argument("--truth", help="truth JSON-lines")
    p.add_argument("--counts", help="pre-tallied detections,hits,false_alarms,misses")
    p.add_argument("--min-overlap", type=float, default=0.3)
    p.add_argument("--pre-labels", help="per-recording label JSONL (before)")
    p.add_argument("--post-labels", help="per-recording label JSONL (after)")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.add_argument("--csv", help="flat CSV output path")
    p.add_argument("--store", help="register the report as a run in this store")
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train", help="train a classifier from a store manifest")
    _train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("resume", help="continue training from a checkpoint")
    _train_args(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("validate", help="score a checkpoint on a manifest's val split")
    p.add_argument("--store", required=True)
    p.add_argument("--manifest-version", type=int, required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("predict", help="detect and classify calls in a WAV file")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--merge-gap-ms", type=float, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("augment", help="propose morphed synthetics from manifest seeds")
    p.add_argument("--store", required=True)
    p.add_argument("--manifest-version", type=int, required=True)
    p.add_argument("--per-seed", type=int, required=True)
    p.add_argument("--max-displacement", type=float, default=None)
    p.add_argument("--control-grid", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile-size", type=int, default=64)
    p.add_argument("--config")
    p.add_argument("--auto-accept", action="store_true", help="headless runs: accept immediately as reviewer 'auto'")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("review", help="terminal accept/reject loop over pending synthetics")
    p.add_argument("--store", required=True)
    p.add_argument("--reviewer", required=True)
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("serve", help="run the HTTP service over a store")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--tile-size", type=int, default=64)
    p.set_defaults(func=cmd_serve)

    return parser


def _train_args(p):
    p.add_argument("--store", required=True)
    p.add_argument("--manifest-version", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--tile-size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-oversample", action="store_true")
    p.add_argument("--out", help="checkpoint path (default: store checkpoints/)")


def _load_config(args) -> dict:
    return cfgmod.load_config(args.config) if getattr(args, "config", None) else {}


def _detection_config(args, cfg) -> detection.DetectionConfig:
    return cfgmod.detection_config(
        cfg,
        threshold_offset_db=getattr(args, "offset_db", None),
        min_area=getattr(args, "min_area", None),
        open_radius=getattr(args, "open_radius", None),
        merge_gap_ms=getattr(args, "merge_gap_ms", None),
    )


# -- commands -------------------------------------------------------------------


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    params = cfgmod.spectrogram_params(cfg)
    det_cfg = _detection_config(args, cfg)
    all_candidates = []
    for wav in args.wavs:
        clip = audio_io.load_wav(wav, channel=args.channel)
        if args.baseline:
            cands = detection.baseline_detect(clip, params, percentile=args.percentile, config=det_cfg)
        else:
            cands = detection.detect(clip, params, det_cfg)
        print(f"{wav}: {len(cands)} candidates")
        all_candidates.extend(cands)
    detection.write_candidates_jsonl(all_candidates, args.out)
    if args.store:
        if not args.recording_id:
            raise UsvkitError("--recording-id is required with --store")
        with datastore.open_store(args.store) as store:
            for cand in all_candidates:
                store.put_annotation(
                    datastore.Annotation(
                        id="",
                        recording_id=args.recording_id,
                        box=(cand.t_start, cand.t_end, cand.f_min, cand.f_max),
                        label=None,
                        source="model",
                    )
                )
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.preset:
        plan = callsim.preset_plan(args.preset, seed=args.seed)
        stem = f"{args.preset}_seed{args.seed}"
    else:
        plan = callsim.read_plan(args.plan)
        stem = Path(args.plan).stem
    clip, truth = callsim.synth_recording(plan)
    wav_path = out_dir / f"{stem}.wav"
    audio_io.write_wav(clip, wav_path)
    callsim.write_truth_jsonl(truth, out_dir / f"{stem}.truth.jsonl", source_id=stem)
    callsim.write_plan(plan, out_dir / f"{stem}.plan.json")
    print(f"{wav_path}: {len(truth.boxes)} planted calls, {plan.duration_s:.0f} s")
    if args.store:
        with datastore.open_store(args.store) as store:
            rid = store.add_recording(clip, recording_id=args.recording_id, noise_tag=args.preset or stem)
            print(f"registered as recording {rid}")
    return 0


def _read_label_file(path) -> dict:
    per_recording = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            per_recording[rec["recording_id"]] = (rec["predicted"], rec["truth"])
    return per_recording


def cmd_evaluate(args) -> int:
    report = {}
    if args.counts:
        parts = [int(x) for x in args.counts.split(",")]
        if len(parts) != 4:
            raise cfgmod.ParseError("--counts wants detections,hits,false_alarms,misses")
        tally = metrics.OutcomeTally(*parts)
        report.update(metrics.evaluation_report(tally))
    elif args.candidates and args.truth:
        cands = [(b["t_start"], b["t_end"]) for b in detection.read_boxes_jsonl(args.candidates)]
        truth = [(b["t_start"], b["t_end"]) for b in detection.read_boxes_jsonl(args.truth)]
        tally = metrics.match_detections(cands, truth, min_overlap=args.min_overlap)
        report.update(metrics.evaluation_report(tally))

    if args.pre_labels and args.post_labels:
        pre = _read_label_file(args.pre_labels)
        post = _read_label_file(args.post_labels)
        shared = sorted(set(pre) & set(post))
        if not shared:
            raise cfgmod.ParseError("no shared recording ids between label files")
        pre_props = [metrics.proportion_correct(*pre[r]) for r in shared]
        post_props = [metrics.proportion_correct(*post[r]) for r in shared]
        paired = metrics.paired_t(list(zip(pre_props, post_props)))
        welch = metrics.welch_t(pre_props, post_props)
        report["per_recording"] = {
            r: {"pre": a, "post": b} for r, a, b in zip(shared, pre_props, post_props)
        }
        gen_pre = metrics.generalization(pre_props)
        gen_post = metrics.generalization(post_props)
        report["generalization"] = {
            "pre": {"mean": gen_pre.mean, "sem": gen_pre.sem},
            "post": {"mean": gen_post.mean, "sem": gen_post.sem},
        }
        report["tests"] = {
            "paired": {"t": paired.t, "df": paired.df, "p_two_tailed": paired.p_two_tailed},
            "welch_unpaired": {"t": welch.t, "df": welch.df, "p_two_tailed": welch.p_two_tailed},
        }

    if not report:
        raise cfgmod.ParseError("nothing to evaluate: give --counts, --candidates/--truth, or label files")

    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.csv:
        _write_report_csv(report, args.csv)
    if args.store:
        if not args.run_id:
            raise UsvkitError("--run-id is required with --store")
        with datastore.open_store(args.store) as store:
            store.put_run(args.run_id, report)
    return 0


def _write_report_csv(report: dict, path):
    rows = []

    def flatten(prefix, obj):
        if isinstance(obj, dict):
            for key, value in obj.items():
                flatten(f"{prefix}.{key}" if prefix else str(key), value)
        else:
            rows.append((prefix, obj))

    flatten("", report)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)


def _render_manifest_tiles(store, manifest, params, ids, tile_size):
    pairs = []
    for ann_id in ids:
        ann = store.get_annotation(ann_id)
        tile = store.render_tile(ann_id, params, out_size=tile_size)
        pairs.append((tile, ann.label))
    return TileDataset.from_pairs(pairs, categories=list(classifier.CATEGORIES))


def _train_common(args, resume_from=None) -> int:
    cfg = _load_config(args)
    params = cfgmod.spectrogram_params(cfg)
    train_cfg = cfgmod.train_config(
        cfg,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        seed=args.seed,
        oversample_minority=False if args.no_oversample else None,
    )
    with datastore.open_store(args.store) as store:
        manifest = store.get_manifest(args.manifest_version)
        train_set = _render_manifest_tiles(store, manifest, params, manifest.train_ids, args.tile_size)
        val_set = _render_manifest_tiles(store, manifest, params, manifest.val_ids, args.tile_size)
        if resume_from is not None:
            model = classifier.load_checkpoint(resume_from)
            trained, history = classifier.resume_train(model, train_set, train_cfg, val=val_set)
        else:
            model = classifier.init_model(
                args.tile_size, categories=list(classifier.CATEGORIES), seed=train_cfg.seed
            )
            trained, history = classifier.train(model, train_set, train_cfg, val=val_set)
        trained.training_meta["dataset_version"] = manifest.version
        out = args.out or store.checkpoint_path(
            f"manifest{manifest.version}-seed{train_cfg.seed}.ckpt"
        )
        classifier.save_checkpoint(trained, out)
        best = max(history.val_accuracy) if history.entries else float("nan")
        print(f"checkpoint: {out}")
        print(f"best val accuracy: {best:.4f}")
    return 0


def cmd_train(args) -> int:
    return _train_common(args)


def cmd_resume(args) -> int:
    return _train_common(args, resume_from=args.checkpoint)


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    params = cfgmod.spectrogram_params(cfg)
    model = classifier.load_checkpoint(args.checkpoint)
    with datastore.open_store(args.store) as store:
        manifest = store.get_manifest(args.manifest_version)
        val_set = _render_manifest_tiles(store, manifest, params, manifest.val_ids, model.input_size)
        accuracy = classifier.validate(model, val_set)
    print(f"val accuracy: {accuracy:.4f} over {len(val_set)} tiles")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    params = cfgmod.spectrogram_params(cfg)
    det_cfg = _detection_config(args, cfg)
    model = classifier.load_checkpoint(args.checkpoint)
    clip = audio_io.load_wav(args.wav, channel=args.channel)
    spec = compute_spectrogram(clip, params)
    candidates = detection.detect(clip, params, det_cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for cand in candidates:
            tile = extract_tile(
                spec, (cand.t_start, cand.t_end, cand.f_min, cand.f_max), out_size=model.input_size
            )
            pred = classifier.forward(model, tile)
            record = detection.candidate_to_record(cand)
            record["label"] = pred.label.value
            record["probabilities"] = {
                cat: float(p) for cat, p in zip(model.categories, pred.probabilities)
            }
            fh.write(json.dumps(record) + "\n")
    print(f"{args.wav}: {len(candidates)} candidates classified")
    return 0


def cmd_augment(args) -> int:
    cfg = _load_config(args)
    params = cfgmod.spectrogram_params(cfg)
    morph = cfgmod.morph_params(
        cfg,
        max_displacement_px=args.max_displacement,
        control_grid=args.control_grid,
        seed=args.seed,
    )
    with datastore.open_store(args.store) as store:
        manifest = store.get_manifest(args.manifest_version)
        seeds = []
        tiles = []
        for ann_id in manifest.train_ids:
            ann = store.get_annotation(ann_id)
            if not ann.natural or ann.label is None or ann.label == CallLabel.NOISE:
                continue
            seeds.append(ann)
            tiles.append(store.render_tile(ann_id, params, out_size=args.tile_size))
        proposals = synthgen.propose(seeds, tiles, args.per_seed, morph)
        for syn in proposals:
            store.put_synthetic(syn)
            if args.auto_accept:
                store.decide_synthetic(syn.id, "accept", "auto")
        state = "accepted" if args.auto_accept else "pending"
        print(f"{len(proposals)} synthetics {state} from {len(seeds)} seeds")
    return 0


def cmd_review(args) -> int:
    with datastore.open_store(args.store) as store:
        pending = store.list_synthetics(status="pending")
        if not pending:
            print("review queue is empty")
            return 0
        print(f"{len(pending)} pending synthetics; [a]ccept [r]eject [s]kip [q]uit")
        for syn in pending:
            tile_path = store.root / "tiles" / f"{syn.id}.png"
            prompt = f"{syn.id} label={syn.label.value if syn.label else '?'} seed={syn.seed_annotation_id} tile={tile_path} > "
            while True:
                try:
                    answer = input(prompt).strip().lower()
                except EOFError:
                    print()
                    return 0
                if answer in ("a", "accept"):
                    store.decide_synthetic(syn.id, "accept", args.reviewer)
                    break
                if answer in ("r", "reject"):
                    store.decide_synthetic(syn.id, "reject", args.reviewer)
                    break
                if answer in ("s", "skip"):
                    break
                if answer in ("q", "quit"):
                    return 0
                print("a / r / s / q")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    store = datastore.open_store(args.store)
    app = create_app(store, tile_size=args.tile_size)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    finally:
        store.close()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (datastore.IoFailure, audio_io.IoFailure, cfgmod.ParseError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UsvkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
