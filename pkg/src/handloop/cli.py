"""Command-line entry points: asset checks, training, batch runs, serving.

Subcommands map onto the batch workflows: ingest-check, build-stats,
train-adapter, run-oracle, simulate-session, report-metrics, serve, and
make-demo-data for generating a synthetic clip tree.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .completion import (
    AdapterParams,
    GoldTarget,
    RepresentationLayout,
    ScoreFileAdapter,
    AffineAdapter,
    adapter_train_step,
    assemble_representation,
)
from .config import EngineConfig, load_config, with_policy
from .controller import CalibrationStore
from .events import NO_NOUN, HandloopError, new_event_state
from .ingest import (
    build_statistics,
    load_events,
    load_features,
    load_hand_tracks,
    load_ontology,
    load_statistics,
    save_statistics,
)
from .loop import ClipInputs, read_log, run_session, write_log
from .metrics import (
    ManualBaseline,
    MatchConfig,
    events_from_states,
    match_events,
    oracle_responder,
    run_oracle_protocol,
    session_metrics,
    write_report,
)
from .synthetic import (
    AdversarialAdapter,
    PerfectAdapter,
    make_accept_all,
    make_manual_entry_responder,
    make_reject_then_save,
    synth_clip,
    write_clip_assets,
)


def _load_clip(clip_dir: Path, spans_path: Path | None = None) -> ClipInputs:
    tracks = {t.hand: t for t in load_hand_tracks(clip_dir / "tracks.jsonl")}
    features = load_features(clip_dir / "features.lfho")
    ontology = load_ontology(clip_dir / "ontology.json")
    statistics = load_statistics(clip_dir / "statistics.json")
    spans = []
    spans_file = spans_path or (clip_dir / "spans.jsonl")
    if spans_file.exists():
        for line in spans_file.read_text(encoding="utf-8").splitlines():
            if line.strip():
                doc = json.loads(line)
                spans.append((doc["hand"], doc["t_s"], doc["t_e"]))
    return ClipInputs(
        clip_id=clip_dir.name,
        ontology=ontology,
        tracks=tracks,
        features=features,
        spans=spans,
        statistics=statistics,
    )


def _pick_adapter(args, clip: ClipInputs, references):
    if getattr(args, "perfect", False):
        return PerfectAdapter(references, clip.ontology)
    if getattr(args, "adversarial", False):
        return AdversarialAdapter(references, clip.ontology)
    if getattr(args, "scores", None):
        return ScoreFileAdapter.load(args.scores)
    if getattr(args, "adapter", None):
        return AffineAdapter(AdapterParams.load(args.adapter))
    theta = Path(args.clip_dir) / "theta.lfad"
    if theta.exists():
        return AffineAdapter(AdapterParams.load(theta))
    layout = RepresentationLayout(
        n_verbs=len(clip.ontology.verbs),
        n_nouns=len(clip.ontology.nouns),
        feature_dim=clip.features.dim,
    )
    return AffineAdapter(
        AdapterParams.zeros(layout.size, 16, len(clip.ontology.verbs), len(clip.ontology.nouns))
    )


def cmd_ingest_check(args) -> int:
    clip_dir = Path(args.clip_dir)
    problems = []
    loaded = {}
    checks = {
        "tracks.jsonl": lambda p: load_hand_tracks(p),
        "features.lfho": lambda p: load_features(p),
        "ontology.json": lambda p: load_ontology(p),
        "statistics.json": lambda p: load_statistics(p),
    }
    for name, loader in checks.items():
        path = clip_dir / name
        if not path.exists():
            problems.append(f"missing {name}")
            continue
        try:
            loaded[name] = loader(path)
        except HandloopError as exc:
            problems.append(f"{name}: {exc}")
    refs = clip_dir / "references.jsonl"
    if refs.exists() and "ontology.json" in loaded:
        try:
            loaded["references.jsonl"] = load_events(refs, loaded["ontology.json"])
        except HandloopError as exc:
            problems.append(f"references.jsonl: {exc}")
    for name, obj in loaded.items():
        if name == "tracks.jsonl":
            print(f"tracks.jsonl: {len(obj)} hand tracks")
        elif name == "features.lfho":
            print(f"features.lfho: {obj.frame_count} frames x {obj.dim} dims")
        elif name == "ontology.json":
            print(f"ontology.json: {len(obj.verbs)} verbs, {len(obj.nouns)} nouns")
        elif name == "statistics.json":
            print(f"statistics.json: {obj.bins} onset bins")
        elif name == "references.jsonl":
            print(f"references.jsonl: {len(obj)} events")
    for problem in problems:
        print(f"PROBLEM: {problem}", file=sys.stderr)
    print("ingest-check:", "FAIL" if problems else "OK")
    return 1 if problems else 0


def cmd_build_stats(args) -> int:
    ontology = load_ontology(args.ontology)
    events = load_events(args.events, ontology)
    bundle = build_statistics(events, ontology, bins=args.bins)
    save_statistics(bundle, args.out)
    print(f"built statistics from {len(events)} events into {args.out}")
    return 0


def cmd_train_adapter(args) -> int:
    clip_dir = Path(args.clip_dir)
    clip = _load_clip(clip_dir)
    events = load_events(args.events or clip_dir / "references.jsonl", clip.ontology)
    layout = RepresentationLayout(
        n_verbs=len(clip.ontology.verbs),
        n_nouns=len(clip.ontology.nouns),
        feature_dim=clip.features.dim,
    )
    rng = np.random.default_rng(args.seed)
    params = AdapterParams.random(
        rng, layout.size, args.grid, len(clip.ontology.verbs), len(clip.ontology.nouns), scale=0.01
    )
    batch = []
    for record in events:
        state = new_event_state(record.hand, record.t_s, record.t_e)
        rep = assemble_representation(state, None, clip.features, clip.ontology)
        batch.append(
            (
                rep,
                GoldTarget(
                    t_o=record.t_o,
                    verb_index=clip.ontology.verb_index(record.v),
                    b=record.b,
                    noun_index=None if record.n == NO_NOUN else clip.ontology.noun_index(record.n),
                ),
            )
        )
    loss = float("nan")
    for epoch in range(args.epochs):
        params, loss = adapter_train_step(params, batch, args.lr)
        print(f"epoch {epoch + 1}/{args.epochs}: loss {loss:.4f}")
    params.save(args.out)
    print(f"saved adapter parameters to {args.out}")
    return 0


def cmd_run_oracle(args) -> int:
    clip_dir = Path(args.clip_dir)
    clip = _load_clip(clip_dir)
    references = load_events(args.references or clip_dir / "references.jsonl", clip.ontology)
    if not clip.spans:
        clip = ClipInputs(
            clip_id=clip.clip_id,
            ontology=clip.ontology,
            tracks=clip.tracks,
            features=clip.features,
            spans=[(r.hand, r.t_s, r.t_e) for r in references],
            statistics=clip.statistics,
        )
    adapter = _pick_adapter(args, clip, references)
    cfg = load_config(args.config) if args.config else EngineConfig()
    result = run_oracle_protocol(clip, adapter, references, cfg, MatchConfig(args.delta_o, args.tau))
    annotations = events_from_states(result.states)
    matched = match_events(annotations, references, MatchConfig(args.delta_o, args.tau))
    onset_errors = [p.onset_err for p in matched.pairs]
    print(f"events: {len(references)}")
    print(f"oracle edits: {result.total_edits()} (zero-edit rate {result.zero_edit_rate():.3f})")
    if onset_errors:
        print(f"onset MAE after protocol: {sum(onset_errors) / len(onset_errors):.2f} frames")
    if args.log:
        write_log(result.traces, args.log)
        print(f"log written to {args.log}")
    return 0


_RESPONDERS = ("accept_all", "reject_then_save", "manual", "oracle")


def cmd_simulate_session(args) -> int:
    clip_dir = Path(args.clip_dir)
    clip = _load_clip(clip_dir)
    references = None
    refs_path = Path(args.references) if args.references else clip_dir / "references.jsonl"
    if refs_path.exists():
        references = load_events(refs_path, clip.ontology)
    if not clip.spans and references:
        clip = ClipInputs(
            clip_id=clip.clip_id,
            ontology=clip.ontology,
            tracks=clip.tracks,
            features=clip.features,
            spans=[(r.hand, r.t_s, r.t_e) for r in references],
            statistics=clip.statistics,
        )
    if not clip.spans:
        print("no spans: provide spans.jsonl or references.jsonl", file=sys.stderr)
        return 1
    adapter = _pick_adapter(args, clip, references or [])
    cfg = load_config(args.config) if args.config else EngineConfig()
    if args.policy:
        cfg = with_policy(cfg, args.policy)
    if args.responder == "accept_all":
        responder = make_accept_all()
    elif args.responder == "reject_then_save":
        responder = make_reject_then_save()
    elif args.responder == "manual":
        if references is None:
            print("manual responder needs references", file=sys.stderr)
            return 1
        responder = make_manual_entry_responder(references)
    else:
        if references is None:
            print("oracle responder needs references", file=sys.stderr)
            return 1
        responder = oracle_responder(references, MatchConfig())
    result = run_session(clip, adapter, CalibrationStore(), responder, cfg, session_id=args.session_id)
    print(f"events: {len(result.outcomes)}")
    for i, outcome in enumerate(result.outcomes):
        print(f"  event {i}: {outcome.status}")
    print(f"trace records: {len(result.traces)}")
    if args.log:
        write_log(result.traces, args.log)
        print(f"log written to {args.log}")
    annotations = events_from_states(result.states)
    metrics = session_metrics(result.traces, annotations, references, n_events=len(result.outcomes))
    if metrics.behavioral.accept_rate is not None:
        print(f"accept rate: {metrics.behavioral.accept_rate:.3f}")
    if metrics.complete_match_rate is not None:
        print(f"complete match rate: {metrics.complete_match_rate:.3f}")
    return 0


def cmd_report_metrics(args) -> int:
    traces = read_log(args.log)
    references = None
    annotations = []
    ontology = load_ontology(args.ontology) if args.ontology else None
    if args.references:
        references = load_events(args.references, ontology)
    if args.annotations:
        annotations = load_events(args.annotations, ontology)
    n_events = max((t.event_index for t in traces), default=-1) + 1
    metrics = session_metrics(
        traces,
        annotations,
        references,
        MatchConfig(args.delta_o, args.tau),
        ManualBaseline(actions_per_field=args.baseline_actions_per_field),
        n_events=max(n_events, len(annotations)),
    )
    write_report(metrics, args.out_json, args.out_csv)
    print(f"report written to {args.out_json} and {args.out_csv}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_config(args.config) if args.config else EngineConfig()
    app = create_app(args.data_root, cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_make_demo_data(args) -> int:
    synthetic = synth_clip(n_events=args.events, seed=args.seed, clip_id=args.clip_id)
    clip_dir = Path(args.data_root) / "clips" / args.clip_id
    paths = write_clip_assets(clip_dir, synthetic)
    print(f"demo clip written under {clip_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path.name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="validate a clip asset directory")
    p.add_argument("clip_dir")
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("build-stats", help="estimate smoothed statistics from an event corpus")
    p.add_argument("--events", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_build_stats)

    p = sub.add_parser("train-adapter", help="train the affine adapter on a clip's events")
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--events", default=None)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_adapter)

    p = sub.add_parser("run-oracle", help="run the sequential oracle-correction protocol")
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--adapter", default=None)
    p.add_argument("--scores", default=None)
    p.add_argument("--perfect", action="store_true")
    p.add_argument("--adversarial", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--delta-o", dest="delta_o", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_run_oracle)

    p = sub.add_parser("simulate-session", help="run a scripted closed-loop session")
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--responder", choices=_RESPONDERS, default="accept_all")
    p.add_argument("--references", default=None)
    p.add_argument("--adapter", default=None)
    p.add_argument("--scores", default=None)
    p.add_argument("--perfect", action="store_true")
    p.add_argument("--adversarial", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--policy", choices=("human_only", "human_confirm", "safe_local"), default=None)
    p.add_argument("--session-id", default="cli-session")
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_simulate_session)

    p = sub.add_parser("report-metrics", help="compute a metrics report from a trace log")
    p.add_argument("--log", required=True)
    p.add_argument("--references", default=None)
    p.add_argument("--annotations", default=None)
    p.add_argument("--ontology", default=None)
    p.add_argument("--delta-o", dest="delta_o", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--baseline-actions-per-field", type=float, default=1.0)
    p.add_argument("--out-json", default="report.json")
    p.add_argument("--out-csv", default="report.csv")
    p.set_defaults(func=cmd_report_metrics)

    p = sub.add_parser("serve", help="serve the HTTP session API")
    p.add_argument("--data-root", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-demo-data", help="generate a synthetic demo clip")
    p.add_argument("--data-root", required=True)
    p.add_argument("--clip-id", default="demo")
    p.add_argument("--events", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_demo_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HandloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
