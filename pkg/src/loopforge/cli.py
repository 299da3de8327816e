"""Command-line front end: simulate, vocab-build, detect, close, eval, plot.

Exit codes: 0 success, 1 usage error, 2 data error.  Machine-readable
JSON goes to stdout, human messages to stderr.  No command emits
wall-clock state, so rerunning with the same inputs is byte-identical.

Seed precedence is flag > LOOPFORGE_SEED > config.  An override
re-seeds whatever the command owns: simulate owns the whole run config
(world included), detect and close own only the pipeline half because
the dataset directory is immutable input data.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from .database import KeyframeDatabase, KeyframeRecord, best_candidate
from .descriptors import aggregate_vlad, build_vocabulary
from .errors import LoopforgeError
from .geometry import Sim3Transform
from .harness import (
    DatasetProviders,
    ate_rmse,
    correspondence_seed,
    generate,
    integrate_odometry,
    make_correspondences,
)
from .io_formats import (
    LcdbRecord,
    RunConfig,
    read_config,
    read_lcdb,
    read_tum,
    read_vocabulary,
    write_config,
    write_correspondences,
    write_events,
    write_graph,
    write_lcdb,
    write_tum,
    write_vocabulary,
)
from .pipeline import Keyframe, run
from .pose_graph import PoseEdge, PoseGraph
from .threshold import AdaptiveThreshold


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _effective_seed(flag_seed: int | None) -> int | None:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("LOOPFORGE_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise _UsageError(f"LOOPFORGE_SEED must be an integer, got {env!r}") from None


def _reseed(rc: RunConfig, seed: int | None, *, world_too: bool) -> RunConfig:
    if seed is None:
        return rc
    world = dataclasses.replace(rc.world, seed=seed) if world_too else rc.world
    return RunConfig(pipeline=dataclasses.replace(rc.pipeline, seed=seed),
                     world=world)


def _resolve_vocabulary(pcfg, training: list[np.ndarray]):
    if pcfg.vocabulary is not None:
        return read_vocabulary(pcfg.vocabulary)
    return build_vocabulary(training, k=pcfg.vocab_k, seed=pcfg.seed)


def _emit_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args) -> int:
    rc = _reseed(read_config(args.config), _effective_seed(args.seed),
                 world_too=True)
    ds = generate(rc.world)
    os.makedirs(args.out, exist_ok=True)
    write_config(os.path.join(args.out, "config.json"), rc)
    write_tum(os.path.join(args.out, "gt.tum"), ds.ground_truth)
    dead = integrate_odometry(ds)
    write_tum(os.path.join(args.out, "odometry.tum"), dead)

    records = [
        LcdbRecord(e.frame_id, e.timestamp,
                   ds.locals[e.frame_id].astype(np.float32))
        for e in ds.ground_truth
    ]
    write_lcdb(os.path.join(args.out, "locals.lcdb"), records, kind="local")

    graph = PoseGraph()
    for e in dead:
        graph.add_node(e.frame_id, e.pose)
    for e in dead[1:]:
        graph.add_edge(PoseEdge(e.frame_id - 1, e.frame_id,
                                ds.odometry[e.frame_id],
                                weight=1.0, kind="odometry"))
    write_graph(os.path.join(args.out, "odometry.graph"), graph)

    # only the scheduled revisit pairs get a correspondence dump; any
    # other pair the pipeline asks about is regenerated from the config
    w = rc.world
    pairs = {
        (late, early): make_correspondences(
            ds, late, early,
            n=w.landmarks_per_pair,
            outlier_ratio=w.outlier_ratio,
            noise=w.corr_noise,
            seed=correspondence_seed(w.seed, late, early),
        )
        for early, late in ds.revisits
    }
    write_correspondences(os.path.join(args.out, "correspondences.txt"), pairs)

    _log(f"simulate: wrote {len(ds.ground_truth)} keyframes to {args.out}")
    print(json.dumps({
        "config_hash": rc.hash,
        "dataset": args.out,
        "keyframes": len(ds.ground_truth),
        "revisit_pairs": len(ds.revisits),
    }, sort_keys=True))
    return 0


def _cmd_vocab_build(args) -> int:
    files = sorted(glob.glob(args.descriptors))
    if not files:
        print(f"error: no files match {args.descriptors!r}", file=sys.stderr)
        return 2
    seed = _effective_seed(args.seed)
    if seed is None:
        seed = 0
    training = []
    for path in files:
        training.extend(rec.data.astype(np.float64)
                        for rec in read_lcdb(path).records)
    vocab = build_vocabulary(training, k=args.k, seed=seed)
    write_vocabulary(args.out, vocab)
    _log(f"vocab-build: {len(training)} frames from {len(files)} file(s)")
    print(json.dumps({
        "files": len(files),
        "k": args.k,
        "out": args.out,
        "training_frames": len(training),
    }, sort_keys=True))
    return 0


def _cmd_detect(args) -> int:
    rc = _reseed(read_config(args.config), _effective_seed(args.seed),
                 world_too=False)
    pcfg = rc.pipeline
    lcdb = read_lcdb(os.path.join(args.dataset, "locals.lcdb"))
    training = [rec.data.astype(np.float64) for rec in lcdb.records]
    vocab = _resolve_vocabulary(pcfg, training)

    db = KeyframeDatabase()
    thresh = AdaptiveThreshold(warmup_target=pcfg.warmup_target,
                               fixed=pcfg.fixed_threshold)
    candidates = []
    for rec, locals_ in zip(lcdb.records, training):
        desc = aggregate_vlad(locals_, vocab)
        db.insert(KeyframeRecord(rec.frame_id, rec.timestamp, desc,
                                 Sim3Transform.identity()))
        best = best_candidate(db.query_top_k(
            desc, rec.frame_id, k=pcfg.retrieval_k,
            exclusion_window=pcfg.exclusion_window,
        ))
        if best is None:
            continue
        thresh.observe(best.similarity)
        if thresh.is_loop(best.similarity):
            candidates.append({
                "frame_id": rec.frame_id,
                "match_id": best.match_id,
                "similarity": best.similarity,
                "threshold": thresh.loop_thresh,
            })
    _emit_json(args.out, {"config_hash": pcfg.hash, "candidates": candidates})
    _log(f"detect: {len(candidates)} candidate(s) over {len(lcdb.records)} frames")
    print(json.dumps({"candidates": len(candidates), "out": args.out},
                     sort_keys=True))
    return 0


def _cmd_close(args) -> int:
    seed = _effective_seed(args.seed)
    pcfg = _reseed(read_config(args.config), seed, world_too=False).pipeline
    data_cfg = read_config(os.path.join(args.dataset, "config.json"))
    ds = generate(data_cfg.world)

    training = [ds.locals[e.frame_id] for e in ds.ground_truth]
    vocab = _resolve_vocabulary(pcfg, training)
    stream = [Keyframe(e.frame_id, e.timestamp) for e in ds.ground_truth]
    entries, log = run(stream, DatasetProviders(ds), pcfg, vocabulary=vocab)

    write_tum(args.out_traj, entries)
    write_events(args.out_events, log)
    accepted = log.count("LoopAccepted")
    _log(f"close: {accepted} loop(s) accepted over {len(entries)} keyframes")
    print(json.dumps({
        "config_hash": log.config_hash,
        "keyframes": len(entries),
        "loops_accepted": accepted,
    }, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    gt = read_tum(args.gt)
    est = read_tum(args.est)
    value = ate_rmse(gt, est, alignment=args.align)
    # alignment leaves SVD-level residue on perfect input; 12 decimals
    # keeps every real error and reports identical trajectories as 0.0
    print(json.dumps({"ate_rmse": round(value, 12)}))
    return 0


_PLOT_W = 800.0
_PLOT_H = 600.0
_PLOT_MARGIN = 50.0
_PLOT_STYLES = (
    ("#444444", "5 4"),   # ground truth, dashed grey
    ("#1f77b4", None),    # estimate A
    ("#d62728", None),    # estimate B
)


def _cmd_plot(args) -> int:
    series = [("ground truth", args.gt), ("estimate A", args.est_a)]
    if args.est_b is not None:
        series.append(("estimate B", args.est_b))
    trajs = [(label, read_tum(path)) for label, path in series]

    xy = [np.array([[e.pose.translation[0], e.pose.translation[1]]
                    for e in traj]) for _, traj in trajs]
    allpts = np.vstack(xy)
    lo = allpts.min(axis=0)
    span = np.maximum(allpts.max(axis=0) - lo, 1e-9)
    scale = min((_PLOT_W - 2 * _PLOT_MARGIN) / span[0],
                (_PLOT_H - 2 * _PLOT_MARGIN) / span[1])

    def to_px(p):
        # y grows upward on paper, downward in SVG
        return (_PLOT_MARGIN + (p[0] - lo[0]) * scale,
                _PLOT_H - _PLOT_MARGIN - (p[1] - lo[1]) * scale)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PLOT_W:.0f}" '
        f'height="{_PLOT_H:.0f}" viewBox="0 0 {_PLOT_W:.0f} {_PLOT_H:.0f}">',
        f'<rect width="{_PLOT_W:.0f}" height="{_PLOT_H:.0f}" fill="white"/>',
    ]
    for i, ((label, _), pts) in enumerate(zip(trajs, xy)):
        color, dash = _PLOT_STYLES[i]
        coords = " ".join("{:.2f},{:.2f}".format(*to_px(p)) for p in pts)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5"'
            f'{dash_attr} points="{coords}"/>'
        )
        ly = 20 + 18 * i
        parts.append(
            f'<line x1="{_PLOT_MARGIN:.0f}" y1="{ly}" '
            f'x2="{_PLOT_MARGIN + 24:.0f}" y2="{ly}" stroke="{color}" '
            f'stroke-width="1.5"{dash_attr}/>'
        )
        parts.append(
            f'<text x="{_PLOT_MARGIN + 30:.0f}" y="{ly + 4}" '
            f'font-family="sans-serif" font-size="13">{label}</text>'
        )
    parts.append("</svg>")
    with open(args.out, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    _log(f"plot: wrote {args.out}")
    print(json.dumps({"out": args.out, "series": len(trajs)}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="loopforge",
                     description="loop closure pipeline tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("vocab-build", help="cluster local descriptors")
    p.add_argument("--descriptors", required=True,
                   help="glob over LCDB files")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_vocab_build)

    p = sub.add_parser("detect", help="retrieval and threshold only")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("close", help="full loop closure run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-traj", required=True)
    p.add_argument("--out-events", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_close)

    p = sub.add_parser("eval", help="absolute trajectory error")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--align", choices=("none", "se3", "sim3"),
                   default="sim3")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("plot", help="trajectory overlay as SVG")
    p.add_argument("--gt", required=True)
    p.add_argument("--est-a", required=True)
    p.add_argument("--est-b", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LoopforgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
