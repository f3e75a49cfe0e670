"""Command-line entry points: ``daocc <subcommand> [flags]``.

Set ``DAOCC_THREADS`` (or ``--threads``) to cap BLAS worker threads.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

log = logging.getLogger("daocc")


def _thread_limit(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _load_config(path):
    from .model import ModelConfig

    return ModelConfig.from_text(Path(path).read_text()) if path else ModelConfig()


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_e2e_check, run_op_checks

    results = run_op_checks(args.tolerance, args.epsilon, args.seed)
    if not args.no_e2e:
        results.append(run_e2e_check(args.e2e_tolerance, args.epsilon, args.seed))
    for r in results:
        print(r.line())
        if not r.passed:
            print(r.report.summary())
    ok = all(r.passed for r in results)
    print(f"gradcheck: {sum(r.passed for r in results)}/{len(results)} passed")
    return 0 if ok else 1


def cmd_oracle_suite(args) -> int:
    from .oracles import run_oracle_suite

    results = run_oracle_suite(args.seed)
    for r in results:
        print(r.line())
    print(f"oracle-suite: {sum(r.passed for r in results)}/{len(results)} passed")
    return 0 if all(r.passed for r in results) else 1


def cmd_train_toy(args) -> int:
    from dataclasses import replace

    from .train import make_dataset, save_model, train

    cfg = replace(_load_config(args.config), seed=args.seed)
    data = make_dataset(range(args.first_scene, args.first_scene + args.scenes), cfg)
    trainer = train(cfg, data, args.steps, args.lr, log_every=args.log_every)
    out = Path(args.out)
    save_model(trainer.model, out)
    trace = "".join(f"{i} {v!r}\n" for i, v in enumerate(trainer.history))
    (out / "loss_trace.txt").write_text(trace)
    print(f"trained {args.steps} steps on {args.scenes} scenes; final loss {trainer.history[-1]:.6g}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate, load_model, make_dataset

    model = load_model(args.checkpoint)
    data = make_dataset(range(args.first_scene, args.first_scene + args.scenes), model.config)
    report = evaluate(model, data, use_mask=not args.no_mask)
    text = report.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_bench(args) -> int:
    from dataclasses import replace

    from .bench import bench_latency
    from .flops import count_flops

    cfg = _load_config(args.config)
    if args.z:
        X, Y, _ = cfg.height_counts
        cfg = replace(cfg, height_counts=(X, Y, args.z))
    stats = bench_latency(cfg, args.iterations, args.warmup)
    print(stats.to_text(), end="")
    print(count_flops(cfg).to_text(), end="")
    return 0


def cmd_ablate(args) -> int:
    from .ablation import AblationSettings, run_ablation

    s = AblationSettings()
    s.steps = args.steps
    s.lr = args.lr
    s.train_seeds = tuple(range(args.train_scenes))
    s.test_seeds = tuple(range(1000, 1000 + args.test_scenes))
    s.init_seeds = tuple(range(args.init_seeds))
    result = run_ablation(_load_config(args.config), s, matrix=not args.grid_only, grid=not args.matrix_only)
    print(result.table(), end="")
    if result.matrix:
        print(f"matrix ordering holds: {result.matrix_ordering_holds()}")
    if result.grid:
        mi, lat = result.grid_trend_holds()
        print(f"grid trend holds: miou={mi} latency={lat}")
    return 0


def cmd_export(args) -> int:
    from .metrics import OccupancyGrid, save_voxels
    from .scenegen import generate_scene, random_scene_spec, write_scene

    scene = generate_scene(random_scene_spec(args.seed))
    occ = scene.occupancy
    if args.checkpoint:
        from .train import load_model, make_sample, predict_grid

        model = load_model(args.checkpoint)
        occ = predict_grid(model, make_sample(scene, model.config))
    if args.no_mask:
        occ = OccupancyGrid(occ.labels, occ.grid, None, occ.num_classes)
    save_voxels(args.out, occ)
    print(f"wrote {args.out} ({int(np.count_nonzero(occ.labels))} occupied voxels)")
    if args.scene_out:
        with open(args.scene_out, "wb") as fp:
            write_scene(fp, scene.rigs, scene.cloud, scene.occupancy)
        print(f"wrote {args.scene_out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="daocc", description="Desk-scale directional-attention occupancy pipeline.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads (default: $DAOCC_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="central-difference check of every backward pass")
    g.add_argument("--tolerance", type=float, default=1e-4, help="per-op relative tolerance")
    g.add_argument("--e2e-tolerance", type=float, default=1e-3, help="end-to-end relative tolerance")
    g.add_argument("--epsilon", type=float, default=1e-5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-e2e", action="store_true", help="skip the miniature end-to-end model")
    g.set_defaults(func=cmd_gradcheck)

    o = sub.add_parser("oracle-suite", help="compare optimized ops against brute-force oracles")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle_suite)

    t = sub.add_parser("train-toy", help="train the toy model on generated scenes and write a checkpoint")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--scenes", type=int, default=8)
    t.add_argument("--first-scene", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=3e-3)
    t.add_argument("--config", help="flat key = value model config file")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("eval", help="score a checkpoint on generated scenes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenes", type=int, default=4)
    e.add_argument("--first-scene", type=int, default=1000)
    e.add_argument("--no-mask", action="store_true", help="score every voxel, not only camera-visible ones")
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="forward-pass latency and FLOP counts")
    b.add_argument("--iterations", type=int, default=10)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--z", type=int, default=None, help="height-grid Z override")
    b.add_argument("--config")
    b.set_defaults(func=cmd_bench, default_threads=1)

    a = sub.add_parser("ablate", help="DHA/DBA matrix and height-grid sweep")
    a.add_argument("--steps", type=int, default=2000)
    a.add_argument("--lr", type=float, default=3e-3)
    a.add_argument("--train-scenes", type=int, default=200)
    a.add_argument("--test-scenes", type=int, default=40)
    a.add_argument("--init-seeds", type=int, default=2, help="average each row over this many initializations")
    a.add_argument("--matrix-only", action="store_true")
    a.add_argument("--grid-only", action="store_true")
    a.add_argument("--config")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export", help="write a DAOV voxel file (ground truth or a checkpoint's prediction)")
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int, default=0, help="scene seed")
    x.add_argument("--checkpoint", help="export this model's prediction instead of ground truth")
    x.add_argument("--no-mask", action="store_true", help="omit the visibility bitset")
    x.add_argument("--scene-out", help="also write the scene (rigs, LiDAR, labels) as a DAOS file")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    threads = args.threads or os.environ.get("DAOCC_THREADS") or getattr(args, "default_threads", None)
    with _thread_limit(threads):
        return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
