"""Command line entry point: ``python -m fwpaint <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure,
3 gradient check failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError
from .checks import GROUPS, run_suite
from .config import ConfigError, RuleKind, TrainConfig, config_from_dict, load_preset, load_run_config
from .data import SYNTH_KINDS, DatasetError, save_dataset, synth_generate, write_image
from .deltanet import make_episodes, train_fewshot
from .metrics import rffd
from .tensor import DimensionError, NumericError
from .training import GanTrainer, build_dataset, painter_from_checkpoint, train_refiner, unet_from_checkpoint
from .viz import render_fastweights, render_trace

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageFailure(f"{self.prog}: {message}")


def _dataset_spec(args) -> dict | None:
    if getattr(args, "data", None):
        return {"folder": args.data}
    if getattr(args, "synth", None):
        return {"synth": args.synth, "n": args.synth_n}
    return None


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--data", help="folder of PNG/PPM images")
    g.add_argument("--synth", choices=SYNTH_KINDS, help="synthetic dataset kind")
    p.add_argument("--synth-n", type=int, default=4096, help="synthetic dataset size")


def _load_ckpt(path) -> Checkpoint:
    return Checkpoint.load(path)


def _ckpt_generator(ckpt: Checkpoint):
    painter = painter_from_checkpoint(ckpt)
    unet = unet_from_checkpoint(ckpt)

    def gen(z):
        img = painter.generate(z)[0]
        return (unet.refine(img) if unet is not None else img).data

    return painter, gen


def _dataset_for(ckpt: Checkpoint, args):
    fpa = painter_from_checkpoint(ckpt).cfg
    train = config_from_dict(TrainConfig, ckpt.meta["train"])
    spec = _dataset_spec(args)
    if spec is not None:
        train = dataclasses.replace(train, dataset=spec)
    return build_dataset(train, fpa), train


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.config:
        fpa_cfg, train_cfg = load_run_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        fpa_cfg, train_cfg = load_preset("desk16"), TrainConfig()
    changes = {"seed": args.seed}
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.rule:
        changes["rule"] = RuleKind.parse(args.rule)
    spec = _dataset_spec(args)
    if spec is not None:
        changes["dataset"] = spec
    train_cfg = dataclasses.replace(train_cfg, **changes)
    if args.steps_t is not None:
        fpa_cfg = dataclasses.replace(fpa_cfg, T=args.steps_t)
    trainer = GanTrainer(fpa_cfg, train_cfg, out_dir=args.out, mode="joint" if args.joint_unet else "fpa")
    for _ in trainer.run(evaluate=not args.no_eval):
        rec = trainer.history[-1]
        print(json.dumps(rec, sort_keys=True), flush=True)
    print(f"wrote {Path(args.out) / 'final.fpa'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    painter, gen = _ckpt_generator(ckpt)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    z = rng.standard_normal((args.n, painter.cfg.d_latent)).astype(painter.dtype)
    imgs = np.concatenate([gen(z[i:i + 256]) for i in range(0, args.n, 256)]) if args.n else []
    for i, img in enumerate(imgs):
        write_image(out / f"sample_{i:05d}.png", img)
    print(f"wrote {args.n} samples to {out}")
    return EXIT_OK


def cmd_paint(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    painter = painter_from_checkpoint(ckpt)
    z = np.random.default_rng(args.seed).standard_normal(painter.cfg.d_latent).astype(painter.dtype)
    img, trace = painter.generate(z, record_trace=True)
    out = Path(args.out)
    paths = render_trace(trace, out, scale=args.scale, raw=args.raw)
    write_image(out / "image.png", img.data)
    print(f"wrote {len(paths) + 1} files to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    _, gen = _ckpt_generator(ckpt)
    ds, train = _dataset_for(ckpt, args)
    painter = painter_from_checkpoint(ckpt)

    def fake(n):
        rng = np.random.default_rng(args.seed)
        z = rng.standard_normal((n, painter.cfg.d_latent)).astype(painter.dtype)
        return np.concatenate([gen(z[i:i + 256]) for i in range(0, n, 256)])

    score = rffd(ds, fake, n=args.n, seed=train.metric_seed)
    print(f"rffd={score:.6f} step={ckpt.meta.get('step')} mode={ckpt.meta.get('mode')} "
          f"n={args.n} data={ds.source} ckpt={args.ckpt}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.module, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:28s} rel_err={r.max_rel_error:.3e} "
              f"tol={r.tolerance:.0e} entries={r.checked}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_fewshot(args) -> int:
    res = train_fewshot(ways=args.ways, shots=args.shots, episodes=args.steps, seed=args.seed,
                        eval_every=args.eval_every)
    for h in res.history:
        print(json.dumps(h, sort_keys=True))
    print(f"accuracy={res.accuracy:.4f} episodes={res.episodes_seen} ways={args.ways} shots={args.shots}")
    if args.render:
        ep = make_episodes(np.random.default_rng(args.seed + 1), 1, args.ways, args.shots)
        records: list = []
        res.net.logits(ep.inputs, records=records)
        for li, rec in enumerate(records):
            for h in range(res.net.layers[li].heads):
                render_fastweights(rec, Path(args.render) / f"layer{li}_head{h}", head=h)
        print(f"rendered fast weights to {args.render}")
    return EXIT_OK


def cmd_refine_train(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    _, train = _dataset_for(ckpt, args)
    changes = {"seed": args.seed}
    if args.steps is not None:
        changes["steps"] = args.steps
    spec = _dataset_spec(args)
    if spec is not None:
        changes["dataset"] = spec
    train = dataclasses.replace(train, **changes)
    tr = train_refiner(ckpt, train, out_dir=args.out, evaluate=not args.no_eval)
    for rec in tr.history:
        print(json.dumps(rec, sort_keys=True))
    print(f"wrote {Path(args.out) / 'final.fpa'}")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    ds = synth_generate(args.kind, args.n, args.res, seed=args.seed, channels=args.channels)
    paths = save_dataset(ds, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fwpaint", description="Fast-weight image painters: training, sampling and inspection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="adversarially train a painter")
    t.add_argument("--config", help="JSON run file with 'fpa' and 'train' sections")
    _add_data_flags(t)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--rule", choices=[r.value for r in RuleKind])
    t.add_argument("--steps-t", type=int, help="number of painting steps T")
    t.add_argument("--steps", type=int, help="training iterations (overrides the config)")
    t.add_argument("--no-eval", action="store_true", help="skip RFFD evaluation")
    t.add_argument("--joint-unet", action="store_true",
                   help="train painter and U-Net together from scratch (known not to work well)")
    t.add_argument("--workers", type=int, default=1, help="data prefetch workers (accepted, unused)")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sample", help="write generated images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sample)

    pa = sub.add_parser("paint", help="render the painting steps of one image")
    pa.add_argument("--ckpt", required=True)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", required=True)
    pa.add_argument("--raw", action="store_true", help="also dump un-normalised arrays to trace_raw.npz")
    pa.add_argument("--scale", type=int, default=1, help="integer upscaling of frames")
    pa.set_defaults(fn=cmd_paint)

    e = sub.add_parser("eval", help="print the RFFD of a checkpoint")
    e.add_argument("--ckpt", required=True)
    _add_data_flags(e)
    e.add_argument("--n", type=int, default=2048)
    e.add_argument("--seed", type=int, default=1234, help="latent seed for the fake samples")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--module", choices=("all",) + GROUPS, default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    f = sub.add_parser("fewshot", help="DeltaNet few-shot toy task")
    f.add_argument("--ways", type=int, default=5)
    f.add_argument("--shots", type=int, default=5)
    f.add_argument("--steps", type=int, default=20000, help="training episodes")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--eval-every", type=int, default=2000)
    f.add_argument("--render", help="directory for fast-weight frames")
    f.set_defaults(fn=cmd_fewshot)

    r = sub.add_parser("refine-train", help="train a U-Net refiner on a frozen painter")
    r.add_argument("--ckpt", required=True)
    _add_data_flags(r)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--steps", type=int)
    r.add_argument("--no-eval", action="store_true")
    r.set_defaults(fn=cmd_refine_train)

    d = sub.add_parser("synth-data", help="write a synthetic dataset as PNG files")
    d.add_argument("--kind", choices=SYNTH_KINDS, default="blobs")
    d.add_argument("--n", type=int, default=1024)
    d.add_argument("--res", type=int, default=16)
    d.add_argument("--channels", type=int, default=3, choices=(1, 3))
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_synth_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageFailure as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.fn(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, DatasetError, DimensionError, FileNotFoundError,
            IsADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
