"""Command-line interface."""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Sequence

import numpy as np

from . import __version__


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _resolve_config(path: str) -> str:
    """Fall back to the shipped presets for bare names like ``toy_single.txt``."""
    if os.path.exists(path):
        return path
    shipped = Path(__file__).resolve().parent.parent / 'configs' / path
    return str(shipped) if shipped.exists() else path


def _console_logging(verbose: bool = True):
    logger = logging.getLogger()
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format='%(asctime)s [%(levelname)s] %(message)s',
                        handlers=[logging.StreamHandler()])


def _banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _sample_id(record) -> str:
    return os.path.basename(record['left']).rsplit('_left', 1)[0]


# Commands ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .core.io import write_manifest, write_pfm, write_pgm, write_ppm
    from .core.synthetic import generate_rds

    if args.count < 1:
        raise ValueError(f"--count must be >= 1, got {args.count}")
    if args.dmax > args.width / 2:
        raise ValueError(f"--dmax {args.dmax} exceeds width/2 = {args.width / 2}")
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise FileExistsError(f"output directory {args.out} is not empty (use --force)")
    os.makedirs(args.out, exist_ok=True)

    _banner("MGEV-STEREO: Synthetic Dataset Generation")
    print(f"Samples: {args.count} | size {args.height}×{args.width} | d_max {args.dmax} | seed {args.seed}")
    print("-" * 40)
    records = []
    for i in range(args.count):
        seed = int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0])
        sample = generate_rds(seed, args.height, args.width, args.dmax, layers=args.layers)
        stem = f'{i:06d}'
        files = {'left': f'{stem}_left.ppm', 'right': f'{stem}_right.ppm',
                 'gt': f'{stem}_gt.pfm', 'mask': f'{stem}_mask.pgm'}
        write_ppm(os.path.join(args.out, files['left']), sample.left)
        write_ppm(os.path.join(args.out, files['right']), sample.right)
        write_pfm(os.path.join(args.out, files['gt']), sample.gt_disparity)
        write_pgm(os.path.join(args.out, files['mask']), sample.occlusion_mask.astype(np.float32))
        records.append({**files, 'd_max': args.dmax, 'seed': seed})
    write_manifest(args.out, records)
    print(f"✓ Wrote {args.count} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .core.config import parse_config
    from .core.trainer import StereoTrainer

    config = parse_config(_resolve_config(args.config))
    if args.seed is not None:
        config = config.derive(seed=args.seed)
    trainer = StereoTrainer(config, args.data, args.out, log_dir=args.log_dir,
                            deterministic=args.deterministic, resume=not args.no_resume,
                            steps=args.steps)
    status = trainer.run()
    return 0 if status == "COMPLETE" else 1


def cmd_infer(args) -> int:
    from .core.inference import dump_iterations, dump_volumes, load_model, predict_dataset
    from .core.io import read_manifest, read_ppm, write_pfm

    model = load_model(args.ckpt)
    iters = args.iters or model.config.iters_infer

    if args.data:
        os.makedirs(args.out, exist_ok=True)
        manifest = read_manifest(args.data)
        t0 = time.perf_counter()
        results = predict_dataset(model, args.data, iters)
        for (_, record), result in zip(manifest.iterrows(), results):
            write_pfm(os.path.join(args.out, f'{_sample_id(record)}.pfm'), result['pred'])
        ms = 1000.0 * (time.perf_counter() - t0) / max(1, len(results))
        print(f"✓ Wrote {len(results)} predictions to {args.out} ({ms:.1f} ms/pair, {iters} iterations)")
        return 0

    if not (args.left and args.right):
        raise ValueError("infer needs --left and --right (or --data)")
    left, right = read_ppm(args.left), read_ppm(args.right)
    if left.shape != right.shape:
        raise ValueError(f"left {left.shape[1:]} and right {right.shape[1:]} image sizes differ")
    history = bool(args.dump_iters)
    t0 = time.perf_counter()
    out = model.predict(left, right, iters, history=history)
    ms = 1000.0 * (time.perf_counter() - t0)
    write_pfm(args.out, out['disparity'])
    if args.dump_iters:
        dump_iterations(args.dump_iters, out['iterations'])
    if args.dump_volumes:
        dump_volumes(args.dump_volumes, out['prediction'])
    print(f"{ms:.1f} ms ({iters} iterations) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .core.io import load_sample, read_manifest, read_pfm, save_table
    from .core.metrics import average_reports, evaluate, format_table, reports_frame

    manifest = read_manifest(args.data)
    expected = [(record, os.path.join(args.pred, f'{_sample_id(record)}.pfm'))
                for _, record in manifest.iterrows()]
    missing = [path for _, path in expected if not os.path.exists(path)]
    if missing:
        for path in missing:
            print(f"missing prediction: {path}", file=sys.stderr)
        raise FileNotFoundError(f"{len(missing)} of {len(expected)} predictions missing in {args.pred}")

    per_all, per_noc = [], []
    for record, path in expected:
        sample = load_sample(args.data, record)
        pred = read_pfm(path)
        per_all.append(evaluate(pred, sample['gt'], None, args.ranges))
        if sample['mask'].any():
            per_noc.append(evaluate(pred, sample['gt'], sample['mask'], args.ranges))
    reports = {'all': average_reports(per_all)}
    if per_noc:
        reports['noc'] = average_reports(per_noc)
    frame = reports_frame(reports)
    print(frame.to_csv(index=False, na_rep='n/a'), end='')
    print()
    print(format_table(frame))
    if args.csv:
        save_table(frame, args.csv)
    return 0


def cmd_account(args) -> int:
    from .core.accounting import compare
    from .core.config import parse_config

    config = parse_config(_resolve_config(args.config))
    frame = compare(config, args.height, args.width, with_parameters=not args.no_params)
    print(frame.to_string(index=False))
    if args.csv:
        frame.to_csv(args.csv, index=False)
    return 0


def cmd_sweep(args) -> int:
    from .core.inference import load_model, sweep

    model = load_model(args.ckpt)
    frame = sweep(model, args.data, args.iters, args.ranges, args.limit)
    print(frame.to_string(index=False))
    if args.csv:
        frame.to_csv(args.csv, index=False)
    return 0


# Parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='mgev-stereo',
        description="mgev-stereo: multi-range geometry encoding volume stereo matcher"
    )
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('--quiet', action='store_true', help='Only log warnings and errors')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen', help='Generate a synthetic random-dot stereo dataset')
    p.add_argument('--out', required=True)
    p.add_argument('--count', type=int, required=True)
    p.add_argument('--height', type=int, default=64)
    p.add_argument('--width', type=int, default=128)
    p.add_argument('--dmax', type=float, default=24)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--layers', type=int, default=4)
    p.add_argument('--force', action='store_true', help='Write into a non-empty directory')
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser('train', help='Train a model on a generated dataset')
    p.add_argument('--config', required=True, help='Configuration file (key = value text or JSON)')
    p.add_argument('--data', required=True)
    p.add_argument('--out', required=True, help='Checkpoint path')
    p.add_argument('--steps', type=int, default=None, help='Override the configured step count')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--log-dir', default=None)
    p.add_argument('--deterministic', action='store_true', help='Single-threaded, bitwise reproducible')
    p.add_argument('--no-resume', action='store_true', help='Ignore an existing checkpoint')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', help='Predict a disparity map')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--left')
    p.add_argument('--right')
    p.add_argument('--data', help='Predict every sample of a dataset into the --out directory')
    p.add_argument('--iters', type=int, default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--dump-iters', default=None, help='Directory for per-iteration disparities')
    p.add_argument('--dump-volumes', default=None, help='Directory for cost and geometry volumes')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('eval', help='Score a directory of predictions')
    p.add_argument('--pred', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--ranges', type=_int_list, default=[192, 384, 512, 768])
    p.add_argument('--csv', default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('account', help='Analytic memory and FLOP report')
    p.add_argument('--config', required=True)
    p.add_argument('--height', type=int, default=None)
    p.add_argument('--width', type=int, default=None)
    p.add_argument('--no-params', action='store_true', help='Skip building the model to count parameters')
    p.add_argument('--csv', default=None)
    p.set_defaults(func=cmd_account)

    p = sub.add_parser('sweep', help='Evaluate a checkpoint over several iteration counts')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--iters', type=_int_list, default=[1, 2, 4, 8, 16])
    p.add_argument('--ranges', type=_int_list, default=[192, 384, 512, 768])
    p.add_argument('--limit', type=int, default=None)
    p.add_argument('--csv', default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] = None) -> int:
    """Main CLI entry point."""
    args = build_parser().parse_args(argv)
    if args.command != 'train':
        _console_logging(not args.quiet)
    try:
        code = args.func(args)
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: interrupted by user", file=sys.stderr)
        sys.exit(1)
    except Exception as e:
        message = ' '.join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        sys.exit(1)
    if code:
        sys.exit(code)
    return 0


if __name__ == "__main__":
    main()
