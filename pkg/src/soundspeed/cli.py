"""Command line interface: gen-dataset, train, evaluate, infer, render.

Configs are flat key=value files; command-line flags win over file values.
Every artifact gets a JSON manifest written alongside it for provenance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .configio import read_kv
from .dataio import DatasetReader, render_speed_map
from .errors import ConfigError, DivergenceError, FormatError
from .nn import build_network, load_checkpoint
from .pipeline import desk_setup, gen_dataset, setup_from_dict
from .preprocess import PreprocConfig, fit_global_scale
from .train_eval import TrainConfig, evaluate, predict, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def _write_manifest(out_path: Path, command: str, args_dict: dict,
                    wall_seconds: float) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "arguments": {k: str(v) for k, v in args_dict.items() if v is not None},
        "wall_seconds": round(wall_seconds, 3),
    }
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config(path: str | None) -> dict:
    return read_kv(path) if path else {}


def _preproc_from(cfg_items: dict) -> PreprocConfig:
    keys = {"gain_rate", "crop_time", "target_time_len", "noise_sigma",
            "quant_levels", "label_offset", "label_span", "global_scale"}
    return PreprocConfig(**{k: v for k, v in cfg_items.items() if k in keys})


def cmd_gen_dataset(args) -> int:
    t0 = time.time()
    items = _load_config(args.config)
    if args.seed is not None:
        items["base_seed"] = args.seed
    if args.transmits is not None:
        items["n_transmits"] = args.transmits
    setup = setup_from_dict(items)
    base_seed = items.get("base_seed", 0)
    log = (lambda m: print(m, flush=True)) if args.verbose else None
    n = gen_dataset(setup, args.n_samples, args.out, base_seed=base_seed,
                    workers=args.workers, start_index=args.start_index, log=log)
    _write_manifest(Path(args.out), "gen-dataset", vars(args), time.time() - t0)
    print(f"wrote {n} samples to {args.out}")
    return EXIT_OK


def _records(path: str) -> list:
    return list(DatasetReader.open(path))


def cmd_train(args) -> int:
    t0 = time.time()
    items = _load_config(args.config)
    pcfg = _preproc_from(items)
    train_recs = _records(args.dataset)
    test_recs = _records(args.test_dataset) if args.test_dataset else None
    if pcfg.global_scale is None:
        pcfg.global_scale = fit_global_scale([r.channel for r in train_recs], pcfg)
    reader = DatasetReader.open(args.dataset)
    n_transmits = 1 if args.variant == "single" else reader.n_transmits
    enc = tuple(items.get("enc_channels", (32, 64, 128, 128, 256, 256, 512)))
    dec = tuple(items.get("dec_channels", (256, 128, 64, 32, 32)))
    net = build_network(args.variant, pcfg.target_time_len, reader.n_elements,
                        reader.out_h, reader.out_w, n_transmits=n_transmits,
                        enc_channels=enc, dec_channels=dec,
                        seed=args.seed if args.seed is not None else 0)
    tcfg = TrainConfig(
        epochs=args.epochs if args.epochs is not None else items.get("epochs", 200),
        batch_size=items.get("batch_size", 8),
        learning_rate=items.get("learning_rate", 1e-3),
        optimizer=items.get("optimizer", "adam"),
        seed=args.seed if args.seed is not None else items.get("seed", 0),
        checkpoint_path=args.out,
    )
    log = (lambda m: print(m, flush=True)) if args.verbose else None
    result = train(train_recs, net, tcfg, pcfg, test_records=test_recs, log=log)
    scale_path = Path(args.out).with_suffix(".preproc.json")
    scale_path.write_text(json.dumps(asdict(pcfg), sort_keys=True) + "\n")
    _write_manifest(Path(args.out), "train", vars(args), time.time() - t0)
    print(f"best test loss {result.best_test_loss:.6f} at epoch {result.best_epoch}")
    return EXIT_OK


def _load_preproc_for(checkpoint: str) -> PreprocConfig:
    p = Path(checkpoint).with_suffix(".preproc.json")
    if p.exists():
        return PreprocConfig(**json.loads(p.read_text()))
    return PreprocConfig()


def cmd_evaluate(args) -> int:
    t0 = time.time()
    net = load_checkpoint(args.checkpoint)
    pcfg = _load_preproc_for(args.checkpoint)
    recs = _records(args.dataset)
    report = evaluate(net, recs, pcfg, radius=args.radius)
    out = Path(args.out)
    out.write_text(report.to_csv(label=net.variant))
    out.with_suffix(".txt").write_text(report.to_text(label=net.variant))
    _write_manifest(out, "evaluate", vars(args), time.time() - t0)
    print(report.to_text(label=net.variant))
    return EXIT_OK


def cmd_infer(args) -> int:
    t0 = time.time()
    net = load_checkpoint(args.checkpoint)
    pcfg = _load_preproc_for(args.checkpoint)
    recs = _records(args.dataset)
    if args.index is not None:
        recs = [recs[args.index]]
    t_inf = time.time()
    preds = predict(net, recs, pcfg)
    dt_inf = time.time() - t_inf
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec, pred in zip(recs, preds):
        np.save(out_dir / f"pred_{rec.sample_id:06d}.npy", pred.astype(np.float32))
        render_speed_map(pred, out_dir / f"pred_{rec.sample_id:06d}.pgm")
    _write_manifest(out_dir / "infer", "infer", vars(args), time.time() - t0)
    print(f"inferred {len(preds)} maps at {len(preds) / dt_inf:.2f} maps/second")
    return EXIT_OK


def cmd_render(args) -> int:
    t0 = time.time()
    src = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if src.suffix == ".npy":
        render_speed_map(np.load(src), out_dir / (src.stem + ".pgm"),
                         vmin=args.vmin, vmax=args.vmax)
        count = 1
    else:
        count = 0
        for rec in DatasetReader.open(src):
            render_speed_map(rec.label, out_dir / f"label_{rec.sample_id:06d}.pgm",
                             vmin=args.vmin, vmax=args.vmax)
            count += 1
    _write_manifest(out_dir / "render", "render", vars(args), time.time() - t0)
    print(f"rendered {count} maps to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soundspeed",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    default_workers = int(os.environ.get("SOUNDSPEED_WORKERS", "1"))

    g = sub.add_parser("gen-dataset", help="simulate random phantoms into a dataset file")
    g.add_argument("--config", help="key=value setup config")
    g.add_argument("--n-samples", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, default=default_workers)
    g.add_argument("--start-index", type=int, default=0)
    g.add_argument("--transmits", type=int, choices=(1, 3))
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train a network on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--test-dataset")
    t.add_argument("--variant", choices=("single", "start", "middle", "end"),
                   default="middle")
    t.add_argument("--config", help="key=value train/preproc config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="metrics report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True, help="CSV report path")
    e.add_argument("--radius", type=int, default=5)
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("infer", help="predict speed maps from channel data")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--index", type=int, help="single record index")
    i.add_argument("--out", required=True, help="output directory")
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("render", help="render labels or predictions as P5 images")
    r.add_argument("--input", required=True, help="dataset file or .npy map")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--vmin", type=float, default=1300.0)
    r.add_argument("--vmax", type=float, default=1800.0)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError, IndexError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
