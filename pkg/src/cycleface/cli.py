"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors go to
stderr as one JSON object per failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "detail": message}), file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    p = _Parser(prog="cycleface")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", parents=[], add_help=True)
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    synth = ds_sub.add_parser("synth")
    synth.add_argument("--out", required=True)
    synth.add_argument("--count", type=int, required=True)
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--splits", default="0.8,0.1,0.1")
    ingest = ds_sub.add_parser("ingest")
    ingest.add_argument("--attrs", required=True)
    ingest.add_argument("--images", required=True)
    ingest.add_argument("--out", required=True)
    ingest.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train")
    train.add_argument("--config", default=None)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--encoder-epochs", type=int, default=None)
    train.add_argument("--decoder-epochs", type=int, default=None)
    train.add_argument("--joint-epochs", type=int, default=None)
    train.add_argument("--batch-size", type=int, default=None)

    ev = sub.add_parser("eval")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--report", required=True)

    gen = sub.add_parser("generate")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--caption", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--samples", type=int, default=1)
    gen.add_argument("--out", required=True)

    srv = sub.add_parser("serve")
    srv.add_argument("--checkpoint", required=True)
    srv.add_argument("--port", type=int, required=True)
    srv.add_argument("--host", default="127.0.0.1")
    return p


def _parse_splits(text):
    parts = [float(x) for x in text.split(",")]
    if abs(sum(parts) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1: {text}")
    return tuple(parts)


def cmd_dataset(args):
    from . import data

    if args.dataset_command == "synth":
        manifest = data.synthesize_dataset(
            args.out, args.count, args.seed, _parse_splits(args.splits))
    else:
        manifest = data.ingest_celeba_format(
            args.attrs, args.images, args.out, seed=args.seed)
    print(json.dumps({"root": str(manifest.root), "count": manifest.count,
                      "splits": {k: len(v) for k, v in manifest.splits.items()}}))
    return 0


def cmd_train(args):
    from . import data, trainer

    overrides = {
        "seed": args.seed,
        "encoder_epochs": args.encoder_epochs,
        "decoder_epochs": args.decoder_epochs,
        "joint_epochs": args.joint_epochs,
        "batch_size": args.batch_size,
    }
    if args.config:
        config = trainer.TrainConfig.load(args.config, overrides)
    else:
        config = trainer.TrainConfig(
            **{k: v for k, v in overrides.items() if v is not None})
    manifest = data.DatasetManifest.load(args.data)
    path, _ = trainer.run_training(config, manifest, args.out,
                                   progress=lambda msg: print(msg, file=sys.stderr))
    print(json.dumps({"checkpoint": str(path)}))
    return 0


def cmd_eval(args):
    from . import checkpoint, data, metrics, trainer
    from .caption_decoder import image_to_tensor

    bundle, header, _ = checkpoint.load_checkpoint(args.checkpoint)
    manifest = data.DatasetManifest.load(args.data)
    if args.split not in manifest.splits:
        raise ValueError(f"unknown split {args.split!r}")
    images, caps, attrs = trainer._load_split_images(manifest, args.split)
    train_images, _, train_attrs = trainer._load_split_images(manifest, "train")
    seed = int(header.get("config", {}).get("seed", 0))
    clf = metrics.train_classifier(train_images, train_attrs, seed=seed + 7)
    report = metrics.evaluation_report(bundle, clf, images, caps, attrs)
    report["checkpoint_hash"] = checkpoint.checkpoint_hash(args.checkpoint)
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_generate(args):
    from . import checkpoint, data, gan
    from .text_encoder import pad_batch, tokenize

    if args.samples < 1 or args.samples > 16:
        raise ValueError("samples must be in 1..16")
    bundle, _, _ = checkpoint.load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        ids = pad_batch([tokenize(args.caption, bundle.vocab)])
        emb = bundle.encoder(ids)[0]
        z = torch.stack([gan.make_latent(emb, args.seed + k)
                         for k in range(args.samples)])
        images = bundle.generator(z)
    paths = []
    for k in range(args.samples):
        path = out_dir / f"sample_{k:02d}.png"
        data.write_png(path, images[k].permute(1, 2, 0).numpy())
        paths.append(str(path))
    print(json.dumps({"images": paths, "seed": args.seed}))
    return 0


def cmd_serve(args):
    import uvicorn

    from .server import create_app

    app = create_app(args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "dataset": cmd_dataset,
        "train": cmd_train,
        "eval": cmd_eval,
        "generate": cmd_generate,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "detail": str(e)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
