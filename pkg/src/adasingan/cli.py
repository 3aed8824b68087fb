"""Command line: ``adasingan {train,sample,paint,style,sr,eval,bounds}``.

Exit codes are 0 on success, 2 on usage/config/input errors and 3 when
training aborts on a non-finite value.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import tasks
from .errors import ConfigError, InvalidInputError, NumericError
from .images import load_image, save_image
from .trainer import TrainConfig, read_bound_reports, train_all

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def load_config(path=None, overrides=()) -> TrainConfig:
    """Flat dotted-key JSON file plus ``key=value`` overrides."""
    flat = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            flat = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {p}: {e}") from e
        if not isinstance(flat, dict):
            raise ConfigError(f"config {p} must be a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        flat[key.strip()] = value.strip()
    if "train.betas" in flat:
        b1, b2 = (json.loads(flat.pop("train.betas")) if isinstance(flat["train.betas"], str)
                  else flat.pop("train.betas"))
        flat["train.adam_beta1"], flat["train.adam_beta2"] = b1, b2
    return TrainConfig.from_flat(flat)


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    image = load_image(args.image)
    out = train_all(image, config, args.out, resume=args.resume)
    print(f"checkpoint written to {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    ladder = tasks.load_ladder(args.ckpt)
    scale = ladder.N if args.scale is None else args.scale
    imgs = tasks.sample(ladder, scale, args.count, args.seed, args.amplitude)
    for i, img in enumerate(imgs):
        save_image(img, Path(args.out) / f"sample_{i:03d}.png")
    print(f"wrote {len(imgs)} samples to {args.out}")
    return EXIT_OK


def _inject(args, fn) -> int:
    ladder = tasks.load_ladder(args.ckpt)
    image = load_image(args.image)
    out = Path(args.out)
    if args.scale is None:
        for n in range(1, ladder.N + 1):
            path = out.with_name(f"{out.stem}_scale{n:02d}{out.suffix or '.png'}")
            save_image(fn(ladder, image, n, args.seed, args.amplitude), path)
        print(f"wrote {ladder.N} outputs next to {out}")
    else:
        save_image(fn(ladder, image, args.scale, args.seed, args.amplitude), out)
        print(f"wrote {out}")
    return EXIT_OK


def cmd_paint(args) -> int:
    return _inject(args, tasks.paint_to_image)


def cmd_style(args) -> int:
    return _inject(args, tasks.style_transfer)


def cmd_sr(args) -> int:
    out = tasks.super_resolve(args.ckpt, load_image(args.image), args.s, args.k, args.seed)
    save_image(out, args.out)
    print(f"wrote {args.out} ({out.shape[-1]}x{out.shape[-2]})")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_table, format_report

    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    extractor = None
    if "sifid" in metrics:
        from .metrics import default_extractor
        extractor = default_extractor(args.weights)
    report = evaluate_table(args.results, args.references, metrics, extractor)
    _emit(format_report(report, args.format), args.out)
    return EXIT_OK


_BOUND_FIELDS = ["scale_index", "step", "F_fgm", "F_pgd", "rhs_fgm", "rhs_pgd",
                 "margin_loss_clean", "margin_loss_adv", "pgd_near_pole"]
_TERM_FIELDS = ["W_dot", "W_check", "lip_bar", "kappa", "B", "h", "m"]


def cmd_bounds(args) -> int:
    ladder = tasks.load_ladder(args.ckpt)
    reports = tasks.recompute_bound_reports(ladder)
    logged = {}
    log_path = Path(args.ckpt) / "bounds.jsonl"
    if log_path.exists():
        for r in read_bound_reports(log_path):
            if r.step == ladder.config.iters_per_scale:
                logged[r.scale_index] = r
    rows, mismatched = [], []
    for r in reports:
        row = r.to_dict()
        ref = logged.get(r.scale_index)
        row["matches_log"] = None if ref is None else not tasks.compare_reports(r, ref, args.rtol)
        if row["matches_log"] is False:
            mismatched.append(r.scale_index)
        rows.append(row)
    if args.format == "json":
        text = json.dumps({"reports": rows, "mismatched_scales": mismatched}, indent=2)
    else:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(_BOUND_FIELDS + _TERM_FIELDS + ["matches_log"])
        for row in rows:
            w.writerow([row[k] for k in _BOUND_FIELDS] + [row["terms"][k] for k in _TERM_FIELDS]
                       + [row["matches_log"]])
        text = buf.getvalue()
    _emit(text, args.out)
    if args.check and mismatched:
        print(f"bound reports differ from the log at scales {mismatched}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adasingan",
                                description="Single-image multi-scale GAN with adaptive adversarial critic training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a ladder on one image")
    t.add_argument("image")
    t.add_argument("--config", help="JSON file with flat dotted keys, e.g. {\"attack.mode\": \"adaptive\"}")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.add_argument("--resume", action="store_true", help="reuse scales already in --out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw random samples")
    s.add_argument("ckpt")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--scale", type=int, help="first scale with fresh noise (default: coarsest)")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--amplitude", type=float, default=1.0)
    s.set_defaults(func=cmd_sample)

    for name, fn, what in (("paint", cmd_paint, "painting"), ("style", cmd_style, "content image")):
        q = sub.add_parser(name, help=f"inject a {what} at a coarse scale")
        q.add_argument("ckpt")
        q.add_argument("image", help=what)
        q.add_argument("--out", required=True, help="output PNG (suffixed per scale without --scale)")
        q.add_argument("--scale", type=int, help="injection scale in 1..N (default: sweep all)")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--amplitude", type=float, default=1.0)
        q.set_defaults(func=fn)

    r = sub.add_parser("sr", help="super-resolve an image with the finest generator")
    r.add_argument("ckpt")
    r.add_argument("image")
    r.add_argument("--out", required=True)
    r.add_argument("--s", type=float, default=4.0, help="total upscaling factor")
    r.add_argument("--k", type=int, default=5, help="number of passes")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_sr)

    e = sub.add_parser("eval", help="RMSE/SIFID/NIQE over matched image pairs")
    e.add_argument("results")
    e.add_argument("references")
    e.add_argument("--metrics", default="rmse,sifid,niqe")
    e.add_argument("--weights", help="Inception-v3 weights file (else $ADASINGAN_INCEPTION_WEIGHTS)")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bounds", help="recompute the final bound report of each scale")
    b.add_argument("ckpt")
    b.add_argument("--format", choices=("json", "csv"), default="json")
    b.add_argument("--out")
    b.add_argument("--rtol", type=float, default=1e-9)
    b.add_argument("--check", action="store_true", help="exit 3 if a report differs from the log")
    b.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidInputError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
