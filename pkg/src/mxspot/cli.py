"""Command-line entry point: gen-data, build-charset, train, infer, eval, count-params."""

from __future__ import annotations

import argparse
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import cv2
import numpy as np

from . import autodiff as ad
from .charset import (PAPER_SINGLE_HEAD, PAPER_TABLE1, PAPER_TABLE1_MILLIONS, CharsetTable, ScriptId,
                      build_charsets, build_union_charset, count_parameters)
from .config import read_kv
from .evalkit import TASKS, PredictionFormatError, compute_metrics, read_predictions, write_predictions
from .lpn import LpnConfig
from .model import ModelConfig, build_model
from .scenegen import (DatasetManifest, GroundTruthError, corpus, generate_dataset, glyph_bank, load_manifest,
                       load_split, write_pgm)
from .trainer import (CheckpointError, TrainConfig, format_log, load_checkpoint, run_stage, save_checkpoint)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _settings(args, prefix: str = "") -> dict:
    """key=value settings: config file first, then --set flags (CLI wins)."""
    kv = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        kv.update(read_kv(path))
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        kv[key.strip()] = val.strip()
    if prefix:
        kv = {k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)}
    return kv


def _typed(cls, kv: dict, **extra):
    """Dataclass from string settings, converting by the field defaults' types."""
    base = cls(**extra) if extra else None
    args = dict(extra)
    names = {f.name: f for f in fields(cls)}
    for key, raw in kv.items():
        if key not in names:
            raise UsageError(f"unknown {cls.__name__} key {key!r}")
        cur = getattr(base, key) if base is not None else names[key].default
        if isinstance(cur, tuple):
            args[key] = tuple(type(cur[0])(v) if cur else float(v) for v in raw.split(","))
        elif isinstance(cur, bool):
            args[key] = raw.lower() in ("1", "true", "yes")
        else:
            args[key] = type(cur)(raw) if cur is not None else raw
    try:
        return cls(**args)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} not found or not a directory: {p}")
    return p


def load_charsets(path) -> tuple[dict, CharsetTable | None]:
    path = _need_dir(path, "charset directory")
    charsets = {}
    for sid in ScriptId:
        f = path / f"{sid.name}.txt"
        if not f.is_file():
            raise DataError(f"charset file missing: {f}")
        charsets[sid] = CharsetTable.load(f)
    union = path / "union.txt"
    return charsets, CharsetTable.load(union) if union.is_file() else None


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    kv = _settings(args)
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    kv["root"] = str(args.out)
    try:
        manifest = DatasetManifest.from_strings(kv)
    except ValueError as e:
        raise UsageError(str(e)) from None
    root = generate_dataset(manifest, args.out)
    print(f"wrote {manifest.train} train / {manifest.test} test scenes to {root}")


def cmd_build_charset(args):
    root = _need_dir(args.data, "dataset")
    samples = load_split(root, "train")
    words = corpus(samples)
    if not words:
        raise DataError("training split has no legible words")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid, table in build_charsets(words).items():
        table.save(out / f"{sid.name}.txt")
        print(f"{sid.name:<10}{table.size:6d}")
    union = build_union_charset(words)
    union.save(out / "union.txt")
    print(f"{'All':<10}{union.size:6d}")


def cmd_train(args):
    root = _need_dir(args.data, "dataset")
    manifest = load_manifest(root)
    tkv = _settings(args, "train.")
    tkv["stage"] = str(args.stage)
    if args.seed is not None:
        tkv["seed"] = str(args.seed)
    if args.iterations is not None:
        tkv["iterations"] = str(args.iterations)
    if args.target_head:
        tkv["target_head"] = args.target_head
    tcfg = _typed(TrainConfig, tkv)
    if args.init:
        model = load_checkpoint(_need_dir(args.init, "initial checkpoint"))
    else:
        if tcfg.stage != 1:
            raise UsageError(f"stage {tcfg.stage} needs --init with an earlier checkpoint")
        if not args.charsets:
            raise UsageError("the first stage needs --charsets")
        mkv = _settings(args, "model.")
        if args.model:
            mkv["kind"] = args.model
        if args.seed is not None:
            mkv.setdefault("seed", str(args.seed))
        mkv.setdefault("image_size", str(manifest.image_size))
        try:
            mcfg = ModelConfig.from_kv(mkv)
        except ValueError as e:
            raise UsageError(str(e)) from None
        charsets, union = load_charsets(args.charsets)
        model = build_model(mcfg, charsets, union)
    if model.cfg.image_size != manifest.image_size:
        raise DataError(f"model expects {model.cfg.image_size}px images, dataset has {manifest.image_size}px")
    samples = load_split(root, "train")
    try:
        log = run_stage(model, samples, tcfg)
    except KeyError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    save_checkpoint(model, out, tcfg.iterations, tcfg.stage)
    (out / "loss.csv").write_bytes(format_log(model, log).encode("utf-8"))
    last = f"{log[-1].total:.4f}" if log else "n/a"
    print(f"stage {tcfg.stage}: {tcfg.iterations} iterations, final loss {last}, checkpoint {out}")


_WORKER_MODEL = None


def _init_worker(ckpt):
    global _WORKER_MODEL
    _WORKER_MODEL = load_checkpoint(ckpt)


def _infer_one(image):
    return _WORKER_MODEL.infer(image)


def render_overlay(image: np.ndarray, records) -> np.ndarray:
    """Grayscale overlay: predicted polygon, routed script name and transcription above it."""
    canvas = np.clip(image, 0, 1).copy() * 0.6
    bank = glyph_bank()
    for rec in records:
        pts = np.rint(np.asarray(rec.polygon)).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(canvas, [pts], True, 1.0, 1)
        script = "None" if rec.script is None else ScriptId(int(rec.script)).name
        for k, (text, family) in enumerate(((script, "Latin"), (rec.transcription, None))):
            if not text:
                continue
            fam = family or ("Latin" if rec.script is None else ScriptId(int(rec.script)).name)
            try:
                raster = bank.render_word(text, fam, 1)
            except (KeyError, ValueError):
                continue
            x0 = int(max(0, pts[:, 0, 0].min()))
            y0 = int(pts[:, 0, 1].min()) - (2 - k) * (raster.shape[0] + 1)
            y0 = max(0, y0)
            h = min(raster.shape[0], canvas.shape[0] - y0)
            w = min(raster.shape[1], canvas.shape[1] - x0)
            if h > 0 and w > 0:
                region = canvas[y0:y0 + h, x0:x0 + w]
                np.maximum(region, raster[:h, :w].astype(canvas.dtype), out=region)
    return canvas


def cmd_infer(args):
    ckpt = _need_dir(args.checkpoint, "checkpoint")
    model = load_checkpoint(ckpt)
    root = _need_dir(args.data, "dataset")
    samples = load_split(root, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = [s.image for s in samples]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers, initializer=_init_worker, initargs=(str(ckpt),)) as ex:
            results = list(ex.map(_infer_one, images))
    else:
        results = [model.infer(im) for im in images]
    if args.overlay:
        (out / "overlay").mkdir(exist_ok=True)
    for s, recs in zip(samples, results):
        write_predictions(recs, out / f"{s.seed:05d}.txt")
        if args.overlay:
            write_pgm(render_overlay(s.image, recs), out / "overlay" / f"{s.seed:05d}.pgm")
    print(f"wrote predictions for {len(samples)} images to {out}")


def cmd_eval(args):
    root = _need_dir(args.data, "dataset")
    pred_dir = _need_dir(args.pred, "prediction directory")
    samples = load_split(root, args.split)
    preds = []
    for s in samples:
        f = pred_dir / f"{s.seed:05d}.txt"
        if not f.is_file():
            raise DataError(f"prediction file missing: {f}")
        try:
            preds.append(read_predictions(f))
        except PredictionFormatError as e:
            raise DataError(f"{f}: {e}") from None
    report = compute_metrics(preds, [s.words for s in samples], args.task,
                             case_sensitive=not args.case_insensitive)
    text = report.format_text()
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.task}.txt").write_bytes(text.encode("utf-8"))
        (out / f"{args.task}.csv").write_bytes(report.format_csv().encode("utf-8"))


def paper_table1_listing() -> str:
    rows = [f"{'Head':<12}{'Charset':>8}{'Embed':>7}{'Hidden':>7}{'Params':>12}{'Table1(M)':>11}"]
    total = 0
    for sid, hc in PAPER_TABLE1.items():
        n = count_parameters(hc)
        total += n
        rows.append(f"{sid.name:<12}{hc.charset_size:8d}{hc.embed_size:7d}{hc.hidden_size:7d}{n:12,d}"
                    f"{PAPER_TABLE1_MILLIONS[sid.name]:11.2f}")
    lpn = count_parameters(LpnConfig())
    total += lpn
    rows.append(f"{'LPN':<12}{'':8}{'':7}{'':7}{lpn:12,d}{PAPER_TABLE1_MILLIONS['LPN']:11.2f}")
    single = count_parameters(PAPER_SINGLE_HEAD)
    hc = PAPER_SINGLE_HEAD
    rows.append(f"{'Single-Head':<12}{hc.charset_size:8d}{hc.embed_size:7d}{hc.hidden_size:7d}{single:12,d}"
                f"{PAPER_TABLE1_MILLIONS['Single-Head']:11.2f}")
    rows.append(f"multiplexed total {total:,d} vs single-head total {single:,d}, ratio {total / single:.4f}")
    return "\n".join(rows) + "\n"


def model_listing(model) -> str:
    rows = [f"{'Part':<16}{'Params':>12}"]
    rows.append(f"{'trunk':<16}{model.trunk.num_parameters():12,d}")
    if hasattr(model, "heads"):
        rows.append(f"{'LPN':<16}{model.lpn.num_parameters():12,d}")
        for r, h in enumerate(model.heads):
            rows.append(f"{model.head_name(r):<16}{h.num_parameters():12,d}")
    else:
        rows.append(f"{'single head':<16}{model.head.num_parameters():12,d}")
    rows.append(f"recognition total {model.recognition_parameters():,d}, model total {model.num_parameters():,d}")
    return "\n".join(rows) + "\n"


def cmd_count_params(args):
    if args.checkpoint:
        print(model_listing(load_checkpoint(_need_dir(args.checkpoint, "checkpoint"))), end="")
    elif args.config == "paper-table1":
        print(paper_table1_listing(), end="")
    else:
        raise UsageError("count-params needs --config paper-table1 or --checkpoint")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mxspot", description=__doc__)
    p.add_argument("--workers", type=int, default=1, help="worker processes (inference)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key=value settings file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        return sp

    g = common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    b = sub.add_parser("build-charset", help="per-script charsets from the training split")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)

    t = common(sub.add_parser("train", help="run one training stage"))
    t.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--charsets")
    t.add_argument("--init", help="checkpoint to continue from")
    t.add_argument("--model", choices=("multiplexed", "single"))
    t.add_argument("--target-head")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)

    i = sub.add_parser("infer", help="predict words on a split")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="test", choices=("train", "test"))
    i.add_argument("--out", required=True)
    i.add_argument("--overlay", action="store_true")

    e = sub.add_parser("eval", help="score predictions")
    e.add_argument("--task", required=True, choices=TASKS)
    e.add_argument("--pred", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--out")
    e.add_argument("--case-insensitive", action="store_true")

    c = sub.add_parser("count-params", help="Table-1-style parameter listing")
    c.add_argument("--config")
    c.add_argument("--checkpoint")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "build-charset": cmd_build_charset, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "count-params": cmd_count_params}


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; one of " + ", ".join(COMMANDS))
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        COMMANDS[args.command](args)
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, GroundTruthError, PredictionFormatError, FileNotFoundError,
            UnicodeDecodeError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
