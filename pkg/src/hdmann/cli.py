"""Command-line interface: gen-data, train, eval, sweep, report.

Exit codes: 0 success, 2 usage error, 3 invalid configuration or input,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, analysis, pcm
from . import rng as rngmod
from .attention import SharpeningSpec, write_trace_csv
from .config import OUT_ENV, SCHEMA, RunConfig, parse_bool, read_config_file
from .controller import Architecture, TrainingConfig, infer, load_checkpoint, run_training, save_checkpoint
from .controller.losses import RegularizerSpec
from .controller.network import ARCHITECTURES
from .dataset import NO_AUGMENT, AugmentSpec, export, generate_glyphs, load_image_directory, sample_episode
from .errors import HDMannError, ValidationError
from .kvmem import KeyValueMemory

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3, 4


def _add_settings(p: argparse.ArgumentParser, *keys):
    for k in keys:
        flag = "--" + k.replace("_", "-")
        p.add_argument(flag, dest=k, default=None, help=SCHEMA[k].help)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdmann", description="Few-shot learning with HD key-value memory.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./hdmann-out)")
    ap.add_argument("--threads", default=None, help="accepted for compatibility; execution is always serial")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic glyph dataset as PGM folders")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--jitter", type=float, default=1.5)
    g.add_argument("--image-size", type=int, default=32)
    _add_settings(g, "seed")

    t = sub.add_parser("train", help="episodic training with validation checkpoints")
    t.add_argument("--data", required=True, help="dataset directory (PGM folders)")
    _add_settings(t, "problem", "batch", "sharpening", "beta", "regularizer", "episodes", "interval",
                  "val_episodes", "lr", "augment", "d", "arch", "seed")

    e = sub.add_parser("eval", help="evaluate a checkpoint on test episodes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--normalize", default=None, help="on/off; default depends on the mode")
    e.add_argument("--traces", action="store_true", help="also write per-query attention traces")
    _add_settings(e, "d", "problem", "batch", "mode", "backend", "criterion", "pcm_profile", "variation",
                  "read_noise", "eval_time", "adc_bits", "quantize", "placement", "episodes", "seed")
    e.add_argument("--sharpening", default=None, help="override the mode's default sharpening")

    s = sub.add_parser("sweep", help="robustness and dimensionality sweeps")
    ss = s.add_subparsers(dest="sweep", required=True)
    sl = ss.add_parser("sigma-lambda", help="closed-form vs Monte-Carlo similarity spread grid")
    _add_settings(sl, "trials", "seed")
    sn = ss.add_parser("noise", help="accuracy vs programming variability")
    sn.add_argument("--checkpoint", required=True)
    sn.add_argument("--data", required=True)
    sn.add_argument("--criteria", default="sum-argmax")
    _add_settings(sn, "problem", "batch", "levels", "layouts", "co_scale_read_noise", "pcm_profile",
                  "eval_time", "adc_bits", "quantize", "episodes", "seed")
    sd = ss.add_parser("dimension", help="short training per dimensionality")
    sd.add_argument("--data", required=True)
    sd.add_argument("--eval-episodes", type=int, default=100)
    _add_settings(sd, "dims", "problem", "batch", "sharpening", "episodes", "interval", "val_episodes", "lr",
                  "arch", "seed")

    r = sub.add_parser("report", help="collect sweep/eval outputs into one JSON summary")
    r.add_argument("--input", default=None, help="directory to scan (default: --out)")
    return ap


def _settings(args) -> RunConfig:
    cli = {k: getattr(args, k) for k in SCHEMA if getattr(args, k, None) is not None}
    file_values = read_config_file(args.config) if args.config else {}
    return RunConfig.resolve(cli, file_values)


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output directory {out} is not writable")
    return out


def _pcm_params(cfg: RunConfig) -> pcm.PcmDeviceParams:
    p = pcm.profile(cfg.pcm_profile)
    if cfg.variation is not None:
        p = p.with_variation(cfg.variation)
    if cfg.read_noise is not None:
        p = replace(p, read_noise=cfg.read_noise)
    return p


def _readout(cfg: RunConfig) -> pcm.ReadoutConfig:
    return pcm.ReadoutConfig(t=cfg.eval_time, adc_bits=cfg.adc_bits, quantize=cfg.quantize)


def _print_json(obj):
    sys.stdout.write(analysis.dumps_json(obj))


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg: RunConfig) -> int:
    if args.classes < 1 or args.samples < 1:
        raise ValidationError("--classes and --samples must be >= 1")
    out = _out_dir(cfg)
    ds = generate_glyphs(args.classes, args.samples, cfg.seed, args.image_size, args.jitter)
    export(ds, out)
    print(f"wrote {ds.num_classes} classes x {args.samples} samples to {out}")
    return EXIT_OK


def _training_config(cfg: RunConfig, image_size: int) -> TrainingConfig:
    m, n = cfg.problem
    interval = min(cfg.interval, cfg.episodes)
    return TrainingConfig(
        max_episodes=cfg.episodes, interval=interval, val_episodes=cfg.val_episodes, m=m, n=n, b=cfg.batch,
        lr=cfg.lr, seed=cfg.seed, sharpening=SharpeningSpec(cfg.sharpening, cfg.beta),
        regularizer=RegularizerSpec(enabled=cfg.regularizer),
        augment=AugmentSpec() if cfg.augment else NO_AUGMENT,
        arch=Architecture(ARCHITECTURES[cfg.arch], cfg.d, image_size),
    )


def cmd_train(args, cfg: RunConfig) -> int:
    ds = load_image_directory(args.data)
    tcfg = _training_config(cfg, ds.image_size)
    out = _out_dir(cfg)
    res = run_training(tcfg, ds, log_path=os.path.join(out, "train_log.csv"))
    meta = {"sharpening": tcfg.sharpening.kind, "beta": tcfg.sharpening.beta, "seed": tcfg.seed,
            "problem": f"{tcfg.m}x{tcfg.n}", "regularizer": tcfg.regularizer.enabled,
            "best_episode": res.best_episode, "best_val_accuracy": res.best_val_accuracy}
    save_checkpoint(os.path.join(out, "model.ckpt"), res.params, meta)
    print(f"best validation accuracy {res.best_val_accuracy:.4f} at episode {res.best_episode}")
    return EXIT_OK


def _load_model(path, ds):
    try:
        params, meta = load_checkpoint(path)
    except OSError as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if params.arch.input_size != ds.image_size:
        raise ValidationError(
            f"checkpoint expects {params.arch.input_size}px images, dataset has {ds.image_size}px"
        )
    return params, meta


def cmd_eval(args, cfg: RunConfig) -> int:
    ds = load_image_directory(args.data)
    params, meta = _load_model(args.checkpoint, ds)
    if "d" in cfg.explicit and cfg.d != params.arch.d:
        raise ValidationError(f"configured d={cfg.d} but the checkpoint was trained with d={params.arch.d}")
    m, n = cfg.problem
    sharpening = SharpeningSpec.parse(args.sharpening) if args.sharpening else None
    normalize = None if args.normalize is None else parse_bool(args.normalize)
    accs, traces = [], []
    for i in range(cfg.episodes):
        ep = sample_episode(ds, "test", m, n, cfg.batch, NO_AUGMENT, rngmod.stream(cfg.seed, "episodes", i))
        mem = KeyValueMemory(
            cfg.mode, cfg.backend, d=params.arch.d, pcm_params=_pcm_params(cfg), readout_cfg=_readout(cfg),
            program_rng=rngmod.stream(cfg.seed, "pcm-program", i), read_rng=rngmod.stream(cfg.seed, "pcm-read", i),
            placement=cfg.placement,
        )
        acc, pred, res = infer(params, ep, cfg.mode, cfg.backend, cfg.criterion, sharpening=sharpening,
                               normalize=normalize, memory=mem, return_trace=True)
        accs.append(acc)
        if args.traces:
            for j in range(ep.b):
                traces.append({"episode": i, "query": j, "label": int(ep.query_labels[j]), "prediction": int(pred[j]),
                               "alphas": res.similarities[j], "weights": res.weights[j],
                               "support_labels": ep.support_labels})
    report = {
        "schema_version": analysis.REPORT_SCHEMA_VERSION,
        "kind": "eval",
        "problem": f"{m}x{n}",
        "mode": cfg.mode,
        "backend": cfg.backend,
        "criterion": cfg.criterion.replace("_", "-"),
        "pcm_profile": cfg.pcm_profile if cfg.backend == "pcm" else None,
        "episodes": cfg.episodes,
        "seed": cfg.seed,
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "checkpoint_meta": meta,
    }
    out = _out_dir(cfg)
    analysis.write_json(os.path.join(out, "eval.json"), report)
    if args.traces:
        write_trace_csv(os.path.join(out, "eval_traces.csv"), traces)
    _print_json(report)
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if args.sweep == "sigma-lambda":
        pts = analysis.sigma_lambda_grid(cfg.seed, cfg.trials)
        rows = analysis.robustness_rows(pts)
        analysis.write_csv(os.path.join(out, "sigma_lambda.csv"), rows)
        summary = {"schema_version": analysis.REPORT_SCHEMA_VERSION, "kind": "sigma-lambda", "seed": cfg.seed,
                   "trials": cfg.trials, "max_rel_error": max(r["rel_error"] for r in rows),
                   "pass": all(r["rel_error"] <= 0.10 for r in rows)}
        analysis.write_json(os.path.join(out, "sigma_lambda.json"), summary)
    elif args.sweep == "noise":
        ds = load_image_directory(args.data)
        params, _ = _load_model(args.checkpoint, ds)
        m, n = cfg.problem
        criteria = tuple(c.strip() for c in args.criteria.split(","))
        pts = analysis.noise_sweep(params, ds, m=m, n=n, b=cfg.batch, layouts=cfg.layouts, levels=cfg.levels,
                                   episodes=cfg.episodes, seed=cfg.seed, base=pcm.profile(cfg.pcm_profile),
                                   readout_cfg=_readout(cfg), criteria=criteria,
                                   co_scale_read_noise=cfg.co_scale_read_noise)
        analysis.write_csv(os.path.join(out, "noise_sweep.csv"), analysis.sweep_rows(pts))
        analysis.write_json(os.path.join(out, "noise_sweep.json"), noise_summary(pts, cfg))
    else:
        ds = load_image_directory(args.data)
        tcfg = _training_config(cfg, ds.image_size)
        m, n = cfg.problem
        rows = analysis.dimension_sweep(tcfg, ds, cfg.dims, eval_episodes=args.eval_episodes, eval_m=m, eval_n=n)
        analysis.write_csv(os.path.join(out, "dimension_sweep.csv"), rows)
        slope, r2 = analysis.loglog_slope([r["d"] for r in rows], [r["sigma_empirical"] for r in rows]) \
            if len(rows) > 1 else (math.nan, math.nan)
        analysis.write_json(os.path.join(out, "dimension_sweep.json"), {
            "schema_version": analysis.REPORT_SCHEMA_VERSION, "kind": "dimension", "seed": cfg.seed,
            "sigma_loglog_slope": slope, "sigma_loglog_r2": r2, "rows": rows})
    print(f"sweep {args.sweep} written to {out}")
    return EXIT_OK


def noise_summary(pts, cfg) -> dict:
    layouts = {}
    for lay in cfg.layouts:
        curve = [p for p in pts if p.layout == lay and not math.isnan(p.level) and p.criterion == pts[0].criterion]
        curve.sort(key=lambda p: p.level)
        base = curve[0].mean
        layouts[lay] = {
            "levels": [p.level for p in curve],
            "mean": [p.mean for p in curve],
            "drop": [base - p.mean for p in curve],
        }
    return {"schema_version": analysis.REPORT_SCHEMA_VERSION, "kind": "noise", "seed": cfg.seed,
            "problem": "%dx%d" % cfg.problem, "episodes": cfg.episodes, "layouts": layouts}


def cmd_report(args, cfg: RunConfig) -> int:
    src = args.input or cfg.out
    if not os.path.isdir(src):
        raise ValidationError(f"{src} is not a directory")
    parts = {}
    for path in sorted(glob.glob(os.path.join(src, "*.json"))):
        if os.path.basename(path) == "report.json":
            continue
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        parts[os.path.splitext(os.path.basename(path))[0]] = obj
    csvs = sorted(os.path.basename(p) for p in glob.glob(os.path.join(src, "*.csv")))
    checks = {}
    if "sigma_lambda" in parts:
        checks["sigma_lambda_within_10pct"] = bool(parts["sigma_lambda"].get("pass"))
    if "noise_sweep" in parts:
        lay = parts["noise_sweep"]["layouts"]
        if "binary" in lay and "bipolar" in lay:
            checks["bipolar_degrades_less_at_max_level"] = lay["bipolar"]["drop"][-1] <= lay["binary"]["drop"][-1]
    report = {"schema_version": analysis.REPORT_SCHEMA_VERSION, "kind": "report", "inputs": parts,
              "csv_files": csvs, "checks": checks}
    out = _out_dir(cfg)
    analysis.write_json(os.path.join(out, "report.json"), report)
    print(f"report with {len(parts)} inputs written to {os.path.join(out, 'report.json')}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "report": cmd_report}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = _settings(args)
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"hdmann: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (HDMannError, OSError, ArithmeticError) as exc:
        print(f"hdmann: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
