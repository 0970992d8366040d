"""Command line entry points.

Exit codes: 0 on success, 2 for usage or configuration problems, 1 for
runtime failures (bad data files, non-finite training, I/O errors).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .autodiff import (AutodiffError, Tape, Tensor, backward, mul,
                       reduce_sum, set_default_dtype)
from .codec import pad_sequence
from .config import (ConfigError, RUN_SCHEMA, SYNTH_SCHEMA, format_config,
                     model_config_from, parse_config_file, parse_config_text,
                     schema_help, train_settings_from)
from .data import DataError, GeneratorSpec, MotionSequence, batch_iter, \
    read_dataset, synth_generate, unflatten_poses, write_dataset
from .dct import dct_forward
from .model import MotionMoE, audit_parameters
from .moe import expert_forward
from .ssm import init_bi_block, bidirectional_forward
from .training import (TrainingError, append_log, evaluate, fit,
                       load_checkpoint, model_from_checkpoint)

FEATURE_MAGIC = "MMFX"


def _apply_overrides(values: dict, overrides: list[str], schema: dict) -> dict:
    merged = dict(values)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key not in schema:
            raise ConfigError(f"--set: unknown key {key!r}")
        try:
            merged[key] = schema[key][0](value.strip())
        except ValueError as exc:
            raise ConfigError(f"--set: bad value for {key!r}: {exc}") from None
    return merged


def _load_run_config(args) -> dict:
    if args.config:
        values = parse_config_file(args.config, RUN_SCHEMA)
    else:
        values = parse_config_text("", RUN_SCHEMA)
    if args.set:
        values = _apply_overrides(values, args.set, RUN_SCHEMA)
    return values


def cmd_synth(args) -> int:
    if args.spec:
        values = parse_config_file(args.spec, SYNTH_SCHEMA)
    else:
        values = parse_config_text("", SYNTH_SCHEMA)
    if args.set:
        values = _apply_overrides(values, args.set, SYNTH_SCHEMA)
    try:
        spec = GeneratorSpec(**values)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    sequences = synth_generate(spec)
    write_dataset(sequences, args.out)
    print(f"wrote {len(sequences)} sequences "
          f"({spec.persons} persons, {spec.frames} frames, {spec.joints} joints) to {args.out}")
    return 0


def _set_dtype(values: dict) -> None:
    name = values["dtype"]
    if name not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {name!r}")
    set_default_dtype(np.float32 if name == "float32" else np.float64)


def cmd_train(args) -> int:
    values = _load_run_config(args)
    if not values["train_data"]:
        raise ConfigError("train_data is required (set it in the config or via --set)")
    _set_dtype(values)
    config = model_config_from(values)
    settings = train_settings_from(values)

    train_seqs = read_dataset(values["train_data"])
    if not train_seqs:
        raise ConfigError(f"training dataset {values['train_data']} is empty")
    val_seqs = read_dataset(values["val_data"]) if values["val_data"] else None

    out_dir = Path(settings.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved.cfg").write_text(format_config(values, RUN_SCHEMA))

    resume = load_checkpoint(args.resume, expected_config=config) if args.resume else None
    model = MotionMoE(config)
    audit = audit_parameters(model)
    print(f"model parameters: {audit.total}")

    started = time.perf_counter()
    log = fit(model, train_seqs, val_seqs, settings, resume=resume)
    elapsed = time.perf_counter() - started
    append_log(out_dir / "train_log.jsonl", log)
    if log:
        last = log[-1]
        extra = f" val_jpe={last['val_jpe']:.3f}" if "val_jpe" in last else ""
        print(f"trained {len(log)} epochs in {elapsed:.1f}s, "
              f"final loss {last['train_loss']:.6f}{extra}")
    print(f"artifacts in {out_dir}")
    return 0


def _read_eval_pair(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    sequences = read_dataset(args.data)
    if not sequences:
        raise ConfigError(f"dataset {args.data} is empty")
    return model, sequences


def cmd_eval(args) -> int:
    model, sequences = _read_eval_pair(args)
    settings = train_settings_from(parse_config_text("", RUN_SCHEMA))
    settings.fps = args.fps
    settings.horizons = tuple(float(h) for h in args.horizons.split(","))
    settings.root_joint = args.root_joint
    report = evaluate(model, sequences, settings)
    table = report.to_table()
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def cmd_predict(args) -> int:
    model, sequences = _read_eval_pair(args)
    cfg = model.config
    out_seqs = []
    for hist, _ in batch_iter(sequences, 1, cfg.history_frames, cfg.total_frames,
                              shuffle_seed=None):
        pred, _ = model.forward(Tensor(hist))
        poses = unflatten_poses(pred.data)  # (M, T, J, 3)
        out_seqs.append(MotionSequence(poses.astype(np.float32), sequences[0].fps))
    write_dataset(out_seqs, args.out)
    print(f"wrote {len(out_seqs)} predicted sequences to {args.out}")
    return 0


def cmd_inspect_routing(args) -> int:
    model, sequences = _read_eval_pair(args)
    cfg = model.config
    pool = cfg.expert_pool
    lines = []
    mass = np.zeros(cfg.n_experts)
    count = 0
    for hist, _ in batch_iter(sequences, 16, cfg.history_frames, cfg.total_frames,
                              shuffle_seed=None):
        if args.limit and count >= args.limit:
            break
        if args.limit:
            hist = hist[:max(0, args.limit - count)]
        _, decisions = model.forward(Tensor(hist))
        for layer_index, decision in enumerate(decisions):
            lines.extend(decision.to_lines(sample_offset=count, layer=layer_index))
            mass += decision.weights.data.sum(axis=0)
        count += hist.shape[0]
    histogram = [f"expert={kind} mass={mass[i]:.6f}" for i, kind in enumerate(pool)]
    text = "\n".join(lines + histogram) + "\n"
    Path(args.out).write_text(text)
    print("\n".join(histogram))
    print(f"routing for {count} samples x {len(model.layers)} layer(s) written to {args.out}")
    return 0


def cmd_export_features(args) -> int:
    """Per-expert pooled features for embedding plots: every expert is
    evaluated densely on the first mixture layer's input features."""
    model, sequences = _read_eval_pair(args)
    cfg = model.config
    d, t_total = cfg.pose_dim, cfg.total_frames
    width = d + t_total
    pool = cfg.expert_pool
    layer = model.layers[0]

    rows = []
    count = 0
    for hist, _ in batch_iter(sequences, 16, cfg.history_frames, cfg.total_frames,
                              shuffle_seed=None):
        if count >= args.samples:
            break
        hist = hist[:max(0, args.samples - count)]
        features = model.codec.encode(
            dct_forward(pad_sequence(Tensor(hist), t_total), model.basis))
        for kind in pool:
            out = expert_forward(kind, layer.spatial, layer.temporal, features,
                                 cfg.scan_mode, cfg.flip_back).data
            pooled = np.concatenate([out.mean(axis=2), out.mean(axis=1)], axis=1)
            rows.append((kind, pooled))
        count += hist.shape[0]

    n_samples = count
    header = json.dumps({"magic": FEATURE_MAGIC, "samples": n_samples,
                         "experts": list(pool), "width": width,
                         "layout": "batch-major, expert-minor within batch"},
                        sort_keys=True)
    with open(args.out, "wb") as fh:
        fh.write(header.encode() + b"\n")
        for _, pooled in rows:
            fh.write(np.ascontiguousarray(pooled, dtype="<f4").tobytes())
    total_rows = n_samples * len(pool)
    print(f"wrote {total_rows} feature rows of width {width} to {args.out}")
    return 0


def read_feature_export(path):
    """(header dict, rows (n, width) float32); inverse of cmd_export_features."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = np.frombuffer(fh.read(), dtype="<f4")
    rows = payload.reshape(-1, header["width"])
    return header, rows


def cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    if len(lengths) < 2:
        raise ConfigError("bench needs at least two lengths to fit a growth exponent")
    channels, batch = args.channels, args.batch
    rng = np.random.default_rng(0)
    block = init_bi_block(rng, channels, state_dim=16, conv_width=4)
    params = list(block.parameters().values())

    print(f"scan-dominated block: batch={batch} channels={channels} repeats={args.repeats}")
    print("length\tforward_ms\tbackward_ms")
    rows = []
    fwd_times = []
    for length in lengths:
        x = Tensor(rng.standard_normal((batch, length, channels)))
        fwd = []
        both = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            bidirectional_forward(block, x)
            fwd.append(time.perf_counter() - t0)
            for p in params:
                p.grad = None
            t0 = time.perf_counter()
            with Tape():
                out = bidirectional_forward(block, Tensor(x.data, requires_grad=True))
                backward(reduce_sum(mul(out, out)))
            both.append(time.perf_counter() - t0)
        f_ms, b_ms = 1e3 * min(fwd), 1e3 * min(both)
        fwd_times.append(min(fwd))
        rows.append(f"{length}\t{f_ms:.2f}\t{b_ms:.2f}")
        print(rows[-1])

    exponent = float(np.polyfit(np.log(lengths), np.log(fwd_times), 1)[0])
    print(f"fitted growth exponent: {exponent:.3f}")
    if args.out:
        Path(args.out).write_text("\n".join(rows) + f"\nexponent\t{exponent:.4f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionmoe",
        description="Multi-person motion forecasting with a shared-expert state-space mixture.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="run config keys:\n" + schema_help(RUN_SCHEMA)
               + "\n\nsynth spec keys:\n" + schema_help(SYNTH_SCHEMA))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="generator spec file (key = value)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output .mmp1 path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="run config file (key = value)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--horizons", default="0.2,0.6,1.0")
    p.add_argument("--root-joint", type=int, default=0)
    p.add_argument("--out", help="write the metric table here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write forecast sequences for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-routing", help="dump gate decisions and expert mass")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=0, help="max samples, 0 = all")
    p.set_defaults(func=cmd_inspect_routing)

    p = sub.add_parser("export-features", help="pooled per-expert features for embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=300)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("bench", help="time the scan-dominated block across lengths")
    p.add_argument("--lengths", default="32,64,128,256")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, TrainingError, AutodiffError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
