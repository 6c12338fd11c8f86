"""Command-line entry point.

Subcommands wrap the library: dataset generation, codec training,
evaluation, rate-distortion sweeps, the exhaustive binning demo,
analytic bounds, compressed-gradient training, and the diversity
measurement.  Tabular results are CSV; report-style commands also
render a matplotlib figure next to the CSV (disable with --no-plot).

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
Relative dataset paths resolve under $NDSC_DATA_DIR when set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analysis, classical, codec, gradcomp, sources
from .errors import ConfigError, DataError, NumericalError


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def resolve_data_path(path: str) -> str:
    """Relative dataset paths resolve under $NDSC_DATA_DIR when set."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    root = os.environ.get("NDSC_DATA_DIR")
    if root:
        return os.path.join(root, path)
    return path


def atomic_write(path: str, data) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def blob_hash(path: str) -> str:
    """Git-style content hash: sha1 over "blob <size>\\0" + bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    h = hashlib.sha1()
    h.update(f"blob {len(data)}\0".encode("ascii"))
    h.update(data)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, config: dict, seeds,
                   inputs) -> None:
    """Echo everything needed to re-run the command bit-identically."""
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seeds": list(seeds),
        "effective_config": config,
        "input_hashes": {os.fspath(p): blob_hash(p) for p in inputs},
    }
    atomic_write(os.path.join(out_dir, "run_manifest.json"),
                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _strict_keys(doc: dict, allowed, what: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = args.global_seed if args.global_seed is not None else args.seed
    if args.source == "gaussian":
        ds = sources.gen_gaussian(args.n, args.sigma_n, seed)
    elif args.source == "hamming":
        ds = sources.gen_hamming(args.n, seed)
    elif args.source == "split_field":
        ds = sources.gen_split_field(args.n, args.grid, seed)
    elif args.source == "gradients":
        ds = sources.gen_gradient_dataset(
            runs=args.runs, steps=args.steps, sample_rate=args.sample_rate,
            seed=seed)
    else:
        raise ConfigError(f"unknown source {args.source!r}")
    out = resolve_data_path(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    sources.dataset_write(ds, out)
    config = {"source": args.source, "n": args.n, "seed": seed,
              "sigma_n": args.sigma_n, "grid": args.grid, "runs": args.runs,
              "steps": args.steps, "sample_rate": args.sample_rate, "out": out}
    atomic_write(out + ".manifest.json",
                 json.dumps({"command": "gen", "tool_version": __version__,
                             "seeds": [seed], "effective_config": config,
                             "input_hashes": {}}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({ds.n} samples, x_dim={ds.x_dim}, si_dim={ds.si_dim})")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ("dataset", "variant", "latent_len", "code_dim", "codebook_bits",
               "hidden", "epochs", "batch_size", "lr", "patience",
               "valid_frac", "seed", "time_conditioned", "time_horizon",
               "output_sigmoid")

_TRAIN_DEFAULTS = {
    "variant": "distributed", "latent_len": 8, "code_dim": 4,
    "codebook_bits": 3, "hidden": [64, 32], "epochs": 100, "batch_size": 64,
    "lr": 1e-3, "patience": 20, "valid_frac": 0.15, "seed": 0,
    "time_conditioned": False, "time_horizon": None, "output_sigmoid": False,
}


def _merge_train_config(args) -> dict:
    cfg = dict(_TRAIN_DEFAULTS)
    if args.config:
        doc = _load_json(args.config)
        _strict_keys(doc, _TRAIN_KEYS, "train config")
        cfg.update(doc)
    for key in _TRAIN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.global_seed is not None:
        cfg["seed"] = args.global_seed
    if cfg.get("dataset") is None:
        raise ConfigError("train needs a dataset (flag --dataset or config key)")
    return cfg


def format_loss_csv(logrows) -> str:
    lines = ["epoch,train_loss,valid_mse"]
    for r in logrows:
        lines.append(f"{r.epoch},{r.train_loss!r},{r.valid_mse!r}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    cfg = _merge_train_config(args)
    ds_path = resolve_data_path(cfg["dataset"])
    ds = sources.dataset_read(ds_path)
    codec_cfg = codec.CodecConfig(
        variant=cfg["variant"], x_dim=ds.x_dim, si_dim=ds.si_dim,
        latent_len=cfg["latent_len"], code_dim=cfg["code_dim"],
        codebook_bits=cfg["codebook_bits"], hidden=tuple(cfg["hidden"]),
        time_conditioned=cfg["time_conditioned"],
        time_horizon=cfg["time_horizon"],
        output_sigmoid=cfg["output_sigmoid"])
    train_ds, valid_ds = sources.split_pair_dataset(
        ds, (1.0 - cfg["valid_frac"], cfg["valid_frac"]), seed=cfg["seed"])
    model, logrows = codec.train(
        codec_cfg, train_ds, valid_ds, cfg["epochs"], cfg["seed"],
        lr=cfg["lr"], batch_size=cfg["batch_size"], patience=cfg["patience"])

    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    model.save(os.path.join(out_dir, "model.ndsc"))
    atomic_write(os.path.join(out_dir, "loss_log.csv"), format_loss_csv(logrows))
    if args.plot and logrows:
        from . import plots
        plots.save_loss_figure(logrows, os.path.join(out_dir, "loss_log.png"),
                               title=f"{codec_cfg.variant} codec")
    write_manifest(out_dir, "train", {**cfg, "dataset": ds_path},
                   [cfg["seed"]], [ds_path])
    best = min((r.valid_mse for r in logrows), default=float("nan"))
    print(f"trained {codec_cfg.variant} codec: rate={codec.rate_bits(codec_cfg)} "
          f"bits, best valid MSE={best!r}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    ds_path = resolve_data_path(args.dataset)
    ds = sources.dataset_read(ds_path)
    model = codec.CodecModel.load(args.model)
    m = codec.dataset_mse(model, ds)
    rate = codec.rate_bits(model.config)
    bpp_val = analysis.bpp(rate, args.pixel_count) if args.pixel_count else float("nan")
    psnr_val = analysis.psnr(m, args.peak) if args.peak else float("nan")
    point = analysis.RDPoint(rate, bpp_val, m, psnr_val,
                             model.config.variant, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "rd_point.csv"),
                 analysis.format_rd_csv([point]))
    write_manifest(args.out_dir, "eval",
                   {"model": args.model, "dataset": ds_path, "peak": args.peak,
                    "pixel_count": args.pixel_count}, [args.seed],
                   [ds_path, args.model])
    print(f"mse={m!r} rate={rate} bits")
    return 0


# ---------------------------------------------------------------------------
# rd-sweep
# ---------------------------------------------------------------------------

_SWEEP_KEYS = ("dataset", "configs", "seeds", "epochs", "lr", "batch_size",
               "patience", "split", "split_seed", "peak", "pixel_count")


def cmd_rd_sweep(args) -> int:
    doc = _load_json(args.config)
    _strict_keys(doc, _SWEEP_KEYS, "rd-sweep config")
    for key in ("dataset", "configs", "seeds"):
        if key not in doc:
            raise ConfigError(f"rd-sweep config needs key {key!r}")
    ds_path = resolve_data_path(doc["dataset"])
    ds = sources.dataset_read(ds_path)
    configs = []
    for entry in doc["configs"]:
        entry = dict(entry)
        entry.setdefault("x_dim", ds.x_dim)
        entry.setdefault("si_dim", ds.si_dim)
        configs.append(codec.CodecConfig.from_dict(entry))
    seeds = [args.global_seed] if args.global_seed is not None else doc["seeds"]
    points = analysis.rd_sweep(
        ds, configs, seeds,
        epochs=doc.get("epochs", 150), lr=doc.get("lr", 1e-3),
        batch_size=doc.get("batch_size", 64), patience=doc.get("patience", 20),
        split=tuple(doc.get("split", (0.7, 0.15, 0.15))),
        split_seed=doc.get("split_seed", 0), peak=doc.get("peak"),
        pixel_count=doc.get("pixel_count"), jobs=args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "rd_sweep.csv"),
                 analysis.format_rd_csv(points))
    if args.plot:
        from . import plots
        plots.save_rd_figure(points, os.path.join(args.out_dir, "rd_sweep.png"),
                             title=f"{ds.source} rate-distortion")
    write_manifest(args.out_dir, "rd-sweep", {**doc, "dataset": ds_path},
                   seeds, [ds_path])
    print(f"swept {len(configs)} configs x {len(seeds)} seeds "
          f"-> {len(points)} rows")
    return 0


# ---------------------------------------------------------------------------
# sw-demo
# ---------------------------------------------------------------------------

def sw_demo_table() -> str:
    rows = classical.sw_verify_all()
    lines = ["x   y   bin decoded status"]
    for x, y, bin_id, decoded, ok in rows:
        lines.append(f"{x} {y} {bin_id}   {decoded}     {'OK' if ok else 'FAIL'}")
    n_ok = sum(1 for r in rows if r[4])
    lines.append(f"{n_ok}/{len(rows)} OK at rate {classical.SW_RATE_BITS} bits "
                 f"(vs {classical.SW_UNCODED_BITS} uncompressed)")
    return "\n".join(lines) + "\n"


def cmd_sw_demo(args) -> int:
    table = sw_demo_table()
    print(table, end="")
    ok = all(r[4] for r in classical.sw_verify_all())
    return 0 if ok else 4


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

def format_bounds_csv(rows) -> str:
    lines = ["D,R_no_si,R_with_si"]
    for d, r0, r1 in rows:
        lines.append(f"{d!r},{r0!r},{r1!r}")
    return "\n".join(lines) + "\n"


def cmd_bounds(args) -> int:
    rows = []
    for d in args.dist:
        rows.append((d, classical.rd_gaussian_no_si(d, args.sigma_x2),
                     classical.rd_gaussian_with_si(d, args.sigma_x2, args.sigma_n2)))
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "bounds.csv"), format_bounds_csv(rows))
    if args.plot:
        from . import plots
        plots.save_bounds_figure(rows, os.path.join(args.out_dir, "bounds.png"))
    write_manifest(args.out_dir, "bounds",
                   {"dist": list(args.dist), "sigma_x2": args.sigma_x2,
                    "sigma_n2": args.sigma_n2}, [], [])
    print(f"wrote {len(rows)} bound rows")
    return 0


# ---------------------------------------------------------------------------
# grad-train
# ---------------------------------------------------------------------------

def format_grad_csv(logs_by_seed) -> str:
    lines = ["round,bits_cumulative,loss,test_accuracy,seed"]
    for logs in logs_by_seed:
        total = 0
        for r in logs:
            total += r.bits
            lines.append(f"{r.round},{total},{r.train_loss!r},"
                         f"{r.test_accuracy!r},{r.seed}")
    return "\n".join(lines) + "\n"


def _grad_job(payload):
    kind, k, s, model_path, rounds, seed, data_seed = payload
    model = codec.CodecModel.load(model_path) if model_path else None
    spec = gradcomp.CompressorSpec(kind=kind, k=k, s=s, model=model,
                                   seed_stream=seed)
    task = sources.default_grad_task(data_seed)
    cfg = gradcomp.ClassifierConfig()
    return gradcomp.run_distributed_training(cfg, task, spec, rounds, seed)


def cmd_grad_train(args) -> int:
    if args.compressor.startswith("vq_") and not args.model:
        raise ConfigError(f"compressor {args.compressor!r} needs --model")
    seeds = [args.global_seed] if args.global_seed is not None else args.seeds
    payloads = [(args.compressor, args.k, args.s, args.model, args.rounds,
                 seed, args.data_seed) for seed in seeds]
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            logs_by_seed = list(pool.map(_grad_job, payloads))
    else:
        logs_by_seed = [_grad_job(p) for p in payloads]
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "grad_log.csv"),
                 format_grad_csv(logs_by_seed))
    if args.plot:
        from . import plots
        plots.save_grad_figure(logs_by_seed,
                               os.path.join(args.out_dir, "grad_log.png"),
                               title=f"compressor={args.compressor}")
    inputs = [args.model] if args.model else []
    write_manifest(args.out_dir, "grad-train",
                   {"compressor": args.compressor, "k": args.k, "s": args.s,
                    "model": args.model, "rounds": args.rounds,
                    "data_seed": args.data_seed}, seeds, inputs)
    final = [logs[-1].test_accuracy for logs in logs_by_seed]
    print(f"final test accuracy over {len(seeds)} seeds: "
          f"mean={float(np.mean(final)):.4f}")
    return 0


# ---------------------------------------------------------------------------
# diversity
# ---------------------------------------------------------------------------

def cmd_diversity(args) -> int:
    ds_path = resolve_data_path(args.dataset)
    ds = sources.dataset_read(ds_path)
    rng = np.random.default_rng([args.seed, 0xD1F])
    pool_rows = rng.choice(ds.n, size=args.pool_size, replace=False)
    input_rows = rng.choice(ds.n, size=args.n_inputs, replace=False)
    si_pool = ds.y[pool_rows].astype(np.float64)
    inputs = ds.x[input_rows].astype(np.float64)
    rows = []
    for path in args.model:
        model = codec.CodecModel.load(path)
        value = analysis.bin_diversity(model, inputs, si_pool)
        label = os.path.splitext(os.path.basename(path))[0]
        rows.append((label, value, args.pool_size, args.seed))
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write(os.path.join(args.out_dir, "diversity.csv"),
                 analysis.format_diversity_csv(rows))
    if args.plot:
        from . import plots
        plots.save_diversity_figure(rows,
                                    os.path.join(args.out_dir, "diversity.png"))
    write_manifest(args.out_dir, "diversity",
                   {"dataset": ds_path, "models": list(args.model),
                    "pool_size": args.pool_size, "n_inputs": args.n_inputs},
                   [args.seed], [ds_path, *args.model])
    for label, value, *_ in rows:
        print(f"{label}: diversity_l2={value!r}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndsc",
        description="Distributed source coding toolkit: learned conditional "
                    "vector-quantized codecs, classical references, and a "
                    "gradient-compression training simulator.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", dest="global_seed", type=int, default=None,
                        help="override every seed in the invoked command")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker pool size for multi-seed sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a correlated-pair dataset file")
    p.add_argument("--source", required=True,
                   choices=["gaussian", "hamming", "split_field", "gradients"])
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-n", dest="sigma_n", type=float, default=0.1,
                   help="noise std of the Gaussian pair source")
    p.add_argument("--grid", type=int, default=16,
                   help="field grid size for split_field")
    p.add_argument("--runs", type=int, default=4,
                   help="independent training runs for the gradients source")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--sample-rate", dest="sample_rate", type=float, default=0.5)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a codec on a dataset file")
    p.add_argument("--config", help="JSON config (flags override its keys)")
    p.add_argument("--dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", choices=list(codec.VARIANTS))
    p.add_argument("--latent-len", dest="latent_len", type=int)
    p.add_argument("--code-dim", dest="code_dim", type=int)
    p.add_argument("--codebook-bits", dest="codebook_bits", type=int)
    p.add_argument("--hidden", type=int, nargs=2, metavar=("H", "H_SI"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--valid-frac", dest="valid_frac", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--time-conditioned", dest="time_conditioned",
                   action="store_const", const=True)
    p.add_argument("--time-horizon", dest="time_horizon", type=int)
    p.add_argument("--output-sigmoid", dest="output_sigmoid",
                   action="store_const", const=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_train, plot=True)

    p = sub.add_parser("eval", help="measure a trained codec on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--peak", type=float, default=None,
                   help="signal peak for PSNR ([0,1] sources use 1.0)")
    p.add_argument("--pixel-count", dest="pixel_count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rd-sweep", help="train a grid of configs and seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_rd_sweep, plot=True)

    p = sub.add_parser("sw-demo",
                       help="exhaustive zero-error binning verification")
    p.set_defaults(func=cmd_sw_demo)

    p = sub.add_parser("bounds", help="analytic Gaussian rate-distortion curves")
    p.add_argument("--dist", type=float, nargs="+", required=True)
    p.add_argument("--sigma-x2", dest="sigma_x2", type=float, default=1.0)
    p.add_argument("--sigma-n2", dest="sigma_n2", type=float, default=0.01)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_bounds, plot=True)

    p = sub.add_parser("grad-train",
                       help="two-worker training with a compressed gradient")
    p.add_argument("--compressor", required=True,
                   choices=list(gradcomp.COMPRESSOR_KINDS))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--model", default=None,
                   help="codec model file for the vq_* compressors")
    p.add_argument("--rounds", type=int, default=500)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--data-seed", dest="data_seed", type=int,
                   default=sources.DEFAULT_GRAD_DATA_SEED)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_grad_train, plot=True)

    p = sub.add_parser("diversity",
                       help="decoding diversity under varying side information")
    p.add_argument("--model", action="append", required=True,
                   help="codec model file (repeatable)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pool-size", dest="pool_size", type=int, default=16)
    p.add_argument("--n-inputs", dest="n_inputs", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_diversity, plot=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
