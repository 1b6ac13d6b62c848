"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn
from .benchmark import benchmark_config, run_benchmark, write_report
from .evaluation import (
    SplitSpec,
    cumulative_error_histogram,
    euclidean_error,
    histogram_csv,
    load_dataset,
    make_split,
    pca_fit,
    pca_reconstruct,
    save_dataset,
)
from .mesh_core import TopologyError, read_obj, write_obj, write_sparse
from .model import (
    build_hierarchy,
    build_model,
    count_parameters,
    latent_sweep,
    load_checkpoint,
    reconstruct,
    sample_gaussian,
    save_checkpoint,
    train_autoencoder,
    write_mesh_series,
)
from .sampling import build_upsampling, decimate, save_archive
from .shapes import icosphere
from .synthetic import generate_synthetic_dataset

log = logging.getLogger("meshae")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# --------------------------------------------------------------------------
# helpers


def _load_config(path) -> nn.TrainConfig:
    return nn.TrainConfig.load(path) if path else nn.TrainConfig()


def _override(config: nn.TrainConfig, args) -> nn.TrainConfig:
    changes = {}
    for key in ("epochs", "seed", "w_kld", "batch_size", "z_dim"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return nn.TrainConfig(**{**config.__dict__, **changes}) if changes else config


def _template(args):
    if getattr(args, "template", None):
        return read_obj(args.template)
    return icosphere(args.subdivisions)


def _dataset(args):
    if args.data:
        return load_dataset(args.data)
    return generate_synthetic_dataset(icosphere(3), seed=args.data_seed)


def _split_spec(args) -> SplitSpec:
    if args.mode == "extrapolation" and not args.hold:
        raise UsageError("--hold is required with --mode extrapolation")
    return SplitSpec(args.mode, args.window, args.ratio, args.hold, args.split_seed)


def _stats_row(name, stats, frames):
    return (f"{name},{stats.mean:.9g},{stats.std:.9g},{stats.median:.9g},{stats.max:.9g},{frames}")


def _write_errors(out, name, errors, stats, frames):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "errors.csv").write_text(
        "model,mean,std,median,max,frames\n" + _stats_row(name, stats, frames) + "\n", encoding="utf-8")
    edges = np.linspace(0.0, max(float(errors.max()), 1e-12), 51)
    (out / f"histogram_{name}.csv").write_text(
        histogram_csv(edges, cumulative_error_histogram(errors, edges)), encoding="utf-8")


def _add_split_args(p):
    p.add_argument("--mode", choices=["interpolation", "extrapolation"], default="interpolation")
    p.add_argument("--hold", help="held-out sequence name for extrapolation, or 'all' for every fold")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--split-seed", type=int, default=0)


def _add_data_args(p):
    p.add_argument("--data", help="dataset root (<root>/<sequence>/<frame>.obj); default: synthetic data")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the default synthetic dataset")


def _add_train_overrides(p):
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--w-kld", type=float, dest="w_kld")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--z-dim", type=int, dest="z_dim")


# --------------------------------------------------------------------------
# commands


def cmd_decimate(args):
    mesh = read_obj(args.input)
    coarse, qd = decimate(mesh, args.target)
    write_obj(args.out, coarse)
    if args.qd:
        write_sparse(args.qd, qd.matrix)
    if args.qu:
        write_sparse(args.qu, build_upsampling(mesh, coarse, qd).matrix)
    print(f"{mesh.n_vertices} -> {coarse.n_vertices} vertices, {len(coarse.faces)} faces")


def cmd_hierarchy(args):
    h = build_hierarchy(read_obj(args.input), args.levels, args.factor)
    save_archive(args.out, h.meshes, h.down, h.up)
    print(" ".join(str(n) for n in h.sizes))


def cmd_synth(args):
    ds = generate_synthetic_dataset(_template(args), args.sequences, args.frames, args.seed)
    save_dataset(args.out, ds)
    print(f"{len(ds.sequences)} sequences, {len(ds)} frames -> {args.out}")


def cmd_train(args):
    config = _override(_load_config(args.config), args)
    ds = load_dataset(args.data)
    h = build_hierarchy(ds.template, config.num_levels, seed=config.seed)
    model = build_model(h, config.z_dim, config.k_order, config.variational, seed=config.seed)
    result = train_autoencoder(model, h, ds.stack(), config)
    save_checkpoint(args.out, model, h, config)
    history = Path(args.history) if args.history else Path(str(args.out) + ".history.csv")
    history.write_text(result.history_csv(), encoding="utf-8")
    if args.figures:
        from .plotting import plot_training_history

        plot_training_history(result.history, history.with_suffix(".png"))
    print(f"final train L1 {result.history[-1]['train_l1']:.6g}; {count_parameters(model)} parameters")


def cmd_eval(args):
    model, h, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    keys = ds.frames() if args.mode is None else make_split(ds, _split_spec(args))[1]
    gt = ds.stack(keys)
    errors, stats = euclidean_error(reconstruct(model, h, gt), gt)
    _write_errors(args.out, "mesh_autoencoder", errors, stats, len(keys))
    print(_stats_row("mesh_autoencoder", stats, len(keys)))


def cmd_pca(args):
    ds = load_dataset(args.data)
    train_keys, test_keys = make_split(ds, _split_spec(args))
    pca = pca_fit(ds.stack(train_keys), args.k)
    gt = ds.stack(test_keys)
    errors, stats = euclidean_error(pca_reconstruct(pca, gt), gt)
    _write_errors(args.out, "pca", errors, stats, len(test_keys))
    print(_stats_row("pca", stats, len(test_keys)) + f"; {pca.parameter_count()} parameters")


def cmd_sweep(args):
    model, h, _ = load_checkpoint(args.checkpoint)
    mesh = read_obj(args.mesh)
    steps = list(range(-4, 5))
    outs = latent_sweep(model, h, mesh.vertices, args.dim, steps, args.factor)
    write_mesh_series(args.out, outs, h.meshes[0].faces,
                      [f"{args.dim} {j}" for j in steps], "file dim j")
    print(f"wrote {len(outs)} meshes to {args.out}")


def cmd_sample(args):
    model, h, _ = load_checkpoint(args.checkpoint)
    outs = sample_gaussian(model, h, args.count, args.sigma_range, args.seed)
    write_mesh_series(args.out, outs, h.meshes[0].faces, [str(i) for i in range(len(outs))], "file sample")
    print(f"wrote {len(outs)} meshes to {args.out}")


def cmd_benchmark(args):
    if args.mode == "extrapolation" and not args.hold:
        raise UsageError("--hold is required with --mode extrapolation")
    config = _override(nn.TrainConfig.load(args.config) if args.config else benchmark_config(), args)
    ds = _dataset(args)
    if args.mode == "extrapolation" and args.hold == "all":
        folds = ds.names
    else:
        folds = [args.hold]
    out = Path(args.out)
    h = build_hierarchy(ds.template, config.num_levels, seed=config.seed)
    for hold in folds:
        spec = SplitSpec(args.mode, args.window, args.ratio, hold, args.split_seed)
        report = run_benchmark(ds, spec, config, args.k, hierarchy=h)
        target = out / hold if len(folds) > 1 else out
        write_report(report, target, figures=not args.no_figures)
        pca, ae = report.result("pca"), report.result("mesh_autoencoder")
        print(f"{hold or args.mode}: pca {pca.stats.mean:.6g} mesh_autoencoder {ae.stats.mean:.6g}")


# --------------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="meshae", description="Convolutional mesh autoencoder tools.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("decimate", help="quadric decimation of one OBJ mesh")
    p.add_argument("input")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--qd", help="write the down-sampling matrix here")
    p.add_argument("--qu", help="write the up-sampling matrix here")
    p.set_defaults(func=cmd_decimate)

    p = sub.add_parser("hierarchy", help="build and archive a multi-level hierarchy")
    p.add_argument("input")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("synth", help="write the seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--template", help="OBJ template; default: subdivided icosahedron")
    p.add_argument("--subdivisions", type=int, default=3)
    p.add_argument("--sequences", type=int, default=12)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an autoencoder on a dataset directory")
    _add_train_overrides(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--figures", action="store_true", help="also plot the loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="reconstruction errors of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["interpolation", "extrapolation"],
                   help="score only the test part of this split (default: every frame)")
    p.add_argument("--hold")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--ratio", type=float, default=0.1)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pca", help="PCA baseline on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out", required=True)
    _add_split_args(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("sweep", help="decode a latent sweep around one mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--factor", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sample", help="decode truncated Gaussian latent samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--sigma-range", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("benchmark", help="autoencoder versus PCA on one split")
    _add_data_args(p)
    _add_train_overrides(p)
    _add_split_args(p)
    p.add_argument("--k", type=int, help="PCA components (must equal the latent size)")
    p.add_argument("--out", default="benchmark_out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"meshae: error: {exc}\n")
        return 1
    except (ValueError, OSError, TopologyError, nn.TrainingDivergenceError, KeyError) as exc:
        sys.stderr.write(f"meshae: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
