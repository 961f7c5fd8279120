"""Command-line front end.

    specalign synth     --out-dir DIR [--config synth.json] [--seed N] [--force]
    specalign fit       --x X --y Y [--mask M] [--val-x VX --val-y VY] --config run.json
                        --mode linear|kernel --out-model MODEL [--report R.json]
    specalign infer     --model MODEL --x X --y Y --out-dir DIR [--force]
    specalign eval      --model MODEL --x X --y Y [--mask M] [--ks 1,5,10] --out R.json
    specalign gradcheck --loss clip|infonce|triplet|identity [--n 5] [--seed 0]

Exit codes: 0 ok, 1 usage error, 2 data error, 3 gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import dataio, plotting
from .aggregate import FusionStrategy, ensemble_similarity, fit_ensemble, partition
from .dataio import DataError
from .evaluate import RetrievalReport, gradcheck
from .loss import PRESETS, PairedBatch, preset
from .solver import fit_kernel, fit_linear, infer_kernel
from .synth import SynthConfig, generate, split

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _prepare_out_dir(path: Path, force: bool) -> Path:
    if path.exists() and not path.is_dir():
        raise DataError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"{path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_batch(x_path, y_path, mask_path=None, what="training") -> PairedBatch:
    x = dataio.read_embeddings(x_path)
    y = dataio.read_embeddings(y_path)
    if x.shape[1] != y.shape[1]:
        raise DataError(f"{what} pair count mismatch: {x_path} has {x.shape[1]} samples, "
                        f"{y_path} has {y.shape[1]}")
    mask = dataio.read_pair_mask(mask_path, x.shape[1], y.shape[1])
    identity = np.array_equal(mask, np.eye(x.shape[1], dtype=bool))
    return PairedBatch(x, y, None if identity else mask)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _ks_for(n: int, ks=(1, 5, 10)):
    return [k for k in ks if k <= n] or [1]


# synth


def cmd_synth(args) -> int:
    cfg = SynthConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{args.config}: cannot read synth config ({exc})") from exc
        try:
            cfg = SynthConfig.from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    out = _prepare_out_dir(Path(args.out_dir), args.force)

    ds = generate(cfg)
    parts = dict(zip(("train", "val", "test"), split(ds)))
    for name, part in parts.items():
        dataio.write_embeddings(out / f"{name}_x.uemb", part.batch.x)
        dataio.write_embeddings(out / f"{name}_y.uemb", part.batch.y)
        dataio.write_pair_mask(out / f"{name}_pairs.csv", part.batch.pos_mask)
        with open(out / f"{name}_labels.csv", "w") as fh:
            fh.write("index,label\n")
            fh.writelines(f"{i},{int(c)}\n" for i, c in enumerate(part.labels))
    _write_json(out / "synth_config.json", cfg.to_dict())
    counts = {k: v.n for k, v in parts.items()}
    print(f"wrote {counts['train']}/{counts['val']}/{counts['test']} train/val/test pairs to {out}")
    return EXIT_OK


# fit


def cmd_fit(args) -> int:
    cfg = dataio.read_run_config(args.config)
    batch = _load_batch(args.x, args.y, args.mask)
    val = None
    if (args.val_x is None) != (args.val_y is None):
        raise UsageError("--val-x and --val-y must be given together")
    if args.val_x is not None:
        val = _load_batch(args.val_x, args.val_y, args.val_mask, "validation")
    if cfg.batch_size is not None and val is None:
        raise UsageError("mini-batch aggregation weights batches by validation accuracy; "
                         "pass --val-x and --val-y")
    for v, label in ((val, "validation"),):
        if v is not None and (v.x.shape[0] != batch.x.shape[0] or v.y.shape[0] != batch.y.shape[0]):
            raise DataError(f"{label} feature dims {v.x.shape[0]}/{v.y.shape[0]} differ from "
                            f"training dims {batch.x.shape[0]}/{batch.y.shape[0]} "
                            f"({args.val_x}, {args.val_y})")
    if cfg.rank > min(batch.x.shape[0], batch.y.shape[0], batch.n) and args.mode == "linear":
        raise DataError(f"rank {cfg.rank} exceeds the data dimensions of {args.x} / {args.y}")

    spec_x = cfg.kernel_x if args.mode == "kernel" else None
    spec_y = cfg.kernel_y if args.mode == "kernel" else None
    start = time.perf_counter()
    if cfg.batch_size is not None:
        subs = partition(batch, cfg.batch_size, cfg.scheme, cfg.seed)
        strategy = FusionStrategy.from_id(cfg.strategy, cfg.softmax_temp)
        model = fit_ensemble(subs, val, cfg.loss, spec_x, spec_y, cfg.rank, cfg.fixed_point,
                             strategy, cfg.seed)
        diag = model.models[0].diagnostics
        iterations = max(m.diagnostics.iterations for m in model.models)
        sim_fn = lambda a, b: ensemble_similarity(model, a, b)  # noqa: E731
        extra = {"batches": len(model.models), "batch_weights": model.weights,
                 "batch_val_accuracies": model.val_accuracies}
    else:
        if args.mode == "linear":
            model = fit_linear(batch, cfg.loss, cfg.rank, cfg.fixed_point, cfg.seed,
                               record_weights=not args.no_figures)
        else:
            model = fit_kernel(batch, cfg.loss, spec_x, spec_y, cfg.rank, cfg.fixed_point,
                               cfg.seed, record_weights=not args.no_figures)
        diag = model.diagnostics
        iterations = diag.iterations
        sim_fn = model.similarity
        extra = {}
    wall = time.perf_counter() - start

    out_model = Path(args.out_model)
    out_model.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_model(out_model, model)

    sim = sim_fn(batch.x, batch.y)
    extra.update({"mode": args.mode, "split": "train", "config": cfg.resolved(),
                  "diagnostics": diag.summary() if diag else {}})
    if val is not None:
        vrep = RetrievalReport.from_similarity(sim_fn(val.x, val.y), val.mask, _ks_for(val.n))
        extra["validation"] = vrep.flat()
    report = RetrievalReport.from_similarity(sim, batch.mask, _ks_for(batch.n), wall, iterations, extra)

    report_path = Path(args.report) if args.report else out_model.with_suffix(".report.json")
    report_path.write_text(report.to_json() + "\n")
    report_path.with_suffix(".csv").write_text(report.csv_row())
    if not args.no_figures and diag is not None:
        stem = report_path.with_suffix("")
        plotting.convergence_figure(diag, f"{stem}_convergence.png")
        plotting.spectrum_figure(diag, f"{stem}_spectrum.png")
        if diag.weight_snapshots:
            plotting.weights_figure(diag.weight_snapshots, f"{stem}_weights.png")
        plotting.recall_figure(report, f"{stem}_recall.png")
    print(f"fit {args.mode}: {iterations} iteration(s), train matching accuracy "
          f"{report.matching_accuracy_avg:.4f}, {wall:.3f} s; model -> {out_model}, report -> {report_path}")
    return EXIT_OK


# infer / eval


def _model_similarity(model, x, y):
    if hasattr(model, "models"):
        return None, None, ensemble_similarity(model, x, y)
    if model.kind == "kernel":
        return infer_kernel(model, x, y)
    ex, ey = model.embed(x, y)
    return ex, ey, model.similarity(x, y)


def _check_dims(model, x, y, x_path, y_path):
    probe = model.models[0] if hasattr(model, "models") else model
    if probe.kind == "linear":
        dx, dy = probe.f1.shape[1], probe.f2.shape[1]
    else:
        dx, dy = probe.ref_x.shape[0], probe.ref_y.shape[0]
    if x.shape[0] != dx or y.shape[0] != dy:
        raise DataError(f"model expects feature dims {dx}/{dy}, got {x.shape[0]} ({x_path}) "
                        f"and {y.shape[0]} ({y_path})")


def cmd_infer(args) -> int:
    model = dataio.load_model(args.model)
    x = dataio.read_embeddings(args.x)
    y = dataio.read_embeddings(args.y)
    _check_dims(model, x, y, args.x, args.y)
    out = _prepare_out_dir(Path(args.out_dir), args.force)
    ex, ey, sim = _model_similarity(model, x, y)
    if ex is not None:
        dataio.write_embeddings(out / "x_embed.uemb", ex)
        dataio.write_embeddings(out / "y_embed.uemb", ey)
    # rows are x queries, so store it as-is (samples-major)
    (out / "similarity.uemb").write_bytes(dataio.encode_matrix(np.where(np.isfinite(sim), sim, -1e30)))
    print(f"wrote {sim.shape[0]} x {sim.shape[1]} similarity to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ks = [int(k) for k in args.ks.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--ks must be a comma-separated list of integers, got {args.ks!r}") from None
    model = dataio.load_model(args.model)
    batch = _load_batch(args.x, args.y, args.mask, "evaluation")
    _check_dims(model, batch.x, batch.y, args.x, args.y)
    start = time.perf_counter()
    _, _, sim = _model_similarity(model, batch.x, batch.y)
    wall = time.perf_counter() - start
    try:
        report = RetrievalReport.from_similarity(sim, batch.mask, ks, wall, 0,
                                                 {"model": str(args.model), "x": str(args.x),
                                                  "y": str(args.y)})
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    out.with_suffix(".csv").write_text(report.csv_row())
    if not args.no_figures:
        plotting.recall_figure(report, out.with_suffix("").as_posix() + "_recall.png")
    print(f"matching accuracy {report.matching_accuracy_avg:.4f} "
          f"(x->y {report.matching_accuracy_i2t:.4f}, y->x {report.matching_accuracy_t2i:.4f}); "
          f"report -> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if not 2 <= args.n <= 8:
        raise UsageError(f"--n must lie in 2..8 for dense finite differences, got {args.n}")
    rep = gradcheck(preset(args.loss), args.n, args.seed, name=args.loss,
                    many_to_many=args.many_to_many)
    for line in rep.lines():
        print(line)
    return EXIT_OK if rep.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="specalign", description="Closed-form spectral alignment of paired embeddings.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a seeded synthetic paired dataset")
    s.add_argument("--config", help="JSON with synthetic-data settings")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a linear or kernel alignment model")
    f.add_argument("--x", required=True)
    f.add_argument("--y", required=True)
    f.add_argument("--mask", help="pair CSV; omitted means one-to-one")
    f.add_argument("--val-x")
    f.add_argument("--val-y")
    f.add_argument("--val-mask")
    f.add_argument("--config", help="run configuration JSON")
    f.add_argument("--mode", choices=("linear", "kernel"), default="linear")
    f.add_argument("--out-model", required=True)
    f.add_argument("--report", help="report JSON path (default: next to the model)")
    f.add_argument("--no-figures", action="store_true")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("infer", help="embed new samples and score them")
    i.add_argument("--model", required=True)
    i.add_argument("--x", required=True)
    i.add_argument("--y", required=True)
    i.add_argument("--out-dir", required=True)
    i.add_argument("--force", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="retrieval metrics of a model on a paired set")
    e.add_argument("--model", required=True)
    e.add_argument("--x", required=True)
    e.add_argument("--y", required=True)
    e.add_argument("--mask")
    e.add_argument("--ks", default="1,5,10")
    e.add_argument("--out", required=True)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the weight matrix")
    g.add_argument("--loss", choices=sorted(PRESETS), default="clip")
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--many-to-many", action="store_true", help="random multi-positive mask")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"specalign {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"specalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
