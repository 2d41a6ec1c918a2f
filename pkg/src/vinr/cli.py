"""Command-line interface tying the pipeline together.

Subcommands: sample, fit, blend, extract, eval, sweep, fixtures. Every
subcommand is deterministic given identical flags (including --seed); sweep
repetitions run as independent parallel jobs with per-job seeds derived from
the base seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import csg, extraction, geometry, metrics, network, synthetic, training

FULL_DEFAULTS = dict(epochs=25_000, lr=1e-4, lam=0.1, layers=6, width=256, skip=3)


def _bbox_arg(text: str):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != 6:
        raise argparse.ArgumentTypeError("bbox needs 6 numbers: x0 y0 z0 x1 y1 z1")
    return np.array(vals[:3]), np.array(vals[3:])


def _load_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _shape_bbox(shape):
    if isinstance(shape, synthetic.Sphere):
        c = np.asarray(shape.center)
        return c - shape.radius, c + shape.radius
    if isinstance(shape, synthetic.Capsule):
        a, b = np.asarray(shape.a), np.asarray(shape.b)
        return np.minimum(a, b) - shape.radius, np.maximum(a, b) + shape.radius
    if isinstance(shape, synthetic.Torus):
        c = np.asarray(shape.center)
        r = np.array([shape.major + shape.minor] * 2 + [shape.minor])
        return c - r, c + r
    if isinstance(shape, synthetic.Offset):
        lo, hi = _shape_bbox(shape.shape)
        return lo - shape.delta, hi + shape.delta
    if isinstance(shape, synthetic.UnionList):
        boxes = [_shape_bbox(s) for s in shape.shapes]
        return (
            np.min([b[0] for b in boxes], axis=0),
            np.max([b[1] for b in boxes], axis=0),
        )
    raise ValueError(f"no bbox rule for {type(shape).__name__}")


def _train_config(args, n_channels_hint=1) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        lam=args.lam,
        surface_batch_size=args.batch,
        seed=args.seed,
        activation=args.activation,
        init_scheme=args.init,
        hidden_layers=args.layers,
        hidden_width=args.width,
        skip_layer=args.skip,
        half_extent=args.half_extent,
        nesting_penalty=args.nesting_penalty,
    )


def _add_fit_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=FULL_DEFAULTS["epochs"])
    p.add_argument("--lr", type=float, default=FULL_DEFAULTS["lr"])
    p.add_argument("--lambda", dest="lam", type=float, default=FULL_DEFAULTS["lam"])
    p.add_argument("--layers", type=int, default=FULL_DEFAULTS["layers"])
    p.add_argument("--width", type=int, default=FULL_DEFAULTS["width"])
    p.add_argument("--skip", type=int, default=FULL_DEFAULTS["skip"])
    p.add_argument("--activation", choices=("relu", "softplus"), default="relu")
    p.add_argument("--init", choices=("standard", "sphere"), default="sphere")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-extent", type=float, default=0.9)
    p.add_argument("--nesting-penalty", type=float, default=0.0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    if args.mesh:
        mesh = geometry.load_mesh(args.mesh)
        cloud = geometry.sample_surface(mesh, args.count + args.heldout, args.seed)
    else:
        shape = synthetic.parse_shape(args.shape)
        cloud = synthetic.sample_analytic_surface(shape, args.count + args.heldout, args.seed)
    if args.heldout:
        train, held = metrics.split_train_heldout(cloud, args.count, args.seed)
        geometry.save_point_cloud(train, args.out)
        held_path = args.heldout_out or _with_suffix(args.out, "_heldout")
        geometry.save_point_cloud(held, held_path)
    else:
        geometry.save_point_cloud(cloud, args.out)
    return 0


def _with_suffix(path: str, suffix: str) -> str:
    stem, dot, ext = path.rpartition(".")
    return f"{stem}{suffix}.{ext}" if dot else f"{path}{suffix}"


def cmd_fit(args) -> int:
    clouds = [geometry.load_point_cloud(p) for p in args.points]
    cfg = _train_config(args, len(clouds))
    try:
        model, report = training.fit_nested(clouds, cfg, channel_names=args.channel_names)
    except training.TrainingDiverged as e:
        print(f"fit diverged: {e}", file=sys.stderr)
        return 1
    network.save_model(model, args.out)
    if args.report:
        report.to_csv(args.report)
    return 0


def cmd_blend(args) -> int:
    if len(args.models) < 2:
        print("blend needs at least two models", file=sys.stderr)
        return 2
    models = [network.load_model(p) for p in args.models]
    lo, hi = args.bbox
    dims = (args.dims,) * 3
    grids = [
        csg.evaluate_on_grid(csg.ModelSource(m, args.channel), dims, lo, hi)
        for m in models
    ]
    spec = csg.BlendSpec(k=args.k, variant=args.variant)
    blended = csg.blend_grids(grids, spec)
    wrote = False
    if args.out_grid:
        geometry.write_grid(blended, args.out_grid)
        wrote = True
    if args.out_mesh:
        mesh = extraction.marching_cubes(blended, iso=0.0)
        geometry.save_mesh(mesh, args.out_mesh)
        wrote = True
    if not wrote:
        print("nothing to write: pass --out-grid and/or --out-mesh", file=sys.stderr)
        return 2
    return 0


def cmd_extract(args) -> int:
    if args.grid:
        grid = geometry.read_grid(args.grid)
    else:
        if args.bbox is None:
            print("--bbox is required when extracting from a model", file=sys.stderr)
            return 2
        model = network.load_model(args.model)
        if not (0 <= args.channel < model.arch.output_channels):
            print(
                f"channel {args.channel} out of range (model has "
                f"{model.arch.output_channels})",
                file=sys.stderr,
            )
            return 2
        lo, hi = args.bbox
        grid = csg.evaluate_on_grid(
            csg.ModelSource(model, args.channel), (args.dims,) * 3, lo, hi
        )
    mesh = extraction.marching_cubes(grid, iso=args.iso)
    geometry.save_mesh(mesh, args.out)
    return 0


def cmd_eval(args) -> int:
    model = network.load_model(args.model)
    if args.ref_mesh:
        ref_mesh = geometry.load_mesh(args.ref_mesh)
        ref_source = csg.MeshSource(ref_mesh)
        lo, hi = ref_mesh.bbox()
    else:
        shape = synthetic.parse_shape(args.ref_shape)
        ref_source = shape
        lo, hi = _shape_bbox(shape)
    if args.bbox:
        lo, hi = args.bbox
    else:
        lo, hi = metrics.padded_bbox(lo, hi, 0.1)
    dims = (args.dsc_dims,) * 3
    dsc = metrics.dice(csg.ModelSource(model, args.channel), ref_source, dims, lo, hi)
    asd = ""
    if args.heldout:
        held = geometry.load_point_cloud(args.heldout)
        asd = metrics.average_surface_distance(
            model, held, dims=(args.asd_dims,) * 3, bbox_min=lo, bbox_max=hi
        )
    nesting = ""
    if model.arch.output_channels >= 2:
        nesting = metrics.nesting_violation(model, dims, lo, hi).fraction_violated
    print("dsc,asd,nesting_fraction")
    print(f"{dsc:.6f},{asd if asd == '' else f'{asd:.6f}'},{nesting if nesting == '' else f'{nesting:.6f}'}")
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"dsc = {dsc}\n")
            f.write(f"asd = {asd}\n")
            f.write(f"nesting_fraction = {nesting}\n")
    return 0


def _sweep_job(job):
    """One (count, repeat) cell: sample, fit, evaluate. Returns a CSV row."""
    (shape_spec, mesh_path, count, repeat, base_seed, job_index, cfg_kwargs, dsc_dims) = job
    seed = base_seed + job_index
    t0 = time.perf_counter()
    try:
        if mesh_path:
            mesh = geometry.load_mesh(mesh_path)
            cloud = geometry.sample_surface(mesh, count + max(count // 2, 50), seed)
            ref = csg.MeshSource(mesh)
            lo, hi = mesh.bbox()
        else:
            shape = synthetic.parse_shape(shape_spec)
            cloud = synthetic.sample_analytic_surface(shape, count + max(count // 2, 50), seed)
            ref = shape
            lo, hi = _shape_bbox(shape)
        train, held = metrics.split_train_heldout(cloud, count, seed)
        cfg = training.TrainConfig(seed=seed, **cfg_kwargs)
        model, _ = training.fit(train, cfg)
        lo, hi = metrics.padded_bbox(lo, hi, 0.1)
        dsc = metrics.dice(csg.ModelSource(model, 0), ref, (dsc_dims,) * 3, lo, hi)
        asd = metrics.average_surface_distance(
            model, held, dims=(dsc_dims,) * 3, bbox_min=lo, bbox_max=hi
        )
        return (count, repeat, dsc, asd, time.perf_counter() - t0)
    except Exception as e:  # failures become NaN rows, the sweep continues
        print(f"sweep job (count={count}, repeat={repeat}) failed: {e}", file=sys.stderr)
        return (count, repeat, float("nan"), float("nan"), time.perf_counter() - t0)


def cmd_sweep(args) -> int:
    counts = [int(c) for c in args.counts.split(",") if c.strip()]
    cfg_kwargs = dict(
        epochs=args.epochs,
        learning_rate=args.lr,
        lam=args.lam,
        hidden_layers=args.layers,
        hidden_width=args.width,
        skip_layer=args.skip,
        activation=args.activation,
        init_scheme=args.init,
        surface_batch_size=args.batch,
        half_extent=args.half_extent,
    )
    jobs = []
    job_index = 0
    for count in counts:
        for repeat in range(args.repeats):
            jobs.append(
                (args.shape, args.mesh, count, repeat, args.seed, job_index, cfg_kwargs, args.dsc_dims)
            )
            job_index += 1
    n_jobs = args.jobs or int(os.environ.get("VINR_JOBS", "1"))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]

    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# sweep generated {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        f.write("count,repeat,dsc,asd,seconds\n")
        for count, repeat, dsc, asd, secs in rows:
            f.write(f"{count},{repeat},{dsc:.6f},{asd:.6f},{secs:.3f}\n")
        for count in counts:
            ds = np.array([r[2] for r in rows if r[0] == count])
            asds = np.array([r[3] for r in rows if r[0] == count])
            q75, q25 = np.nanpercentile(ds, 75), np.nanpercentile(ds, 25)
            f.write(
                f"{count},median,{np.nanmedian(ds):.6f},{np.nanmedian(asds):.6f},\n"
            )
            f.write(f"{count},iqr,{q75 - q25:.6f},"
                    f"{np.nanpercentile(asds, 75) - np.nanpercentile(asds, 25):.6f},\n")
    return 0


def cmd_fixtures(args) -> int:
    wrote = False
    if args.out_mesh:
        if args.shape.startswith("sphere"):
            shape = synthetic.parse_shape(args.shape)
            mesh = synthetic.icosphere(args.subdiv, shape.radius, shape.center)
        elif args.shape.startswith("capsule"):
            shape = synthetic.parse_shape(args.shape)
            mesh = synthetic.capsule_mesh(shape.a, shape.b, shape.radius)
        else:
            print(f"no tessellation for shape {args.shape!r}", file=sys.stderr)
            return 2
        geometry.save_mesh(mesh, args.out_mesh)
        wrote = True
    if args.out_points:
        shape = synthetic.parse_shape(args.shape)
        cloud = synthetic.sample_analytic_surface(shape, args.count, args.seed)
        geometry.save_point_cloud(cloud, args.out_points)
        wrote = True
    if not wrote:
        print("nothing to write: pass --out-mesh and/or --out-points", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vinr",
        description="Fit, blend, extract and evaluate neural signed-distance surfaces.",
    )
    parser.add_argument("--config", help="key = value config file; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a point cloud from a mesh or analytic shape")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--shape")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--heldout", type=int, default=0, help="also write N disjoint held-out points")
    p.add_argument("--heldout-out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="fit an SDF model to one or more point clouds")
    p.add_argument("--points", action="append", required=True,
                   help="repeatable; more than one triggers a nested multi-channel fit")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--channel-names", nargs="*", default=None)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("blend", help="blend trained models on a shared grid")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--variant", choices=("cubic", "quilez"), default="cubic")
    p.add_argument("--dims", type=int, default=256)
    p.add_argument("--bbox", type=_bbox_arg, required=True)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--out-grid")
    p.add_argument("--out-mesh")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("extract", help="marching-cubes mesh from a model or grid")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--grid")
    p.add_argument("--dims", type=int, default=128)
    p.add_argument("--bbox", type=_bbox_arg)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="DSC / ASD / nesting metrics for a model")
    p.add_argument("--model", required=True)
    ref = p.add_mutually_exclusive_group(required=True)
    ref.add_argument("--ref-mesh")
    ref.add_argument("--ref-shape")
    p.add_argument("--heldout")
    p.add_argument("--dsc-dims", type=int, default=96)
    p.add_argument("--asd-dims", type=int, default=128)
    p.add_argument("--bbox", type=_bbox_arg)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="robustness sweep over point-cloud sizes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--shape")
    p.add_argument("--counts", default="100,200,400,800")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--dsc-dims", type=int, default=64)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fixtures", help="emit analytic fixture meshes / point clouds")
    p.add_argument("--shape", required=True)
    p.add_argument("--subdiv", type=int, default=3)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-mesh")
    p.add_argument("--out-points")
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # pre-scan for --config so file values become defaults (flags still win)
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        raw = _load_config_file(cfg_path)
        converted = {}
        for k, v in raw.items():
            key = k.replace("-", "_")
            try:
                converted[key] = int(v)
            except ValueError:
                try:
                    converted[key] = float(v)
                except ValueError:
                    converted[key] = v
        for sp in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
            known = {a.dest for a in sp._actions}  # noqa: SLF001
            sp.set_defaults(**{k: v for k, v in converted.items() if k in known})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (geometry.GeometryError, network.ModelFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
