"""Command-line entry point: ``strpca {decompose,stream,eval,synth,graph-dump}``.

Every tunable resolves in the order built-in default < ``--config`` file
< ``STRPCA_<NAME>`` environment variable < command-line flag. The effective
values are written to ``config.resolved.json`` in the output directory.

Exit codes: 0 success, 1 runtime failure, 2 argument error.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import batch, graph, ingest, online, segmentation, tensor

ENV_PREFIX = "STRPCA_"
GAMMA_GRID = (0.1, 0.3, 0.6, 0.9, 1.2, 1.5, 1.8)

_logger = logging.getLogger("strpca")


class UsageError(ValueError):
    pass


# -- value parsing -------------------------------------------------------------


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _dims(s):
    parts = str(s).lower().replace(",", "x").split("x")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 32x32x30, got {s!r}") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"dimensions must be positive: {s!r}")
    return vals


def _pair(s):
    vals = _dims(s)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected WxH, got {s!r}")
    return vals


def _floats(s):
    try:
        return tuple(float(p) for p in str(s).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _modes(s):
    try:
        vals = tuple(sorted({int(p) for p in str(s).split(",")}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected modes like 1,2,3, got {s!r}") from None
    if not vals or any(v not in (1, 2, 3) for v in vals):
        raise argparse.ArgumentTypeError(f"modes must be drawn from 1,2,3: {s!r}")
    return vals


def _threshold(s):
    if str(s).lower() == "otsu":
        return "otsu"
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold is 'otsu' or a number in [0,1], got {s!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"relative threshold must lie in [0,1], got {v}")
    return v


def _opt_float(s):
    return None if str(s).lower() in ("none", "auto", "") else float(s)


# -- parameter registry --------------------------------------------------------


def _param(p, flag, conv, default, help, dest=None, boolean=False, show=None):
    """Register a resolvable parameter: argparse default is ``None`` so the
    config file and environment can fill in what the command line leaves
    out."""
    dest = dest or flag.lstrip("-").replace("-", "_")
    if boolean:
        p.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=help)
    else:
        p.add_argument(flag, dest=dest, type=conv, default=None, help=f"{help} (default: {default if show is None else show})")
    p._strpca_params[dest] = (conv if not boolean else _bool, default)


def _graph_params(p):
    g = graph.GraphConfig()
    _param(p, "--k", int, g.k, "neighbours per vertex in the kNN graphs")
    _param(p, "--patch", int, g.patch, "side of the square patch describing each pixel")


def _common_params(p):
    _param(p, "--seed", int, 0, "random seed")
    _param(p, "--threads", int, None, "cap on BLAS/LAPACK worker threads")


def _sequence_params(p):
    p.add_argument("input", help="frame directory or CDnet-style sequence root ('-' reads frame paths from stdin)")
    p.add_argument("--out", required=True, help="output directory")
    _param(p, "--resize", _pair, None, "downscale frames to WxH (rows x columns) by area averaging")
    _param(p, "--eval", None, False, "score masks against the ground truth found with the input", boolean=True)
    _param(p, "--threshold", _threshold, "otsu", "binarization: 'otsu' or a fraction of max|F|")
    _param(p, "--dump-tensor", None, False, "write B and F as binary tensor dumps", boolean=True)
    _param(p, "--trace", None, False, "write per-iteration residuals to trace.csv", boolean=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="strpca",
        description="Background/foreground separation of frame sequences by graph-regularized tensor RPCA.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help):
        p = sub.add_parser(name, help=help, description=help)
        p._strpca_params = {}
        p.add_argument("--config", help="file of key=value lines overriding the defaults")
        return p

    bc = batch.BatchConfig()
    p = add("decompose", "batch decomposition of a whole sequence")
    _sequence_params(p)
    _param(p, "--lambda", _opt_float, None, "weight of the l1 term", dest="lam", show="1/sqrt(max(w,h)*n)")
    _param(p, "--gamma1", float, bc.gamma1, "spatial graph weight")
    _param(p, "--gamma2", float, bc.gamma2, "temporal graph weight")
    _param(p, "--mu0", float, bc.mu0, "initial penalty")
    _param(p, "--mu-max", float, bc.mu_max, "penalty cap")
    _param(p, "--rho", float, bc.rho, "penalty growth factor")
    _param(p, "--zeta", float, bc.zeta, "convergence tolerance")
    _param(p, "--max-iters", int, bc.max_iters, "iteration cap")
    _param(p, "--shared-spatial-graph", None, False, "one spatial graph from the median frame", boolean=True)
    _param(p, "--sweep-gamma", None, False, "run every (gamma1, gamma2) pair of the ablation grid", boolean=True)
    _graph_params(p)
    _common_params(p)
    p.set_defaults(func=cmd_decompose)

    oc = online.OnlineConfig()
    p = add("stream", "online decomposition, one column at a time")
    _sequence_params(p)
    _param(p, "--lambda", _opt_float, None, "weight of the l1 term", dest="lam", show="1/sqrt(max(w,h)*n)")
    _param(p, "--gamma1", float, oc.gamma1, "spatial graph weight")
    _param(p, "--gamma2", float, oc.gamma2, "temporal graph weight")
    _param(p, "--r", int, oc.r, "basis rank")
    _param(p, "--eta", float, oc.eta, "step size of the stochastic basis update")
    _param(p, "--lam2", float, oc.lam2, "ridge weight on the coefficients")
    _param(p, "--omega", float, oc.omega, "inner-loop tolerance")
    _param(p, "--window", int, oc.window, "frames in the temporal window")
    _param(p, "--max-inner", int, oc.max_inner, "inner iteration cap per column")
    _param(p, "--basis-update", str, oc.basis_update, "closed_form or sgd")
    _param(p, "--modes", _modes, oc.modes, "unfoldings to stream and average", show="1,2,3")
    _param(p, "--graph-init", None, False, "multiply the initial block by the graph Laplacians", boolean=True)
    _param(p, "--no-warm-start", None, False, "use the raw first r columns as the initial basis", boolean=True)
    _graph_params(p)
    _common_params(p)
    p.set_defaults(func=cmd_stream)

    p = add("eval", "score a directory of masks against ground truth")
    p.add_argument("pred", help="directory of predicted masks")
    p.add_argument("gt", help="directory of ground-truth masks")
    p.add_argument("--out", required=True, help="output directory")
    _param(p, "--roi", str, None, "region-of-interest image")
    p.set_defaults(func=cmd_eval)

    p = add("synth", "write a synthetic sequence in CDnet layout")
    p.add_argument("--out", required=True, help="output directory")
    _param(p, "--preset", str, None, f"one of {', '.join(sorted(ingest.PRESETS))}")
    _param(p, "--dims", _dims, (16, 16, 20), "WxHxN", show="16x16x20")
    _param(p, "--background", str, "static", "/".join(ingest.BACKGROUNDS))
    _param(p, "--sigma-b", float, 0.05, "noise level of the dynamic background")
    _param(p, "--impulse-fraction", float, 0.0, "fraction of pixels hit by impulses")
    _param(p, "--object-size", int, None, "side of one moving square (none when unset)")
    _param(p, "--velocity", _floats, (1.0, 1.0), "object velocity in pixels per frame")
    _param(p, "--intensity", float, 0.95, "object intensity")
    _param(p, "--seed", int, 0, "random seed")
    p.set_defaults(func=cmd_synth)

    p = add("graph-dump", "write graph Laplacians in Matrix Market format")
    p.add_argument("input", help="frame directory or CDnet-style sequence root")
    p.add_argument("--out", required=True, help="output directory")
    _param(p, "--which", str, "both", "temporal, spatial or both")
    _param(p, "--frame", int, 0, "frame whose spatial graph is written")
    _param(p, "--resize", _pair, None, "downscale frames to WxH")
    _graph_params(p)
    p.set_defaults(func=cmd_graph_dump)
    return parser


def _read_config_file(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_").lower()] = value
    return out


def resolve(args, params, environ=None):
    """Fill every registered parameter from flag, environment, config file
    or default, in that order of precedence."""
    environ = os.environ if environ is None else environ
    file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_vals) - set(params))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    resolved = {}
    for dest, (conv, default) in params.items():
        value = getattr(args, dest, None)
        if value is None:
            raw = environ.get(ENV_PREFIX + dest.upper())
            if raw is None:
                raw = file_vals.get(dest)
            if raw is not None:
                try:
                    value = conv(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"bad value for {dest}: {exc}") from None
        resolved[dest] = default if value is None else value
    return resolved


# -- helpers -------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _threads(n):
    if n is None:
        import contextlib

        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _load(cfg):
    if cfg["input"] == "-":
        return _load_list(sys.stdin, cfg)
    if not os.path.isdir(cfg["input"]):
        raise UsageError(f"input directory not found: {cfg['input']}")
    spec = ingest.SequenceSpec.detect(cfg["input"], resize=cfg.get("resize"))
    x, gt, roi = ingest.load_sequence(spec)
    paths = ingest.list_frames(spec.frames_dir, spec.frame_glob)
    return x, gt, roi, paths


def _load_list(stream, cfg):
    """Frames named one path per line on ``stream``, in the given order."""
    paths = [ln.strip() for ln in stream if ln.strip()]
    if len(paths) < 2:
        raise UsageError("need at least two frame paths on standard input")
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise UsageError(f"frame not found: {missing[0]}")
    frames = [ingest.read_image(p, resize=cfg.get("resize")) for p in paths]
    if any(fr.shape != frames[0].shape for fr in frames):
        raise UsageError("frames differ in size")
    return np.clip(np.stack(frames, axis=2), 0.0, 1.0), None, None, paths


def _masks(f, cfg):
    th = cfg["threshold"]
    if th == "otsu":
        return segmentation.binarize(f, "otsu")
    return segmentation.binarize(f, "fixed", theta=th)


def _report(masks, gt, roi):
    gmasks, idx = gt
    return segmentation.score(masks, gmasks, roi=roi, frames=idx)


def _emit_outputs(out, cfg, b, f, gt, roi, paths):
    masks = _masks(f, cfg)
    ingest.write_masks(os.path.join(out, "masks"), masks, names=ingest.mask_names(paths))
    if cfg["dump_tensor"]:
        tensor.write_tensor(os.path.join(out, "B.t3"), b)
        tensor.write_tensor(os.path.join(out, "F.t3"), f)
    if cfg["eval"]:
        rep = _report(masks, gt, roi)
        with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_csv())
        print(f"precision={rep.precision:.4f} recall={rep.recall:.4f} f_measure={rep.f_measure:.4f}")


def _prepare(args, params, extra):
    cfg = resolve(args, params)
    cfg.update(extra)
    return cfg


# -- subcommands ---------------------------------------------------------------


def cmd_decompose(args, params):
    cfg = _prepare(args, params, {"command": "decompose", "input": args.input, "out": args.out})
    bcfg = batch.BatchConfig(
        lam=cfg["lam"],
        gamma1=cfg["gamma1"],
        gamma2=cfg["gamma2"],
        mu0=cfg["mu0"],
        mu_max=cfg["mu_max"],
        rho=cfg["rho"],
        zeta=cfg["zeta"],
        max_iters=cfg["max_iters"],
    )
    gcfg = graph.GraphConfig(k=cfg["k"], patch=cfg["patch"])
    x, gt, roi, paths = _load(cfg)
    if (cfg["eval"] or cfg["sweep_gamma"]) and gt is None:
        raise UsageError("--eval and --sweep-gamma need ground truth (a groundtruth/ directory)")
    if gcfg.patch > min(x.shape[:2]):
        raise UsageError(f"patch {gcfg.patch} exceeds frame size {x.shape[:2]}")
    cfg["lambda_effective"] = bcfg.lam_for(x.shape)
    cfg["shape"] = list(x.shape)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.resolved.json"), cfg)

    def run():
        with _threads(cfg["threads"]):
            if cfg["sweep_gamma"]:
                return _sweep(x, gt, roi, bcfg, gcfg, cfg)
            rows = []
            trace = (lambda it, mu, res: rows.append((it, mu) + tuple(res))) if cfg["trace"] else None
            d = batch.solve_batch(x, bcfg, gcfg=gcfg, trace=trace, shared_spatial=cfg["shared_spatial_graph"])
            if cfg["trace"]:
                _write_trace(os.path.join(args.out, "trace.csv"), rows)
            if not d.converged:
                _logger.warning("no convergence within %d iterations", d.iters)
            print(f"iterations={d.iters} converged={str(d.converged).lower()}")
            _emit_outputs(args.out, cfg, d.B, d.F, gt, roi, paths)
            return 0

    return run


def _write_trace(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,mu,primal,delta_b,delta_f,gap_h,gap_t\n")
        for r in rows:
            fh.write(f"{r[0]}," + ",".join(repr(float(v)) for v in r[1:]) + "\n")


def _sweep(x, gt, roi, bcfg, gcfg, cfg):
    results = []
    for g1 in GAMMA_GRID:
        for g2 in GAMMA_GRID:
            c = batch.BatchConfig(**{**bcfg.__dict__, "gamma1": g1, "gamma2": g2})
            d = batch.solve_batch(x, c, gcfg=gcfg, shared_spatial=cfg["shared_spatial_graph"])
            rep = _report(_masks(d.F, cfg), gt, roi)
            results.append(
                {
                    "gamma1": g1,
                    "gamma2": g2,
                    "iterations": d.iters,
                    "converged": d.converged,
                    "precision": rep.precision,
                    "recall": rep.recall,
                    "f_measure": rep.f_measure,
                }
            )
            print(f"gamma1={g1} gamma2={g2} f_measure={rep.f_measure:.4f}")
    _write_json(os.path.join(cfg["out"], "sweep.json"), {"grid": list(GAMMA_GRID), "runs": results})
    return 0


def cmd_stream(args, params):
    cfg = _prepare(args, params, {"command": "stream", "input": args.input, "out": args.out})
    ocfg = online.OnlineConfig(
        r=cfg["r"],
        eta=cfg["eta"],
        lam=cfg["lam"],
        lam2=cfg["lam2"],
        gamma1=cfg["gamma1"],
        gamma2=cfg["gamma2"],
        omega=cfg["omega"],
        window=cfg["window"],
        basis_update=cfg["basis_update"],
        max_inner=cfg["max_inner"],
        modes=tuple(cfg["modes"]),
        graph_init=cfg["graph_init"],
        warm_start=not cfg["no_warm_start"],
        seed=cfg["seed"],
    )
    gcfg = graph.GraphConfig(k=cfg["k"], patch=cfg["patch"])
    x, gt, roi, paths = _load(cfg)
    if cfg["eval"] and gt is None:
        raise UsageError("--eval needs ground truth (a groundtruth/ directory)")
    w, h, n = x.shape
    sizes = {1: w, 2: h, 3: n}
    short = [m for m in ocfg.modes if sizes[m] <= ocfg.r]
    if short:
        raise UsageError(f"modes {short} have at most r={ocfg.r} columns; lower --r or drop them with --modes")
    if 3 in ocfg.modes and ocfg.gamma1 > 0 and gcfg.patch > min(w, h):
        raise UsageError(f"patch {gcfg.patch} exceeds frame size {(w, h)}")
    cfg["lambda_effective"] = ocfg.lam_for(x.shape)
    cfg["shape"] = list(x.shape)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.resolved.json"), cfg)

    def run():
        with _threads(cfg["threads"]):
            d = online.solve_online(x, ocfg, gcfg)
            _emit_outputs(args.out, cfg, d.B, d.F, gt, roi, paths)
            if cfg["trace"]:
                _write_stream_trace(os.path.join(args.out, "trace.csv"), x, ocfg, d)
            return 0

    return run


def _write_stream_trace(path, x, ocfg, d):
    # per-mode fit of each streamed column: residual norm of x - b - f
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mode,column,residual\n")
        for m, (bm, fm) in sorted(d.per_mode.items()):
            r = np.linalg.norm(tensor.unfold(x - bm - fm, m), axis=0)
            for j, v in enumerate(r):
                fh.write(f"{m},{j},{float(v)!r}\n")


def cmd_eval(args, params):
    cfg = _prepare(args, params, {"command": "eval", "pred": args.pred, "gt": args.gt, "out": args.out})
    for d in (args.pred, args.gt):
        if not os.path.isdir(d):
            raise UsageError(f"directory not found: {d}")

    def run():
        pred, ppaths = ingest.load_masks(args.pred)
        gmasks, gpaths = ingest.load_masks(args.gt)
        if pred.shape[:2] != gmasks.shape[:2]:
            raise ValueError(f"mask sizes differ: {pred.shape[:2]} vs {gmasks.shape[:2]}")
        idx = ingest.match_frames(ppaths, gpaths)
        roi = None
        if cfg["roi"]:
            roi = ingest.read_image(cfg["roi"]) >= 128 / 255.0
        rep = segmentation.score(pred, gmasks, roi=roi, frames=idx)
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "config.resolved.json"), cfg)
        with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_json())
        with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(rep.to_csv())
        print(f"precision={rep.precision:.4f} recall={rep.recall:.4f} f_measure={rep.f_measure:.4f}")
        return 0

    return run


def cmd_synth(args, params):
    cfg = _prepare(args, params, {"command": "synth", "out": args.out})
    if cfg["preset"]:
        spec = ingest.preset(cfg["preset"], seed=cfg["seed"])
    else:
        dims = cfg["dims"]
        if len(dims) != 3:
            raise UsageError("--dims needs WxHxN")
        if cfg["background"] not in ingest.BACKGROUNDS:
            raise UsageError(f"unknown background {cfg['background']!r}")
        objects = []
        if cfg["object_size"]:
            vel = cfg["velocity"]
            if len(vel) != 2:
                raise UsageError("--velocity needs two numbers")
            objects.append(ingest.SynthObject(size=cfg["object_size"], velocity=vel, intensity=cfg["intensity"]))
        spec = ingest.SynthSpec(
            dims=dims,
            background=cfg["background"],
            sigma_b=cfg["sigma_b"],
            objects=objects,
            impulse_fraction=cfg["impulse_fraction"],
            seed=cfg["seed"],
        )
    cfg["sequence"] = {
        "dims": list(spec.dims),
        "background": spec.background,
        "sigma_b": spec.sigma_b,
        "impulse_fraction": spec.impulse_fraction,
        "objects": [o.__dict__ for o in spec.objects],
    }

    def run():
        x, gt = ingest.synth(spec)
        ingest.write_frames(os.path.join(args.out, "input"), np.clip(x, 0.0, 1.0), prefix="in")
        ingest.write_masks(os.path.join(args.out, "groundtruth"), gt, prefix="gt")
        _write_json(os.path.join(args.out, "config.resolved.json"), cfg)
        print(f"wrote {spec.dims[2]} frames of {spec.dims[0]}x{spec.dims[1]} to {args.out}")
        return 0

    return run


def cmd_graph_dump(args, params):
    cfg = _prepare(args, params, {"command": "graph-dump", "input": args.input, "out": args.out})
    if cfg["which"] not in ("temporal", "spatial", "both"):
        raise UsageError("--which must be temporal, spatial or both")
    gcfg = graph.GraphConfig(k=cfg["k"], patch=cfg["patch"])
    x, _, _, _ = _load(cfg)
    if not 0 <= cfg["frame"] < x.shape[2]:
        raise UsageError(f"--frame must lie in [0, {x.shape[2]})")

    def run():
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "config.resolved.json"), cfg)
        if cfg["which"] in ("temporal", "both"):
            lt = graph.laplacian(graph.temporal_graph(tensor.unfold(x, 3), gcfg))
            graph.write_matrix_market(os.path.join(args.out, "temporal.mtx"), lt)
        if cfg["which"] in ("spatial", "both"):
            ls = graph.laplacian(graph.spatial_graph(x[:, :, cfg["frame"]], gcfg))
            graph.write_matrix_market(os.path.join(args.out, f"spatial_{cfg['frame']:06d}.mtx"), ls)
        return 0

    return run


# -- entry ---------------------------------------------------------------------


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        run = args.func(args, sub._strpca_params)
    except (UsageError, ValueError) as exc:
        print(f"strpca {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"strpca {args.command}: error: {exc}", file=sys.stderr)
        return 1
    try:
        return run()
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"strpca {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
