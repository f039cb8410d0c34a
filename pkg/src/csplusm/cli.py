"""Command-line front end and benchmark harness.

Commands: ``phantom``, ``mask``, ``recon``, ``metrics`` and ``bench``. All
outputs are container files and CSV tables written to ``--out-dir``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (CoilMaps, DataError, ImageSequence, ModelParams, SolverConfig, SolverError,
                   load_dataset, read_header, save_dataset)
from .metrics import evaluate, temporal_profile
from .phantom import (KINDS, PhantomSpec, acquire, full_mask, generate_coilmaps,
                      generate_phantom, geometry, undersample)
from .recon import METHODS, default_ls_lambdas, gold_standard, reconstruct
from .sampling import make_mask

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

DEFAULT_ACCELS = (4.0, 6.0, 8.0, 10.0, 12.0)
BENCH_FIELDS = ["method", "accel", "ssim", "slmse", "rmse", "outer_iters", "wall_time", "status"]


class UsageError(Exception):
    pass


# shared simulation

@dataclass
class Case:
    """One simulated acquisition: truth, maps, full and undersampled k-space."""

    truth: ImageSequence
    maps: CoilMaps
    gold: ImageSequence
    y: object
    mask: object


def _simulate(truth: ImageSequence, maps: CoilMaps, accel: float, noise_sigma: float, seed: int,
              center_lines: int = 8, density_power: float = 3.0) -> Case:
    # noise is drawn once on the full grid, so every acceleration shares the gold standard
    t, h, w = truth.shape
    y_full = acquire(truth, maps, full_mask(t, h, w), noise_sigma, seed=seed + 1)
    gold = gold_standard(y_full, maps)
    mask = make_mask(t, h, w, accel, center_lines=center_lines, density_power=density_power, seed=seed)
    return Case(truth, maps, gold, undersample(y_full, mask), mask)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            vals = [row[k] for k in header] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in vals])


def _accel_tag(accel: float) -> str:
    return f"{accel:g}x"


def default_region(spec: PhantomSpec) -> tuple[int, int, int, int]:
    """Small square at the blood-pool center of frame 0."""
    g = geometry(spec, 0)
    half = max(2, int(round(0.04 * min(spec.height, spec.width))))
    r, c = int(round(g.cy)), int(round(g.cx))
    return (r - half, r + half, c - half, c + half)


# argument parsing

def _add_phantom_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=KINDS, default="cine", help="phantom type (default: %(default)s)")
    p.add_argument("--frames", type=int, default=24, help="number of frames (default: %(default)s)")
    p.add_argument("--size", type=int, default=128, help="image height and width (default: %(default)s)")
    p.add_argument("--amplitude", type=float, default=6.0,
                   help="blood-pool radius oscillation in pixels (default: %(default)s)")
    p.add_argument("--period", type=int, default=24, help="frames per cardiac cycle (default: %(default)s)")
    p.add_argument("--uptake-rate", type=float, default=0.15,
                   help="perfusion uptake rate per frame (default: %(default)s)")
    p.add_argument("--resp-amplitude", type=float, default=0.0,
                   help="respiratory shift amplitude in pixels (default: %(default)s)")
    p.add_argument("--resp-period", type=int, default=120,
                   help="frames per respiratory cycle (default: %(default)s)")
    p.add_argument("--coils", type=int, default=4, help="number of receive coils (default: %(default)s)")


def _add_sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--center-lines", type=int, default=8,
                   help="fully sampled central rows (default: %(default)s)")
    p.add_argument("--density-power", type=float, default=3.0,
                   help="variable-density exponent (default: %(default)s)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    d = ModelParams()
    c = SolverConfig()
    p.add_argument("--gamma", type=float, default=d.gamma, help="spatial TV weight (default: %(default)s)")
    p.add_argument("--delta", type=float, default=d.delta, help="flow TV weight (default: %(default)s)")
    p.add_argument("--beta", type=float, default=d.beta, help="motion coupling weight (default: %(default)s)")
    p.add_argument("--max-outer", type=int, default=d.max_outer,
                   help="outer alternation limit (default: %(default)s)")
    p.add_argument("--zeta-stop", type=float, default=d.zeta_stop,
                   help="outer stopping tolerance on d_error (default: %(default)s)")
    p.add_argument("--max-inner", type=int, default=c.max_inner,
                   help="primal-dual iteration limit (default: %(default)s)")
    p.add_argument("--inner-tol", type=float, default=c.inner_tol,
                   help="primal-dual relative-change tolerance (default: %(default)s)")
    p.add_argument("--noise-sigma", type=float, default=0.01,
                   help="complex noise std per k-space sample (default: %(default)s)")
    p.add_argument("--ls-rel-l", type=float, default=None,
                   help="L+S low-rank threshold relative to the Casorati spectral norm "
                        "(default: library default)")
    p.add_argument("--ls-rel-s", type=float, default=None,
                   help="L+S sparse threshold relative to max|A^H y| (default: library default)")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csplusm", description="Joint reconstruction and motion estimation "
                     "for dynamic MRI on synthetic phantoms.")
    parser.add_argument("--out-dir", default="out", help="output directory (default: %(default)s)")
    parser.add_argument("--seed", type=int, default=0, help="seed for phantom phase, coils, mask "
                        "and noise (default: %(default)s)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for bench, BLAS threads otherwise (default: %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("phantom", help="write a phantom sequence and coil maps")
    _add_phantom_flags(p)

    p = sub.add_parser("mask", help="write a variable-density line mask")
    p.add_argument("--frames", type=int, default=24, help="number of frames (default: %(default)s)")
    p.add_argument("--size", type=int, default=128, help="image height and width (default: %(default)s)")
    p.add_argument("--accel", type=float, default=8.0, help="acceleration factor (default: %(default)s)")
    _add_sampling_flags(p)

    p = sub.add_parser("recon", help="simulate an acquisition and reconstruct it")
    p.add_argument("--method", default="csm", help=f"one of {', '.join(METHODS)} (default: %(default)s)")
    p.add_argument("--accel", type=float, default=8.0, help="acceleration factor (default: %(default)s)")
    p.add_argument("--phantom", default=None,
                   help="truth image file (default: OUT_DIR/phantom.csmd)")
    p.add_argument("--coilmaps", default=None, help="coil map file (default: OUT_DIR/coils.csmd)")
    _add_sampling_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("metrics", help="compare a reconstruction with a gold standard")
    p.add_argument("--gold", required=True, help="gold-standard image file")
    p.add_argument("--candidate", required=True, help="reconstructed image file")
    p.add_argument("--region", type=int, nargs=4, metavar=("ROW0", "ROW1", "COL0", "COL1"),
                   default=None, help="also write the temporal profile of this region")

    p = sub.add_parser("bench", help="run every method at every acceleration")
    _add_phantom_flags(p)
    _add_sampling_flags(p)
    _add_model_flags(p)
    p.add_argument("--accels", type=float, nargs="+", default=list(DEFAULT_ACCELS),
                   help="acceleration factors (default: %(default)s)")
    p.add_argument("--methods", nargs="+", default=list(METHODS),
                   help=f"methods to run, from {', '.join(METHODS)} (default: all)")
    p.add_argument("--region", type=int, nargs=4, metavar=("ROW0", "ROW1", "COL0", "COL1"),
                   default=None, help="temporal-profile region (default: blood-pool center)")
    return parser


def _spec_from(args) -> PhantomSpec:
    try:
        return PhantomSpec(kind=args.kind, frames=args.frames, height=args.size, width=args.size,
                           motion_amplitude=args.amplitude, period=args.period,
                           uptake_rate=args.uptake_rate, seed=args.seed,
                           resp_amplitude=args.resp_amplitude, resp_period=args.resp_period)
    except DataError as exc:
        raise UsageError(str(exc)) from exc


def _params_from(args) -> tuple[ModelParams, SolverConfig]:
    try:
        params = ModelParams(gamma=args.gamma, delta=args.delta, beta=args.beta,
                             zeta_stop=args.zeta_stop, max_outer=args.max_outer)
        cfg = SolverConfig(max_inner=args.max_inner, inner_tol=args.inner_tol)
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    if args.noise_sigma < 0:
        raise UsageError("--noise-sigma must be nonnegative")
    return params, cfg


def _ls_lambdas(args, case: Case) -> tuple:
    if args.ls_rel_l is None and args.ls_rel_s is None:
        return (None, None)
    kw = {}
    if args.ls_rel_l is not None:
        kw["rel_L"] = args.ls_rel_l
    if args.ls_rel_s is not None:
        kw["rel_S"] = args.ls_rel_s
    return default_ls_lambdas(case.y, case.maps, case.mask, **kw)


# commands

def cmd_phantom(args) -> int:
    spec = _spec_from(args)
    if args.coils < 1:
        raise UsageError("--coils must be at least 1")
    out = Path(args.out_dir)
    truth = generate_phantom(spec)
    maps = generate_coilmaps(args.coils, spec.height, spec.width, seed=args.seed)
    save_dataset(out / "phantom.csmd", truth, {"spec": spec.to_dict()})
    save_dataset(out / "coils.csmd", maps, {"seed": args.seed})
    # reload so a bad write fails here rather than in a later command
    load_dataset(out / "phantom.csmd")
    load_dataset(out / "coils.csmd")
    print(f"wrote {out / 'phantom.csmd'} and {out / 'coils.csmd'}")
    return EXIT_OK


def cmd_mask(args) -> int:
    if args.frames < 1 or args.size < 1:
        raise UsageError("--frames and --size must be positive")
    mask = make_mask(args.frames, args.size, args.size, args.accel, center_lines=args.center_lines,
                     density_power=args.density_power, seed=args.seed)
    path = Path(args.out_dir) / "mask.csmd"
    save_dataset(path, mask)
    print(f"wrote {path} (achieved acceleration {mask.achieved_accel:.3f})")
    return EXIT_OK


def _load_inputs(args) -> tuple[ImageSequence, CoilMaps]:
    out = Path(args.out_dir)
    truth_path = Path(args.phantom) if args.phantom else out / "phantom.csmd"
    maps_path = Path(args.coilmaps) if args.coilmaps else out / "coils.csmd"
    for path in (truth_path, maps_path):
        if not path.exists():
            raise DataError(f"missing input {path}; run the phantom command first")
    truth = load_dataset(truth_path)
    maps = load_dataset(maps_path)
    if not isinstance(truth, ImageSequence):
        raise DataError(f"{truth_path} holds a {read_header(truth_path)['kind']}, not an image")
    if not isinstance(maps, CoilMaps):
        raise DataError(f"{maps_path} holds a {read_header(maps_path)['kind']}, not coil maps")
    return truth, maps


def cmd_recon(args) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; valid methods: {', '.join(METHODS)}")
    params, cfg = _params_from(args)
    truth, maps = _load_inputs(args)
    case = _simulate(truth, maps, args.accel, args.noise_sigma, args.seed,
                     args.center_lines, args.density_power)
    res = reconstruct(args.method, case.y, case.maps, params, cfg, ls_lambdas=_ls_lambdas(args, case))
    out = Path(args.out_dir)
    m = args.method
    save_dataset(out / "mask.csmd", case.mask)
    save_dataset(out / "kspace.csmd", case.y)
    save_dataset(out / "gold.csmd", case.gold)
    save_dataset(out / f"recon_{m}.csmd", res.image, {"method": m, "accel": args.accel})
    if res.flow is not None:
        save_dataset(out / f"flow_{m}.csmd", res.flow, {"method": m, "accel": args.accel})
    res.trace_to_csv(out / f"trace_{m}.csv")
    rep = evaluate(case.gold, res.image)
    print(f"{m} at {_accel_tag(args.accel)}: ssim={rep.ssim:.4f} slmse={rep.slmse:.4f} "
          f"rmse={rep.rmse:.4g} outer={res.outer_iters} time={res.wall_time:.1f}s")
    return EXIT_OK


def cmd_metrics(args) -> int:
    gold = load_dataset(args.gold)
    cand = load_dataset(args.candidate)
    for path, obj in ((args.gold, gold), (args.candidate, cand)):
        if not isinstance(obj, ImageSequence):
            raise DataError(f"{path} is not an image sequence")
    rep = evaluate(gold, cand)
    out = Path(args.out_dir)
    _write_csv(out / "metrics.csv", ["ssim", "slmse", "rmse"], [rep.row("", "")])
    if args.region is not None:
        prof_g = temporal_profile(gold, tuple(args.region))
        prof_c = temporal_profile(cand, tuple(args.region))
        rows = [[k, float(a), float(b)] for k, (a, b) in enumerate(zip(prof_g, prof_c))]
        _write_csv(out / "profile.csv", ["frame", "gold", "candidate"], rows)
    print(f"ssim={rep.ssim:.6f} slmse={rep.slmse:.6f} rmse={rep.rmse:.6g}")
    return EXIT_OK


# benchmark

@dataclass
class BenchPlan:
    spec: PhantomSpec
    accels: tuple
    methods: tuple
    params: ModelParams = field(default_factory=ModelParams)
    cfg: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    out_dir: Path = Path("out")
    coils: int = 4
    noise_sigma: float = 0.01
    center_lines: int = 8
    density_power: float = 3.0
    ls_rel: tuple = (None, None)
    region: Optional[tuple] = None

    def __post_init__(self):
        if not self.methods:
            raise DataError("a benchmark needs at least one method")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise DataError(f"unknown method(s) {', '.join(bad)}; valid methods: {', '.join(METHODS)}")
        if not self.accels or any(not a > 1 for a in self.accels):
            raise DataError("accelerations must all exceed 1")


def _run_cell(plan: BenchPlan, accel: float, method: str) -> dict:
    """One (method, acceleration) cell; errors are captured, not raised."""
    row = {"method": method, "accel": accel, "ssim": float("nan"), "slmse": float("nan"),
           "rmse": float("nan"), "outer_iters": 0, "wall_time": float("nan"), "status": "ok"}
    extra = {}
    try:
        truth = generate_phantom(plan.spec)
        maps = generate_coilmaps(plan.coils, plan.spec.height, plan.spec.width, seed=plan.seed)
        case = _simulate(truth, maps, accel, plan.noise_sigma, plan.seed,
                         plan.center_lines, plan.density_power)
        lam = (None, None)
        if method == "ls" and plan.ls_rel != (None, None):
            kw = {k: v for k, v in zip(("rel_L", "rel_S"), plan.ls_rel) if v is not None}
            lam = default_ls_lambdas(case.y, case.maps, case.mask, **kw)
        res = reconstruct(method, case.y, case.maps, plan.params, plan.cfg, ls_lambdas=lam)
        rep = evaluate(case.gold, res.image)
        row.update(ssim=rep.ssim, slmse=rep.slmse, rmse=rep.rmse, outer_iters=res.outer_iters,
                   wall_time=res.wall_time)
        region = plan.region or default_region(plan.spec)
        extra["profile"] = temporal_profile(res.image, region)
        extra["gold_profile"] = temporal_profile(case.gold, region)
        extra["trace"] = res.trace_rows()
        if res.flow is not None:
            mag = np.sqrt(np.sum(res.flow.data ** 2, axis=-1))
            extra["displacement"] = (mag.mean(axis=(1, 2)), mag.max(axis=(1, 2)))
    except (DataError, SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
        logger.warning("%s at %s failed: %s", method, _accel_tag(accel), exc)
    return {"row": row, **extra}


def _run_cell_limited(plan: BenchPlan, accel: float, method: str) -> dict:
    with threadpool_limits(limits=1):
        return _run_cell(plan, accel, method)


def run_bench(plan: BenchPlan, workers: int = 1) -> list[dict]:
    """Run all cells and write the CSV outputs. Returns the table rows."""
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(a, m) for a in plan.accels for m in plan.methods]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell_limited, plan, a, m) for a, m in cells]
            results = [f.result() for f in futures]
    else:
        results = []
        for a, m in cells:
            logger.info("running %s at %s", m, _accel_tag(a))
            results.append(_run_cell(plan, a, m))
    rows = [r["row"] for r in results]
    _write_csv(out / "bench.csv", BENCH_FIELDS, rows)
    by_cell = {(a, m): r for (a, m), r in zip(cells, results)}
    for metric in ("ssim", "slmse"):
        curve = [[a] + [by_cell[(a, m)]["row"][metric] for m in plan.methods] for a in plan.accels]
        _write_csv(out / f"curve_{metric}.csv", ["accel"] + list(plan.methods), curve)
    for a in plan.accels:
        tag = _accel_tag(a)
        done = [m for m in plan.methods if "profile" in by_cell[(a, m)]]
        if done:
            gold = by_cell[(a, done[0])]["gold_profile"]
            prof = [[k, float(gold[k])] + [float(by_cell[(a, m)]["profile"][k]) for m in done]
                    for k in range(len(gold))]
            _write_csv(out / f"profile_{tag}.csv", ["frame", "gold"] + done, prof)
        for m in plan.methods:
            cell = by_cell[(a, m)]
            if "trace" in cell:
                _write_csv(out / f"trace_{m}_{tag}.csv",
                           ["outer_iter", "objective", "d_error", "wall_time"], cell["trace"])
            if "displacement" in cell:
                mean, mx = cell["displacement"]
                disp = [[k, float(mean[k]), float(mx[k])] for k in range(len(mean))]
                _write_csv(out / f"displacement_{m}_{tag}.csv", ["pair", "mean", "max"], disp)
    return rows


def cmd_bench(args) -> int:
    spec = _spec_from(args)
    params, cfg = _params_from(args)
    try:
        plan = BenchPlan(spec, tuple(args.accels), tuple(args.methods), params, cfg, args.seed,
                         Path(args.out_dir), args.coils, args.noise_sigma, args.center_lines,
                         args.density_power, (args.ls_rel_l, args.ls_rel_s),
                         tuple(args.region) if args.region else None)
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    rows = run_bench(plan, workers=args.threads)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        print(f"{r['method']:9s} {_accel_tag(r['accel']):>4s} ssim={r['ssim']:.4f} "
              f"slmse={r['slmse']:.4f} rmse={r['rmse']:.4g} {r['status']}")
    print(f"bench finished in {time.perf_counter() - t0:.0f}s, {len(failed)} failed cell(s)")
    return EXIT_SOLVER if failed else EXIT_OK


COMMANDS = {"phantom": cmd_phantom, "mask": cmd_mask, "recon": cmd_recon,
            "metrics": cmd_metrics, "bench": cmd_bench}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits through argparse
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("csplusm: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        limit = 1 if args.command == "bench" else args.threads
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"csplusm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"csplusm {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"csplusm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
