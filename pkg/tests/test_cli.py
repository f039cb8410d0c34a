import csv

import numpy as np
import pytest

from csplusm.cli import (BENCH_FIELDS, EXIT_DATA, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, BenchPlan, main,
                         run_bench)
from csplusm.core import (CoilMaps, DataError, ImageSequence, ModelParams, SamplingMask, SolverConfig,
                          load_dataset, save_dataset)
from csplusm.metrics import evaluate
from csplusm.phantom import PhantomSpec

SMALL = ["--frames", "4", "--size", "32", "--period", "4", "--amplitude", "2"]
QUICK = ["--max-inner", "20", "--max-outer", "2"]


def rows(path):
    return list(csv.DictReader(open(path)))


@pytest.fixture
def phantom_dir(tmp_path):
    assert main(["--out-dir", str(tmp_path), "--seed", "7", "phantom"] + SMALL) == EXIT_OK
    return tmp_path


def test_phantom_writes_two_loadable_files(phantom_dir):
    truth = load_dataset(phantom_dir / "phantom.csmd")
    maps = load_dataset(phantom_dir / "coils.csmd")
    assert isinstance(truth, ImageSequence) and truth.shape == (4, 32, 32)
    assert isinstance(maps, CoilMaps) and maps.coils == 4


def test_phantom_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--out-dir", str(d), "--seed", "7", "phantom"] + SMALL) == EXIT_OK
    for name in ("phantom.csmd", "coils.csmd"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["phantom", "--kind", "cine", "--frames", "1"],
    ["phantom", "--kind", "perfusion", "--frames", "1"],
    ["phantom", "--kind", "blob"],
    ["phantom", "--coils", "0"],
    ["recon", "--method", "svd"],
    ["recon", "--gamma", "-1"],
    ["bench", "--accels", "1.0"],
    ["bench", "--methods", "svd"],
    ["--threads", "0", "mask"],
    ["nosuchcommand"],
    [],
])
def test_usage_errors(tmp_path, argv, capsys):
    assert main(["--out-dir", str(tmp_path)] + argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_unknown_method_lists_valid_ones(phantom_dir, capsys):
    assert main(["--out-dir", str(phantom_dir), "recon", "--method", "svd"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert all(m in err for m in ("zerofill", "cs", "ls", "csm"))


@pytest.mark.parametrize("command", ["phantom", "mask", "recon", "metrics", "bench"])
def test_help_documents_defaults(command, capsys):
    assert main([command, "--help"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "--" in out
    if command != "metrics":
        assert "default" in out


def test_mask_command(tmp_path):
    assert main(["--out-dir", str(tmp_path), "mask", "--frames", "3", "--size", "64",
                 "--accel", "4"]) == EXIT_OK
    mask = load_dataset(tmp_path / "mask.csmd")
    assert isinstance(mask, SamplingMask) and mask.data.shape == (3, 64, 64)
    assert abs(mask.achieved_accel - 4) <= 0.2


def test_infeasible_mask_is_data_error(tmp_path):
    assert main(["--out-dir", str(tmp_path), "mask", "--size", "16", "--accel", "20"]) == EXIT_DATA


def test_recon_missing_inputs(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "recon", "--method", "cs"]) == EXIT_DATA
    assert "phantom" in capsys.readouterr().err


def test_recon_wrong_input_kind(phantom_dir):
    argv = ["--out-dir", str(phantom_dir), "recon", "--method", "cs",
            "--phantom", str(phantom_dir / "coils.csmd")]
    assert main(argv) == EXIT_DATA


def test_recon_csm_outputs(phantom_dir):
    argv = ["--out-dir", str(phantom_dir), "--seed", "7", "recon", "--method", "csm",
            "--accel", "4"] + QUICK
    assert main(argv) == EXIT_OK
    for name in ("mask.csmd", "kspace.csmd", "gold.csmd", "recon_csm.csmd", "flow_csm.csmd"):
        assert (phantom_dir / name).exists()
    trace = rows(phantom_dir / "trace_csm.csv")
    assert 1 <= len(trace) <= 2
    assert [int(r["outer_iter"]) for r in trace] == list(range(1, len(trace) + 1))


def test_recon_beta_zero_matches_cs(phantom_dir):
    base = ["--out-dir", str(phantom_dir), "--seed", "7", "recon", "--accel", "4",
            "--max-inner", "100", "--inner-tol", "1e-5"]
    assert main(base + ["--method", "cs"]) == EXIT_OK
    assert main(base + ["--method", "csm", "--beta", "0"]) == EXIT_OK
    cs = load_dataset(phantom_dir / "recon_cs.csmd").data
    csm = load_dataset(phantom_dir / "recon_csm.csmd").data
    # files hold float32, so allow its rounding on top of the solver bound
    assert np.max(np.abs(cs - csm)) <= 2 * 1e-5 + 1e-6


def test_recon_deterministic(phantom_dir, tmp_path):
    outs = []
    for d in ("r1", "r2"):
        out = tmp_path / d
        argv = ["--out-dir", str(out), "--seed", "7", "recon", "--method", "ls", "--accel", "4",
                "--phantom", str(phantom_dir / "phantom.csmd"),
                "--coilmaps", str(phantom_dir / "coils.csmd")] + QUICK
        assert main(argv) == EXIT_OK
        outs.append(out)
    for name in ("mask.csmd", "kspace.csmd", "recon_ls.csmd"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_metrics_command(tmp_path):
    rng = np.random.default_rng(0)
    gold = ImageSequence(rng.random((3, 24, 24)))
    save_dataset(tmp_path / "g.csmd", gold)
    save_dataset(tmp_path / "z.csmd", ImageSequence(np.zeros((3, 24, 24))))
    base = ["--out-dir", str(tmp_path), "metrics", "--gold", str(tmp_path / "g.csmd")]
    assert main(base + ["--candidate", str(tmp_path / "g.csmd"), "--region", "0", "4", "0", "4"]) == EXIT_OK
    r = rows(tmp_path / "metrics.csv")[0]
    assert (float(r["ssim"]), float(r["slmse"]), float(r["rmse"])) == (1.0, 1.0, 0.0)
    prof = rows(tmp_path / "profile.csv")
    assert len(prof) == 3 and prof[0]["gold"] == prof[0]["candidate"]
    assert main(base + ["--candidate", str(tmp_path / "z.csmd")]) == EXIT_OK
    assert float(rows(tmp_path / "metrics.csv")[0]["slmse"]) == 0.0


def test_metrics_matches_library(tmp_path):
    rng = np.random.default_rng(1)
    g = ImageSequence(rng.random((2, 24, 24)).astype(np.float32).astype(float))
    c = ImageSequence((g.data + 0.1 * rng.standard_normal(g.data.shape)).astype(np.float32).astype(float))
    save_dataset(tmp_path / "g.csmd", g)
    save_dataset(tmp_path / "c.csmd", c)
    assert main(["--out-dir", str(tmp_path), "metrics", "--gold", str(tmp_path / "g.csmd"),
                 "--candidate", str(tmp_path / "c.csmd")]) == EXIT_OK
    r = rows(tmp_path / "metrics.csv")[0]
    rep = evaluate(g, c)
    assert float(r["ssim"]) == rep.ssim and float(r["slmse"]) == rep.slmse


def test_metrics_dimension_mismatch(tmp_path):
    save_dataset(tmp_path / "a.csmd", ImageSequence(np.zeros((2, 24, 24))))
    save_dataset(tmp_path / "b.csmd", ImageSequence(np.zeros((2, 24, 20))))
    assert main(["--out-dir", str(tmp_path), "metrics", "--gold", str(tmp_path / "a.csmd"),
                 "--candidate", str(tmp_path / "b.csmd")]) == EXIT_DATA


def test_metrics_missing_file(tmp_path):
    assert main(["--out-dir", str(tmp_path), "metrics", "--gold", str(tmp_path / "none.csmd"),
                 "--candidate", str(tmp_path / "none.csmd")]) == EXIT_DATA


# benchmark

def small_plan(out, methods=("cs",), accels=(4.0,), **kw):
    spec = PhantomSpec(frames=4, height=32, width=32, period=4, motion_amplitude=2)
    return BenchPlan(spec, accels, methods, ModelParams(max_outer=2, delta=0.001, beta=0.02),
                     SolverConfig(max_inner=20), out_dir=out, **kw)


def test_bench_single_cell(tmp_path):
    table = run_bench(small_plan(tmp_path))
    assert len(table) == 1
    out = rows(tmp_path / "bench.csv")
    assert len(out) == 1 and list(out[0]) == BENCH_FIELDS
    assert out[0]["status"] == "ok" and 0 < float(out[0]["ssim"]) <= 1
    for name in ("curve_ssim.csv", "curve_slmse.csv", "profile_4x.csv", "trace_cs_4x.csv"):
        assert (tmp_path / name).exists()


def test_bench_all_outputs(tmp_path):
    run_bench(small_plan(tmp_path, methods=("zerofill", "cs", "ls", "csm"), accels=(4.0, 8.0),
                         center_lines=2))
    assert len(rows(tmp_path / "bench.csv")) == 8
    curve = rows(tmp_path / "curve_ssim.csv")
    assert [float(r["accel"]) for r in curve] == [4.0, 8.0]
    assert set(curve[0]) == {"accel", "zerofill", "cs", "ls", "csm"}
    disp = rows(tmp_path / "displacement_csm_8x.csv")
    assert len(disp) == 3 and all(float(r["max"]) >= float(r["mean"]) >= 0 for r in disp)
    prof = rows(tmp_path / "profile_8x.csv")
    assert len(prof) == 4 and set(prof[0]) == {"frame", "gold", "zerofill", "cs", "ls", "csm"}


def test_bench_isolates_cell_failures(tmp_path, monkeypatch):
    import csplusm.cli as cli

    real = cli.reconstruct

    def flaky(method, *args, **kwargs):
        if method == "ls":
            raise DataError("forced failure")
        return real(method, *args, **kwargs)

    monkeypatch.setattr(cli, "reconstruct", flaky)
    table = run_bench(small_plan(tmp_path, methods=("cs", "ls")))
    status = {r["method"]: r["status"] for r in rows(tmp_path / "bench.csv")}
    assert status["cs"] == "ok" and "forced failure" in status["ls"]
    assert len(table) == 2


def test_bench_command_exit_codes(tmp_path, monkeypatch):
    argv = ["--out-dir", str(tmp_path), "bench", "--accels", "4", "--methods", "zerofill"] + SMALL
    assert main(argv) == EXIT_OK
    import csplusm.cli as cli

    def broken(*args, **kwargs):
        raise DataError("forced failure")

    monkeypatch.setattr(cli, "reconstruct", broken)
    assert main(argv) == EXIT_SOLVER


def test_bench_deterministic(tmp_path):
    tables = []
    for d in ("a", "b"):
        run_bench(small_plan(tmp_path / d, methods=("cs", "csm")))
        tables.append([{k: v for k, v in r.items() if k != "wall_time"}
                       for r in rows(tmp_path / d / "bench.csv")])
    assert tables[0] == tables[1]


def test_bench_plan_validation(tmp_path):
    with pytest.raises(DataError):
        small_plan(tmp_path, methods=())
    with pytest.raises(DataError):
        small_plan(tmp_path, accels=(1.0,))
    with pytest.raises(DataError):
        small_plan(tmp_path, methods=("svd",))
