import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from varfc.cli import EXIT_CONFIG, EXIT_MODEL, EXIT_NETWORK, main
from varfc.data import save_dataset
from varfc.edge_cloud import CloudServer

from test_train import tiny_data, tiny_model


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    m = tiny_model(seed=4)
    rng = np.random.default_rng(0)
    for p in m.parameters():  # off the zero init so lambda changes the rate
        p.data = (p.data + rng.standard_normal(p.shape) * 0.05).astype(np.float32)
    m.update_tables()
    m.save(d / "model.fwt")
    save_dataset(d / "data.fwt", tiny_data(12))
    return d


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_lists_every_subcommand():
    out = subprocess.run([sys.executable, "-m", "varfc", "--help"], capture_output=True, text=True, check=True).stdout
    for name in ("train", "sweep", "bd", "encode", "decode", "serve", "infer", "bench-latency", "dataset-gen",
                 "report"):
        assert name in out


def test_dataset_gen(tmp_path, capsys):
    code, out, _ = run(["dataset-gen", "--out", tmp_path / "d.fwt", "--n", 16, "--seed", 3], capsys)
    assert code == 0 and (tmp_path / "d.fwt").exists()
    code, _, _ = run(["dataset-gen", "--split", "--out", tmp_path / "s", "--n-train", 8, "--n-test", 4], capsys)
    assert code == 0 and (tmp_path / "s" / "train.fwt").exists()


def test_encode_decode_matches_in_memory(files, tmp_path, capsys):
    args = ["encode", "--model", files / "model.fwt", "--data", files / "data.fwt", "--index", 3,
            "--lambda", 0.1, "--out", tmp_path / "a.vfcb"]
    assert run(args, capsys)[0] == 0
    args[-1] = tmp_path / "b.vfcb"
    assert run(args, capsys)[0] == 0
    a, b = (tmp_path / "a.vfcb").read_bytes(), (tmp_path / "b.vfcb").read_bytes()
    assert a == b
    assert len(a) == 25 + int.from_bytes(a[21:25], "little")
    code, out, _ = run(["decode", "--model", files / "model.fwt", tmp_path / "a.vfcb"], capsys)
    assert code == 0
    from varfc.model import VariableRateModel
    m = VariableRateModel.load(files / "model.fwt")
    local = m.predict(tiny_data(12).images[3:4], 0.1)[0]
    assert out.splitlines()[0] == f"class {int(local.argmax())}"


def test_sweep_bd_report(files, tmp_path, capsys):
    for k, lams in ((1, "0.001,0.1,2.0"), (2, "0.0005,0.05,1.0")):
        code, _, _ = run(["sweep", "--model", files / "model.fwt", "--data", files / "data.fwt",
                          "--lambdas", lams, "--out", tmp_path / f"s{k}.csv"], capsys)
        assert code == 0
    text = (tmp_path / "s1.csv").read_text()
    assert text.splitlines()[0] == "config_k,lambda,bpp,est_bpp,top1,clamp_rate"
    assert len(text.splitlines()) == 4
    # second sweep relabelled as another config so the report has two curves
    s2 = (tmp_path / "s2.csv").read_text().replace("\n1,", "\n2,")
    (tmp_path / "s2.csv").write_text(s2)
    curve = "config_k,lambda,bpp,est_bpp,top1,clamp_rate\n1,0.1,0.2,0.2,60.0,0.0\n1,0.01,0.8,0.8,80.0,0.0\n"
    (tmp_path / "c1.csv").write_text(curve)
    (tmp_path / "c2.csv").write_text(curve.replace(",60.0,", ",61.0,").replace(",80.0,", ",81.0,"))
    code, out, _ = run(["bd", tmp_path / "c1.csv", tmp_path / "c1.csv"], capsys)
    assert code == 0 and float(out) == 0.0
    code, out, _ = run(["bd", tmp_path / "c2.csv", tmp_path / "c1.csv"], capsys)
    assert code == 0 and float(out) == pytest.approx(1.0)
    code, _, _ = run(["bd", tmp_path / "s1.csv", tmp_path / "c1.csv"], capsys)
    assert code in (0, EXIT_CONFIG)  # the toy sweep may collapse to one rate
    code, _, _ = run(["bench-latency", "--model", files / "model.fwt", "--runs", 3, "--warmup", 1,
                      "--out", tmp_path / "bench.csv"], capsys)
    assert code == 0
    code, out, _ = run(["report", "--sweep", tmp_path / "s1.csv", "--sweep", tmp_path / "s2.csv",
                        "--bench", tmp_path / "bench.csv", "--out", tmp_path / "rep"], capsys)
    assert code == 0 and out.startswith("Configuration,Config.1,Config.2")
    ET.parse(tmp_path / "rep" / "ra_curves.svg")
    rows = (tmp_path / "rep" / "report.csv").read_text().splitlines()
    from varfc.bench import RACurve, read_sweep_csv
    points = sum(len(RACurve.from_points(read_sweep_csv((tmp_path / f"s{k}.csv").read_text()))) for k in (1, 2))
    assert len(rows) == 1 + points


def test_sweep_is_deterministic(files, tmp_path, capsys):
    for name in ("a", "b"):
        run(["sweep", "--model", files / "model.fwt", "--data", files / "data.fwt", "--lambdas", "0.01,1",
             "--out", tmp_path / f"{name}.csv"], capsys)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_infer_against_server(files, capsys):
    from varfc.model import VariableRateModel
    srv = CloudServer(VariableRateModel.load(files / "model.fwt"))
    srv.start_background()
    try:
        code, out, _ = run(["infer", "--model", files / "model.fwt", "--data", files / "data.fwt",
                            "--addr", srv.address, "--count", 3, "--lambda", 0.2], capsys)
    finally:
        srv.stop()
    assert code == 0
    assert len(out.strip().splitlines()) == 4


def test_train_writes_run_directory(tmp_path, capsys):
    code, out, _ = run(["train", "--out", tmp_path, "--epochs", 1, "--set", "n_train=64", "--set", "n_test=16",
                        "--set", "probe_size=16"], capsys)
    assert code == 0
    assert out.startswith("epoch,lr,mean_ce")
    for name in ("model.fwt", "checkpoint.fwt", "train_log.csv", "config.txt"):
        assert (tmp_path / name).exists()


@pytest.mark.parametrize("args,code", [
    (["train", "--out", "x", "--set", "nonsense=1"], EXIT_CONFIG),
    (["sweep"], EXIT_CONFIG),
    (["decode", "--model", "/nonexistent/model.fwt", "x.vfcb"], EXIT_MODEL),
    (["bogus-command"], EXIT_CONFIG),
])
def test_exit_codes(args, code, capsys, tmp_path):
    assert run(args, capsys)[0] == code


def test_format_error_exit_code(files, tmp_path, capsys):
    (tmp_path / "bad.vfcb").write_bytes(b"NOTAVFCBSTREAM" * 3)
    assert run(["decode", "--model", files / "model.fwt", tmp_path / "bad.vfcb"], capsys)[0] == EXIT_MODEL
    (tmp_path / "bad.fwt").write_bytes(b"garbage")
    assert run(["decode", "--model", tmp_path / "bad.fwt", tmp_path / "bad.vfcb"], capsys)[0] == EXIT_MODEL


def test_lambda_out_of_range_is_a_config_error(files, tmp_path, capsys):
    args = ["encode", "--model", files / "model.fwt", "--data", files / "data.fwt", "--lambda", 9.0,
            "--out", tmp_path / "x.vfcb"]
    assert run(args, capsys)[0] == EXIT_CONFIG


def test_network_error_exit_code(files, capsys):
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    args = ["infer", "--model", files / "model.fwt", "--data", files / "data.fwt", "--addr", f"127.0.0.1:{port}"]
    assert run(args, capsys)[0] == EXIT_NETWORK


def test_serve_subcommand_answers(files):
    proc = subprocess.Popen([sys.executable, "-m", "varfc", "serve", "--model", str(files / "model.fwt"),
                             "--addr", "127.0.0.1:0"], stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("listening on ")
        addr = line.split()[-1]
        from varfc.edge_cloud import infer_remote
        from varfc.model import VariableRateModel
        r = infer_remote(tiny_data(1).images[0], 0.1, addr, VariableRateModel.load(files / "model.fwt"))
        assert 0 <= r.label < 3
    finally:
        proc.terminate()
        proc.wait(timeout=10)
