import csv
import io
import random

import pytest

from polycode.cli import emit_report, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_code_info_pentagon(capsys):
    code, out, _ = run(capsys, "code", "info", "--scheme", "pentagon")
    assert code == 0
    assert "storage_overhead: 2.22" in out
    assert "code_length: 5" in out
    assert "tolerance: 2" in out


def test_code_info_table_values(capsys):
    expected = {
        "pentagon": "2.22",
        "heptagon": "2.1",
        "heptagon-local": "2.15",
        "raidm-9": "2.22",
        "raidm-11": "2.18",
        "3-rep": "3",
    }
    for scheme, overhead in expected.items():
        code, out, _ = run(capsys, "code", "info", "--scheme", scheme)
        assert code == 0
        assert f"storage_overhead: {overhead}\n" in out


def test_unknown_scheme_is_domain_error(capsys):
    code, _, err = run(capsys, "code", "info", "--scheme", "dodecagon")
    assert code == 1
    assert "error" in err


def test_missing_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "code", "info")
    assert code == 2


def test_encode_decode_roundtrip(tmp_path, capsys):
    src = tmp_path / "input.bin"
    src.write_bytes(random.Random(1).randbytes(5000))
    code, *_ = run(capsys, "code", "encode", "--scheme", "pentagon",
                   "--input", str(src), "--out-dir", str(tmp_path / "stripe"))
    assert code == 0
    out_file = tmp_path / "out.bin"
    code, *_ = run(capsys, "code", "decode", "--in-dir", str(tmp_path / "stripe"),
                   "--killed", "0,1", "--output", str(out_file))
    assert code == 0
    assert out_file.read_bytes() == src.read_bytes()


def test_decode_unrecoverable_exit_one(tmp_path, capsys):
    src = tmp_path / "input.bin"
    src.write_bytes(b"x" * 900)
    run(capsys, "code", "encode", "--scheme", "pentagon",
        "--input", str(src), "--out-dir", str(tmp_path / "stripe"))
    code, _, err = run(capsys, "code", "decode", "--in-dir", str(tmp_path / "stripe"),
                       "--killed", "0,1,2", "--output", str(tmp_path / "out.bin"))
    assert code == 1
    assert "unrecoverable" in err.lower() or "fatal" in err.lower()


def test_repair_plan_bandwidth(capsys):
    code, out, _ = run(capsys, "code", "repair-plan", "--scheme", "pentagon", "--failed", "0,1")
    assert code == 0
    assert "bandwidth_blocks: 10" in out
    code, out, _ = run(capsys, "code", "repair-plan", "--scheme", "heptagon", "--failed", "2,5")
    assert "bandwidth_blocks: 16" in out


def test_store_cycle(tmp_path, capsys):
    root = tmp_path / "store"
    src = tmp_path / "f.bin"
    src.write_bytes(random.Random(2).randbytes(20000))
    assert main(["store", "init", "--root", str(root), "--scheme", "pentagon",
                 "--block-size", "1024", "--seed", "4"]) == 0
    assert main(["store", "put", "--root", str(root), "--file", str(src)]) == 0
    assert main(["store", "kill", "--root", str(root), "--node", "0"]) == 0
    code, out, _ = run(capsys, "store", "fsck", "--root", str(root))
    assert code == 0 and "damaged" in out
    code, out, _ = run(capsys, "store", "repair", "--root", str(root))
    assert code == 0 and "bandwidth_blocks" in out
    out_file = tmp_path / "g.bin"
    assert main(["store", "get", "--root", str(root), "--name", "f.bin",
                 "--output", str(out_file)]) == 0
    assert out_file.read_bytes() == src.read_bytes()
    code, out, _ = run(capsys, "store", "fsck", "--root", str(root))
    assert "clean" in out


def test_store_init_requires_seed(capsys):
    code, _, err = run(capsys, "store", "init", "--root", "/tmp/x", "--scheme", "pentagon")
    assert code == 2


def test_sim_locality_csv(tmp_path, capsys):
    out_file = tmp_path / "loc.csv"
    argv = ["sim", "locality", "--scheme", "heptagon", "--nodes", "25", "--slots", "8",
            "--load", "100", "--scheduler", "delay", "--reps", "3", "--seed", "7",
            "--out", str(out_file)]
    assert main(argv) == 0
    first = out_file.read_bytes()
    assert first.startswith(
        b"scheme,scheduler,nodes,slots,load_pct,seed,tasks,local_tasks,locality_pct,remote_blocks\r\n"
    )
    rows = list(csv.DictReader(io.StringIO(first.decode())))
    assert len(rows) == 3
    assert all(r["scheme"] == "heptagon" and r["tasks"] == "200" for r in rows)
    # byte-stable across reruns
    assert main(argv) == 0
    assert out_file.read_bytes() == first


def test_sim_locality_requires_seed(capsys):
    code, *_ = run(capsys, "sim", "locality", "--scheme", "pentagon")
    assert code == 2


def test_sim_locality_summary(tmp_path, capsys):
    out_file = tmp_path / "sum.csv"
    assert main(["sim", "locality", "--scheme", "pentagon", "--scheduler", "delay,matching",
                 "--slots", "2", "--load", "50,100", "--reps", "2", "--seed", "1",
                 "--summary", "--out", str(out_file)]) == 0
    rows = list(csv.DictReader(out_file.open()))
    assert len(rows) == 4  # 2 schedulers x 2 loads
    assert rows[0]["reps"] == "2"


def test_sim_reliability_csv(tmp_path, capsys):
    out_file = tmp_path / "rel.csv"
    argv = ["sim", "reliability", "--scheme", "2-rep,pentagon", "--mttf-hours", "100",
            "--mttr-hours", "10", "--trials", "300", "--seed", "5", "--out", str(out_file)]
    assert main(argv) == 0
    first = out_file.read_bytes()
    rows = list(csv.DictReader(io.StringIO(first.decode())))
    assert [r["scheme"] for r in rows] == ["2-rep", "pentagon"]
    assert main(argv) == 0
    assert out_file.read_bytes() == first


def test_report_schemes(tmp_path, capsys):
    code, out, _ = run(capsys, "report", "--kind", "schemes")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    by_scheme = {r["scheme"]: r for r in rows}
    assert by_scheme["pentagon"]["storage_overhead"] == "2.222"
    assert by_scheme["pentagon"]["tolerance"] == "2"
    assert by_scheme["heptagon-local"]["code_length"] == "15"


def test_report_locality_summary(tmp_path):
    detail = tmp_path / "detail.csv"
    main(["sim", "locality", "--scheme", "pentagon", "--scheduler", "delay",
          "--slots", "2", "--load", "100", "--reps", "4", "--seed", "3",
          "--out", str(detail)])
    out_file = tmp_path / "summary.csv"
    assert main(["report", "--kind", "locality-summary", "--input", str(detail),
                 "--out", str(out_file)]) == 0
    rows = list(csv.DictReader(out_file.open()))
    assert len(rows) == 1
    assert rows[0]["reps"] == "4"


def test_config_file_defaults_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("scheme=heptagon\nreps=2\n")
    out_file = tmp_path / "a.csv"
    assert main(["sim", "locality", "--config", str(cfg), "--seed", "1",
                 "--out", str(out_file)]) == 0
    rows = list(csv.DictReader(out_file.open()))
    assert all(r["scheme"] == "heptagon" for r in rows)
    assert len(rows) == 2
    # explicit flag beats the config value
    assert main(["sim", "locality", "--config", str(cfg), "--scheme", "pentagon",
                 "--seed", "1", "--out", str(out_file)]) == 0
    rows = list(csv.DictReader(out_file.open()))
    assert all(r["scheme"] == "pentagon" for r in rows)


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus_option=1\n")
    code, _, err = run(capsys, "sim", "locality", "--config", str(cfg), "--scheme", "pentagon", "--seed", "1")
    assert code == 2
    assert "bogus_option" in err


def test_emit_report_header_only_and_stability(tmp_path):
    path = tmp_path / "empty.csv"
    emit_report([], path, ["a", "b"])
    assert path.read_bytes() == b"a,b\r\n"
    rows = [{"a": 1, "b": 2.5}, {"a": 3, "b": 0.1}]
    emit_report(rows, path, ["a", "b"])
    first = path.read_bytes()
    emit_report(rows, path, ["a", "b"])
    assert path.read_bytes() == first
    with pytest.raises(ValueError):
        emit_report([{"a": 1}], path, ["a", "b"])
