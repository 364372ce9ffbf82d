import json

import numpy as np
import pytest

from matmech.cli import main
from matmech.experiment import (RatioRow, curves_csv, run_ratio_table,
                                run_sampled_curves, table_csv, thread_count)
from matmech.io import (DescriptorError, WorkloadDescriptor, fmt, ingest_csv, read_matrix,
                        read_vector, write_matrix, write_vector)
from oracles import STUDENT_W


def test_descriptor_parse_and_build():
    d = WorkloadDescriptor.parse('{"kind": "allrange", "shape": [4, 2]}')
    assert d.label == "allrange(4x2)"
    W = d.build()
    assert W.m == 30 and W.name == "allrange(4x2)"
    assert WorkloadDescriptor.from_dict(d.to_dict()) == d
    s = WorkloadDescriptor.from_dict({"kind": "sampled-range", "shape": [16],
                                      "params": {"count": 5}, "seed": 3})
    assert np.array_equal(s.build().rows, s.build().rows)
    assert WorkloadDescriptor.from_dict({"kind": "allpredicate", "shape": 4}).build().m == 16


@pytest.mark.parametrize("bad", ['{"kind": "cube", "shape": [4]}', '{"shape": [4]}', "{not json",
                                 '{"kind": "allrange", "shape": [0]}',
                                 '{"kind": "sampled-range", "shape": [4], "params": {"count": 2}}',
                                 '{"kind": "allpredicate", "shape": [2, 2]}'])
def test_descriptor_errors(bad):
    with pytest.raises(DescriptorError):
        WorkloadDescriptor.parse(bad)


def test_descriptor_file_and_explicit(tmp_path):
    write_matrix(tmp_path / "w.csv", STUDENT_W)
    desc = tmp_path / "w.json"
    desc.write_text(json.dumps({"kind": "explicit", "shape": [4, 2],
                                "params": {"path": str(tmp_path / "w.csv")}}))
    W = WorkloadDescriptor.parse(str(desc)).build()
    assert np.array_equal(W.rows, STUDENT_W) and W.shape.dims == (4, 2)


def test_matrix_and_vector_roundtrip(tmp_path):
    A = np.array([[1.0, -2.5, 1 / 3], [0, 1e-9, 7]])
    write_matrix(tmp_path / "a.csv", A)
    assert np.allclose(read_matrix(tmp_path / "a.csv"), A, rtol=1e-11)
    write_vector(tmp_path / "v.csv", [1.5, 2.0], header="x")
    assert np.array_equal(read_vector(tmp_path / "v.csv"), [1.5, 2.0])
    (tmp_path / "ragged.csv").write_text("1,2\n3\n")
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "ragged.csv")
    assert fmt(1 / 3) == "0.333333333333"


def test_ingest_csv(tmp_path):
    (tmp_path / "t.csv").write_text("name,gradyear,gender,gpa\na,2011,M,3.1\nb,2011,M,2.0\nc,2014,F,3.9\n")
    cells = ingest_csv(tmp_path / "t.csv", {"gradyear": [2011, 2012, 2013, 2014], "gender": ["M", "F"]})
    assert np.array_equal(cells.x, [2, 0, 0, 0, 0, 0, 0, 1])
    gpa = ingest_csv(tmp_path / "t.csv", {"gpa": {"edges": [0, 2.5, 4.0]}})
    assert np.array_equal(gpa.x, [1, 2])


def test_ratio_table_and_failures():
    rows = [RatioRow({"kind": "allrange", "shape": [8]}, "identity"),
            RatioRow({"kind": "allrange", "shape": [6]}, "wavelet"),
            RatioRow({"kind": "allrange", "shape": [8]}, "hierarchical")]
    res = run_ratio_table(rows)
    assert [r.report is None for r in res] == [False, True, False]
    assert "ValueError" in res[1].error
    text = table_csv(res)
    lines = text.splitlines()
    assert lines[0] == "workload,strategy,n,total_error,svdb,ratio,sensitivity,status"
    assert lines[2].startswith("allrange(6),wavelet,") and "error:" in lines[2]
    assert text == table_csv(run_ratio_table(rows))


def test_sampled_curves_shape():
    pts = run_sampled_curves((32,), sizes=(10, 100), seed=1)
    assert [(p.mode, p.size) for p in pts] == [("uniform", 10), ("uniform", 100),
                                               ("biased", 10), ("biased", 100)]
    assert curves_csv(pts).splitlines()[0] == "workload,mode,size,seed,svdb,ratio"


def test_thread_count(monkeypatch):
    monkeypatch.setenv("MATMECH_THREADS", "3")
    assert thread_count() == 3


# ---------------------------------------------------------------------- CLI

def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_bound(capsys, tmp_path):
    code, out, _ = run(capsys, "bound", "--workload", '{"kind":"allpredicate","shape":[4]}')
    assert code == 0
    assert out.splitlines()[1] == "allpredicate(4),4,27.416407865"
    code, out, _ = run(capsys, "bound", "--workload", '{"kind":"allrange","shape":[8]}',
                       "--strategy", "hierarchical")
    assert code == 0 and out.startswith("workload,strategy,n,total_error")
    code, out, _ = run(capsys, "bound", "--workload", '{"kind":"allrange","shape":[8]}',
                       "--epsilon", "1", "--delta", "0.001")
    p = 2 * np.log(2000)
    assert float(out.splitlines()[1].split(",")[2]) == pytest.approx(p * 79.1723392050419, rel=1e-10)


def test_cli_bound_malformed(capsys):
    code, _, err = run(capsys, "bound", "--workload", "{oops")
    assert code == 2 and "DescriptorError" in err


def test_cli_design_identity(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, text, _ = run(capsys, "design", "--workload", '{"kind":"identity","shape":[5]}',
                        "--out", str(out))
    assert code == 0
    assert np.array_equal(read_matrix(out), np.eye(5))
    log = json.loads((tmp_path / "s.csv.log.json").read_text())
    assert log["levels_accepted"] == 0 and log["mode"] == "lsa"


def test_cli_design_modes(capsys, tmp_path):
    out = tmp_path / "g.csv"
    code, _, _ = run(capsys, "design", "--workload", '{"kind":"allrange","shape":[64]}',
                     "--generalize", "4", "--out", str(out))
    assert code == 0
    log = json.loads((tmp_path / "g.csv.log.json").read_text())
    assert log["mode"] == "generalized" and log["m"] == 4
    out = tmp_path / "sep.csv"
    code, _, _ = run(capsys, "design", "--workload", '{"kind":"marginals","shape":[8,8]}',
                     "--separate", "--out", str(out))
    assert code == 0
    log = json.loads((tmp_path / "sep.csv.log.json").read_text())
    assert log["mode"] == "separated" and read_matrix(out).shape[1] == 64


def test_cli_answer_student(capsys, tmp_path):
    write_matrix(tmp_path / "w.csv", STUDENT_W)
    write_vector(tmp_path / "x.csv", [2, 0, 0, 0, 0, 0, 0, 1])
    desc = json.dumps({"kind": "explicit", "shape": [4, 2], "params": {"path": str(tmp_path / "w.csv")}})
    out = tmp_path / "ans.csv"
    code, text, _ = run(capsys, "answer", "--workload", desc, "--data", str(tmp_path / "x.csv"),
                        "--epsilon", "1", "--delta", "0.001", "--zero-noise", "--out", str(out))
    assert code == 0 and "consistency check: pass" in text
    assert np.allclose(read_vector(out), [3, 2, 0, 2, -1])
    code, _, _ = run(capsys, "answer", "--workload", desc, "--data", str(tmp_path / "x.csv"),
                     "--epsilon", "1", "--delta", "0.001", "--seed", "4", "--out", str(out))
    a = read_vector(out)
    assert abs(a[1] - a[2] - a[3]) < 1e-6
    meta = json.loads((tmp_path / "ans.csv.log.json").read_text())
    assert meta["consistent"] and meta["seed"] == 4
    assert (tmp_path / "ans.xhat.csv").exists()


def test_cli_answer_missing_data(capsys, tmp_path):
    code, _, err = run(capsys, "answer", "--workload", '{"kind":"identity","shape":[3]}',
                       "--data", str(tmp_path / "nope.csv"), "--epsilon", "1")
    assert code == 2 and "not found" in err


def test_cli_experiment(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rows": [{"workload": {"kind": "allrange", "shape": [16]},
                                         "strategies": ["identity", "wavelet", "lsa"]}],
                               "curves": [{"shape": [16], "sizes": [10, 50]}]}))
    code, out, _ = run(capsys, "experiment", str(cfg), "--out", str(tmp_path / "o1"))
    assert code == 0
    code, _, _ = run(capsys, "experiment", str(cfg), "--out", str(tmp_path / "o2"))
    for name in ("ratios.csv", "curves.csv"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    assert len((tmp_path / "o1" / "ratios.csv").read_text().splitlines()) == 4
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    code, out, _ = run(capsys, "experiment", str(empty), "--out", str(tmp_path / "o3"))
    assert code == 0
    assert (tmp_path / "o3" / "ratios.csv").read_text() == \
        "workload,strategy,n,total_error,svdb,ratio,sensitivity,status\n"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rows": [{"workload": {"kind": "allrange", "shape": [6]},
                                         "strategy": "wavelet"}]}))
    code, _, _ = run(capsys, "experiment", str(bad), "--out", str(tmp_path / "o4"))
    assert code == 1


def test_cli_ingest(capsys, tmp_path):
    (tmp_path / "t.csv").write_text("gradyear,gender\n2011,M\n2011,M\n2014,F\n")
    (tmp_path / "p.json").write_text(json.dumps({"gradyear": [2011, 2012, 2013, 2014],
                                                 "gender": ["M", "F"]}))
    code, text, _ = run(capsys, "ingest", "--data", str(tmp_path / "t.csv"),
                        "--partition", str(tmp_path / "p.json"), "--out", str(tmp_path / "x.csv"))
    assert code == 0 and "3 records" in text
    assert np.array_equal(read_vector(tmp_path / "x.csv"), [2, 0, 0, 0, 0, 0, 0, 1])
