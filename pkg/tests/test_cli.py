import io
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from nextsca.cli import DEFAULT_OUT, OUT_ENV, SUMMARY_HEADER, main, parse_config, validate_config
from nextsca.graph import load_schedule
from nextsca.metrics import CSV_HEADER, read_trace_csv

BUNDLED = ["localization_fig1", "localization_timevarying", "cartography_fig3"]

SMALL = """\
[experiment]
name = small

[problem]
app = localization
I = 6
N_T = 1
snr_db = none
seed = 3

[graph]
generator = ring
B = {B}
horizon = 8

[algorithm.next-pl]
tau = 10

[algorithm.dgradient]
alpha0 = 0.05
mu = 0.05

[run]
iterations = 40
repetitions = 2
seed = 5
cadence = 5
{extra}
"""


def small_config(tmp_path, B=1, extra="", name="small.ini"):
    path = tmp_path / name
    path.write_text(SMALL.format(B=B, extra=extra))
    return path


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_configs_validate(name, capsys):
    assert main(["validate", name]) == 0
    assert "ok" in capsys.readouterr().out


def test_bad_config_lists_every_problem_with_line_numbers(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(textwrap.dedent("""\
        [problem]
        app = localization
        I = ten

        [graph]
        generator = hypercube

        [algorithm.admm]
        alpha0 = 0.1

        [algorithm.next-pl]
        step_rule = rule2
        mu = 2.0

        [run]
        iterations = 10
        colour = blue
        """))
    assert main(["validate", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 3: bad value for 'I'" in err
    assert "line 6: generator must be one of" in err
    assert "unknown algorithm 'admm'" in err
    assert "line 11: [algorithm.next-pl]" in err and "μ" in err
    assert "line 17: unknown key 'colour'" in err


def test_missing_algorithms_and_missing_file(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("[problem]\napp = localization\n")
    assert any("algorithm list is empty" in d for d in validate_config(path))
    assert any("cannot read config" in d for d in validate_config(tmp_path / "nope.ini"))


def test_surrogate_that_the_app_lacks_is_a_config_error(tmp_path):
    path = tmp_path / "sur.ini"
    path.write_text(SMALL.format(B=1, extra="").replace("tau = 10", "tau = 10\nsurrogate = magic"))
    diags = validate_config(path)
    assert any("surrogate 'magic' is not available" in d for d in diags)


def test_run_writes_traces_and_summary(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    out = tmp_path / "out" / "small"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["dgradient_rep000.csv", "dgradient_rep001.csv", "instance_rep000.txt",
                     "instance_rep001.txt", "next-pl_rep000.csv", "next-pl_rep001.csv", "summary.csv"]
    with open(out / "next-pl_rep000.csv") as fh:
        assert fh.readline().strip() == ",".join(CSV_HEADER)
        fh.seek(0)
        rows = read_trace_csv(fh)
    assert [r.n for r in rows] == [0, 5, 10, 15, 20, 25, 30, 35, 40]
    assert rows[-1].comm == 80
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == ",".join(SUMMARY_HEADER)
    assert len(summary) == 5


def test_runs_are_byte_identical(tmp_path):
    cfg = small_config(tmp_path, B=2)
    for d in ("a", "b"):
        assert main(["run", str(cfg), "--out", str(tmp_path / d)]) == 0
    a, b = tmp_path / "a" / "small", tmp_path / "b" / "small"
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_parallel_repetitions_match_the_sequential_run(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "seq")]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "par"), "--threads", "2"]) == 0
    for f in (tmp_path / "seq" / "small").iterdir():
        assert f.read_bytes() == (tmp_path / "par" / "small" / f.name).read_bytes()


def test_overrides_for_reps_and_iterations(tmp_path):
    cfg = small_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path), "--reps", "1", "--iterations", "10"]) == 0
    lines = (tmp_path / "small" / "summary.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "10"


def test_output_directory_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = small_config(tmp_path, extra="output = from_config")
    plain = small_config(tmp_path, name="plain.ini")
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "from_env"))
    args = ["--reps", "1", "--iterations", "2"]
    assert main(["run", str(cfg), "--out", "from_flag", *args]) == 0
    assert main(["run", str(cfg), *args]) == 0
    assert main(["run", str(plain), *args]) == 0
    monkeypatch.delenv(OUT_ENV)
    assert main(["run", str(plain), *args]) == 0
    for d in ("from_flag", "from_config", "from_env", DEFAULT_OUT):
        assert (tmp_path / d / "small" / "summary.csv").is_file(), d


def test_graph_dump_round_trips(tmp_path, capsys):
    cfg = small_config(tmp_path, B=2)
    assert main(["graph-dump", str(cfg)]) == 0
    sched = load_schedule(io.StringIO(capsys.readouterr().out))
    expected = parse_config(cfg)
    problem = expected.build_problem(0)
    ref = expected.build_schedule(problem, 0)
    assert sched.window == 2 and sched.period == ref.period
    for n in range(ref.period):
        np.testing.assert_array_equal(sched.weight(n), ref.weight(n))


def test_graph_file_generator(tmp_path, capsys):
    main(["graph-dump", str(small_config(tmp_path, B=2))])
    (tmp_path / "sched.txt").write_text(capsys.readouterr().out)
    text = SMALL.format(B=1, extra="").replace("generator = ring", "generator = file\nfile = sched.txt")
    (tmp_path / "fromfile.ini").write_text(text)
    assert validate_config(tmp_path / "fromfile.ini") == []


def test_numerical_abort_exits_with_code_three(tmp_path, capsys):
    # an unconstrained least-squares problem diverges under a huge constant step
    path = tmp_path / "boom.ini"
    path.write_text(textwrap.dedent("""\
        [problem]
        app = sparse_ml
        I = 3

        [graph]
        generator = complete

        [algorithm.dgradient]
        step_rule = constant
        alpha0 = 1e3

        [run]
        iterations = 200
        repetitions = 1
        """))
    with np.errstate(all="ignore"):
        code = main(["run", str(path), "--out", str(tmp_path)])
    assert code == 3
    assert "numerical abort: algorithm dgradient, seed 0" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "nextsca.cli", "validate", "localization_fig1"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip().endswith("ok")
