"""End-to-end tests of the command-line surface (run in-process)."""

import pytest

from anncur.cli import main
from anncur.index import load_index
from anncur.oracle import load_matrix


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def workdir(tmp_path):
    return tmp_path


def gen_default(workdir, **overrides):
    args = {"kind": "low_rank", "nq": 60, "ni": 150, "rank": 5, "seed": 7,
            "file": "scores.ancm"}
    args.update(overrides)
    code = run("gen", "--out", workdir,
               *sum((["--" + k, v] for k, v in args.items()), []))
    assert code == 0
    return workdir / str(args["file"])


class TestGen:
    def test_writes_matrix_and_sidecar(self, workdir):
        path = gen_default(workdir)
        m = load_matrix(path)
        assert m.shape == (60, 150)
        meta = (workdir / "scores.ancm.meta").read_text()
        assert "kind=low_rank" in meta and "seed=7" in meta

    def test_deterministic(self, workdir):
        p1 = gen_default(workdir, file="a.ancm")
        p2 = gen_default(workdir, file="b.ancm")
        assert p1.read_bytes() == p2.read_bytes()

    def test_rank_zero_usage_error(self, workdir, capsys):
        assert run("gen", "--out", workdir, "--rank", 0) == 2

    def test_expected_file_size(self, workdir):
        path = gen_default(workdir, nq=20, ni=31)
        assert path.stat().st_size == 4 + 4 + 8 + 8 + 20 * 31 * 8


class TestIndex:
    def test_build_cost_printed(self, workdir, capsys):
        gen_default(workdir)
        code = run("index", "--out", workdir, "--matrix", "scores.ancm",
                   "--kq", 12, "--ki", 10, "--seed", 3)
        assert code == 0
        out = capsys.readouterr().out
        assert "build_cost=1800" in out         # 12 anchors * 150 items
        index = load_index(workdir / "index.anci")
        assert index.k_q == 12 and index.k_i == 10

    def test_missing_matrix_is_runtime_error(self, workdir):
        assert run("index", "--out", workdir, "--matrix", "nope.ancm",
                   "--kq", 5, "--ki", 5) == 1

    def test_incompatible_anchor_counts(self, workdir):
        gen_default(workdir)
        assert run("index", "--out", workdir, "--matrix", "scores.ancm",
                   "--kq", 500, "--ki", 10) == 1

    def test_csv_matrix_input(self, workdir, capsys):
        (workdir / "grid.csv").write_text(
            "\n".join(",".join(str(float(q * 7 + i)) for i in range(6))
                      for q in range(5)) + "\n")
        assert run("index", "--out", workdir, "--matrix", "grid.csv",
                   "--kq", 2, "--ki", 3, "--seed", 1) == 0
        assert "build_cost=12" in capsys.readouterr().out

    def test_build_cost_at_reference_scale(self, workdir, capsys):
        # 500 anchor queries over 10031 items: cost printed exactly.
        gen_default(workdir, nq=520, ni=10031, rank=4, file="big.ancm")
        capsys.readouterr()
        assert run("index", "--out", workdir, "--matrix", "big.ancm",
                   "--kq", 500, "--ki", 100, "--seed", 2) == 0
        assert "build_cost=5015500" in capsys.readouterr().out


class TestQuery:
    def prepare(self, workdir):
        gen_default(workdir)
        run("index", "--out", workdir, "--matrix", "scores.ancm",
            "--kq", 12, "--ki", 10, "--seed", 3)

    def test_csv_rows(self, workdir, capsys):
        self.prepare(workdir)
        capsys.readouterr()
        assert run("query", "--out", workdir, "--matrix", "scores.ancm",
                   "--index", "index.anci", "--query", 4, "--kr", 6) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == ("query_id,rank,item_id,approx_score,exact_score,"
                            "embed_calls,rerank_calls")
        assert len(lines) == 7
        first = lines[1].split(",")
        assert first[0] == "4" and first[1] == "0"
        assert first[4] == ""                  # no exact score without rerank
        assert first[5] == "10" and first[6] == "0"

    def test_rerank_costs_and_scores(self, workdir, capsys):
        self.prepare(workdir)
        capsys.readouterr()
        assert run("query", "--out", workdir, "--matrix", "scores.ancm",
                   "--index", "index.anci", "--query", 4, "--kr", 20,
                   "--rerank", "--k", 5) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6
        for line in lines[1:]:
            parts = line.split(",")
            assert parts[4] != ""
            assert parts[5] == "10" and parts[6] == "20"

    def test_prefix_anchor_count_on_loaded_index(self, workdir, capsys):
        self.prepare(workdir)
        capsys.readouterr()
        assert run("query", "--out", workdir, "--matrix", "scores.ancm",
                   "--index", "index.anci", "--query", 4, "--kr", 6,
                   "--ki", 7) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[1].split(",")[5] == "7"

    def test_dimension_mismatch_reports_both_shapes(self, workdir, capsys):
        self.prepare(workdir)
        gen_default(workdir, ni=40, file="small.ancm")
        assert run("query", "--out", workdir, "--matrix", "small.ancm",
                   "--index", "index.anci", "--query", 0, "--kr", 5) == 1
        err = capsys.readouterr().err
        assert "150" in err and "40" in err


class TestEvalAndSweep:
    def test_eval_writes_report(self, workdir):
        code = run("eval", "--out", workdir, "--kind", "low_rank", "--nq", 60,
                   "--ni", 150, "--rank", 5, "--kq", 12, "--ki", 10,
                   "--k", "1,5", "--kr", "20,40", "--seed", 2)
        assert code == 0
        lines = (workdir / "eval_kr.csv").read_text().splitlines()
        assert len(lines) == 1 + 4
        assert (workdir / "eval_kr.cfg").exists()

    def test_budget_sweep_best_split_interior(self, workdir):
        # Default scenario, budget 200: the tuned anchor share must fall
        # well inside the budget (the observed optimum is 20-80%).
        code = run("sweep", "--out", workdir, "--mode", "budget",
                   "--budgets", "200", "--k", "10", "--kq", 100,
                   "--ki", 150, "--seed", 5, "--test-count", 200)
        assert code == 0
        lines = (workdir / "sweep_budget.csv").read_text().splitlines()
        row = lines[1].split(",")
        assert row[0] == "anncur"
        assert 0.2 * 200 <= int(row[3]) <= 0.8 * 200

    def test_grid_sweep(self, workdir):
        code = run("sweep", "--out", workdir, "--mode", "grid",
                   "--kind", "low_rank", "--nq", 50, "--ni", 120, "--rank", 4,
                   "--kq-list", "8,12", "--ki-list", "6,10",
                   "--metric", "frob_error", "--seed", 3)
        assert code == 0
        lines = (workdir / "sweep_grid.csv").read_text().splitlines()
        assert lines[0] == "k_q,k_i,metric,value_mean,value_stderr,n_seeds"
        assert len(lines) == 1 + 4


class TestCompare:
    ARGS = ("compare", "--kind", "featured", "--nq", 100, "--ni", 300,
            "--rank", 4, "--sigma", 0, "--kq", 40, "--ki", 25,
            "--budgets", "30,60", "--k", "1,10", "--seed", 9)

    def test_row_per_method_k_budget(self, workdir):
        assert run(*self.ARGS, "--out", workdir) == 0
        lines = (workdir / "compare_budget.csv").read_text().splitlines()
        methods = {"anncur", "fixed_item", "item_cur", "linear_de",
                   "precomputed"}
        seen = {tuple(line.split(",")[:3]) for line in lines[1:]}
        assert len(lines) - 1 == len(methods) * 2 * 2
        assert {m for m, _, _ in seen} == methods

    def test_byte_identical_across_workers(self, workdir):
        d1, d2 = workdir / "w1", workdir / "w2"
        assert run(*self.ARGS, "--out", d1, "--workers", 1) == 0
        assert run(*self.ARGS, "--out", d2, "--workers", 8) == 0
        assert ((d1 / "compare_budget.csv").read_bytes()
                == (d2 / "compare_budget.csv").read_bytes())

    def test_idempotent_rerun(self, workdir):
        d1, d2 = workdir / "r1", workdir / "r2"
        assert run(*self.ARGS, "--out", d1) == 0
        assert run(*self.ARGS, "--out", d2) == 0
        assert ((d1 / "compare_budget.csv").read_bytes()
                == (d2 / "compare_budget.csv").read_bytes())

    def test_workers_env_fallback(self, workdir, monkeypatch):
        monkeypatch.setenv("ANNCUR_WORKERS", "4")
        assert run(*self.ARGS, "--out", workdir) == 0
        cfg = (workdir / "compare_budget.cfg").read_text()
        assert "workers=4" in cfg
