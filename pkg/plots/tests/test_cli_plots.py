import pytest
from click.testing import CliRunner

from trimlab_plots.cli import main

from test_figure import write_rows_csv


@pytest.fixture
def runner():
    return CliRunner()


class TestPlotConvergence:
    def test_renders_png(self, runner, tmp_path):
        csv = write_rows_csv(tmp_path / "rows.csv")
        out = tmp_path / "fig.png"
        result = runner.invoke(
            main, ["--csv", str(csv), "--out", str(out), "--ref", "1.0"]
        )
        assert result.exit_code == 0, result.output
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_column_fails_loudly(self, runner, tmp_path):
        csv = tmp_path / "rows.csv"
        csv.write_text("seed,n,other\n1,100,2.0\n")
        out = tmp_path / "fig.png"
        result = runner.invoke(main, ["--csv", str(csv), "--out", str(out)])
        assert result.exit_code != 0
        assert "missing column 'ratio_trim'" in result.output
        assert not out.exists()

    def test_missing_file_rejected(self, runner, tmp_path):
        result = runner.invoke(
            main, ["--csv", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "fig.png")]
        )
        assert result.exit_code != 0


class TestHarnessIntegration:
    def test_renders_real_experiment_csv(self, runner, tmp_path):
        """End-to-end over the actual CSV contract of the primary package,
        skipped when the primary package is not installed."""
        harness = pytest.importorskip("trimlab.harness")
        cfg = {
            "name": "plot-smoke",
            "map": "doubling",
            "observable": {"kind": "pareto", "alpha": 0.5},
            "orbitMode": "exactBits",
            "grid": {"checkpoints": [100, 1000, 10000]},
            "seeds": {"count": 4, "base": 11},
            "plan": {"source": "fixedB", "b": "ceil(log(n)**2)",
                     "norming": "n**2/b", "truncation": "none"},
        }
        res = harness.run_experiment(harness.ExperimentSpec.from_json(cfg))
        csv = tmp_path / "rows.csv"
        csv.write_text(harness.rows_to_csv(res.rows))
        out = tmp_path / "fig.png"
        result = runner.invoke(main, ["--csv", str(csv), "--out", str(out)])
        assert result.exit_code == 0, result.output

        from trimlab_plots import FigureSpec, build_figure
        fig = build_figure(FigureSpec(csv, out))
        seed_lines = [l for l in fig.axes[0].lines if l.get_gid() == "seed"]
        median = [l for l in fig.axes[0].lines if l.get_gid() == "median"]
        assert len(seed_lines) + len(median) == 4 + 1
