import os

import pytest

from nudgeplots.cli import main
from nudgeplots.render import FigureSpec, SchemaError, build_figure, render

DATA = os.path.join(os.path.dirname(__file__), "data")


def data_path(name):
    return os.path.join(DATA, name)


class TestFreeEvolution:
    def test_four_panels(self, tmp_path):
        spec = FigureSpec(
            kind="free-evolution",
            inputs=[data_path("trajectory.csv")],
            output=str(tmp_path / "fig.png"),
        )
        fig = build_figure(spec)
        assert len(fig.axes) == 4
        # one line per node in each panel
        n_nodes = 15
        for ax in fig.axes:
            assert len(ax.lines) == n_nodes

    def test_renders_file(self, tmp_path):
        out = tmp_path / "fig.png"
        spec = FigureSpec(
            kind="free-evolution",
            inputs=[data_path("trajectory.csv")],
            output=str(out),
        )
        assert render(spec) == str(out)
        assert out.stat().st_size > 0


class TestTradeoff:
    def test_alpha_panels_and_series(self, tmp_path):
        spec = FigureSpec(
            kind="tradeoff",
            inputs=[data_path("aggregate.csv")],
            output=str(tmp_path / "fig.png"),
        )
        fig = build_figure(spec)
        panels = [ax for ax in fig.axes if ax.get_visible() and ax.has_data()]
        assert len(panels) == 4  # one per imitation probability
        for ax in panels:
            labels = [line.get_label() for line in ax.lines]
            # 4 series: the no-control reference plus three policies
            series = [l for l in labels if not l.startswith("_")]
            assert len(series) == 4

    def test_shading_toggle(self, tmp_path):
        spec = FigureSpec(
            kind="tradeoff",
            inputs=[data_path("aggregate.csv")],
            output=str(tmp_path / "fig.png"),
            shading=False,
        )
        fig = build_figure(spec)
        for ax in fig.axes:
            assert not ax.collections  # no fill_between bands

    def test_renders_file(self, tmp_path):
        out = tmp_path / "fig.png"
        render(
            FigureSpec(
                kind="tradeoff",
                inputs=[data_path("aggregate.csv")],
                output=str(out),
            )
        )
        assert out.stat().st_size > 0


class TestTopology:
    def test_panels_and_scatter(self, tmp_path):
        spec = FigureSpec(
            kind="topology",
            inputs=[data_path("topology.csv")],
            output=str(tmp_path / "fig.png"),
        )
        fig = build_figure(spec)
        panels = [ax for ax in fig.axes if ax.has_data()]
        assert len(panels) == 2  # one per imitation probability
        for ax in panels:
            # a scatter overlay per clustering level
            assert len(ax.collections) == 2

    def test_renders_file(self, tmp_path):
        out = tmp_path / "fig.png"
        render(
            FigureSpec(
                kind="topology",
                inputs=[data_path("topology.csv")],
                output=str(out),
            )
        )
        assert out.stat().st_size > 0


class TestErrors:
    def test_empty_csv_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        spec = FigureSpec(
            kind="tradeoff", inputs=[str(empty)], output=str(tmp_path / "f.png")
        )
        with pytest.raises(SchemaError, match="empty"):
            build_figure(spec)

    def test_header_only_rejected(self, tmp_path):
        hdr = tmp_path / "hdr.csv"
        hdr.write_text("policy,alpha,r,gamma_mean,gamma_std,du_mean\n")
        spec = FigureSpec(
            kind="tradeoff", inputs=[str(hdr)], output=str(tmp_path / "f.png")
        )
        with pytest.raises(SchemaError, match="no data rows"):
            build_figure(spec)

    def test_missing_column_named(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("policy,alpha\nnone,0.25\n")
        spec = FigureSpec(
            kind="tradeoff", inputs=[str(bad)], output=str(tmp_path / "f.png")
        )
        with pytest.raises(SchemaError, match="gamma_mean"):
            build_figure(spec)

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown figure kind"):
            FigureSpec(kind="pie", inputs=["x.csv"], output="f.png")


class TestCli:
    def test_render_all_kinds(self, tmp_path):
        for kind, src in (
            ("free-evolution", "trajectory.csv"),
            ("tradeoff", "aggregate.csv"),
            ("topology", "topology.csv"),
        ):
            out = tmp_path / f"{kind}.png"
            code = main(
                ["render", "--kind", kind, "--in", data_path(src),
                 "--out", str(out)]
            )
            assert code == 0
            assert out.stat().st_size > 0

    def test_schema_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        code = main(
            ["render", "--kind", "topology", "--in", str(bad),
             "--out", str(tmp_path / "f.png")]
        )
        assert code == 1
        assert "gamma" in capsys.readouterr().err
