from __future__ import annotations

import math
from pathlib import Path

import pytest

from app.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from app.models.config import (
    DEFAULT_ANCHORS,
    default_config,
    dump_config,
    load_config,
    parse_config_text,
    validate_config,
)
from app.services.errors import ConfigError
from app.services.experiments import (
    FIG4_LQ_DB,
    FIG4_RADII_M,
    FIG_LQ_DB,
    ROC_COLUMNS,
    SWEEP_COLUMNS,
    figure_table,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

BASE = """
num_anchors = 3
anchors = [[0.0, 500.0], [-500.0, -500.0], [500.0, -500.0], [-500.0, 500.0], [0.0, -500.0]]
trials = 4000
seed = 99
{top}

[channel.probe]
bandwidth_hz = 10000.0
symbols = 8

[attacker]
kind = "fixed"
position = [1.0, 1.0]
{tables}
"""


@pytest.fixture(autouse=True)
def _quiet(monkeypatch):
    monkeypatch.setattr("app.services.notifier.settings.telegram_bot_token", "")
    monkeypatch.setattr("app.services.simulator.settings.chunk_size", 2000)
    monkeypatch.setattr("app.services.experiments.settings.analytic_points", 4)


def _config_file(tmp_path: Path, top: str = "", tables: str = "", name: str = "exp.toml") -> Path:
    p = tmp_path / name
    p.write_text(BASE.format(top=top, tables=tables), encoding="utf-8")
    return p


def _header(path: Path) -> str:
    return path.read_text(encoding="utf-8").splitlines()[0]


def test_default_config_matches_reference_setup():
    cfg = default_config()
    assert cfg.anchors == DEFAULT_ANCHORS
    assert cfg.active_anchors() == DEFAULT_ANCHORS[:3]
    assert cfg.channel.spreading == 1.5
    assert cfg.channel.sound_speed == 1500.0
    assert cfg.channel.freq_khz == 22.0
    assert cfg.threshold == 1e6
    params = cfg.channel.to_params()
    assert params.processing_gain == pytest.approx(3.158e10, rel=1e-3)
    assert default_config(5).active_anchors() == DEFAULT_ANCHORS
    with pytest.raises(ConfigError):
        default_config(6)


def test_shipped_default_toml_equals_default_config():
    assert load_config(CONFIG_DIR / "default.toml").model_dump() == default_config().model_dump()


@pytest.mark.parametrize("figure", ["fig2", "fig3", "fig4", "fig5"])
def test_shipped_figure_configs_validate(figure):
    cfg = load_config(CONFIG_DIR / f"{figure}.toml")
    assert cfg.figure == figure
    cfg.build_scenario()


def test_config_round_trips_through_json():
    cfg = validate_config(
        {**default_config().model_dump(), "sweep": {"axis": "threshold", "values": [1e5, 1e6]}}
    )
    assert parse_config_text(dump_config(cfg), "json").model_dump() == cfg.model_dump()


def test_validation_reports_every_problem_with_location():
    with pytest.raises(ConfigError) as exc:
        validate_config({"trials": -5, "attacker": {"kind": "fixed"}, "channel": {"freq_khz": 0}})
    locs = {loc for loc, _ in exc.value.problems}
    assert "trials" in locs
    assert "channel.freq_khz" in locs
    assert any(loc.startswith("attacker") for loc in locs)


def test_gain_sources_are_mutually_exclusive():
    with pytest.raises(ConfigError):
        validate_config({"channel": {"processing_gain": 2.0, "probe": {"bandwidth_hz": 1e4, "symbols": 8}}})


def test_roc_grid_from_range_and_list():
    cfg = validate_config({"roc": {"start": 1.0, "stop": 100.0, "num": 3, "include_zero": True}})
    assert cfg.roc.grid() == pytest.approx([0.0, 1.0, 10.0, 100.0])
    cfg = validate_config({"roc": {"thresholds": [5.0, 1.0, 5.0]}})
    assert cfg.roc.grid() == [1.0, 5.0]
    with pytest.raises(ConfigError):
        validate_config({"roc": {"start": 10.0, "stop": 1.0}})


def test_unparseable_document_is_a_config_error():
    with pytest.raises(ConfigError):
        parse_config_text("trials = = 3", "toml")
    with pytest.raises(ConfigError):
        parse_config_text("[1, 2]", "json")


def test_cli_negative_trials_exits_with_config_error(tmp_path, capsys):
    code = main(["simulate", "--config", str(_config_file(tmp_path)), "--trials", "-5"])
    assert code == EXIT_CONFIG
    assert "config error: trials" in capsys.readouterr().err


def test_cli_misspelled_key_is_rejected(tmp_path, capsys):
    path = _config_file(tmp_path, tables="")
    path.write_text(path.read_text(encoding="utf-8") + "radus = 2.0\n", encoding="utf-8")
    assert main(["analytic", "--config", str(path)]) == EXIT_CONFIG
    assert "attacker.radus" in capsys.readouterr().err


def test_cli_missing_config_file_is_io_error(tmp_path):
    assert main(["analytic", "--config", str(tmp_path / "nope.toml")]) == EXIT_IO


def test_cli_legitimate_on_anchor_is_numerical_error(tmp_path, capsys):
    path = _config_file(tmp_path, top="legitimate = [0.0, 500.0]")
    assert main(["analytic", "--config", str(path)]) == EXIT_NUMERICAL
    assert "numerical error" in capsys.readouterr().err


def test_cli_analytic_writes_sweep_row(tmp_path, capsys):
    out = tmp_path / "res" / "analytic.csv"
    assert main(["analytic", "--config", str(_config_file(tmp_path)), "--out", str(out)]) == EXIT_OK
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 2
    assert "FAR analytic=" in capsys.readouterr().out


def test_cli_simulate_is_byte_identical_across_runs_and_workers(tmp_path):
    cfg = str(_config_file(tmp_path))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(a), "--workers", "1"]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", str(b), "--workers", "3"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    assert main(["simulate", "--config", cfg, "--out", str(c), "--seed", "100"]) == EXIT_OK
    assert c.read_bytes() != a.read_bytes()


def test_cli_roc_writes_both_curves(tmp_path):
    path = _config_file(tmp_path, tables="[roc]\nthresholds = [0.0, 1e5, 1e6, 1e7]\n")
    out = tmp_path / "roc.csv"
    assert main(["roc", "--config", str(path), "--out", str(out)]) == EXIT_OK
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(ROC_COLUMNS)
    assert len(lines) == 1 + 2 * 4
    assert {line.split(",")[3] for line in lines[1:]} == {"analytic", "empirical"}


def test_cli_sweep_needs_sweep_table(tmp_path, capsys):
    assert main(["sweep", "--config", str(_config_file(tmp_path))]) == EXIT_CONFIG
    assert "config error: sweep" in capsys.readouterr().err


def test_cli_sweep_over_link_quality(tmp_path):
    path = _config_file(
        tmp_path, tables='[sweep]\naxis = "link_quality_db"\nvalues = [0.0, 20.0]\n'
    )
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(path), "--out", str(out)]) == EXIT_OK
    rows = out.read_text(encoding="utf-8").splitlines()[1:]
    assert [r.split(",")[1] for r in rows] == ["0", "20"]


def test_cli_gap_report(tmp_path):
    path = _config_file(tmp_path, tables='[sweep]\naxis = "link_quality_db"\nvalues = [10.0]\n')
    out = tmp_path / "gap.csv"
    assert main(["gap", "--config", str(path), "--out", str(out)]) == EXIT_OK
    assert "far_unprojected" in _header(out)


def test_cli_fig5_montecarlo_writes_csv_and_gnuplot_stub(tmp_path):
    path = _config_file(
        tmp_path,
        top='mode = "montecarlo"',
        tables="[roc]\nthresholds = [0.0, 1e6, 1e12]\n",
    )
    out = tmp_path / "fig5.csv"
    assert main(["figure", "fig5", "--config", str(path), "--trials", "1000", "--out", str(out)]) == EXIT_OK
    assert _header(out).startswith("location,num_anchors,lq_db")
    # 2 locations x 2 anchor counts x 2 link qualities x 3 thresholds
    assert len(out.read_text(encoding="utf-8").splitlines()) == 1 + 24
    stub = out.with_suffix(".gp")
    assert "fig5.csv" in stub.read_text(encoding="utf-8")


def test_fig2_table_is_complete_with_a_fine_attacker_grid(monkeypatch):
    monkeypatch.setattr("app.services.experiments.settings.analytic_points", 8)
    cfg = validate_config({**default_config().model_dump(), "trials": 2000})
    table = figure_table(cfg, "fig2")
    assert [r[0] for r in table.rows] == list(FIG_LQ_DB)
    for row in table.rows:
        assert all(math.isfinite(v) for v in row[:5])
        assert 0.0 <= row[2] <= 1.0
    far = [r[2] for r in table.rows]
    assert all(b <= a for a, b in zip(far, far[1:]))


def test_fig4_analytic_mode_fills_every_radius():
    cfg = validate_config({**default_config().model_dump(), "mode": "analytic", "trials": 1000})
    table = figure_table(cfg, "fig4")
    assert len(table.rows) == len(FIG4_RADII_M) * len(FIG4_LQ_DB)
    for radius, _, _, mdr, empirical, *_ in table.rows:
        assert 0.0 <= mdr <= 1.0
        assert math.isnan(empirical)
    assert [r[3] for r in table.rows if r[0] == max(FIG4_RADII_M)] == pytest.approx(
        [0.0] * len(FIG4_LQ_DB), abs=1e-6
    )
