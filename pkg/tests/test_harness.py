import math
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kaiesprit.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    ResultRow,
    ResultTable,
    emit_csv,
    emit_plot,
    format_csv,
    load_config,
    read_csv,
    run_experiment,
    run_sweep,
)

SVG = "{http://www.w3.org/2000/svg}"


def small_config(**kw):
    base = dict(snr_start_db=0.0, snr_stop_db=10.0, snr_step_db=5.0, trials=3, base_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def curve_vertices(svg_path):
    """Map ``curve-*`` group ids to the vertex counts of their line paths."""
    root = ET.parse(svg_path).getroot()
    out = {}
    for g in root.iter(f"{SVG}g"):
        gid = g.get("id", "")
        if gid.startswith("curve-"):
            paths = g.findall(f"{SVG}path")  # markers live in nested <defs>
            out.setdefault(gid, []).extend(
                len(re.findall(r"[ML]", p.get("d", ""))) for p in paths)
    return out


def test_noiseless_sweep_is_exact():
    table = run_experiment(small_config(trials=1, noise_variance=1e-12))
    assert len(table) == 3 * 3
    for row in table.rows:
        assert row.rmse_deg < 1e-4
        assert row.prob_resolution == 1.0


def test_mean_mu_opt_only_for_sweeping_estimators():
    table = run_experiment(small_config(trials=2, snr_start_db=10.0))
    assert np.all(np.isnan(table.column("esprit", "mean_mu_opt")))
    mu = table.column("two_step_kai", "mean_mu_opt")
    assert np.all((mu >= 0) & (mu <= 1))


def test_csv_deterministic_and_roundtrip(tmp_path):
    cfg = small_config()
    a = format_csv(run_experiment(cfg))
    b = format_csv(run_experiment(cfg))
    assert a == b
    assert a.splitlines()[0] == ",".join(CSV_HEADER)
    assert "\r" not in a
    path = emit_csv(run_experiment(cfg), tmp_path / "r.csv")
    back = read_csv(path)
    assert format_csv(back) == a


def test_csv_empty_and_single_row():
    assert format_csv(ResultTable()) == ",".join(CSV_HEADER) + "\n"
    row = ResultRow(0.0, "esprit", 0.5, 20 * math.log10(0.5), 1.0, math.nan, 0.1)
    lines = format_csv(ResultTable([row])).splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("0.000000,esprit,0.500000,")


def test_plot_curves_and_crb(tmp_path):
    table = run_experiment(small_config())
    path = emit_plot(table, "rmse_db_with_crb", tmp_path / "f.svg")
    curves = curve_vertices(path)
    assert set(curves) == {"curve-esprit", "curve-iesprit", "curve-two_step_kai", "curve-crb"}
    for gid, counts in curves.items():
        assert counts == [3], gid
    assert path.read_text().count('id="curve-crb"') == 1


def test_plot_resolution_axis_and_determinism(tmp_path):
    table = run_experiment(small_config())
    p1 = emit_plot(table, "resolution", tmp_path / "a.svg")
    p2 = emit_plot(table, "resolution", tmp_path / "b.svg")
    assert p1.read_bytes() == p2.read_bytes()
    assert "curve-crb" not in p1.read_text()
    assert set(curve_vertices(p1)) == {"curve-esprit", "curve-iesprit", "curve-two_step_kai"}


def test_plot_resolution_ylim_is_unit_interval(tmp_path, monkeypatch):
    from matplotlib.figure import Figure

    seen = []
    orig = Figure.savefig
    monkeypatch.setattr(Figure, "savefig",
                        lambda fig, *a, **k: seen.append(fig.axes[0].get_ylim()) or orig(fig, *a, **k))
    emit_plot(run_experiment(small_config(trials=1)), "resolution", tmp_path / "r.svg")
    assert seen == [(0.0, 1.0)]


def test_plot_rejects_unknown_kind_and_empty(tmp_path):
    table = run_experiment(small_config(trials=1))
    with pytest.raises(ValueError):
        emit_plot(table, "histogram", tmp_path / "x.svg")
    with pytest.raises(ValueError):
        emit_plot(ResultTable(), "rmse", tmp_path / "x.svg")


def test_run_sweep_writes_outputs(tmp_path):
    written = run_sweep(small_config(name="t", plots=("resolution", "rmse")), tmp_path)
    assert (tmp_path / "t.csv").is_file()
    assert (tmp_path / "t.svg").is_file()
    assert (tmp_path / "t_rmse.svg").is_file()
    assert len(written["table"]) == 9


@pytest.mark.parametrize("bad", [
    dict(known_doas_deg=(18.0,)),
    dict(doas_deg=(15.0, 13.0)),
    dict(increment=0.0),
    dict(increment=1.5),
    dict(trials=0),
    dict(estimators=("music",)),
    dict(plots=("pie",)),
    dict(rmse_sources="some"),
    dict(num_sensors=4),
    dict(spacing=0.7),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        small_config(**bad)


def test_load_bundled_configs():
    for name, plot in (("fig1", "resolution"), ("fig2", "rmse"), ("fig3", "rmse_db_with_crb")):
        cfg = load_config(f"paper_{name}.toml")
        assert cfg.name == name and cfg.plots == (plot,)
        assert cfg.num_sensors == 40 and cfg.num_snapshots == 10 and cfg.trials == 100
        assert cfg.doas_deg == (13.0, 15.0, 17.0, 19.0)
        assert cfg.known_indices == (2, 3)
    assert load_config("paper_fig1.toml", trials=5).trials == 5


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[array]\nnum_sensors = 40\nfoo = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("not toml [[[")
    with pytest.raises(ConfigError):
        load_config(bad)
