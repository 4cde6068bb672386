from pathlib import Path

import app_gateway
import app_map
from lib.sim.synthetic import BrightBlock, SeriesSpec, SyntheticStudySpec, gen_synthetic_study

CONFIGS = Path(__file__).parents[1] / "configs"


def test_validate_shipped_gateway_config(app_settings, capsys):
    code = app_gateway.main(["--app-config", str(app_settings), "validate", "--rules", str(CONFIGS / "gateway.conf")])

    assert code == 0
    assert "destinations" in capsys.readouterr().out


def test_validate_reports_syntax_error(app_settings, tmp_path, capsys):
    rules = tmp_path / "rules.conf"
    rules.write_text("[rule broken\nwhen = true\n")

    assert app_gateway.main(["--app-config", str(app_settings), "validate", "--rules", str(rules)]) == 1
    assert "line 1" in capsys.readouterr().out


def test_validate_missing_file(app_settings, tmp_path):
    assert app_gateway.main(["--app-config", str(app_settings), "validate", "--rules", str(tmp_path / "none")]) == 1


def test_map_run_writes_outputs(app_settings, tmp_path, capsys):
    block = BrightBlock(y=2, x=5, height=2)
    gen_synthetic_study(SyntheticStudySpec(seed=42, series=(SeriesSpec(slices=5, bright=block),)), tmp_path / "in")

    code = app_map.main(
        [
            "--app-config", str(app_settings),
            "run",
            "--graph", str(CONFIGS / "chain.graph"),
            "--input", str(tmp_path / "in"),
            "--output", str(tmp_path / "out"),
            "--seed", "1",
        ]
    )

    assert code == 0
    assert (tmp_path / "out" / "manifest.txt").exists()
    assert sorted(p.name[:2] for p in (tmp_path / "out").glob("*.dcm")) == ["SC", "SR"]
    assert "Running 6 operators" in capsys.readouterr().out


def test_map_run_fails_on_empty_input(app_settings, tmp_path):
    (tmp_path / "in").mkdir()
    code = app_map.main(
        [
            "--app-config", str(app_settings),
            "run",
            "--graph", str(CONFIGS / "chain.graph"),
            "--input", str(tmp_path / "in"),
            "--output", str(tmp_path / "out"),
        ]
    )
    assert code == 1
