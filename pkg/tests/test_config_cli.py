import csv
import json
from pathlib import Path

import pytest

from qelab import cli
from qelab.config import ConfigError, RunConfig, load_config, parse_config

REPO = Path(__file__).resolve().parents[1]

# every equation tag exercised by an acceptance criterion or an operation contract
IN_SCOPE_TAGS = {
    "1.15'", "0.17'", "c4.", "b12", "hc6", "hc1", "cb5'", "cb23", "cb24", "b7", "b.14",
    "m3.8", "m3.9", "m3.10", "b15", "b.18", "b.19.", "b23", "b23.", "m3.26", "m3.36.", "b26",
    "m4.6.", "m4.7'.", "m4.17", "T6.3",
}
OUT_OF_SCOPE_TAGS = {"mt1.1", "mt1.4", "Wilk", "P4.6", "p4.7", "Dol", "Juli", "Anosov"}

SMALL = ("suite = fiber\nfiber_p_list = 8, 16\ncommutator_p_list = 8, 16\n"
         "kostant_p_max = 3\ndim_p_max = 8\n")


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(cfg.dumps()) == cfg
    assert len(cfg.hash()) == 12


def test_shipped_config_is_the_default():
    assert load_config(REPO / "configs" / "acceptance.cfg") == RunConfig()


def test_comments_and_lists_parse():
    cfg = parse_config("# header\nseed = 5  # trailing\nmixed_p_list = 4, 8,16\n")
    assert cfg.seed == 5
    assert cfg.mixed_p_list == (4, 8, 16)


@pytest.mark.parametrize("text, fragment", [
    ("colour = red\n", "unknown key"),
    ("seed = 1\nseed = 2\n", "duplicate key"),
    ("seed = many\n", "cannot parse"),
    ("seed\n", "expected 'key = value'"),
    ("mixed_p_list = 8, -16\n", "positive"),
    ("mixed_p_list = \n", "non-empty"),
    ("suite = everything\n", "unknown suite"),
    ("threads = 0\n", "threads"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_parse_error_names_the_line():
    with pytest.raises(ConfigError, match=r"cfg:3:"):
        parse_config("seed = 1\n\ncolour = red\n", source="cfg")


def test_unknown_suite_exits_2(capsys, tmp_path):
    assert cli.main(["run", "--suite", "bogus", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_concordance_entries(capsys):
    assert cli.main(["concordance"]) == 0
    text = capsys.readouterr().out
    assert "(cb24)" in text and "(b23.)" in text
    inside, outside = text.split("Out of scope")
    for tag in OUT_OF_SCOPE_TAGS:
        assert f"({tag})" in outside and f"({tag})" not in inside


def test_every_in_scope_tag_is_mapped():
    mapped = {t for t, _, op in cli.CONCORDANCE if op}
    assert IN_SCOPE_TAGS <= mapped, sorted(IN_SCOPE_TAGS - mapped)
    assert not mapped & {t for t, _ in cli.OUT_OF_SCOPE}


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    cfg = base / "small.cfg"
    cfg.write_text(SMALL)
    codes = []
    for name, threads in (("a", "1"), ("b", "2")):
        codes.append(cli.main(["run", "--config", str(cfg), "--out", str(base / name),
                               "--seed", "11", "--threads", threads]))
    return base, codes


def test_same_config_and_seed_give_identical_csv(two_runs):
    base, _ = two_runs
    a = (base / "a" / "report.csv").read_bytes()
    b = (base / "b" / "report.csv").read_bytes()
    assert a == b


def test_report_schema(two_runs):
    base, codes = two_runs
    text = (base / "a" / "report.csv").read_text().splitlines()
    assert text[0] == f"# {cli.CSV_VERSION}"
    rows = list(csv.DictReader(text[1:]))
    assert tuple(rows[0].keys()) == cli.CSV_COLUMNS
    assert {r["criterion"] for r in rows} == {"1", "2", "3", "4"}
    h = parse_config(SMALL).with_overrides(seed=11).hash()
    assert all(r["config_hash"] == h and r["seed"] == "11" for r in rows)
    ok = all(r["passed"] == "1" for r in rows)
    assert codes[0] == (0 if ok else 1)


def test_summary_counts_and_slopes(two_runs):
    base, _ = two_runs
    summary = json.loads((base / "a" / "summary.json").read_text())
    rows = list(csv.DictReader((base / "a" / "report.csv").read_text().splitlines()[1:]))
    fiber = summary["suites"]["fiber"]
    assert fiber["pass"] + fiber["fail"] == len(rows)
    assert fiber["slopes"]
    for entry in fiber["slopes"].values():
        if "ci95" in entry:
            lo, hi = entry["ci95"]
            assert lo <= entry["slope"] <= hi
