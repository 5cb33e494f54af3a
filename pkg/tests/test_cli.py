import json
import warnings

import numpy as np
import pytest

from spillover.case_study import CaseStudyConfig, generate_case_study
from spillover.cli import main
from spillover.domain import DataError, ExposureMismatchWarning
from spillover.estimators import PropensityConfig, run_all_estimators
from spillover.io import load_dataset, read_report, write_dataset
from spillover.simulator import case_config, simulate_experiment


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--case", "II", "--seed", 4, "--out-dir", out) == 0
    return out


def write(path, text):
    path.write_text(text)
    return path


# round trips

def test_simulated_csvs_round_trip(sim_dir):
    ds, ingest = load_dataset(sim_dir / "players.csv", sim_dir / "sessions.csv", sim_dir / "exposures.csv")
    assert ds.equals(simulate_experiment(case_config("II", seed=4)))
    assert ingest.exposure_source == "sessions" and not ingest.mismatches


def test_case_study_round_trip_through_exposure_file(tmp_path):
    ds = generate_case_study(CaseStudyConfig(n_players=300, seed=1)).dataset
    write_dataset(ds, tmp_path)
    assert not (tmp_path / "sessions.csv").exists()
    back, ingest = load_dataset(tmp_path / "players.csv", exposures=tmp_path / "exposures.csv")
    assert back.equals(ds)
    assert ingest.exposure_source == "exposures"


def test_estimate_matches_in_memory_pipeline(sim_dir, tmp_path):
    code = run("estimate", "--players", sim_dir / "players.csv", "--sessions", sim_dir / "sessions.csv",
               "--baseline", "known-mu", "--truncate-at", 10, "--propensity", "linear", "--out-dir", tmp_path)
    assert code == 0
    report = read_report(tmp_path / "report.json")
    expected = run_all_estimators(simulate_experiment(case_config("II", seed=4)), 10, PropensityConfig("linear"))
    got = {row["estimator"]: row["overall"] for row in report["results"]["overall"]}
    assert got == {k: v.overall for k, v in expected.items()}
    assert report["config"]["truncate_at"] == 10 and report["seed"] == 0
    assert report["software"]["version"]
    assert (tmp_path / "propensity" / "propensity_proposed.json").exists()
    diag = json.loads((tmp_path / "propensity" / "diagnostics.json").read_text())
    assert set(diag) == {"proposed", "proposed-wo-cm"}


def test_reused_propensity_fits_reproduce_estimates(sim_dir, tmp_path):
    args = ["estimate", "--players", sim_dir / "players.csv", "--sessions", sim_dir / "sessions.csv",
            "--baseline", "known-mu", "--truncate-at", 10, "--propensity", "linear", "--format", "json"]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--load-propensity", tmp_path / "a" / "propensity", "--out-dir", tmp_path / "b") == 0
    a = read_report(tmp_path / "a" / "report.json")["results"]
    b = read_report(tmp_path / "b" / "report.json")["results"]
    assert a["overall"] == b["overall"] and a["levels"] == b["levels"]
    assert not (tmp_path / "a" / "levels.csv").exists()


# ingestion rules

PLAYERS = "id,z,y,y_pre,x\na,1,2.0,1.0,0.1\nb,0,75,1.0,0.2\nc,0,1.5,1.0,0.3\nd,1,3.0,1.0,0.4\ne,0,1.0,1.0,0.5\n"
SESSIONS = "session_id,p1,p2\ns1,a,b\ns2,c,e\ns3,d,c\n"


def test_outlier_dropped_and_counted(tmp_path):
    players = write(tmp_path / "players.csv", PLAYERS)
    sessions = write(tmp_path / "sessions.csv", SESSIONS)
    ds, ingest = load_dataset(players, sessions, outlier_cap=60)
    assert "b" not in ds.ids and ingest.outliers == ("b",)
    assert ingest.n_rows == 5 and ingest.n_kept == 4
    # b still contaminated a's game before removal; exposures are counted first
    assert dict(zip(ds.ids, ds.m.tolist())) == {"a": 1, "c": 1, "d": 1, "e": 0}
    assert ingest.session_table_dropped


def test_exposure_mismatch_warns_and_derived_wins(tmp_path):
    players = write(tmp_path / "players.csv", PLAYERS)
    sessions = write(tmp_path / "sessions.csv", SESSIONS)
    exposures = write(tmp_path / "exposures.csv", "id,m\na,1\nb,1\nc,4\nd,1\ne,0\n")
    with pytest.warns(ExposureMismatchWarning, match="c: 4->1"):
        ds, ingest = load_dataset(players, sessions, exposures)
    assert ingest.mismatches == (("c", 4, 1),)
    assert ds.m[ds.ids.index("c")] == 1


@pytest.mark.parametrize("text,match", [
    ("", "file is empty"),
    ("id,z,y,x\n", "no player rows"),
    ("id,z,y,x\na,1,2,0.1\nb,2,1,0.2\n", r"players.csv:3: column z must be 0 or 1"),
    ("id,z,y,x\na,1,2,0.1\nb,0,-1,0.2\n", r"players.csv:3: column y: negative"),
    ("id,z,y,x\na,1,2,0.1\na,0,1,0.2\n", r"players.csv:3: duplicate id 'a' \(first on line 2\)"),
    ("id,z,y,x\na,1,2\n", r"players.csv:2: expected 4 fields"),
    ("id,z,y\na,1,2\n", "no feature columns"),
    ("id,y,x\na,2,0.1\n", r"missing required columns \['z'\]"),
])
def test_malformed_players(tmp_path, text, match):
    players = write(tmp_path / "players.csv", text)
    exposures = write(tmp_path / "exposures.csv", "id,m\na,1\n")
    with pytest.raises(DataError, match=match):
        load_dataset(players, exposures=exposures)


@pytest.mark.parametrize("text,match", [
    ("session_id,p1,p2\ns1,a,zz\n", r"sessions.csv:2: session s1: unknown player ids \['zz'\]"),
    ("session_id,p1,p2\ns1,a,a\n", r"session s1: duplicate players \['a'\]"),
    ("session_id,p1,p2\ns1,a,b\ns1,c,d\n", "duplicate session id"),
])
def test_malformed_sessions(tmp_path, text, match):
    players = write(tmp_path / "players.csv", PLAYERS)
    sessions = write(tmp_path / "sessions.csv", text)
    with pytest.raises(DataError, match=match):
        load_dataset(players, sessions)


def test_exposure_file_must_cover_everyone(tmp_path):
    players = write(tmp_path / "players.csv", PLAYERS)
    with pytest.raises(DataError, match="no exposure count for 1 players"):
        load_dataset(players, exposures=write(tmp_path / "e.csv", "id,m\na,1\nb,1\nc,0\nd,2\n"))
    with pytest.raises(DataError, match="sessions file or an exposures file"):
        load_dataset(players)


def test_did_linear_needs_pre_period(tmp_path, sim_dir):
    with pytest.raises(DataError, match="y_pre"):
        load_dataset(sim_dir / "players.csv", sim_dir / "sessions.csv", require_y_pre=True)
    assert run("estimate", "--players", sim_dir / "players.csv", "--sessions", sim_dir / "sessions.csv",
               "--out-dir", tmp_path) == 3


# commands, determinism, exit codes

def test_simulate_is_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--case", "III", "--seed", 9, "--out-dir", tmp_path / d) == 0
    for name in ("players.csv", "sessions.csv", "exposures.csv", "simulate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture(scope="module")
def mc_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("mc")
    cfg = write(out / "cfg.yaml", "case: I\nreplicates: 3\nseed: 5\nn_players: 400\nn_games: 800\n")
    assert run("mc-eval", "--config", cfg, "--replicates", 2, "--out-dir", out / "run") == 0
    return out


def test_mc_eval_outputs(mc_dir):
    report = read_report(mc_dir / "run" / "report.json")
    assert report["config"]["replicates"] == 2  # the flag overrides the file
    assert report["config"]["n_players"] == 400
    lines = (mc_dir / "run" / "levels.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 11
    assert len((mc_dir / "run" / "overall.csv").read_text().splitlines()) == 5
    shares = report["results"]["group_shares"]
    assert sum(shares.values()) == pytest.approx(1.0)


def test_report_rerender_and_rerun_are_byte_identical(mc_dir, tmp_path):
    src = mc_dir / "run"
    assert run("report", "--input", src / "report.json", "--out-dir", tmp_path / "r") == 0
    assert run("mc-eval", "--config", src / "report.json", "--out-dir", tmp_path / "again") == 0
    for name in ("report.json", "levels.csv", "overall.csv"):
        assert (tmp_path / "r" / name).read_bytes() == (src / name).read_bytes()
        assert (tmp_path / "again" / name).read_bytes() == (src / name).read_bytes()


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["mc-eval", "--no-such-flag"])
    assert exc.value.code == 2
    assert run("estimate", "--players", tmp_path / "missing.csv") == 2
    assert run("estimate") == 2
    assert run("mc-eval", "--replicates", 0) == 2
    assert run("mc-eval", "--epsilon", 0.7, "--replicates", 1) == 2
    bad = write(tmp_path / "bad.yaml", "replicates: [1, 2\n")
    assert run("mc-eval", "--config", bad) == 2
    assert run("report", "--input", write(tmp_path / "x.json", "{}")) == 3
    blocker = write(tmp_path / "file", "")
    assert run("simulate", "--n-players", 50, "--n-games", 20, "--out-dir", blocker / "sub") == 4
    err = capsys.readouterr().err
    assert "configuration error" in err and "data error" in err


def test_case_study_cli_pipeline(tmp_path):
    assert run("simulate", "--dgp", "case-study", "--n-players", 1500, "--seed", 2, "--out-dir", tmp_path / "d") == 0
    code = run("estimate", "--players", tmp_path / "d" / "players.csv", "--exposures", tmp_path / "d" / "exposures.csv",
               "--out-dir", tmp_path / "e")
    assert code == 0
    report = read_report(tmp_path / "e" / "report.json")
    res = report["results"]
    assert res["ingestion"]["n_outliers"] > 0
    assert report["config"]["truncate_at"] == 21 and report["config"]["outlier_cap"] == 60.0
    assert [r["estimator"] for r in res["overall"]] == ["naive", "naive-wo-cm", "proposed", "proposed-wo-cm"]
    assert res["baseline"]["mode"] == "did-linear"
