import json

import pytest

from affrec.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_demo_impossibility(capsys):
    code, out, _ = run(capsys, "demo-impossibility", "--dim", "64")
    lines = out.splitlines()
    assert code == 0 and json.loads(lines[0])["d"] == 64
    assert lines[1] == "loss 0.2928932188"


@pytest.mark.parametrize("argv", [
    ("demo-impossibility", "--dim", "1"),
    ("eval", "--users", "15", "--pois", "60", "--checkins", "900", "--ablation", "A9"),
    ("eval", "--users", "15", "--pois", "60", "--checkins", "900", "--alpha", "0"),
    ("recommend", "--user", "u00", "--context-json", "{bad"),
])
def test_usage_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and "error:" in err


def test_runtime_errors_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "ingest", str(tmp_path / "missing"))
    assert code == 1 and err.startswith("affrec ingest: error:")
    code, _, err = run(capsys, "cache-stats", "--url", "http://127.0.0.1:9", "--timeout", "0.5")
    assert code == 1 and "cannot reach" in err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["eval", "--split", "sideways"])
    assert e.value.code == 2


def test_synth_then_ingest_then_recommend(capsys, tmp_path):
    d = str(tmp_path / "corpus")
    assert run(capsys, "synth", "--users", "12", "--pois", "60", "--checkins", "600", "--out", d)[0] == 0
    code, out, _ = run(capsys, "ingest", d)
    stats = json.loads(out)
    assert code == 0 and stats["checkins"] == 600 and stats["pois"] == 60
    assert stats["checkins_after_10core"] <= 600
    ctx = json.dumps({"timestamp": 1704483000, "social_situation": "friends", "group_size": 4})
    code, out, _ = run(capsys, "recommend", "--data-dir", d, "--user", "u00", "--context-json", ctx,
                       "--n", "3", "--explain", "--compact")
    res = json.loads(out)
    assert code == 0 and len(res["ranked"]) == 3 and res["ranked"][0]["explanation"]
    assert res["context_type"] == "evening|weekday|friends|general"


def test_eval_json(capsys):
    code, out, _ = run(capsys, "eval", "--users", "15", "--pois", "60", "--checkins", "900", "--seed", "1",
                       "--baseline")
    res = json.loads(out)
    assert code == 0 and res["split_invariants"] == "ok" and res["config"] == "standard"
    assert set(res["metrics"]) >= {"recall@5", "recall@10", "ndcg@5", "ndcg@10"}
    assert res["baseline"]["method"] != res["method"]


def test_eval_table(capsys):
    code, out, _ = run(capsys, "eval", "--users", "15", "--pois", "60", "--checkins", "900", "--seed", "1",
                       "--split", "context-shift", "--format", "table")
    assert code == 0 and "recall@5" in out
