import math

import splitflow


def test_builtins_listed():
    names = splitflow.builtin_scenarios()
    assert set(names) == {
        "dsl-upload",
        "dsl-download",
        "wireless-eln",
        "intersite",
        "migration",
        "middlebox-crash",
    }


def test_header_budget():
    total = (
        splitflow.HEADER_BYTES_ENDPOINT
        + splitflow.HEADER_BYTES_FLOW
        + splitflow.HEADER_BYTES_ISOLATION
        + splitflow.HEADER_BYTES_FRAME
    )
    assert total == 52


def test_short_run_is_deterministic():
    a = splitflow.run_scenario("intersite", seed=7, duration_s=12)
    b = splitflow.run_scenario("intersite", seed=7, duration_s=12)
    assert a["csv"] == b["csv"]
    assert a["report"] == b["report"]
    c = splitflow.run_scenario("intersite", seed=8, duration_s=12)
    assert c["csv"] != a["csv"]


def test_samples_shape_and_progress():
    r = splitflow.run_scenario("intersite", seed=3, duration_s=12)
    rows = [s for s in r["samples"] if s["flow_id"] == "observed"]
    assert [round(s["t_s"], 3) for s in rows] == [2.5, 5.0, 7.5, 10.0]
    assert rows[-1]["cum_bytes"] > 0
    assert all(
        s["cum_bytes"] <= t["cum_bytes"] for s, t in zip(rows, rows[1:])
    ), "cum_bytes must be non-decreasing"
    flow = r["flows"]["observed"]
    assert flow["digest_checked"] and flow["digest_ok"]


def test_run_from_json_config():
    text = splitflow.scenario_json("middlebox-crash")
    r = splitflow.run_scenario(text, seed=5, duration_s=30)
    obs = r["flows"]["observed"]
    assert obs["completed"]
    assert obs["digest_ok"]


def test_compare_rows():
    rows = splitflow.compare("intersite", seed=2, duration_s=12)
    assert [r["variant"] for r in rows] == ["split", "e2e-newreno", "e2e-vegas"]
    for r in rows:
        assert r["final_cum_bytes"] > 0
        assert not math.isnan(r["mean_goodput_bps"])
