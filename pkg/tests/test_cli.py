import json
import os

import pytest

from gridmarket.cli import (
    EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main, read_config,
)

CASES = os.path.join(os.path.dirname(__file__), "..", "cases")


def case(name):
    return os.path.join(CASES, name)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_read_config(tmp_path):
    p = write(tmp_path, "a.cfg", "# demo\ncase = net.txt\nseed=3\n\n")
    cfg = read_config(p)
    assert cfg == {"case": "net.txt", "seed": "3"}


def test_read_config_rejects_garbage(tmp_path):
    from gridmarket.cli import ConfigError
    p = write(tmp_path, "b.cfg", "no equals sign here\n")
    with pytest.raises(ConfigError):
        read_config(p)


def test_validate_ok(capsys):
    assert main(["validate", case("case34.txt")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "34 buses, 33 lines" in out
    assert "radial: yes" in out


def test_validate_rejects_cycle(tmp_path, capsys):
    p = write(tmp_path, "cyc.txt",
              "bus 0\nbus 1\nbus 2\n"
              "line a 0 1 10\nline b 1 2 10\nline c 2 0 10\n")
    assert main(["validate", p]) == EXIT_RUNTIME
    assert "invalid case" in capsys.readouterr().err


def test_validate_rejects_disconnected(tmp_path, capsys):
    p = write(tmp_path, "disc.txt", "bus 0\nbus 1\nbus 2\nline a 0 1 10\n")
    assert main(["validate", p]) == EXIT_RUNTIME


def test_clear_subcommand(capsys):
    rc = main(["clear", "--case", case("case3.txt"),
               "--bids", case("bids_demo.txt")])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("agent,bus,side,q_kw,price_c_per_kwh")
    assert "total_surplus=" in out


def test_clear_writes_jsonl(tmp_path, capsys):
    out_file = str(tmp_path / "dispatch.jsonl")
    rc = main(["clear", "--case", case("case3.txt"),
               "--bids", case("bids_demo.txt"), "--out", out_file])
    assert rc == EXIT_OK
    lines = open(out_file).read().splitlines()
    assert lines
    for line in lines:
        json.loads(line)


def test_clear_bad_bids_file(tmp_path, capsys):
    p = write(tmp_path, "bad.txt", "bid only three fields\n")
    rc = main(["clear", "--case", case("case3.txt"), "--bids", p])
    assert rc == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_dlmp_subcommand(capsys):
    rc = main(["dlmp", "--case", case("case34.txt"),
               "--offers", case("offers34.txt"), "--lmp-source", "4.3"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "bus,dlmp,P_g,P_d"
    rows = {ln.split(",")[0]: ln.split(",") for ln in out.splitlines()[1:]}
    assert len(rows) == 34
    # the pocket behind the 25 kW line prices above the feeder
    assert float(rows["19"][1]) > float(rows["0"][1])


def test_dlmp_infeasible_baseline(tmp_path, capsys):
    net = write(tmp_path, "net.txt",
                "bus 0\nbus 1\nline a 0 1 3\n")
    offers = write(tmp_path, "off.txt", "dr 1 10\n")
    rc = main(["dlmp", "--case", net, "--offers", offers])
    assert rc == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "infeasible baseline" in err
    assert "a" in err


def test_run_missing_keys_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "r.cfg", "mechanism=clearing\n")
    assert main(["run", "--config", cfg]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_run_unknown_mechanism(tmp_path, capsys):
    cfg = write(tmp_path, "r.cfg",
                f"case={case('case3.txt')}\nmechanism=auction\n")
    assert main(["run", "--config", cfg]) == EXIT_CONFIG


def test_run_bad_int_is_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "r.cfg",
                f"case={case('case3.txt')}\nmechanism=clearing\n"
                "grid_steps=soon\n")
    assert main(["run", "--config", cfg]) == EXIT_CONFIG


def test_run_clearing_end_to_end(tmp_path, capsys):
    out = str(tmp_path / "out")
    rc = main(["run", "--config", case("demo_clearing.cfg"), "--out", out])
    assert rc == EXIT_OK
    log = open(os.path.join(out, "episode.jsonl")).read().splitlines()
    assert log
    for line in log:
        json.loads(line)
    summary = open(os.path.join(out, "summary.csv")).read().splitlines()
    assert summary[0] == "t_grid,feasible,max_abs_flow"
    assert len(summary) > 1


def test_run_set_override(tmp_path):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    main(["run", "--config", case("demo_p2p.cfg"), "--out", out1,
          "--set", "grid_steps=2"])
    main(["run", "--config", case("demo_p2p.cfg"), "--out", out2,
          "--set", "grid_steps=3"])
    n1 = len(open(os.path.join(out1, "episode.jsonl")).read().splitlines())
    n2 = len(open(os.path.join(out2, "episode.jsonl")).read().splitlines())
    assert n2 > n1


def test_run_seed_reproducible(tmp_path):
    outs = []
    for sub in ("x", "y"):
        out = str(tmp_path / sub)
        rc = main(["run", "--config", case("demo_p2p.cfg"), "--out", out,
                   "--seed", "5", "--set", "grid_steps=4"])
        assert rc == EXIT_OK
        outs.append(open(os.path.join(out, "episode.jsonl")).read())
    assert outs[0] == outs[1]


def test_sweep_serial(tmp_path, capsys):
    out = str(tmp_path / "sweep")
    rc = main(["sweep", "--config", case("demo_p2p.cfg"), "--out", out,
               "--seeds", "0..2", "--jobs", "1"])
    assert rc == EXIT_OK
    for s in (0, 1, 2):
        assert os.path.exists(os.path.join(out, f"seed_{s}", "episode.jsonl"))


def test_sweep_bad_range(tmp_path, capsys):
    rc = main(["sweep", "--config", case("demo_p2p.cfg"),
               "--seeds", "5..2", "--jobs", "1"])
    assert rc == EXIT_CONFIG
