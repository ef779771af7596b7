import hashlib
import json

import pytest
import yaml

from dnp3mitm import __version__, codec
from dnp3mitm.mitm import PacketClass
from dnp3mitm.cli import describe_bytes, inspect_target, main
from dnp3mitm.netsim.wire import Frame, IPv4, Segment
from dnp3mitm.scenario import (
    ConfigInvalid,
    ScenarioConfig,
    SweepCell,
    apply_overrides,
    load_scenario,
    full_matrix,
    run_sweep,
    sweep_cells,
    sweep_table,
)

SHORT = {"schema": "dnp3mitm-scenario/1", "seed": 3, "outstations": 2, "polling_interval_s": 30,
         "run_duration_s": 100, "attack_start_s": 30, "attack_stop_s": 80}


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


# -- configuration -----------------------------------------------------------


@pytest.mark.parametrize(
    "patch, fragment",
    [
        ({"use_case": 1, "attack_start_s": 90, "attack_stop_s": 50}, "attack_stop_s"),
        ({"use_case": 1, "attack_stop_s": 5000}, "after the end"),
        ({"use_case": 0, "adversary": {"masking": False}}, "adversary: not allowed"),
        ({"use_case": 7}, "use_case"),
        ({"outstations": 0}, "outstations"),
        ({"polling_interval_s": "fast"}, "polling_interval_s"),
        ({"colour": "red"}, "colour: unknown field"),
        ({"use_case": 1, "adversary": {"queue": 3}}, "adversary.queue: unknown field"),
        ({"use_case": 1, "adversary": {"queue_bound": -1}}, "queue_bound"),
        ({"schema": "other/2"}, "schema"),
        ({"ids": {"whitelist": "sometimes"}}, "ids.whitelist"),
        ({"operator": {"rules": [{"trigger": {}, "action": {}}]}}, "operator"),
    ],
)
def test_invalid_configs_name_the_field(patch, fragment):
    with pytest.raises(ConfigInvalid) as err:
        ScenarioConfig.from_dict({**SHORT, **patch})
    assert any(fragment in e for e in err.value.errors), err.value.errors


def test_defaults():
    cfg = ScenarioConfig.from_dict({}, default_name="x")
    assert (cfg.run_duration_s, cfg.attack_start_s, cfg.attack_stop_s) == (780.0, 120.0, 720.0)
    assert cfg.phases == {"baseline": (0.0, 780_000.0)}
    cfg = ScenarioConfig.from_dict({"use_case": 2}, default_name="x")
    assert list(cfg.phases) == ["baseline", "attack", "restore"]
    assert cfg.adversary_config().queue_bound == 3


def test_overrides_reach_nested_blocks():
    data = apply_overrides({"use_case": 1}, ["adversary.masking=false", "outstations=10", "name=abc"])
    assert data == {"use_case": 1, "adversary": {"masking": False}, "outstations": 10, "name": "abc"}
    with pytest.raises(ConfigInvalid):
        apply_overrides({}, ["novalue"])


def test_name_defaults_to_file_stem(tmp_path):
    path = _write(tmp_path, "UC1_10OS_30.scenario", {"use_case": 1, "outstations": 10, "polling_interval_s": 30})
    cfg, raw = load_scenario(path)
    assert cfg.name == "UC1_10OS_30" and raw == path.read_bytes()


def test_adversary_block_translation():
    cfg = ScenarioConfig.from_dict(
        {"use_case": 4, "adversary": {"mod_points": [{"outstation": 5, "point": "ao", "index": 1, "value": 9}],
                                      "delay_ms": {"bypass": 10}, "jitter": 0.0, "queue_bound": 8}},
        default_name="x",
    )
    ac = cfg.adversary_config()
    assert ac.queue_bound == 8 and ac.delay.jitter == 0.0
    assert ac.delay.means_ms[PacketClass.BYPASS] == 10.0
    assert ac.delay.means_ms[PacketClass.READ_RESPONSE] == 35.415
    assert ac.mod_points[0].outstation == 5 and ac.mod_points[0].point_type == codec.PointType.AO


# -- run ------------------------------------------------------------------------


def test_run_writes_named_artifacts_and_manifest(tmp_path):
    path = _write(tmp_path, "UC1_2OS_30.scenario", {**SHORT, "use_case": 1})
    out = tmp_path / "out"
    assert main(["run", str(path), "--out-dir", str(out), "--override", "seed=4"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [f"UC1_2OS_30.{ext}" for ext in ("alerts.log", "capture.jsonl", "manifest.json", "metrics.json", "metrics.txt")]
    manifest = json.loads((out / "UC1_2OS_30.manifest.json").read_text())
    assert manifest["config_sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
    assert manifest["seed"] == 4 and manifest["overrides"] == ["seed=4"]
    assert manifest["package_version"] == __version__


def test_same_seed_gives_identical_bytes_and_new_seed_differs(tmp_path):
    path = _write(tmp_path, "s.scenario", {**SHORT, "use_case": 2})
    for d, seed in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["run", str(path), "--out-dir", str(tmp_path / d), "--seed", seed]) == 0
    for ext in ("capture.jsonl", "alerts.log", "metrics.json", "metrics.txt", "manifest.json"):
        assert (tmp_path / "a" / f"s.{ext}").read_bytes() == (tmp_path / "b" / f"s.{ext}").read_bytes()
    assert (tmp_path / "a" / "s.capture.jsonl").read_bytes() != (tmp_path / "c" / "s.capture.jsonl").read_bytes()


def test_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "bad.scenario", {**SHORT, "use_case": 1, "attack_start_s": 90, "attack_stop_s": 50})
    assert main(["run", str(bad)]) == 2
    assert "attack_stop_s" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.scenario")]) == 2
    # An operator script naming an outstation that does not exist is a valid config
    # but the adversary cannot attack before recon when the window starts at 0.
    broken = _write(tmp_path, "broken.scenario", {**SHORT, "use_case": 1, "attack_start_s": 0})
    assert main(["run", str(broken), "--out-dir", str(tmp_path)]) == 3


# -- sweep ------------------------------------------------------------------------


def test_full_matrix_has_fourteen_sorted_cells():
    cells = full_matrix()
    assert len(cells) == 14
    assert not any(c.use_case == 1 and c.outstations == 5 for c in cells)
    assert cells == sorted(cells, key=lambda c: (c.use_case, c.outstations, c.interval))
    assert cells[0].name == "UC1_10OS_30"


def test_single_cell_sweep_and_failure_rows():
    base = {k: v for k, v in SHORT.items() if k != "schema"}
    rows = run_sweep(base, [SweepCell(2, 2, 30.0)])
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    broken = {**base, "attack_start_s": 0}
    rows = run_sweep(broken, sweep_cells([2, 1], [2], [30]))
    assert [(r["use_case"], r["status"]) for r in rows] == [(1, "failed"), (2, "failed")]
    table = sweep_table(rows)
    assert table.count("FAILED") == 2


def test_sweep_cli_writes_table(tmp_path, capsys):
    base = {k: v for k, v in SHORT.items() if k != "schema"}
    path = _write(tmp_path, "m.sweep", {"schema": "dnp3mitm-sweep/1", "base": base,
                                        "matrix": {"use_cases": [2, 3], "outstations": [2], "intervals": [30]}})
    assert main(["sweep", str(path), "--out-dir", str(tmp_path), "--no-artifacts"]) == 0
    rows = json.loads((tmp_path / "m.sweep.json").read_text())
    assert [r["name"] for r in rows] == ["UC2_2OS_30", "UC3_2OS_30"]
    assert "UC3_2OS_30" in capsys.readouterr().out


def test_sweep_rejects_bad_schema(tmp_path):
    path = _write(tmp_path, "m.sweep", {"schema": "nope"})
    assert main(["sweep", str(path)]) == 2


# -- inspect ----------------------------------------------------------------------


def test_inspect_direct_operate(capsys):
    hexs = codec.encode_frame(codec.build_direct_operate_binary(4, 1, 7, codec.CONTROL_CLOSE)).hex(" ")
    assert main(["inspect", hexs]) == 0
    out = capsys.readouterr().out
    assert "fc=0x05 DIRECT_OPERATE" in out
    assert "BO[7] = 0x41" in out
    assert "verdict: OK" in out


def test_inspect_reports_corrupted_chunk_with_offset():
    pts = [codec.Dnp3Point(codec.PointType.BI, i, 0x81) for i in range(40)]
    frame = bytearray(codec.encode_frame(codec.build_read_response(1, 4, pts)))
    # First octet of chunk 2: header (10) + two full chunks of 18.
    frame[10 + 2 * 18] ^= 0xFF
    text = "\n".join(describe_bytes(bytes(frame)))
    assert "CRC MISMATCH at chunk 2 (octet offset 46)" in text
    assert "chunk 1:" in text and "chunk 1: CRC MISMATCH" not in text
    assert "verdict: INVALID (CRC)" in text


def test_inspect_ethernet_frame_and_hexdump_file(tmp_path):
    dnp = codec.encode_frame(codec.build_read_request(4, 1))
    frame = Frame("00:50:56:9c:9d:70", "00:00:00:aa:00:02", ip=IPv4("192.168.1.10", "192.168.0.5", Segment(40000, 20000, 5, 6, payload=dnp)))
    path = tmp_path / "f.hex"
    path.write_text(codec.hexdump(frame.sealed().to_bytes()))
    lines = inspect_target(str(path))
    assert lines[0].startswith("ethernet:") and "checksum OK" in lines[2]
    assert any("fc=0x01 READ" in line for line in lines)


def test_inspect_capture_file(tmp_path):
    path = _write(tmp_path, "c.scenario", {**SHORT, "use_case": 1, "run_duration_s": 40, "attack_start_s": 15, "attack_stop_s": 35})
    main(["run", str(path), "--out-dir", str(tmp_path)])
    lines = inspect_target(str(tmp_path / "c.capture.jsonl"))
    capture_lines = (tmp_path / "c.capture.jsonl").read_text().splitlines()
    assert len(lines) == len(capture_lines) - 1
    assert lines[0].startswith("#0 ")
    assert any("fc=0x05" in line for line in lines)
    assert any("ARP" in line and "is-at" in line for line in lines)


def test_inspect_garbage_is_an_error(capsys):
    assert main(["inspect", "zz"]) == 2
    assert main(["inspect", "00 01 02"]) == 0
    assert "not a DNP3 or Ethernet frame" in capsys.readouterr().out
