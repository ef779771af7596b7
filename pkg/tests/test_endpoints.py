import random

import pytest
import yaml

from dnp3mitm import codec
from dnp3mitm.codec import PointType
from dnp3mitm.endpoints import (
    BI_CLOSED,
    BI_OPEN,
    MatchVerdict,
    OperatorScript,
    OutstationState,
    PendingCommand,
    ScriptError,
    UncorrelatedResponse,
    default_script,
    master_verify_ack,
    outstation_handle,
)
from dnp3mitm.scenario import ScenarioConfig, build_lab, finish, run_scenario, schedule_phases
from dnp3mitm.netsim import seconds


@pytest.fixture
def plant():
    return OutstationState.default(4, random.Random(11))


# -- outstation ---------------------------------------------------------------


def test_default_plant_shape(plant):
    assert len(plant.bi) == len(plant.bo) == 10 and len(plant.ai) == len(plant.ao) == 5
    assert plant.bi == [BI_CLOSED] * 10 and plant.bo == [codec.CONTROL_CLOSE] * 10
    assert plant.ai == plant.ao
    assert all(v == int(v) for v in plant.ao)


def test_read_returns_every_point_and_settles(plant):
    plant.ao[1] = 42.0
    response = outstation_handle(plant, codec.build_read_request(4, 1, app_seq=9))
    assert response.function == codec.FunctionCode.SOLICITED_RESPONSE
    assert response.app.app_control & 0x0F == 9
    assert (response.link.source, response.link.destination) == (4, 1)
    points = {(p.point_type, p.point_index): p.value for p in codec.parse_points(response)}
    assert len(points) == 30
    assert points[(PointType.AI, 1)] == 42.0


def test_response_spans_several_chunks(plant):
    frame = codec.encode_frame(outstation_handle(plant, codec.build_read_request(4, 1)))
    assert len(codec.chunk_crcs(frame)) >= 5


def test_trip_updates_breaker_mirror_and_echoes(plant):
    echo = outstation_handle(plant, codec.build_direct_operate_binary(4, 1, 7, codec.CONTROL_TRIP, app_seq=3))
    (point,) = codec.parse_points(echo)
    assert (point.point_type, point.point_index, point.value) == (PointType.BO, 7, codec.CONTROL_TRIP)
    assert plant.bo[7] == codec.CONTROL_TRIP and plant.bi[7] == BI_OPEN
    assert echo.app.app_control & 0x0F == 3


def test_setpoint_then_poll_shows_new_generation(plant):
    outstation_handle(plant, codec.build_direct_operate_analog(4, 1, 2, 20.0))
    assert plant.ao[2] == 20.0 and plant.ai[2] != 20.0
    outstation_handle(plant, codec.build_read_request(4, 1))
    assert plant.ai[2] == 20.0


@pytest.mark.parametrize(
    "request_",
    [
        codec.build_direct_operate_binary(4, 1, 99, codec.CONTROL_CLOSE),
        codec.build_direct_operate_analog(4, 1, 99, 1.0),
    ],
)
def test_unknown_index_echoes_error_status(plant, request_):
    (point,) = codec.parse_points(outstation_handle(plant, request_))
    assert point.status == codec.STATUS_ERROR or point.value == codec.STATUS_ERROR


def test_request_for_other_address_is_ignored(plant):
    assert outstation_handle(plant, codec.build_read_request(5, 1)) is None


# -- verification ---------------------------------------------------------------


def _echo(plant, control):
    return outstation_handle(plant, codec.build_direct_operate_binary(4, 1, 7, control))


def test_verify_match_and_mismatch(plant):
    cmd = PendingCommand(4, "r", PointType.BO, 7, codec.CONTROL_CLOSE, request_ack=500)
    assert master_verify_ack(_echo(plant, codec.CONTROL_CLOSE), 500, [cmd])[1] == MatchVerdict.MATCH
    _, verdict, echoed = master_verify_ack(_echo(plant, codec.CONTROL_TRIP), 500, [cmd])
    assert verdict == MatchVerdict.MISMATCH and echoed == codec.CONTROL_TRIP


def test_verify_analog_uses_float32_rounding(plant):
    cmd = PendingCommand(4, "r", PointType.AO, 0, 20.1, request_ack=9)
    echo = outstation_handle(plant, codec.build_direct_operate_analog(4, 1, 0, 20.1))
    assert master_verify_ack(echo, 9, [cmd])[1] == MatchVerdict.MATCH


def test_verify_requires_sequence_correlation(plant):
    cmd = PendingCommand(4, "r", PointType.BO, 7, codec.CONTROL_CLOSE, request_ack=500)
    with pytest.raises(UncorrelatedResponse):
        master_verify_ack(_echo(plant, codec.CONTROL_CLOSE), 501, [cmd])


# -- operator script ---------------------------------------------------------------


def test_default_script_rules():
    rules = {r.name: r for r in default_script().rules}
    assert rules["close-breaker-7"].action.control == codec.CONTROL_CLOSE
    assert rules["hold-setpoint"].action.value == "nominal"
    assert rules["restore-generator"].trigger.below_fraction == 0.5
    assert rules["close-breaker-7"].action.spacing_s == 1.0


def test_script_loads_from_yaml(tmp_path):
    path = tmp_path / "ops.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "schema": "dnp3mitm-operator/1",
                "rules": [{"name": "t", "trigger": {"at_s": 5}, "action": {"type": "binary", "index": 1, "control": "trip", "outstations": [4]}}],
            }
        )
    )
    (rule,) = OperatorScript.load(path).rules
    assert rule.action.control == codec.CONTROL_TRIP and rule.action.outstations == (4,)


@pytest.mark.parametrize(
    "rule",
    [
        {"trigger": {}, "action": {"type": "binary", "control": "close"}},
        {"trigger": {"every_s": 0}, "action": {"type": "binary", "control": "close"}},
        {"trigger": {"at_s": 1}, "action": {"type": "digital"}},
        {"trigger": {"at_s": 1}, "action": {"type": "binary", "control": 0x42}},
        {"trigger": {"at_s": 1}, "action": {"type": "analog", "value": "high"}},
        {"trigger": {"at_s": 1}, "action": {"type": "analog", "value": 1, "outstations": "matched"}},
        {"trigger": {"at_s": 1}, "action": {"type": "analog", "value": 1, "spacing_s": -1}},
        {"trigger": {"at_s": 1, "when": 3}, "action": {"type": "analog", "value": 1}},
        {"action": {"type": "analog", "value": 1}},
    ],
)
def test_script_rejects_bad_rules(rule):
    with pytest.raises(ScriptError):
        OperatorScript.from_dict({"rules": [rule]})


# -- master in a lab ---------------------------------------------------------------


def _baseline(**kw):
    data = {"use_case": 0, "outstations": 3, "polling_interval_s": 30, "run_duration_s": 130, "seed": 5}
    data.update(kw)
    return ScenarioConfig.from_dict(data, default_name="t")


def test_baseline_master_sees_only_matches():
    result = run_scenario(_baseline())
    log = result.lab.master.log
    verdicts = result.lab.master.verdicts()
    assert verdicts and all(e.detail["verdict"] == "MATCH" for e in verdicts)
    assert sum(e.event == "poll_response" for e in log) == 3 * 5
    assert not any(e.event in ("missed_poll", "response_timeout", "uncorrelated_response") for e in log)


def test_commands_are_paced_across_outstations():
    result = run_scenario(_baseline())
    sent = [e for e in result.lab.master.log if e.event == "command_sent" and e.detail["rule"] == "close-breaker-7"]
    first_round = sorted(e.ts_ms for e in sent)[:3]
    assert first_round == [20000.0, 21000.0, 22000.0]


def test_master_learns_nominal_from_first_poll():
    result = run_scenario(_baseline())
    lab = result.lab
    for node in lab.outstations:
        oid = node.state.outstation_id
        assert lab.master.nominal[oid][0] == node.state.ao[0]


def test_predicate_rule_fires_once_per_outstation():
    ops = {
        "rules": [
            {
                "name": "low",
                "trigger": {"point": "AI", "index": 0, "below": 1e9},
                "action": {"type": "analog", "index": 0, "value": 123.0, "outstations": "matched"},
            }
        ]
    }
    result = run_scenario(_baseline(operator=ops))
    sent = [e for e in result.lab.master.log if e.event == "command_sent"]
    assert sorted(e.outstation for e in sent) == [4, 5, 6]
    assert all(n.state.ao[0] == 123.0 for n in result.lab.outstations)


def test_slow_responses_cause_missed_polls():
    lab = build_lab(_baseline(polling_interval_s=0.002, run_duration_s=0.05, operator={"rules": []}))
    schedule_phases(lab)
    lab.sim.run_until(seconds(0.05))
    events = [e.event for e in finish(lab).lab.master.log]
    assert "missed_poll" in events
