"""Scenario configuration, lab assembly and artifact generation.

A scenario file is YAML with a versioned header::

    schema: dnp3mitm-scenario/1
    name: UC1_10OS_30          # optional, defaults to the file stem
    seed: 7
    use_case: 1                # 0 = baseline, no adversary
    outstations: 10
    polling_interval_s: 30
    run_duration_s: 780
    attack_start_s: 120
    attack_stop_s: 720
    adversary:                 # forbidden when use_case is 0
      masking: true
      recompute_crc: true
      forged_setpoint: 20.0
      mod_points: [{outstation: all, point: AI, index: 0, value: 20.0}]
      delay_ms: {bypass: 22.775, analog_do: 27.693, binary_do: 30.217, read_response: 35.415}
      jitter: 0.1
      queue_bound: 4
      sniff_stride: 5
      repoison_ms: 2000
    ids:
      whitelist: auto          # or a list of {ip, mac}
    network:
      link_latency_ms: 1.0
      rto_ms: 7000
    operator: default          # or {rules: [...]} in the operator-script format
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from dnp3mitm import __version__
from dnp3mitm.endpoints import (
    DNP3_PORT,
    Master,
    OperatorScript,
    Outstation,
    OutstationState,
    ScriptError,
    default_script,
)
from dnp3mitm.ids import AlertRecord, Ids, WhitelistEntry, build_whitelist, write_alert_log
from dnp3mitm.metrics import MetricsReport, build_report
from dnp3mitm.mitm import Adversary, AdversaryConfig, DelayModel, ModPoint, PacketClass
from dnp3mitm.codec import PointType
from dnp3mitm.netsim.capture import CaptureLog, CaptureRecord
from dnp3mitm.netsim.network import Medium, Router, pair, tap
from dnp3mitm.netsim.sim import Simulator, ms, seconds
from dnp3mitm.netsim.wire import Frame

SCENARIO_SCHEMA = "dnp3mitm-scenario/1"
SWEEP_SCHEMA = "dnp3mitm-sweep/1"

MASTER_IP = "192.168.1.10"
MASTER_MAC = "00:00:00:bb:00:01"
ROUTER_WAN_IP = "192.168.1.1"
ROUTER_WAN_MAC = "00:00:00:aa:00:01"
ROUTER_LAN_IP = "192.168.0.4"
ROUTER_LAN_MAC = "00:00:00:aa:00:02"
FIRST_OUTSTATION_IP = 5
ADVERSARY_IP = "192.168.0.66"
ADVERSARY_MAC = "00:0c:29:ee:00:66"
FIRST_OUTSTATION_ADDRESS = 4
RECON_LEAD_S = 10.0


def outstation_ip(i: int) -> str:
    return f"192.168.0.{FIRST_OUTSTATION_IP + i}"


def outstation_mac(i: int) -> str:
    return f"00:50:56:9c:9d:{0x70 + i:02x}"


class ConfigInvalid(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


_TOP_KEYS = {
    "schema",
    "name",
    "seed",
    "use_case",
    "outstations",
    "polling_interval_s",
    "run_duration_s",
    "attack_start_s",
    "attack_stop_s",
    "adversary",
    "ids",
    "network",
    "operator",
}
_ADV_KEYS = {
    "masking",
    "recompute_crc",
    "forged_setpoint",
    "mod_points",
    "delay_ms",
    "jitter",
    "queue_bound",
    "sniff_stride",
    "repoison_ms",
}


@dataclass
class ScenarioConfig:
    name: str
    seed: int = 1
    use_case: int = 0
    outstations: int = 5
    polling_interval_s: float = 60.0
    run_duration_s: float = 780.0
    attack_start_s: float = 120.0
    attack_stop_s: float = 720.0
    adversary: dict = field(default_factory=dict)
    whitelist: str | list[WhitelistEntry] = "auto"
    link_latency_ms: float = 1.0
    rto_ms: float = 7000.0
    operator: Any = "default"

    @classmethod
    def from_dict(cls, data: dict, *, default_name: str = "scenario") -> "ScenarioConfig":
        errors: list[str] = []
        if not isinstance(data, dict):
            raise ConfigInvalid(["scenario must be a mapping"])
        schema = data.get("schema", SCENARIO_SCHEMA)
        if schema != SCENARIO_SCHEMA:
            errors.append(f"schema: expected {SCENARIO_SCHEMA!r}, got {schema!r}")
        for key in sorted(set(data) - _TOP_KEYS):
            errors.append(f"{key}: unknown field")

        def num(key, default, kind=float, minimum=None):
            value = data.get(key, default)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{key}: expected a number, got {value!r}")
                return default
            if kind is int and value != int(value):
                errors.append(f"{key}: expected an integer, got {value!r}")
                return default
            if minimum is not None and value < minimum:
                errors.append(f"{key}: must be >= {minimum}, got {value!r}")
            return kind(value)

        use_case = num("use_case", 0, int)
        if use_case not in (0, 1, 2, 3, 4):
            errors.append(f"use_case: must be 0-4, got {use_case}")
        cfg = cls(
            name=str(data.get("name", default_name)),
            seed=num("seed", 1, int),
            use_case=use_case,
            outstations=num("outstations", 5, int, 1),
            polling_interval_s=num("polling_interval_s", 60.0, float, 0.001),
            run_duration_s=num("run_duration_s", 780.0, float, 0.0),
            attack_start_s=num("attack_start_s", 120.0, float, 0.0),
            attack_stop_s=num("attack_stop_s", 720.0, float, 0.0),
        )
        if cfg.outstations > 200:
            errors.append("outstations: at most 200 fit the address plan")
        if use_case:
            if cfg.attack_stop_s < cfg.attack_start_s:
                errors.append(f"attack_stop_s ({cfg.attack_stop_s}) is before attack_start_s ({cfg.attack_start_s})")
            if cfg.attack_stop_s > cfg.run_duration_s:
                errors.append(f"attack_stop_s ({cfg.attack_stop_s}) is after the end of the run ({cfg.run_duration_s})")
        adv = data.get("adversary")
        if adv is not None:
            if use_case == 0:
                errors.append("adversary: not allowed when use_case is 0 (baseline)")
            elif not isinstance(adv, dict):
                errors.append("adversary: expected a mapping")
            else:
                for key in sorted(set(adv) - _ADV_KEYS):
                    errors.append(f"adversary.{key}: unknown field")
                cfg.adversary = dict(adv)
        ids = data.get("ids") or {}
        wl = ids.get("whitelist", "auto") if isinstance(ids, dict) else None
        if wl == "auto":
            cfg.whitelist = "auto"
        elif isinstance(wl, list):
            try:
                cfg.whitelist = [WhitelistEntry(str(e["ip"]), str(e["mac"]).lower()) for e in wl]
            except (KeyError, TypeError):
                errors.append("ids.whitelist: entries need 'ip' and 'mac'")
        else:
            errors.append("ids.whitelist: expected 'auto' or a list")
        net = data.get("network") or {}
        if not isinstance(net, dict):
            errors.append("network: expected a mapping")
            net = {}
        cfg.link_latency_ms = float(net.get("link_latency_ms", 1.0))
        cfg.rto_ms = float(net.get("rto_ms", 7000.0))
        if cfg.link_latency_ms < 0:
            errors.append("network.link_latency_ms: must be >= 0")
        if cfg.rto_ms <= 0:
            errors.append("network.rto_ms: must be positive")
        cfg.operator = data.get("operator", "default")
        try:
            cfg.script()
        except (ScriptError, KeyError, TypeError, ValueError) as exc:
            errors.append(f"operator: {exc}")
        if use_case:
            try:
                cfg.adversary_config()
            except (ValueError, KeyError, TypeError) as exc:
                errors.append(f"adversary: {exc}")
        if errors:
            raise ConfigInvalid(errors)
        return cfg

    def script(self) -> OperatorScript:
        if self.operator in (None, "default"):
            return default_script()
        if isinstance(self.operator, dict):
            return OperatorScript.from_dict(self.operator)
        raise ScriptError(f"expected 'default' or a rules mapping, got {self.operator!r}")

    def adversary_config(self) -> AdversaryConfig:
        a = self.adversary
        means = {PacketClass(k): v for k, v in (a.get("delay_ms") or {}).items()}
        delay = DelayModel(**({"means_ms": {**DelayModel().means_ms, **means}} if means else {}), jitter=float(a.get("jitter", 0.10)))
        mods = []
        for m in a.get("mod_points") or []:
            target = m.get("outstation", "all")
            mods.append(
                ModPoint(
                    None if target == "all" else int(target),
                    PointType[str(m["point"]).upper()],
                    int(m.get("index", 0)),
                    float(m["value"]),
                )
            )
        kwargs = {
            "masking": bool(a.get("masking", True)),
            "recompute_crc": bool(a.get("recompute_crc", True)),
            "forged_setpoint": float(a.get("forged_setpoint", 20.0)),
            "mod_points": mods,
            "delay": delay,
            "sniff_stride": int(a.get("sniff_stride", 5)),
            "repoison_ms": float(a.get("repoison_ms", 2000.0)),
        }
        if "queue_bound" in a:
            kwargs["queue_bound"] = int(a["queue_bound"])
        return AdversaryConfig(use_case=self.use_case, **kwargs)

    @property
    def phases(self) -> dict[str, tuple[float, float]]:
        end = self.run_duration_s * 1000
        if not self.use_case:
            return {"baseline": (0.0, end)}
        return {
            "baseline": (0.0, self.attack_start_s * 1000),
            "attack": (self.attack_start_s * 1000, self.attack_stop_s * 1000),
            "restore": (self.attack_stop_s * 1000, end),
        }


def cell_name(use_case: int, outstations: int, interval: float) -> str:
    return f"UC{use_case}_{outstations}OS_{interval:g}"


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` pairs (dotted keys for nested blocks, YAML values)."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid([f"override {item!r}: expected key=value"])
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigInvalid([f"override {key}: {exc}"]) from exc
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid([f"override {key}: {p} is not a mapping"])
        node[parts[-1]] = value
    return data


def load_yaml(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        data = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid([f"{path}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigInvalid([f"{path}: top level must be a mapping"])
    return data, raw


def load_scenario(path: str | Path, overrides: list[str] = (), seed: int | None = None) -> tuple[ScenarioConfig, bytes]:
    data, raw = load_yaml(path)
    data = apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    return ScenarioConfig.from_dict(data, default_name=Path(path).name.split(".")[0]), raw


# --------------------------------------------------------------------------
# Lab
# --------------------------------------------------------------------------


@dataclass
class Lab:
    config: ScenarioConfig
    sim: Simulator
    master: Master
    router: Router
    outstations: list[Outstation]
    adversary: Adversary | None
    capture: CaptureLog
    ids: Ids


def build_lab(cfg: ScenarioConfig) -> Lab:
    sim = Simulator()
    rng = random.Random(cfg.seed)
    capture = CaptureLog()
    wan = Medium(sim, "wan", cfg.link_latency_ms)
    lan = Medium(sim, "lan", cfg.link_latency_ms)

    master = Master(sim, "master", polling_interval_s=cfg.polling_interval_s, script=cfg.script())
    wan.attach(master.add_interface("eth0", MASTER_MAC, MASTER_IP))
    master.gateway = ROUTER_WAN_IP

    router = Router(sim, "router")
    wan.attach(router.add_interface("wan", ROUTER_WAN_MAC, ROUTER_WAN_IP))
    lan.attach(router.add_interface("lan", ROUTER_LAN_MAC, ROUTER_LAN_IP))
    # The WAN link is point to point; its neighbours are configured statically.
    master.learn(ROUTER_WAN_IP, ROUTER_WAN_MAC)
    router.learn(MASTER_IP, MASTER_MAC)

    outstations = []
    for i in range(cfg.outstations):
        address = FIRST_OUTSTATION_ADDRESS + i
        node = Outstation(sim, f"outstation{i}", OutstationState.default(address, rng))
        lan.attach(node.add_interface("eth0", outstation_mac(i), outstation_ip(i)))
        node.gateway = ROUTER_LAN_IP
        m_conn = master.connect(40000 + i, node.ip, DNP3_PORT, isn=rng.randrange(1, 2**24), rto_ms=cfg.rto_ms)
        o_conn = node.connect(DNP3_PORT, MASTER_IP, 40000 + i, isn=rng.randrange(1, 2**24), rto_ms=cfg.rto_ms)
        pair(m_conn, o_conn)
        node.attach_conn(o_conn)
        master.add_outstation(address, node.ip, m_conn)
        outstations.append(node)

    adversary = None
    if cfg.use_case:
        adversary = Adversary(sim, "adversary", cfg.adversary_config(), random.Random(f"{cfg.seed}:adversary"))
        lan.attach(adversary.add_interface("eth0", ADVERSARY_MAC, ADVERSARY_IP))
        adversary.set_victims(ROUTER_LAN_IP, [o.ip for o in outstations])
        tap(adversary.eth0, capture)

    if cfg.whitelist == "auto":
        entries = [WhitelistEntry(ROUTER_LAN_IP, ROUTER_LAN_MAC)] + [WhitelistEntry(o.ip, o.mac) for o in outstations]
    else:
        entries = cfg.whitelist
    ids = Ids(build_whitelist(entries), protected={o.ip for o in outstations})

    tap(master.interfaces[0], capture)
    tap(router.interfaces[0], capture)
    tap(router.interfaces[1], capture, promiscuous=True)
    lan_point = router.interfaces[1].label
    capture.subscribe(lambda rec: ids.inspect(rec) if rec.point == lan_point else None)
    return Lab(cfg, sim, master, router, outstations, adversary, capture, ids)


@dataclass
class RunResult:
    config: ScenarioConfig
    lab: Lab
    capture: list[CaptureRecord]
    alerts: list[AlertRecord]
    report: MetricsReport


def schedule_phases(lab: Lab) -> None:
    """Queue polling, operator rules and the adversary's attack window."""
    cfg = lab.config
    sim = lab.sim
    lab.master.start(cfg.run_duration_s)
    adv = lab.adversary
    if adv is not None:
        sim.at(seconds(max(0.0, cfg.attack_start_s - RECON_LEAD_S)), adv.recon, "recon")
        sim.at(seconds(cfg.attack_start_s), adv.start_attack, "attack-start")
        sim.at(seconds(cfg.attack_stop_s), adv.stop_attack, "attack-stop")


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Pre-attack, attack and post-restore phases on one simulated clock."""
    lab = build_lab(cfg)
    schedule_phases(lab)
    lab.sim.run_until(seconds(cfg.run_duration_s))
    return finish(lab)


def finish(lab: Lab) -> RunResult:
    """Compute metrics over everything captured so far."""
    cfg = lab.config
    adv = lab.adversary
    report = build_report(lab.capture.records, lab.ids.alerts, cfg.phases)
    verdicts = [e.detail["verdict"] for e in lab.master.verdicts()]
    report.extra = {
        "verdicts": {"MATCH": verdicts.count("MATCH"), "MISMATCH": verdicts.count("MISMATCH")},
        "missed_polls": sum(1 for e in lab.master.log if e.event == "missed_poll"),
        "response_timeouts": sum(1 for e in lab.master.log if e.event == "response_timeout"),
        "alerts": {r: sum(1 for a in lab.ids.alerts if a.rule.value == r) for r in ("R1", "R2", "R3", "R4", "R5", "CRC_FAIL")},
    }
    if adv is not None:
        report.extra["adversary"] = {
            "queue_drops": len(adv.dropped),
            "sniffed": adv.state.sniffed,
            "poison_frames": adv.poison_frames,
        }
    return RunResult(cfg, lab, lab.capture.records, lab.ids.alerts, report)


# --------------------------------------------------------------------------
# Artifacts
# --------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    capture: Path
    alerts: Path
    metrics: Path
    metrics_text: Path
    manifest: Path


def write_artifacts(
    result: RunResult, out_dir: str | Path, *, config_bytes: bytes | None = None, config_file: str | None = None,
    overrides: list[str] = (),
) -> RunArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.config.name
    arts = RunArtifacts(
        out / f"{name}.capture.jsonl",
        out / f"{name}.alerts.log",
        out / f"{name}.metrics.json",
        out / f"{name}.metrics.txt",
        out / f"{name}.manifest.json",
    )
    result.lab.capture.write(arts.capture)
    write_alert_log(arts.alerts, result.alerts)
    arts.metrics.write_text(result.report.to_json(), encoding="utf-8")
    arts.metrics_text.write_text(result.report.to_text(), encoding="utf-8")
    manifest = {
        "name": name,
        "config_file": config_file,
        "config_sha256": hashlib.sha256(config_bytes).hexdigest() if config_bytes is not None else None,
        "overrides": list(overrides),
        "seed": result.config.seed,
        "use_case": result.config.use_case,
        "package_version": __version__,
        "artifacts": {k: Path(v).name for k, v in vars(arts).items() if k != "manifest"},
    }
    arts.manifest.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return arts


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    use_case: int
    outstations: int
    interval: float

    @property
    def name(self) -> str:
        return cell_name(self.use_case, self.outstations, self.interval)


def full_matrix() -> list[SweepCell]:
    """Use cases 1-4 x {5, 10} outstations x {30, 60} s, without the 5-outstation UC1 cells."""
    return sweep_cells([1, 2, 3, 4], [5, 10], [30, 60], exclude=[{"use_case": 1, "outstations": 5}])


def sweep_cells(use_cases, outstations, intervals, exclude=()) -> list[SweepCell]:
    cells = []
    for uc in use_cases:
        for n in outstations:
            for iv in intervals:
                cell = SweepCell(int(uc), int(n), float(iv))
                skip = any(
                    all(getattr(cell, {"use_case": "use_case", "outstations": "outstations", "interval": "interval"}[k]) == v for k, v in ex.items())
                    for ex in exclude
                )
                if not skip:
                    cells.append(cell)
    return sorted(cells, key=lambda c: (c.use_case, c.outstations, c.interval))


def load_sweep(path: str | Path, overrides: list[str] = (), seed: int | None = None) -> tuple[dict, list[SweepCell], bytes]:
    data, raw = load_yaml(path)
    if data.get("schema") != SWEEP_SCHEMA:
        raise ConfigInvalid([f"schema: expected {SWEEP_SCHEMA!r}, got {data.get('schema')!r}"])
    base = apply_overrides(data.get("base") or {}, list(overrides))
    if seed is not None:
        base["seed"] = seed
    matrix = data.get("matrix", "full")
    if matrix == "full":
        cells = full_matrix()
    elif isinstance(matrix, dict):
        try:
            cells = sweep_cells(
                matrix["use_cases"], matrix["outstations"], matrix["intervals"], matrix.get("exclude", [])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid([f"matrix: {exc}"]) from exc
    else:
        raise ConfigInvalid(["matrix: expected 'full' or a mapping"])
    if not cells:
        raise ConfigInvalid(["matrix: no cells selected"])
    # Validate every cell up front so configuration errors surface before running.
    for cell in cells:
        cell_config(base, cell)
    return base, cells, raw


def cell_config(base: dict, cell: SweepCell) -> ScenarioConfig:
    data = dict(base)
    data.update(
        {"name": cell.name, "use_case": cell.use_case, "outstations": cell.outstations, "polling_interval_s": cell.interval}
    )
    if cell.use_case == 0:
        data.pop("adversary", None)
    return ScenarioConfig.from_dict(data, default_name=cell.name)


def run_cell(base: dict, cell: SweepCell, out_dir: str | None) -> dict:
    """Run one sweep cell; failures become rows instead of exceptions."""
    row: dict[str, Any] = {"name": cell.name, "use_case": cell.use_case, "outstations": cell.outstations, "interval_s": cell.interval}
    try:
        cfg = cell_config(base, cell)
        result = run_scenario(cfg)
        if out_dir is not None:
            write_artifacts(result, out_dir)
        d = result.report.to_dict()
        rt = d["retransmission"]
        row.update(
            status="ok",
            n_r=rt["n_r"],
            t_r=rt["t_r"],
            r_r=rt["r_r"],
            r_r_undefined=rt["undefined"],
            rtt_baseline_ms=d["rtt_phases"].get("baseline", {}).get("mean_ms"),
            rtt_attack_ms=d["rtt_phases"].get("attack", {}).get("mean_ms"),
            rtt_max_ms=d["rtt"]["max_ms"],
            frac_above_rto=d["rtt"]["frac_above_rto"],
        )
    except Exception as exc:  # noqa: BLE001 - a failed cell is reported, not raised
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(base: dict, cells: list[SweepCell], out_dir: str | None = None, jobs: int = 1) -> list[dict]:
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, [base] * len(cells), cells, [out_dir] * len(cells)))
    else:
        rows = [run_cell(base, c, out_dir) for c in cells]
    return sorted(rows, key=lambda r: (r["use_case"], r["outstations"], r["interval_s"]))


def sweep_table(rows: list[dict]) -> str:
    head = f"{'scenario':<14} {'N_R':>5} {'T_R[s]':>9} {'R_R[1/s]':>10} {'RTT base[ms]':>13} {'RTT atk[ms]':>12} {'RTT max[ms]':>12}  status"
    lines = [head, "-" * len(head)]

    def f(x, fmt):
        return "-" if x is None else format(x, fmt)

    for r in rows:
        if r["status"] != "ok":
            lines.append(f"{r['name']:<14} {'-':>5} {'-':>9} {'-':>10} {'-':>13} {'-':>12} {'-':>12}  FAILED {r['error']}")
            continue
        rate = "undef" if r["r_r_undefined"] else f(r["r_r"], ".4f")
        lines.append(
            f"{r['name']:<14} {r['n_r']:>5} {f(r['t_r'], '.1f'):>9} {rate:>10} {f(r['rtt_baseline_ms'], '.3f'):>13} "
            f"{f(r['rtt_attack_ms'], '.3f'):>12} {f(r['rtt_max_ms'], '.1f'):>12}  ok"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Processing-time calibration
# --------------------------------------------------------------------------


def calibration_frames(rng: random.Random) -> dict[PacketClass, Frame]:
    """One representative frame per delay class, addressed through the adversary."""
    from dnp3mitm import codec
    from dnp3mitm.netsim.wire import IPv4, Segment

    state = OutstationState.default(FIRST_OUTSTATION_ADDRESS, rng)
    os_ip = outstation_ip(0)
    down = {
        PacketClass.BINARY_DO: codec.build_direct_operate_binary(4, 1, 7, codec.CONTROL_CLOSE),
        PacketClass.ANALOG_DO: codec.build_direct_operate_analog(4, 1, 0, 250.0),
    }
    frames = {}
    for cls, packet in down.items():
        seg = Segment(40000, DNP3_PORT, 1000, 2000, payload=codec.encode_frame(packet))
        frames[cls] = Frame(ADVERSARY_MAC, ROUTER_LAN_MAC, ip=IPv4(MASTER_IP, os_ip, seg))
    response = codec.build_read_response(1, 4, state.points())
    seg = Segment(DNP3_PORT, 40000, 2000, 1018, payload=codec.encode_frame(response))
    frames[PacketClass.READ_RESPONSE] = Frame(ADVERSARY_MAC, outstation_mac(0), ip=IPv4(os_ip, MASTER_IP, seg))
    seg = Segment(DNP3_PORT, 40000, 2000, 1018)
    frames[PacketClass.BYPASS] = Frame(ADVERSARY_MAC, outstation_mac(0), ip=IPv4(os_ip, MASTER_IP, seg))
    return frames


def calibrate_processing(
    samples_per_class: int = 1000, *, seed: int = 0, spacing_ms: float = 100.0, config: AdversaryConfig | None = None
) -> list[CaptureRecord]:
    """Push a paced stream of every delay class through an attacking adversary.

    Frames are spaced wider than any service time so nothing queues. The
    returned capture holds the adversary's ingress/egress records, ready for
    :func:`dnp3mitm.metrics.processing_report`.
    """
    from dnp3mitm.netsim.network import Node

    sim = Simulator()
    lan = Medium(sim, "lan", 1.0)
    gateway = Node(sim, "gateway")
    lan.attach(gateway.add_interface("eth0", ROUTER_LAN_MAC, ROUTER_LAN_IP))
    station = Node(sim, "outstation0")
    lan.attach(station.add_interface("eth0", outstation_mac(0), outstation_ip(0)))
    adv = Adversary(sim, "adversary", config or AdversaryConfig(use_case=1), random.Random(f"{seed}:adversary"))
    lan.attach(adv.add_interface("eth0", ADVERSARY_MAC, ADVERSARY_IP))
    adv.set_victims(ROUTER_LAN_IP, [outstation_ip(0)])
    adv.learn(ROUTER_LAN_IP, ROUTER_LAN_MAC)
    adv.learn(outstation_ip(0), outstation_mac(0))
    adv.tampering = True
    capture = CaptureLog()
    tap(adv.eth0, capture)

    frames = calibration_frames(random.Random(seed))
    order = list(frames)
    rng = random.Random(seed)
    t = 0.0
    for _ in range(samples_per_class):
        rng.shuffle(order)
        for cls in order:
            t += spacing_ms
            frame = frames[cls]
            sim.at(ms(t), lambda f=frame: adv.forward(adv.eth0, f), "calibration")
    sim.run_until(ms(t + 10 * spacing_ms))
    return capture.records
