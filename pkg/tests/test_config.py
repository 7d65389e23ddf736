from pathlib import Path

import pytest

from probewalk.config import ConfigError, load_config, parse_override
from probewalk.terrain import PlankField, RigidTerrain

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


def test_defaults_load():
    cfg = load_config()
    assert isinstance(cfg.terrain(), RigidTerrain)
    assert cfg.probing_enabled and not cfg.vfa_enabled
    assert cfg.num("planner", "stride") == 4.0


@pytest.mark.parametrize("name", ["planks", "missing_planks", "rigid", "rocks"])
def test_shipped_scenarios_load(name):
    cfg = load_config(SCEN / f"{name}.cfg")
    assert cfg.name == name
    assert cfg.robot.leg_height == pytest.approx(0.40)


def test_plank_scenario_is_blind():
    cfg = load_config(SCEN / "planks.cfg")
    assert not cfg.vfa_enabled
    field = cfg.terrain()
    assert isinstance(field, PlankField) and field.length == pytest.approx(1.0)


@pytest.mark.parametrize(
    "item, parsed",
    [("modes.probing_enabled=false", ("modes", "probing_enabled", "false")),
     ("seed = 3", (None, "seed", "3")),
     ("terrain.removed=0:1 1:2", ("terrain", "removed", "0:1 1:2"))],
)
def test_parse_override(item, parsed):
    assert parse_override(item) == parsed


def test_override_applies_and_resolves_bare_keys():
    cfg = load_config(SCEN / "planks.cfg", ["probing_enabled=false", "scenario.seed=4", "stiffness=30"])
    assert not cfg.probing_enabled
    assert cfg.seed == 4
    assert cfg.get("terrain", "stiffness") == "30"


def test_with_overrides_leaves_original():
    cfg = load_config()
    other = cfg.with_overrides(["planner.alpha=0.05"])
    assert cfg.num("planner", "alpha") == 0.04 and other.num("planner", "alpha") == 0.05


@pytest.mark.parametrize(
    "overrides",
    [["planner.alpha=-1"], ["modes.probing_enabled=maybe"], ["nosuch.key=1"], ["planner.bogus=1"],
     ["noequals"], ["sim.torque_noise=-0.1"], ["terrain.variant=Lava"], ["scenario.robot_file=missing.ini"],
     ["fsm.contact_threshold=abc"]],
)
def test_invalid_overrides(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_unknown_section_in_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[weird]\na = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_robot_file_relative_to_config(tmp_path):
    (tmp_path / "r.ini").write_text((SCEN / "robot.ini").read_text())
    p = tmp_path / "s.cfg"
    p.write_text("[scenario]\nrobot_file = r.ini\n")
    assert load_config(p).robot.mass == pytest.approx(load_config(SCEN / "rigid.cfg").robot.mass)
