from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdmix.config import ConfigError, Modulation, parse_config, read_config


def errors_of(text: str, **kw) -> list[str]:
    with pytest.raises(ConfigError) as info:
        parse_config(text, **kw)
    return info.value.errors


def test_defaults_and_values():
    cfg = parse_config("command = solve\n[material]\nbeta = 2\n[loads]\nbody = 1, -2\n")
    assert cfg.command == "solve"
    assert cfg["material"]["beta"] == 2.0 and cfg["material"]["eta"] == 0.5
    assert cfg["loads"]["body"] == (1.0, -2.0)
    assert cfg["loads"]["zeta"](0.25) == 0.25
    assert cfg.probe_times() == (0.5, 1.0) and cfg.cost_time() == 1.0
    assert ("material", "beta") in cfg.explicit and ("material", "eta") not in cfg.explicit


def test_command_line_supplies_or_must_match_command():
    assert parse_config("[friction]\ng = 0.2\n", command="verify").command == "verify"
    errs = errors_of("command = solve\n", command="verify")
    assert errs == ["line 1: config command 'solve' conflicts with command line 'verify'"]
    assert "missing required key 'command'" in errors_of("[friction]\ng = 0.2\n")


def test_every_error_is_reported_with_its_line():
    text = "\n".join([
        "command = solve",          # 1
        "[material]",               # 2
        "beta = -1",                # 3
        "nu = 0.3",                 # 4
        "[time]",                   # 5
        "N = ten",                  # 6
        "N = 5",                    # 7
        "[solver]",                 # 8
        "tol",                      # 9
        "[physics]",                # 10
        "x = 1",                    # 11
    ])
    errs = errors_of(text)
    assert [e.split(":")[0] for e in errs] == [f"line {n}" for n in (3, 4, 6, 7, 9, 10, 11)]
    assert "requires β ≥ 0" in errs[0]
    assert "unknown key 'nu'" in errs[1]
    assert "expected integer" in errs[2]
    assert "duplicate key 'N'" in errs[3]


def test_duplicate_key_points_at_first_definition():
    errs = errors_of("command = solve\n[time]\nN = 5\nN = 6\n")
    assert errs == ["line 4: duplicate key 'N' in [time] (first set on line 3)"]


def test_cross_checks(tmp_path):
    errs = errors_of("command = solve\n[time]\nT = 1\nN = 4\n[family]\nprobe_times = 0.3\n"
                     "[cost]\nt = 0.1\n[mesh]\nfile = nowhere.msh\n", base_dir=tmp_path)
    assert any("probe time 0.3" in e for e in errs)
    assert any("cost time 0.1" in e for e in errs)
    assert any("does not exist" in e for e in errs)
    errs = errors_of("command = optimize\n[box]\nlo = 3, 0.25, 0.5, 0.5, 0.5, 0.0001\n")
    assert any("empty along beta" in e for e in errs)
    assert any("lower bound of g" in e for e in errs)


def test_read_config_resolves_mesh_relative_to_file(tmp_path):
    (tmp_path / "m.txt").write_text("")
    (tmp_path / "run.cfg").write_text("command = solve\n[mesh]\nfile = m.txt\n")
    cfg = read_config(tmp_path / "run.cfg")
    assert cfg.mesh_file == tmp_path / "m.txt"


def test_echo_round_trips():
    cfg = parse_config("command = study-convergence\n[family]\nfixed = beta, g\nschedule = 1, 3\n"
                       "[loads]\ntheta = 1 + sin(pi * t)\n")
    again = parse_config(cfg.echo())
    assert again.sections == cfg.sections


def test_modulation_expressions():
    assert Modulation("2 * t + 1")(0.5) == 2.0
    assert Modulation("exp(-t) * cos(pi * t)")(1.0) == pytest.approx(-math.exp(-1.0))
    assert Modulation("max(0, t - 0.5)")(0.25) == 0.0
    assert Modulation("-t ** 2")(3.0) == -9.0


@pytest.mark.parametrize("source", ["__import__('os')", "t.real", "lambda: 1", "[t]", "open('x')",
                                    "t if t else 1", "x + 1", "sin(t, k=1)", "2 +"])
def test_modulation_rejects_unsafe_or_invalid(source):
    with pytest.raises(ValueError):
        Modulation(source)


def test_modulation_reports_domain_errors():
    m = Modulation("sqrt(1 - t)")
    with pytest.raises(ValueError, match="t=2"):
        m(2.0)
    with pytest.raises(ValueError):
        Modulation("1 / t")  # fails already at t = 0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_modulation_affine(a, b):
    m = Modulation(f"{a!r} * t + {b!r}")
    assert m(2.0) == pytest.approx(2 * a + b, rel=1e-12, abs=1e-9)
