import textwrap

import pytest

from pcalderon import config
from pcalderon.geometry import Kind

MINIMAL = """\
scenario:
  domain: {kind: circle, center: [0.0, 0.0], radius: 1.0}
  inclusions:
    - {kind: superconducting, shape: circle, center: [0.2, 0.0], radius: 0.3}
method: enclosure
"""


def parse(text):
    return config.parse_config_text(textwrap.dedent(text))


def test_minimal_config_gets_defaults():
    cfg = parse(MINIMAL)
    assert cfg.method == "enclosure" and cfg.seed == 0 and cfg.threads == 1
    assert cfg.scenario.p == 2.0 and cfg.scenario.inclusions[0].kind == Kind.SUPERCONDUCTING
    assert cfg.enclosure["directions"] == 32 and list(cfg.enclosure["tau_grid"]) == [8, 12, 16, 24, 32, 40]
    assert cfg.probe["k"] == 20 and cfg.probe["factor"] == 10
    assert str(cfg.out_dir) == "out"


def test_section_overrides_merge_with_defaults():
    cfg = parse(MINIMAL + "enclosure: {directions: 8}\noutput: {dir: results, svg: true}\n")
    assert cfg.enclosure["directions"] == 8 and cfg.enclosure["h_max"] == 0.1
    assert cfg.output["svg"] is True and str(cfg.out_dir) == "results"


def test_exponent_one_is_rejected():
    with pytest.raises(config.ValidationError) as exc:
        parse(MINIMAL.replace("method: enclosure", "  p: 1.0\nmethod: enclosure"))
    assert "BadExponent" in exc.value.codes


def test_unknown_key_reports_its_line():
    text = MINIMAL + "output:\n  dir: out\n  colour: red\n"
    with pytest.raises(config.ParseError) as exc:
        parse(text)
    issue = exc.value.issues[0]
    assert issue.code == "UnknownKey" and issue.key == "output.colour" and issue.line == 8
    assert "line 8: output.colour: unknown key [UnknownKey]" in str(exc.value)


def test_all_validation_errors_are_collected():
    text = MINIMAL.replace("method: enclosure", "method: enclosure\nseed: -1\nthreads: 0") + \
        "enclosure: {directions: 2, tau_grid: [16, 8]}\nprobe: {t_max: 1.0}\n"
    with pytest.raises(config.ValidationError) as exc:
        parse(text)
    keys = {i.key for i in exc.value.issues}
    assert {"seed", "threads", "probe.t_max", "enclosure.directions", "enclosure.tau_grid"} <= keys


def test_parse_errors_precede_validation():
    # an unknown key and an invalid value: only the structural problem is reported
    with pytest.raises(config.ParseError):
        parse(MINIMAL + "seed: -3\nbogus: 1\n")


def test_missing_and_malformed_entries():
    with pytest.raises(config.ParseError):
        parse("method: enclosure\n")
    with pytest.raises(config.ValidationError) as exc:
        parse(MINIMAL.replace("method: enclosure", "method: tomography"))
    assert "BadMethod" in exc.value.codes
    with pytest.raises(config.ConfigError):
        parse("scenario: [1, 2\n")


def test_method_scenario_compatibility():
    ins = MINIMAL.replace("superconducting", "insulating")
    with pytest.raises(config.ValidationError) as exc:
        parse(ins.replace("method: enclosure", "method: probe"))
    assert "ProbeUnsupported" in exc.value.codes
    with pytest.raises(config.ValidationError) as exc:
        parse(ins.replace("method: enclosure", "method: bem-crosscheck"))
    assert "BemUnsupported" in exc.value.codes


def test_geometry_errors_surface_as_issues():
    text = MINIMAL.replace("radius: 0.3", "radius: 0.95")
    with pytest.raises(config.ValidationError):
        parse(text)


def test_parse_config_reads_files(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(MINIMAL)
    assert config.parse_config(path).source == str(path)
    with pytest.raises(FileNotFoundError):
        config.parse_config(tmp_path / "missing.yaml")
