import json

from fiberround.atlas import trivial_atlas_spec
from fiberround.cli import (
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_PRECONDITION,
    build_parser,
    config_from_args,
    main,
)


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_flow_s2_writes_artifacts(tmp_path):
    assert run(tmp_path, "flow-s2", "--seed", "3", "--dt-max", "0.1") == EXIT_OK
    header = (tmp_path / "flow_s2_trace.csv").read_text().splitlines()[0]
    assert header == "time,area_or_volume,K_min,K_max,ratio,residual"
    assert (tmp_path / "flow_s2_convergence.svg").exists()
    assert (tmp_path / "summary.txt").read_text().startswith("status: converged")


def test_flow_s2_not_converged_keeps_trace(tmp_path):
    assert run(tmp_path, "flow-s2", "--max-time", "0.05") == EXIT_NOT_CONVERGED
    assert (tmp_path / "flow_s2_trace.csv").exists()


def test_flow_s2_rejects_unpinched_data(tmp_path):
    assert run(tmp_path, "flow-s2", "--init", "modes", "--modes", "2,0,1.0") == EXIT_PRECONDITION
    assert "precondition" in (tmp_path / "summary.txt").read_text()


def test_flow_s3_reports_volume_oracle(tmp_path):
    assert run(tmp_path, "flow-s3", "--lambdas", "1,1,0.8") == EXIT_OK
    text = (tmp_path / "summary.txt").read_text()
    assert "volume-oracle lambda: 0.928317766" in text


def test_flow_s3_rejects_unpinched(tmp_path):
    assert run(tmp_path, "flow-s3", "--lambdas", "1,1,0.3") == EXIT_PRECONDITION


def test_cartan_round_is_identity(tmp_path):
    assert run(tmp_path, "cartan", "--depth", "2") == EXIT_OK
    rows = dict(line.split(",") for line in (tmp_path / "cartan_report.csv").read_text().splitlines()[1:])
    assert float(rows["identity_distance"]) < 1e-10
    assert (tmp_path / "sphere_map.txt").exists()


def test_cartan_rejects_non_round(tmp_path):
    assert run(tmp_path, "cartan", "--metric", "modes", "--modes", "2,0,0.05") == EXIT_PRECONDITION


def test_reduce_is_reproducible(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert run(d, "reduce", "--preset", "rotation", "--samples", "6", "--sequential") == EXIT_OK
        outs.append((d / "cocycle.csv").read_bytes())
    assert outs[0] == outs[1]
    assert "pass" in (tmp_path / "0" / "summary.txt").read_text()


def test_reduce_rejects_unpinched_atlas(tmp_path):
    spec = trivial_atlas_spec(4)
    spec["fiber_metric"]["modes"] = [[2, 0, "1.0"]]
    path = tmp_path / "atlas.json"
    path.write_text(json.dumps(spec))
    assert run(tmp_path, "reduce", "--atlas", str(path)) == EXIT_PRECONDITION
    assert run(tmp_path, "reduce", "--atlas", str(tmp_path / "missing.json")) == EXIT_PRECONDITION


def test_obstruction_presets(tmp_path):
    for name in ("example-3.3", "example-3.4"):
        assert run(tmp_path / name, "obstruction", "--preset", name) == EXIT_OK
        assert (tmp_path / name / "verdict.txt").read_text() == "NoCovering\n"
    assert run(tmp_path / "raw", "obstruction", "--preset", "example-3.4", "--no-propagate") == EXIT_OK
    assert (tmp_path / "raw" / "verdict.txt").read_text() == "Undecided\n"


def test_config_file_overrides(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"dt_max": 0.03, "seed": 7}))
    args = build_parser().parse_args(["flow-s2", "--config", str(cfg_path)])
    cfg = config_from_args(args)
    assert cfg.flow.dt_max == 0.03 and cfg.seed == 7
    cfg_path.write_text(json.dumps({"bogus": 1}))
    assert main(["flow-s2", "--config", str(cfg_path), "--out", str(tmp_path)]) == EXIT_PRECONDITION
    assert "bogus" in (tmp_path / "summary.txt").read_text()


def test_reduce_defaults_to_bundle_tolerance():
    cfg = config_from_args(build_parser().parse_args(["reduce"]))
    assert cfg.flow.convergence_tol == 1e-10 and cfg.workers >= 1
    assert config_from_args(build_parser().parse_args(["reduce", "--sequential"])).workers == 1
