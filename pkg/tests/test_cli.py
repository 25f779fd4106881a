import json
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from gflnet.cli import (
    EXIT_OK,
    EXIT_UNCERTIFIED,
    EXIT_UNSTABLE,
    EXIT_USAGE,
    ScenarioConfig,
    load_scenario,
    main,
    parse_perturbation,
)
from gflnet.core import ConfigError
from gflnet.dynamics import StateLayout
from gflnet.netgraph import assemble_admittance, kron_reduce, radial_chain
from gflnet.powerflow import EXISTENCE_BOUND, static_margin


def radial_scenario(n=3, p_hat=1.0, **extra):
    scenario = {
        "radial": {"n": n},
        "inverters": [{"eps_generator": {"eps_i": 0.001}}],
        "injections": {"p_hat": p_hat},
    }
    scenario.update(extra)
    return scenario


LOADED_SCENARIO = {
    "network": {
        "loads": [{"bus": 1, "r_ohm": 20.0}],
        "lines": [
            {"bus_from": 0, "bus_to": 1, "r_ohm": 0.02, "l_henry": 2e-5},
            {"bus_from": 1, "bus_to": 2, "r_ohm": 0.03, "l_henry": 1e-5},
            {"bus_from": 1, "bus_to": 3, "r_ohm": 0.01, "l_henry": 3e-5},
        ],
    },
    "inverters": [
        {"buses": [2], "eps_generator": {"eps_i": 0.001}},
        {
            "buses": [3],
            "raw_gains": {
                "omega_c_pll_rad_s": 1e5,
                "kp_pll": 1.0,
                "ki_pll": 10.0,
                "omega_s_rad_s": 50.0,
                "kp_s": 0.1,
                "ki_s": 1.0,
                "kp_c": 2.0,
                "ki_c": 1e3,
                "l_f_henry": 1e-3,
                "c_f_farad": 2e-3,
            },
        },
    ],
    "injections": {"p_hat": [0.5, 0.3], "q_hat": [0.1, -0.1]},
}


@pytest.fixture
def write_scenario(tmp_path):
    def write(scenario, name="scenario.yaml"):
        path = tmp_path / name
        with open(path, "w") as f:
            yaml.safe_dump(scenario, f)
        return str(path)

    return write


def test_load_radial_scenario(write_scenario):
    config = load_scenario(write_scenario(radial_scenario(n=4, p_hat=0.7)))
    assert isinstance(config, ScenarioConfig)
    assert config.n_inverters == 4
    assert config.n_loads == 0
    assert np.allclose(config.s_ref_hat(), [0.7, 0.0] * 4)
    model = config.network_model()
    assert model.inverter_buses == [1, 2, 3, 4]
    spec = config.radial_family()
    assert spec.n_max == 4
    assert spec.p_hat == pytest.approx(0.7)


def test_load_network_scenario(write_scenario):
    config = load_scenario(write_scenario(LOADED_SCENARIO))
    assert config.n_inverters == 2
    model = config.network_model()
    assert model.load_buses == [1]
    constants = config.inverter_constants(model)
    assert len(constants) == 2
    assert constants[0].tau_pll == pytest.approx(1e-6)
    assert constants[1].tau_pll == pytest.approx(1e-5)
    assert np.allclose(config.s_ref_hat(), [0.5, 0.1, 0.3, -0.1])
    with pytest.raises(ValueError, match="radial scenario"):
        config.radial_family()


@pytest.mark.parametrize(
    "scenario, path",
    [
        ({k: v for k, v in radial_scenario().items() if k != "inverters"}, "inverters"),
        (radial_scenario(network=LOADED_SCENARIO["network"]), "<root>"),
        (radial_scenario(injections={"p_hat": [1.0, 1.0]}), "<root>"),
        (radial_scenario(inverters=[{"eps_generator": {"eps_i": 0.001}, "time_constants": None,
                                     "raw_gains": LOADED_SCENARIO["inverters"][1]["raw_gains"]}]),
         "inverters.0"),
        (radial_scenario(inverters=[{"buses": [1, 2], "eps_generator": {"eps_i": 0.001}}]), "<root>"),
        (radial_scenario(radial={"n": 0}), "radial.n"),
    ],
)
def test_invalid_scenarios_name_the_field(write_scenario, scenario, path):
    with pytest.raises(ConfigError) as info:
        load_scenario(write_scenario(scenario))
    assert path in info.value.paths


def test_load_buses_must_be_contiguous(write_scenario):
    scenario = yaml.safe_load(yaml.safe_dump(LOADED_SCENARIO))
    scenario["network"]["loads"][0]["bus"] = 2
    with pytest.raises(ConfigError, match="load buses"):
        load_scenario(write_scenario(scenario))


def test_unreadable_scenarios(write_scenario, tmp_path):
    with pytest.raises(ConfigError, match="mapping"):
        load_scenario(write_scenario([1, 2, 3]))
    with pytest.raises(ConfigError, match="cannot read"):
        load_scenario(str(tmp_path / "missing.yaml"))


def test_scenario_yaml_round_trip(write_scenario, tmp_path):
    config = load_scenario(write_scenario(LOADED_SCENARIO))
    path = tmp_path / "again.yaml"
    config.to_yaml(str(path))
    assert load_scenario(str(path)).model_dump() == config.model_dump()


def test_parse_perturbation():
    layout = StateLayout(n=2)
    delta = parse_perturbation("0.01", layout, seed=3)
    assert np.max(np.abs(delta)) == pytest.approx(0.01)
    assert np.array_equal(delta, parse_perturbation("0.01", layout, seed=3))
    assert not np.any(parse_perturbation("0", layout))
    named = parse_perturbation("inv1.delta=0.1, inv0.v_o_Q=-0.02", layout)
    labels = layout.labels()
    assert named[labels.index("inv1.delta")] == pytest.approx(0.1)
    assert named[labels.index("inv0.v_o_Q")] == pytest.approx(-0.02)
    assert np.count_nonzero(named) == 2
    with pytest.raises(ConfigError, match="unknown state"):
        parse_perturbation("inv7.delta=0.1", layout)
    with pytest.raises(ConfigError, match="malformed"):
        parse_perturbation("large", layout)


def test_main_powerflow(write_scenario, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["--out-dir", str(out), "powerflow", write_scenario(radial_scenario(n=10))])
    assert code == EXIT_OK
    assert "done" in capsys.readouterr().out
    with open(out / "report.yaml") as f:
        report = yaml.safe_load(f)
    assert report["command"] == "powerflow"
    assert report["exit_code"] == EXIT_OK
    assert report["results"]["residual_power"] <= 1e-10
    assert report["existence_margin"] <= EXISTENCE_BOUND
    assert "dominant" in report["epsilon"]
    df = pd.read_csv(out / "powerflow.csv")
    assert df["bus"].tolist() == list(range(1, 11))


def test_main_powerflow_uncertified(write_scenario, tmp_path):
    model = radial_chain(1, 0.02, 2e-5)
    red = kron_reduce(assemble_admittance(model), model)
    p_hat = 1.2 * EXISTENCE_BOUND / static_margin(red, 1.0)
    code = main(["--out-dir", str(tmp_path), "powerflow", write_scenario(radial_scenario(n=1, p_hat=p_hat))])
    assert code == EXIT_UNCERTIFIED


def test_main_certify(write_scenario, tmp_path):
    scenario = write_scenario(radial_scenario(n=3))
    code = main(["--out-dir", str(tmp_path), "--json", "certify", scenario, "--method", "m-matrix"])
    assert code == EXIT_OK
    with open(tmp_path / "certificate.json") as f:
        cert = json.load(f)
    assert cert["verdict"] == "stable"
    assert cert["caveat"]
    with open(tmp_path / "report.json") as f:
        report = json.load(f)
    assert report["results"]["method"] == "m-matrix"
    assert report["outputs"][-1].endswith("report.json")
    assert os.path.abspath(scenario) == report["inputs"]["scenario"]


def test_main_certify_metzler_needs_resistive_network(write_scenario, tmp_path):
    code = main(["--out-dir", str(tmp_path), "certify", write_scenario(radial_scenario()), "--method", "n-metzler-lp"])
    assert code == EXIT_USAGE


def test_main_certify_resistive_network(write_scenario, tmp_path):
    scenario = radial_scenario(n=2, p_hat=0.5, radial={"n": 2, "l_henry": 0.0})
    code = main(["--out-dir", str(tmp_path), "certify", write_scenario(scenario), "--method", "n-metzler-lp"])
    assert code == EXIT_OK


def test_main_simulate(write_scenario, tmp_path):
    scenario = write_scenario(radial_scenario(n=2))
    code = main(
        ["--out-dir", str(tmp_path), "simulate", scenario, "--t-end", "0.002", "--perturb", "1e-6", "--samples", "5"]
    )
    assert code == EXIT_OK
    df = pd.read_csv(tmp_path / "trajectory.csv")
    assert len(df) == 5
    with open(tmp_path / "report.yaml") as f:
        results = yaml.safe_load(f)["results"]
    assert results["initial_deviation"] == pytest.approx(1e-6)


def test_main_simulate_unknown_state(write_scenario, tmp_path):
    scenario = write_scenario(radial_scenario(n=2))
    code = main(["--out-dir", str(tmp_path), "simulate", scenario, "--perturb", "inv9.delta=0.1"])
    assert code == EXIT_USAGE


def test_main_spl(write_scenario, tmp_path):
    scenario = write_scenario(radial_scenario(n=3))
    code = main(
        ["--out-dir", str(tmp_path), "spl", scenario, "--methods", "static,m-matrix", "--p-grid", "0.5,1.0"]
    )
    assert code == EXIT_OK
    df = pd.read_csv(tmp_path / "table_ii.csv")
    assert df["p_hat"].tolist() == [0.5, 1.0]
    assert df["SPL_static"].tolist() == [3, 3]


def test_usage_errors(write_scenario, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["certify"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["certify", write_scenario(radial_scenario()), "--method", "lyapunov"])
    assert info.value.code == EXIT_USAGE
    assert main(["--out-dir", str(tmp_path), "powerflow", str(tmp_path / "missing.yaml")]) == EXIT_USAGE


@pytest.mark.slow
@pytest.mark.parametrize("n, method, expected", [(20, "m-matrix", EXIT_OK), (23, "full-eig", EXIT_UNSTABLE)])
def test_main_certify_published_sizes(write_scenario, tmp_path, n, method, expected):
    scenario = write_scenario(radial_scenario(n=n))
    assert main(["--out-dir", str(tmp_path), "certify", scenario, "--method", method]) == expected
