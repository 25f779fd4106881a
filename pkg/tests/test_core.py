import pytest
import yaml

from gflnet.core import (
    ConfigError,
    GflnetError,
    ModelError,
    NonConvergenceError,
    NumericalError,
    ObjCore,
)
from gflnet.inverter import TimeConstants
from gflnet.netgraph import Line, NetworkModel


def test_error_hierarchy():
    assert issubclass(ConfigError, ModelError)
    assert issubclass(ModelError, ValueError)
    assert issubclass(NonConvergenceError, NumericalError)
    assert issubclass(NumericalError, ArithmeticError)
    assert issubclass(NumericalError, GflnetError)
    err = NonConvergenceError("stuck", residual=0.1, iterations=7)
    assert (err.residual, err.iterations) == (0.1, 7)
    assert ConfigError("bad", paths=["run.tol"]).paths == ["run.tol"]
    assert NumericalError("stopped", t_last=0.3).t_last == 0.3


def test_subclasses_are_enumerated():
    names = {cls.__name__ for cls in ObjCore.get_subclasses()}
    assert {"NetworkModel", "Line", "TimeConstants"} <= names


def test_from_dict_resolves_nested_classes():
    obj = ObjCore.from_dict(
        {
            "cls": "NetworkModel",
            "n_inverters": 1,
            "lines": [{"cls": "Line", "bus_from": 0, "bus_to": 1, "r_ohm": 0.02, "l_henry": 2e-5}],
        }
    )
    assert isinstance(obj, NetworkModel)
    assert isinstance(obj.lines[0], Line)
    assert ObjCore.from_dict({"a": [1, {"b": 2}]}) == {"a": [1, {"b": 2}]}
    with pytest.raises(ModelError, match="not a subclass"):
        ObjCore.from_dict({"cls": "Inverter"})


def test_from_yaml_with_header(tmp_path):
    path = tmp_path / "line.yaml"
    with open(path, "w") as f:
        yaml.safe_dump({"feeder": {"bus_from": 0, "bus_to": 3, "r_ohm": 0.1, "l_henry": 0.0}}, f)
    line = Line.from_yaml(str(path), attr_header="feeder")
    assert line.bus_to == 3


def test_dict_and_update():
    line = Line(bus_from=0, bus_to=1, r_ohm=0.02, l_henry=2e-5)
    assert line.dict()["cls"] == "Line"
    line.update(r_ohm=0.05)
    assert line.r_ohm == 0.05
    tc = TimeConstants(
        tau_pll=1e-6, tau_p_pll=1e-6, t_pll=1e-3, tau_s=1e-3, tau_p_s=17.0, t_s=1e-2,
        tau_c=1e-6, t_c=1e-6, tau_lc=1e-5, tau_p_lc=1e-5, tau_pp_lc=0.5,
    )
    assert ObjCore.from_dict(tc.dict()) == tc
