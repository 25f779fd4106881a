import copy

import pydantic
import yaml


class GflnetError(Exception):
    """Root of every error raised by gflnet."""


class ModelError(GflnetError, ValueError):
    """Invalid model input or violated precondition."""


class ConfigError(ModelError):
    """Scenario validation failure.

    Args:
        message: Human readable summary.
        paths: Dotted paths of the offending fields.
    """

    def __init__(self, message, paths=None):
        super().__init__(message)
        self.paths = list(paths or [])


class NumericalError(GflnetError, ArithmeticError):
    """Numerical procedure failed (singular solve, eigensolver, integrator).

    Args:
        message: Human readable summary.
        t_last: Last accepted time when raised by an integrator.
    """

    def __init__(self, message, t_last=None):
        super().__init__(message)
        self.t_last = t_last


class NonConvergenceError(NumericalError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ObjCore(pydantic.BaseModel):
    """Base model of every gflnet record, able to rebuild itself from YAML."""

    model_config = pydantic.ConfigDict(
        arbitrary_types_allowed=True,
        validate_assignment=False,
    )

    @classmethod
    def get_subclasses(cls, recursive=True):
        """Subclasses of ``cls``, including indirect ones when ``recursive``."""
        found = cls.__subclasses__()
        if recursive:
            for subcls in list(found):
                found.extend(subcls.get_subclasses(recursive))
        return found

    @classmethod
    def from_yaml(
        cls,
        file_path: str,
        add_cls=True,
        attr_header=None,
        cls_attr=None,
    ):
        """Loads a model from a YAML mapping.

        Args:
            file_path: YAML file.
            add_cls: Defaults the ``cls`` key to this class name.
            attr_header: Reads the mapping found under this key instead.
            cls_attr: Forces the ``cls`` key.
        """
        with open(file_path, "r", encoding="utf-8") as yaml_file:
            obj_dict = yaml.load(yaml_file, Loader=yaml.SafeLoader)
        if attr_header:
            obj_dict = obj_dict[attr_header]
        if add_cls:
            obj_dict.setdefault("cls", cls.__name__)
        if cls_attr:
            obj_dict["cls"] = cls_attr
        return cls.from_dict(obj_dict)

    @classmethod
    def from_dict(basecls, obj):
        """Rebuilds nested models; a mapping with a ``cls`` key becomes that ObjCore subclass."""
        if isinstance(obj, list):
            return [basecls.from_dict(value) for value in obj]
        if not isinstance(obj, dict):
            return obj

        obj_copy = {key: basecls.from_dict(value) for key, value in copy.deepcopy(obj).items()}
        if "cls" not in obj_copy:
            return obj_copy

        clsname = obj_copy.pop("cls")
        cls = {sub.__name__: sub for sub in ObjCore.get_subclasses()}.get(clsname)
        if cls is None:
            raise ModelError(f"{clsname} is not a subclass of {ObjCore.__name__}")
        return cls(**obj_copy)

    def update(self, **new_data):
        for field, value in new_data.items():
            setattr(self, field, value)

    def dict(self, **kwrds):
        return dict({"cls": self.__class__.__name__}, **self.model_dump(**kwrds))
