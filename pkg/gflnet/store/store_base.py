import typing

import pydantic

from ..core import ObjCore


class StoreConfigBase(pydantic.BaseModel):
    """Configuration shared by result stores."""


class ResultStoreBase(ObjCore):
    """Abstract store for result tables.

    Tables are addressed by name (``endpoint``). Concrete stores decide
    where ``dump`` writes and where ``load`` reads. Used as a context
    manager, pending tables are flushed on exit.
    """

    name: str = pydantic.Field(None, description="Store name")
    config: StoreConfigBase = pydantic.Field(
        default=StoreConfigBase(), description="The store configuration"
    )
    logger: typing.Any = pydantic.Field(None, description="Store logger")

    def dict(self, **kwrds):
        kwrds.setdefault("exclude", set()).add("logger")
        return super().dict(**kwrds)

    def count(self, endpoint, **params):
        """Number of rows in a table."""
        raise NotImplementedError(
            "This function must be implemented in class {}".format(self.__class__)
        )

    def put(self, endpoint, data=[], **params):
        raise NotImplementedError(
            "This function must be implemented in class {}".format(self.__class__)
        )

    def get(self, endpoint, **params):
        raise NotImplementedError(
            "This function must be implemented in class {}".format(self.__class__)
        )

    def load(self, **params):
        raise NotImplementedError(
            "This function must be implemented in class {}".format(self.__class__)
        )

    def dump(self, **params):
        raise NotImplementedError(
            "This function must be implemented in class {}".format(self.__class__)
        )

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()
