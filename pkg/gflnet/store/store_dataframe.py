import glob
import json
import os
import pathlib
import tempfile
import typing

import pandas as pd
import pydantic
import yaml

from .store_base import ResultStoreBase, StoreConfigBase


class DataFrameConfig(StoreConfigBase):

    path: str = pydantic.Field(None, description="Data path")

    index_prefix: str = pydantic.Field("idx__", description="Column prefix marking a saved index")

    load_params: dict = pydantic.Field({}, description="Extra pandas.read_csv arguments")

    dump_params: dict = pydantic.Field({}, description="Extra DataFrame.to_csv arguments")


class CSVConfig(DataFrameConfig):

    path: str = pydantic.Field(".", description="Output directory")

    file_pattern: str = pydantic.Field("*.csv", description="Tables picked up by load()")

    json_mirror: bool = pydantic.Field(False, description="Write records as JSON instead of YAML")


def atomic_write(filename, writer, mode="w"):
    """Writes through a temporary file in the target directory, then renames."""
    dirname = os.path.dirname(os.path.abspath(filename))
    fd, tmp_name = tempfile.mkstemp(dir=dirname, prefix=".tmp_", suffix=os.path.basename(filename))
    try:
        with os.fdopen(fd, mode, encoding="utf-8", newline="") as tmp_file:
            writer(tmp_file)
        os.replace(tmp_name, filename)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def as_frame(data):
    """DataFrame from a DataFrame, a single row dict or a list of row dicts."""
    if isinstance(data, pd.DataFrame):
        return data
    if isinstance(data, dict):
        return pd.DataFrame([data])
    return pd.DataFrame(list(data))


class DataFrameStore(ResultStoreBase):
    """In-memory result tables, one DataFrame per table name."""

    tables: typing.Dict[str, typing.Any] = pydantic.Field(
        dict(), description="Result tables by name"
    )

    is_modified: typing.Dict[str, bool] = pydantic.Field(
        dict(), description="Tables changed since the last dump"
    )

    config: DataFrameConfig = pydantic.Field(DataFrameConfig(), description="The store configuration")

    def tables_to_dump(self, names=None):
        """Copies of the selected tables with a named index moved into a tagged column."""
        names = self.tables.keys() if names is None else names
        out = {}
        for name in names:
            df = self.tables[name]
            if df.index.name:
                tagged = self.config.index_prefix + df.index.name
                out[name] = df.reset_index().rename(columns={df.index.name: tagged})
            else:
                out[name] = df.copy()
        return out

    def restore_indexes(self):
        prefix = self.config.index_prefix
        for name, df in self.tables.items():
            tagged = [col for col in df.columns if col.startswith(prefix)]
            if tagged:
                renamed = {col: col[len(prefix):] for col in tagged}
                self.tables[name] = df.rename(columns=renamed).set_index(list(renamed.values()))
        self.is_modified = {name: False for name in self.tables}

    def count(self, endpoint, **params):
        return len(self.tables[str(endpoint)])

    def get(self, endpoint, **params):
        return self.tables[str(endpoint)]

    def put(self, endpoint, data=[], clear=False, update=True, **params):
        """Appends rows to a table.

        With ``update`` and a named index on both sides, rows whose index
        already exists are overwritten instead of appended.
        """
        name = str(endpoint)
        new = as_frame(data)
        current = None if clear else self.tables.get(name)

        if current is None or len(current) == 0:
            self.tables[name] = new.copy()
        elif update and current.index.name and new.index.name:
            current = current.copy()
            shared = new.index.intersection(current.index)
            current.loc[shared] = new.loc[shared]
            self.tables[name] = pd.concat([current, new.loc[new.index.difference(current.index)]])
        else:
            self.tables[name] = pd.concat([current, new], ignore_index=not current.index.name)

        self.is_modified[name] = True


class CSVStore(DataFrameStore):
    """One CSV per table plus structured records, all written atomically."""

    config: CSVConfig = pydantic.Field(CSVConfig(), description="The store configuration")

    manifest: typing.List[str] = pydantic.Field([], description="Paths written so far")

    def __init__(self, **data: typing.Any):
        super().__init__(**data)
        if self.name is None:
            self.name = os.path.basename(os.path.normpath(self.config.path))

    def load(self, **params):
        """Reads every table matching ``config.file_pattern``."""
        for filename in glob.glob(os.path.join(self.config.path, self.config.file_pattern)):
            name = os.path.splitext(os.path.basename(filename))[0]
            self.tables[name] = pd.read_csv(filename, **self.config.load_params)
        self.restore_indexes()

    def dump(self, data_list=None, if_modified=False, **params):
        """Writes tables as ``<name>.csv``."""
        pathlib.Path(self.config.path).mkdir(parents=True, exist_ok=True)
        dump_params = dict(self.config.dump_params, index=False)

        for name, df in self.tables_to_dump(data_list).items():
            if if_modified and not self.is_modified.get(name, True):
                continue
            filename = os.path.join(self.config.path, f"{name}.csv")
            atomic_write(filename, lambda f: df.to_csv(f, **dump_params))
            self.is_modified[name] = False
            self._register(filename)

    def put_record(self, name, record):
        """Writes a structured record as ``<name>.yaml`` (or ``.json``)."""
        pathlib.Path(self.config.path).mkdir(parents=True, exist_ok=True)

        if self.config.json_mirror:
            filename = os.path.join(self.config.path, f"{name}.json")
            atomic_write(filename, lambda f: json.dump(record, f, indent=2, default=str))
        else:
            filename = os.path.join(self.config.path, f"{name}.yaml")
            atomic_write(filename, lambda f: yaml.safe_dump(record, f, sort_keys=False))

        self._register(filename)
        return filename

    def _register(self, filename):
        if filename not in self.manifest:
            self.manifest.append(filename)
        if self.logger:
            self.logger.info(f"wrote {filename}")

    def close(self):
        if any(self.is_modified.values()):
            self.dump(if_modified=True)
