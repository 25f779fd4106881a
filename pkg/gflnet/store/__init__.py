from .store_base import ResultStoreBase, StoreConfigBase
from .store_dataframe import CSVConfig, CSVStore, DataFrameConfig, DataFrameStore
