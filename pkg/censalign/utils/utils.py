import json
import logging
import os
from typing import Any, Optional

import numpy as np
import pandas as pd


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy containers and scalars into JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


class BaseClass:
    """Base Class for common utility functions: logging and result file I/O"""

    def __init__(self, logger: Optional[logging.Logger] = None) -> None:
        """
        Set up the logger.
        """
        self.logger = logger if logger is not None else logging.getLogger(__name__)

    def write_json(self, payload: Any, path: str) -> None:
        """
        Write a JSON document (numpy values converted) with stable key order.

        Args:
            payload: object to serialize
            path: destination file
        """
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as file:
            json.dump(to_jsonable(payload), file, indent=2)
            file.write("\n")
        self.logger.info("Saved %s", path)

    def read_json(self, path: str) -> Any:
        """
        Read a JSON document.

        Args:
            path: file to read

        Returns:
            Parsed document
        """
        self.logger.info("Reading %s", path)
        with open(path, "r", encoding="utf-8") as file:
            return json.load(file)

    def save_table(self, df: pd.DataFrame, path: str) -> None:
        """
        Save a table as CSV.

        Args:
            df: data to save
            path: destination CSV file
        """
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n")
        self.logger.info("Saved %s rows to %s", len(df), path)
