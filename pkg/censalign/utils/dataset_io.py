"""
JSON Lines codec for datasets.

Line 1 is a header ``{"dim": D, "link": "sigmoid", "provenance": "..."}``
(plus optional ``"degree"`` and ``"k"``);
every following line is one trajectory with ``null`` for missing cells.
Floats are written with their shortest round-trip representation, so the
output is byte-identical for identical datasets.
"""

import json
import logging
import os
from typing import Any, Dict, List

from censalign.exceptions import DataValidationError
from censalign.schemas import LinkSpec
from censalign.utils.data import Dataset, Trajectory

logger = logging.getLogger(__name__)


def _header(dataset: Dataset) -> Dict[str, Any]:
    header: Dict[str, Any] = {
        "dim": dataset.dim,
        "link": dataset.link.family.value,
        "provenance": dataset.provenance,
    }
    if not dataset.link.is_default_degree:
        header["degree"] = dataset.link.degree
    if dataset.n_subtypes is not None:
        header["k"] = dataset.n_subtypes
    return header


def _record(traj: Trajectory) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "id": traj.id,
        "times": [float(t) for t in traj.times],
        "values": traj.rows(),
    }
    if traj.true_subtype is not None:
        record["true_subtype"] = int(traj.true_subtype)
    if traj.true_delta is not None:
        record["true_delta"] = float(traj.true_delta)
    if traj.censor_shift:
        record["censor_shift"] = float(traj.censor_shift)
    return record


def dumps_dataset(dataset: Dataset) -> str:
    lines = [json.dumps(_header(dataset))]
    lines.extend(json.dumps(_record(t)) for t in dataset.trajectories)
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataValidationError("Dataset file is empty (missing header line)")
    try:
        header = json.loads(lines[0])
        link = LinkSpec.parse(header["link"], header.get("degree"))
        dim = int(header["dim"])
        n_subtypes = int(header["k"]) if header.get("k") is not None else None
    except (KeyError, TypeError, ValueError) as e:
        raise DataValidationError(f"Invalid dataset header: {e}") from e

    trajectories: List[Trajectory] = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            trajectories.append(
                Trajectory.from_rows(
                    id=str(record["id"]),
                    times=record["times"],
                    rows=record["values"],
                    true_subtype=record.get("true_subtype"),
                    true_delta=record.get("true_delta"),
                    censor_shift=record.get("censor_shift", 0.0),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataValidationError(f"Invalid trajectory on line {line_no}: {e}") from e
    return Dataset(tuple(trajectories), dim, link, header.get("provenance", ""), n_subtypes)


def write_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset as JSON Lines, creating the parent directory if needed."""
    logger.info("Saving %s trajectories to %s", len(dataset), path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        file.write(dumps_dataset(dataset))


def read_dataset(path: str) -> Dataset:
    logger.info("Reading dataset: %s", path)
    with open(path, "r", encoding="utf-8") as file:
        dataset = loads_dataset(file.read())
    logger.info("Retrieved %s trajectories (dim=%s)", len(dataset), dataset.dim)
    return dataset
