"""Round-trip-safe JSON serialization for every calibrator model kind.

Files are a single JSON object tagged by "type": platt, temperature,
isotonic, gbm, or identity (the pass-through used to evaluate uncalibrated
scores).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .calibrators import IsotonicModel, PlattModel, TemperatureModel
from .errors import CompatibilityError
from .gbm import GbmEnsemble, gbm_from_dict, gbm_to_dict


@dataclass(frozen=True)
class IdentityModel:
    """Pass-through: evaluates the raw score as the confidence."""


CalibratorModel = PlattModel | TemperatureModel | IsotonicModel | GbmEnsemble | IdentityModel


def model_to_dict(m: CalibratorModel) -> dict:
    if isinstance(m, PlattModel):
        return {"type": "platt", "a": m.a, "b": m.b}
    if isinstance(m, TemperatureModel):
        return {"type": "temperature", "t": m.t}
    if isinstance(m, IsotonicModel):
        return {"type": "isotonic",
                "boundaries": m.boundaries.tolist(),
                "values": m.values.tolist()}
    if isinstance(m, GbmEnsemble):
        return gbm_to_dict(m)
    if isinstance(m, IdentityModel):
        return {"type": "identity"}
    raise CompatibilityError(f"unknown model object {type(m).__name__}")


def model_from_dict(d: dict) -> CalibratorModel:
    kind = d.get("type")
    if kind == "platt":
        return PlattModel(a=float(d["a"]), b=float(d["b"]))
    if kind == "temperature":
        return TemperatureModel(t=float(d["t"]))
    if kind == "isotonic":
        return IsotonicModel(
            boundaries=np.asarray(d["boundaries"], dtype=float),
            values=np.asarray(d["values"], dtype=float),
        )
    if kind == "gbm":
        return gbm_from_dict(d)
    if kind == "identity":
        return IdentityModel()
    raise CompatibilityError(f"unknown model type {kind!r}")


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(m: CalibratorModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(m), sort_keys=True) + "\n")


def load_model(path) -> CalibratorModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise CompatibilityError(f"{path}: not a model file ({e.msg})") from e
    return model_from_dict(d)
