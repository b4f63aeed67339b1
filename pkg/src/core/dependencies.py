import json
from functools import lru_cache
from pathlib import Path
from typing import TypeVar, Union

from pydantic import BaseModel, ValidationError

from .errors import InputFileNotFound, SchemaError

M = TypeVar("M", bound=BaseModel)
PathLike = Union[str, Path]


def read_text(path: PathLike) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputFileNotFound(str(p))
    return p.read_text(encoding="utf-8")


def read_json(path: PathLike) -> object:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise SchemaError(str(path), f"invalid JSON: {e.msg} at line {e.lineno}") from e


def schema_error(exc: ValidationError, prefix: str = "") -> SchemaError:
    """First pydantic error as a SchemaError naming the offending field"""
    first = exc.errors()[0]
    loc = ".".join(str(part) for part in first["loc"])
    return SchemaError(f"{prefix}{loc}", first["msg"])


def load_model(path: PathLike, model: type[M]) -> M:
    data = read_json(path)
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise schema_error(e, f"{Path(path).name}:") from e


@lru_cache(maxsize=None)
def _cached_model(path: str, model: type[BaseModel]) -> BaseModel:
    return load_model(path, model)


def get_config(path: PathLike, model: type[M]) -> M:
    """
    Dependency for a configuration document
    Returns one validated instance per (file, model); callers must not mutate it
    """
    return _cached_model(str(Path(path).resolve()), model)  # type: ignore[return-value]


@lru_cache(maxsize=None)
def _cached_pattern_db(path: str):
    # imported here to keep core free of service imports at load time
    from src.services.patterndb import load_db
    return load_db(path)


def get_pattern_db(path: PathLike):
    """
    Dependency for the code pattern DB
    Returns singleton instance per file
    """
    return _cached_pattern_db(str(Path(path).resolve()))
