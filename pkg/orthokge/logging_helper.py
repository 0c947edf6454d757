# Copyright 2025 The orthogonal-kge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import json
import logging
from datetime import datetime
from functools import wraps
from typing import Any, Callable, ParamSpec, TypeVar

import psutil

_LOG_LEVEL = logging.INFO


def set_log_level(level: str | int) -> None:
    """Change the level of every logger handed out by get_logger."""
    global _LOG_LEVEL
    _LOG_LEVEL = logging.getLevelName(level) if isinstance(level, str) else level
    for name in list(logging.root.manager.loggerDict):
        logger = logging.getLogger(name)
        if getattr(logger, "_orthokge", False):
            logger.setLevel(_LOG_LEVEL)
            for handler in logger.handlers:
                handler.setLevel(_LOG_LEVEL)


def get_logger(name: str = "OrthoKGE") -> logging.Logger:
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    consoleHandle = logging.StreamHandler()
    consoleHandle.setLevel(_LOG_LEVEL)
    consoleHandle.setFormatter(formatter)
    logger = logging.getLogger(name)
    logger.setLevel(_LOG_LEVEL)
    logger.propagate = False  # Prevent propagation to root logger
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.addHandler(consoleHandle)
    setattr(logger, "_orthokge", True)
    return logger


def format_json(obj: Any) -> str:
    try:
        if hasattr(obj, "model_dump"):
            obj = obj.model_dump(mode="json")
        return json.dumps(
            obj, indent=2, sort_keys=True, default=str, ensure_ascii=False
        )
    except Exception as e:
        return f"Error formatting JSON: {str(e)}\nOriginal object: {str(obj)}"


def log_memory(logger: logging.Logger) -> None:
    process = psutil.Process()
    memory = process.memory_info().rss / 1024 / 1024  # MB
    logger.debug(f"Memory usage: {memory:.2f} MB")


P = ParamSpec("P")
T = TypeVar("T")


def log_command(func: Callable[P, T]) -> Callable[P, T]:
    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> T:
        logger = get_logger("Command")
        run_id = datetime.now().strftime("%Y%m%d_%H%M%S_%f")
        separator = f"\n{'=' * 80}\n"
        logger.info(f"{separator}COMMAND START: {func.__name__} [{run_id}]{separator}")
        try:
            result = func(*args, **kwargs)

            logger.info(
                f"{separator}COMMAND COMPLETE: {func.__name__} [{run_id}]{separator}"
            )
            return result
        except Exception as e:
            error_log = (
                f"ERROR IN COMMAND [{run_id}]\n"
                "------------------------\n"
                f"Function: {func.__name__}\n"
                f"Error Type: {type(e).__name__}\n"
                f"Error Message: {str(e)}\n\n"
                "Stack Trace:\n"
            )
            logger.error(error_log, exc_info=True)
            raise

    return wrapper
