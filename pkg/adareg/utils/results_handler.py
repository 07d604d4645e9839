"""
Results Handler Module
Writes run artifacts (CSV tables, JSON documents) to output directories.
"""

import csv
import json
import os
from typing import Any, Dict, Iterable, List, Sequence

from adareg.config.run_config import RunConfig, dump_env
from adareg.utils.exceptions import StorageError
from adareg.utils.logger import setup_logger

logger = setup_logger('ResultsHandler')


def format_results_as_json(result: Dict[str, Any]) -> str:
    """
    Formats a result document as a JSON string.

    Args:
        result (Dict): The dictionary to format.

    Returns:
        str: JSON-formatted string with sorted keys.
    """
    try:
        return json.dumps(result, indent=4, sort_keys=True)
    except (TypeError, ValueError) as e:
        logger.error(f"Error formatting results as JSON: {e}")
        return json.dumps({"error": "Failed to format results."})


def _ensure_parent(filepath: str) -> None:
    parent = os.path.dirname(filepath)
    if parent:
        os.makedirs(parent, exist_ok=True)


def save_json(result: Dict[str, Any], filepath: str) -> str:
    """
    Saves a JSON document.

    Raises:
        StorageError: If the file cannot be written.
    """
    try:
        _ensure_parent(filepath)
        with open(filepath, 'w') as file:
            file.write(format_results_as_json(result))
            file.write('\n')
    except OSError as e:
        raise StorageError(f"Failed to write {filepath}: {e}") from e
    logger.debug(f"Saved JSON to {filepath}")
    return filepath


def write_csv(filepath: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """
    Writes a CSV table with a header row.

    Floats are written with repr() so values reload bit-exactly.

    Raises:
        StorageError: If the file cannot be written.
    """
    try:
        _ensure_parent(filepath)
        with open(filepath, 'w', newline='') as file:
            writer = csv.writer(file, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(value) for value in row])
    except OSError as e:
        raise StorageError(f"Failed to write {filepath}: {e}") from e
    logger.debug(f"Saved CSV to {filepath}")
    return filepath


def read_csv(filepath: str, expected_header: Sequence[str]) -> List[Dict[str, str]]:
    """
    Reads a CSV table and checks its header.

    Raises:
        StorageError: If the file is missing or the header differs.
    """
    try:
        with open(filepath, newline='') as file:
            reader = csv.reader(file)
            header = next(reader, None)
            if header is None or list(header) != list(expected_header):
                raise StorageError(
                    f"{filepath}: expected header {','.join(expected_header)}, "
                    f"found {','.join(header or [])}"
                )
            return [dict(zip(header, row)) for row in reader]
    except OSError as e:
        raise StorageError(f"Failed to read {filepath}: {e}") from e


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def log_results(title: str, result: Dict[str, Any]) -> None:
    """
    Logs a result document using the application's logging system.
    """
    try:
        logger.info(f"{title}:\n{format_results_as_json(result)}")
    except Exception as e:
        logger.error(f"Failed to log results: {e}")


def save_effective_config(config: RunConfig, directory: str) -> str:
    """
    Echoes a run configuration beside a command's outputs.

    Writes ``effective_config.env`` (reloadable with ``--config``) and
    ``effective_config.json``.

    Returns:
        str: Path of the .env echo.
    """
    env_path = os.path.join(directory, 'effective_config.env')
    try:
        os.makedirs(directory, exist_ok=True)
        with open(env_path, 'w') as file:
            file.write(dump_env(config))
    except OSError as e:
        raise StorageError(f"Failed to write {env_path}: {e}") from e
    save_json(config.model_dump(mode='json'), os.path.join(directory, 'effective_config.json'))
    return env_path
