"""
Utility functions for pgrules

This module provides helpers for reading and writing JSON documents,
atomic file replacement, and sanitizing text coming back from an LLM.
"""

import json
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, Union

from .errors import SchemaError

logger = logging.getLogger(__name__)

_UNSAFE_FILENAME_CHARS = re.compile(r"[^A-Za-z0-9_.-]")
# U+2028 and U+2029 become plain newlines
_LINE_SEPARATORS = str.maketrans({"\u2028": "\n", "\u2029": "\n"})


def fixture_filename(prompt_key: str) -> str:
    """
    File name of the stored knowledge document for ``prompt_key``.

    Characters unsafe in file names become ``_`` and leading dots are
    dropped, so the name always stays inside the fixture directory.

    Example:
        >>> fixture_filename("size-graph-v1/../x")
        'size-graph-v1_.._x.json'
    """
    stem = _UNSAFE_FILENAME_CHARS.sub("_", prompt_key).lstrip(".")
    return f"{stem or 'unknown'}.json"


def extract_json_text(raw: str) -> str:
    """
    Strip Markdown code fences and surrounding prose from an LLM answer.

    Unicode line and paragraph separators are turned into newlines first.

    Example:
        >>> extract_json_text('Here you go:\\n```json\\n{"a": 1}\\n```')
        '{"a": 1}'
    """
    text = raw.translate(_LINE_SEPARATORS).strip()
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, flags=re.DOTALL)
    if fenced:
        return fenced.group(1).strip()
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        return text[start : end + 1]
    return text


def loads_json(text: str, source: str = "<document>") -> Any:
    """
    Parse JSON text, reporting syntax errors as SchemaError with a line.

    Args:
        text: JSON text
        source: Name of the document used in error messages

    Raises:
        SchemaError: If the text is not valid JSON
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Invalid JSON in {source}: {e.msg}", line=e.lineno) from e


def read_json(path: Union[str, Path]) -> Any:
    """
    Read a UTF-8 JSON file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        SchemaError: If the file is not valid JSON
    """
    input_path = Path(path)
    if not input_path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")

    with open(input_path, "r", encoding="utf-8") as f:
        return loads_json(f.read(), source=str(input_path))


def dumps_json(data: Any) -> str:
    """
    Serialize data the way every pgrules output file is written.

    The output is deterministic for equal inputs and ends with a newline.
    """
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def write_text_atomic(text: str, path: Union[str, Path]) -> str:
    """
    Write text to ``path`` through a temp file in the same directory.

    The destination is either left untouched or fully replaced.

    Returns:
        The destination path as a string
    """
    destination = Path(path)
    destination.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_name = tempfile.mkstemp(
        prefix=f".{destination.name}.", suffix=".tmp", dir=str(destination.parent)
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, destination)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    logger.debug(f"Wrote {destination}")
    return str(destination)


def write_json_atomic(data: Any, path: Union[str, Path]) -> str:
    """Serialize ``data`` with :func:`dumps_json` and write it atomically."""
    return write_text_atomic(dumps_json(data), path)


def write_many_atomic(documents: Dict[Path, str]) -> Dict[str, str]:
    """
    Stage several text documents as temp files, then rename them together.

    No destination is touched until every temp file has been written, so a
    failure while staging leaves all previous outputs in place.

    Returns:
        Mapping of destination names to written paths
    """
    staged = []
    try:
        for destination, text in documents.items():
            destination.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(
                prefix=f".{destination.name}.",
                suffix=".tmp",
                dir=str(destination.parent),
            )
            staged.append((tmp_name, destination))
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
    except BaseException:
        for tmp_name, _ in staged:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
        raise

    written = {}
    for tmp_name, destination in staged:
        os.replace(tmp_name, destination)
        written[destination.name] = str(destination)
    return written


__all__ = [
    "fixture_filename",
    "extract_json_text",
    "loads_json",
    "read_json",
    "dumps_json",
    "write_text_atomic",
    "write_json_atomic",
    "write_many_atomic",
]
