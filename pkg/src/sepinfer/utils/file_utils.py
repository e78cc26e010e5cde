"""File handling utilities."""
import os
import sys

from sepinfer.core.errors import InvalidModelError


def read_text(path: str) -> str:
    """
    Read a UTF-8 document from a path, or from standard input when path is "-".

    Args:
        path: Path to the document, or "-"

    Returns:
        The document text

    Raises:
        FileNotFoundError: If the path does not exist
        InvalidModelError: If the bytes are not valid UTF-8
    """
    try:
        if path == "-":
            return sys.stdin.read()
        if not os.path.isfile(path):
            raise FileNotFoundError(f"File not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except UnicodeDecodeError as exc:
        raise InvalidModelError(f"{path} is not UTF-8 text: {exc.reason}") from exc


def write_text(text: str, path: str = None):
    """
    Write a document to a path, or to standard output when no path is given.

    Args:
        text: Document text; a trailing newline is added if missing
        path: Output path, "-" or None for standard output
    """
    if not text.endswith("\n"):
        text += "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    ensure_directory_exists(os.path.dirname(os.path.abspath(path)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def ensure_directory_exists(directory: str):
    """
    Ensure a directory exists, create if it doesn't.

    Args:
        directory: Path to the directory
    """
    os.makedirs(directory, exist_ok=True)
