import json
from datetime import UTC, datetime
from os import PathLike
from pathlib import Path
from typing import Any, Generator, Iterable

from .errors import FormatVersionError

FORMAT_VERSION = 1

# JSON-lines files start with one header record; it is the only line that
# carries a timestamp, so reruns differ only there.


def write_json(path: PathLike, kind: str, payload: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format_version": FORMAT_VERSION, "kind": kind, **payload}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, ensure_ascii=False, indent=2)
        f.write("\n")
    return path


def read_json(path: PathLike, kind: str) -> dict[str, Any]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatVersionError(f"{path} is not a valid JSON document: {e}") from e
    _check_header(path, document, kind)
    return document


def write_jsonl(
    path: PathLike,
    kind: str,
    records: Iterable[dict[str, Any]],
    header: dict[str, Any] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "generated_at": datetime.now(UTC).isoformat(timespec="seconds"),
        **(header or {}),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(head, ensure_ascii=False) + "\n")
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: PathLike, kind: str) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    path = Path(path)
    header: dict[str, Any] | None = None
    records: list[dict[str, Any]] = []
    for line_no, record in _iter_lines(path):
        if header is None:
            _check_header(path, record, kind)
            header = record
        else:
            if not isinstance(record, dict):
                raise FormatVersionError(f"{path}:{line_no}: expected a JSON object per line")
            records.append(record)
    if header is None:
        raise FormatVersionError(f"{path} is empty; expected a {kind} header line")
    return header, records


def _iter_lines(path: Path) -> Generator[tuple[int, Any], None, None]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                yield line_no, json.loads(stripped)
            except json.JSONDecodeError as e:
                raise FormatVersionError(f"{path}:{line_no}: invalid JSON record: {e}") from e


def _check_header(path: Path, document: Any, kind: str) -> None:
    if not isinstance(document, dict):
        raise FormatVersionError(f"{path}: expected a JSON object header")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    if document.get("kind") != kind:
        raise FormatVersionError(f"{path}: expected kind {kind!r}, found {document.get('kind')!r}")
