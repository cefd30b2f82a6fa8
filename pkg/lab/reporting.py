"""
CSV and JSON emission. CSV files open with a comment line naming the package version and
the config hash; JSON documents carry the same data in a ``_meta`` block.
"""
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from rest_framework.utils.encoders import JSONEncoder

from nuloss import __version__

logger = logging.getLogger(__name__)

CSV = 'csv'
JSON = 'json'
FORMATS = (CSV, JSON)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=True, cls=JSONEncoder)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def header_line(digest: str) -> str:
    return f"# nuloss {__version__} config-sha256={digest[:16]}"


def format_cell(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, '.17g')
    if hasattr(value, 'item'):
        return format_cell(value.item())
    return str(value)


class Emitter:
    """Writes the files of one run into ``directory`` and remembers what it wrote."""

    def __init__(self, directory, config: dict, fmt: str = CSV):
        self.directory = Path(directory)
        self.digest = config_hash(config)
        self.format = fmt
        self.files: List[str] = []

    def _path(self, name, suffix):
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{name}.{suffix}"
        self.files.append(str(path))
        return path

    def table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """RFC 4180 CSV with '.17g' floats, or a JSON list of row objects."""
        rows = [tuple(row) for row in rows]
        if self.format == JSON:
            return self.document(name, {'columns': list(columns),
                                        'rows': [dict(zip(columns, row)) for row in rows]})
        path = self._path(name, CSV)
        with path.open('w', newline='', encoding='utf-8') as handle:
            handle.write(header_line(self.digest) + '\r\n')
            writer = csv.writer(handle)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_cell(value) for value in row])
        logger.debug("wrote %d rows to %s", len(rows), path)
        return path

    def document(self, name: str, payload: dict) -> Path:
        path = self._path(name, JSON)
        body = {'_meta': {'version': __version__, 'config_sha256': self.digest}}
        body.update(payload)
        text = json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False, cls=JSONEncoder)
        path.write_text(text + '\n', encoding='utf-8')
        logger.debug("wrote %s", path)
        return path
