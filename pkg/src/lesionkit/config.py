"""Flat ``key=value`` config files and small artifact-provenance helpers."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def format_kv(values: dict) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def write_kv(path, values: dict) -> None:
    Path(path).write_text(format_kv(values), encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def config_hash(values: dict) -> str:
    """Short stable hash of a config mapping (keys sorted, values stringified)."""
    blob = json.dumps({str(k): _fmt(v) for k, v in values.items()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def strip_comments(lines):
    """Yield lines that are not ``#`` comments; used by every CSV reader here."""
    for line in lines:
        if not line.startswith("#"):
            yield line


def read_comment_header(path) -> dict[str, str]:
    """Collect leading ``# key=value`` lines of a CSV artifact."""
    header: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                header[k.strip()] = v.strip()
    return header
