"""Versioned JSON schema for experiment configs, with line-level error messages."""

from __future__ import annotations

import json
from json.decoder import scanstring

import jsonschema

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_expr = {"type": ["string", "number"]}
_int_pos = {"type": "integer", "minimum": 1}

_law = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {"enum": ["point", "discrete", "normal", "uniform", "beta", "cauchy"]},
        "sd": _pos,
        "scale": _pos,
    },
}
_jumps = {
    "type": "object",
    "required": ["law"],
    "properties": {"intensity": _expr, "law": _law, "rate_bound": _nonneg},
}
_truncation = {
    "type": "object",
    "required": ["identity_radius"],
    "properties": {"identity_radius": _pos, "support_radius": _pos},
    "additionalProperties": False,
}
_grid = {
    "type": "object",
    "required": ["T"],
    "properties": {"T": _pos, "n_steps": _int_pos, "dt": _pos},
    "oneOf": [{"required": ["n_steps"]}, {"required": ["dt"]}],
    "additionalProperties": False,
}

GENERATOR = {
    "type": "object",
    "required": ["kind", "grid"],
    "properties": {
        "kind": {"enum": ["bm", "compound_poisson", "jump_diffusion", "convolution", "pdmp", "distdrift"]},
        "grid": _grid,
        "x0": _num,
        "vol": _nonneg,
        "rate": _nonneg,
        "law": _law,
        "drift": _expr,
        "diffusion": _expr,
        "jumps": _jumps,
        "truncation": _truncation,
        # pdmp
        "flow": _expr,
        "hazard": _expr,
        "rate_bound": _nonneg,
        "post_jump": {"type": ["string", "object"]},
        "lipschitz": _nonneg,
        # distdrift
        "beta": _expr,
        "sigma": _expr,
        "sigma_lower": _pos,
        "R": _pos,
        "schedule": {"type": "array", "items": _pos, "minItems": 3},
        "mollifier": {"enum": ["gaussian", "bump"]},
        "table_step": _pos,
        "tol": _pos,
    },
}

_eps_steps = {"type": "array", "items": _int_pos, "minItems": 1}
ANALYSIS = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["weak_qv", "jump_split", "orthogonality", "chain_rule", "gamma_k", "special_wd",
                          "htransform", "martingale", "distdrift"]},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
        "eps_steps": {"oneOf": [_eps_steps, _int_pos]},
        "c": _nonneg,
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "slack": {"type": "number", "minimum": 1},
        "expect": {
            "type": "object",
            "required": ["eps_steps", "value", "tol"],
            "properties": {"eps_steps": _int_pos, "value": _num, "tol": _nonneg},
        },
        "rtol": _nonneg,
        "eps_multiple": _nonneg,
        "min_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "v": _expr,
        "expected": _expr,
        "truncation": _truncation,
        "a": _pos,
        "h": _expr,
        "path_index": {"type": "integer", "minimum": 0},
        "atol": _nonneg,
        "operator": {"type": ["string", "object"]},
        "tests": {"type": "array", "items": _expr, "minItems": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "expected_sigma": _expr,
        "sigma_tol": _pos,
        "phi": _expr,
        "identity_tol": _pos,
        "drift_limit": {"type": "boolean"},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "id", "master_seed", "n_paths", "generator", "analyses"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "id": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
        "description": {"type": "string"},
        "expected_runtime_s": _nonneg,
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "n_paths": _int_pos,
        "workers": _int_pos,
        "plots": {"type": "boolean"},
        "generator": GENERATOR,
        "analyses": {"type": "array", "items": ANALYSIS, "minItems": 1},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# value positions


_WS = " \t\n\r"


def _skip(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _scan(text: str, i: int, path: tuple, out: dict) -> int:
    """Record the start offset of every value under ``path``; return the end offset."""
    i = _skip(text, i)
    out[path] = i
    dec = json.JSONDecoder()
    if text[i] == "{":
        i = _skip(text, i + 1)
        if text[i] == "}":
            return i + 1
        while True:
            key_start = _skip(text, i)
            key, i = scanstring(text, key_start + 1)
            i = _skip(text, i)
            i = _scan(text, i + 1, path + (key,), out)
            out.setdefault(("__key__",) + path + (key,), key_start)
            i = _skip(text, i)
            if text[i] == "}":
                return i + 1
            i += 1
    if text[i] == "[":
        i = _skip(text, i + 1)
        if text[i] == "]":
            return i + 1
        n = 0
        while True:
            i = _scan(text, i, path + (n,), out)
            n += 1
            i = _skip(text, i)
            if text[i] == "]":
                return i + 1
            i += 1
    _, end = dec.raw_decode(text, i)
    return end


def value_lines(text: str) -> dict:
    """Map JSON paths (tuples of keys and indices) to 1-based line numbers."""
    offsets: dict = {}
    _scan(text, 0, (), offsets)
    return {p: text.count("\n", 0, off) + 1 for p, off in offsets.items()}


def _fmt_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate; raise :class:`ConfigError` listing every violation with its line."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    errors = validation_errors(obj, text, source)
    if errors:
        raise ConfigError("\n".join(errors))
    return obj


def validation_errors(obj, text: str | None = None, source: str = "<config>") -> list[str]:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    lines = value_lines(text) if text is not None else {}
    msgs = []
    for err in sorted(validator.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path))):
        path = tuple(err.absolute_path)
        line = lines.get(("__key__",) + path) or lines.get(path)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            for k in extra:
                kl = lines.get(("__key__",) + path + (k,), line)
                msgs.append(f"{source}:{kl}: {_fmt_path(path + (k,))}: unknown field")
            continue
        where = f"{source}:{line}" if line else source
        msgs.append(f"{where}: {_fmt_path(path)}: {err.message}")
    return msgs
