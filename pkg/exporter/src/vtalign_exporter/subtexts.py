"""LLM-backed sub-text generation with on-disk response caching.

A prompt template (user-editable, ``{name}`` placeholder) asks a language
model to decompose an action class into numbered atomic-action
descriptions.  Raw responses are cached per (class, template, variant) so
re-runs are reproducible and free; the mock endpoint fabricates plausible
enumerations offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from pathlib import Path

from .errors import EndpointFailure, ParseFailure

DEFAULT_TEMPLATE = (
    "Decompose the human action \"{name}\" into {n} short atomic action "
    "descriptions. Answer with a numbered list, one atomic action per line."
)

API_KEY_ENV = "VTALIGN_EXPORT_API_KEY"

_LINE = re.compile(r"^\s*\d+\s*[.):\-]\s*(.+?)\s*$")

_MOCK_VERBS = ["preparing", "starting", "performing", "holding", "finishing",
               "repeating", "adjusting", "balancing"]
_MOCK_OBJECTS = ["the stance", "the motion", "the grip", "the pose",
                 "the follow-through", "the rhythm", "the equipment",
                 "the position"]


def _mock_response(name: str, n: int, variant: int) -> str:
    lines = []
    for i in range(n):
        v = _MOCK_VERBS[(hash_int(f"{name}|{variant}|{i}|v")) % len(_MOCK_VERBS)]
        o = _MOCK_OBJECTS[(hash_int(f"{name}|{variant}|{i}|o")) % len(_MOCK_OBJECTS)]
        lines.append(f"{i + 1}. {v} {o} while {name.replace('_', ' ')}")
    return "\n".join(lines)


def hash_int(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _call_endpoint(endpoint: str, prompt: str, timeout: float = 60.0) -> str:
    import requests
    headers = {}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    try:
        resp = requests.post(endpoint, json={"prompt": prompt}, headers=headers,
                             timeout=timeout)
        resp.raise_for_status()
    except requests.RequestException as exc:
        raise EndpointFailure(f"{endpoint}: {exc}") from exc
    try:
        payload = resp.json()
        return payload["text"] if isinstance(payload, dict) else str(payload)
    except ValueError:
        return resp.text


def parse_enumerated(raw: str) -> list[str]:
    items = [m.group(1) for line in raw.splitlines() if (m := _LINE.match(line))]
    if not items:
        raise ParseFailure("response holds no numbered lines", raw=raw)
    return items


def generate_subtexts(class_names: list[str], endpoint: str, n: int = 4,
                      groups: int = 1, template: str = DEFAULT_TEMPLATE,
                      cache_dir: Path | str = "subtext_cache") -> dict[str, list[list[str]]]:
    """Per class, `groups` candidate lists of atomic-action descriptions.

    Responses are cached under a key derived from (class, template, variant);
    cached entries are reused without touching the endpoint.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    out: dict[str, list[list[str]]] = {}
    for name in class_names:
        candidate_groups = []
        for g in range(groups):
            prompt = template.format(name=name, n=n)
            if groups > 1:
                prompt += f" (variant {g + 1})"
            key = hashlib.sha256(f"{name}|{prompt}".encode()).hexdigest()[:24]
            cache_file = cache_dir / f"{key}.json"
            if cache_file.is_file():
                raw = json.loads(cache_file.read_text())["response"]
            else:
                if endpoint == "mock:" or endpoint == "mock":
                    raw = _mock_response(name, n, g)
                else:
                    raw = _call_endpoint(endpoint, prompt)
                cache_file.write_text(json.dumps(
                    {"class": name, "prompt": prompt, "response": raw},
                    indent=2, sort_keys=True) + "\n")
            candidate_groups.append(parse_enumerated(raw))
        out[name] = candidate_groups
    return out
