"""Prompt templates: external text files with `{field}` placeholders and
optional `<<block>>...<</block>>` regions.

Blocks let one template serve several request variants: a caller passes the
set of block names to keep, everything else is cut out before field
substitution. Substitution replaces only the provided field names, so
literal JSON braces inside prompt bodies survive untouched.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .errors import ConfigError

TEMPLATE_NAMES = (
    "overview",
    "diff",
    "detail",
    "merge",
    "scene_split",
    "scene_caption_first",
    "scene_caption_rest",
    "qa_scene",
    "qa_global",
    "qa_refine",
    "qa_options",
    "qa_hints",
    "judge",
    "video_filter",
)

# Placeholders each stage must find in its template body.
REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "overview": ("n",),
    "diff": ("i_prev", "i_cur", "supp_prev", "supp_cur", "overview"),
    "detail": ("i_cur", "supp_cur", "overview"),
    "merge": ("diff_text", "detail_text", "overview"),
    "scene_split": ("n", "shot_segments", "locals"),
    "scene_caption_first": ("st", "ed", "locals", "overview"),
    "scene_caption_rest": ("scene_index", "st", "ed", "locals", "prev_scene", "overview"),
    "qa_scene": ("scene_caption", "qtypes"),
    "qa_global": ("video_caption", "qtypes"),
    "qa_refine": ("pairs",),
    "qa_options": ("question", "answer", "context"),
    "qa_hints": ("n", "scene_captions"),
    "judge": ("caption", "scene_hint", "neighbor_hints", "question", "options"),
    "video_filter": ("duration", "shot_count"),
}

_BLOCK_TAG = re.compile(r"<<(/?)([a-z_]+)>>")


@lru_cache(maxsize=None)
def template_body(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise ConfigError(f"unknown template {name!r}")
    return (resources.files("glave") / "templates" / f"{name}.txt").read_text()


def _apply_blocks(body: str, enable: frozenset[str]) -> str:
    out = []
    pos = 0
    skip_depth = 0
    for match in _BLOCK_TAG.finditer(body):
        closing, block = match.group(1) == "/", match.group(2)
        if skip_depth == 0:
            out.append(body[pos:match.start()])
        pos = match.end()
        if not closing and block not in enable:
            skip_depth += 1
        elif closing and skip_depth > 0:
            skip_depth -= 1
    out.append(body[pos:])
    return "".join(out)


def render_template(name: str, fields: dict, enable: frozenset[str] = frozenset()) -> str:
    """Keep only the named blocks, substitute the given fields, and fail on
    any required placeholder left unfilled."""
    body = _apply_blocks(template_body(name), frozenset(enable))
    for key, value in fields.items():
        body = body.replace("{" + key + "}", str(value))
    for field in REQUIRED_FIELDS[name]:
        if "{" + field + "}" in body:
            raise ConfigError(f"template {name!r} still missing field {field!r}")
    return re.sub(r"\n{3,}", "\n\n", body).strip() + "\n"


def validate_templates() -> None:
    """Every required placeholder must appear in its template's raw body."""
    for name in TEMPLATE_NAMES:
        body = template_body(name)
        for field in REQUIRED_FIELDS[name]:
            if "{" + field + "}" not in body:
                raise ConfigError(f"template {name!r} lacks placeholder {field!r}")
