"""Prompt template loading and slot substitution.

Templates ship as plain text files under ``ricl/templates/`` and contain
literal slot tokens (e.g. ``{INPUT CONTEXT HERE}``). Substitution replaces
exact tokens in a single pass, so brace characters that are part of the
template text itself are left alone.
"""

from __future__ import annotations

import re
from importlib import resources

__all__ = ["load_template", "render", "TemplateError"]


class TemplateError(ValueError):
    pass


def load_template(name: str) -> str:
    """Read a bundled template file by name."""
    ref = resources.files("ricl").joinpath("templates", name)
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"no bundled template named {name!r}") from exc


def render(template: str, slots: dict[str, str]) -> str:
    """Replace every slot token with its value, simultaneously.

    Raises if a slot token does not occur in the template, which catches
    template/config drift early.
    """
    for token in slots:
        if token not in template:
            raise TemplateError(f"slot {token!r} does not occur in the template")
    pattern = re.compile("|".join(re.escape(token) for token in sorted(slots, key=len, reverse=True)))
    return pattern.sub(lambda m: slots[m.group(0)], template)
