"""Editing-instruction templates: rendering and the inverse parser."""

from __future__ import annotations

import re
import string

from ..errors import TemplateError

TEMPLATES = {
    "remove": "Remove the {class} on my {viewport}.",
    "remove-with-reference": "Remove the {class} on my {viewport} beside the {ref}.",
    "add": "Add the {class} on my {viewport}.",
    "add-with-reference": "Add the {class} on my {viewport} beside the {ref}.",
    # clauses: "<class> [beside the <ref>] on my <viewport>" joined with " and "
    "multi": "{verb} the {clauses}.",
    # scene-level pairs carry instructions authored upstream
    "freeform": "{text}",
}

TASK_TEMPLATES = {
    "remove": ("remove", "remove-with-reference"),
    "add": ("add", "add-with-reference"),
    "multi": ("multi",),
    "light_modify": ("freeform",),
    "decoration": ("freeform",),
}

MULTI_VERBS = ("Add", "Remove")

_WORD = r"[A-Za-z][A-Za-z_-]*"
_SINGLE_PATTERNS = {
    "remove-with-reference": re.compile(rf"^Remove the (?P<class>.+?) on my (?P<viewport>{_WORD}) beside the (?P<ref>.+)\.$"),
    "remove": re.compile(rf"^Remove the (?P<class>.+?) on my (?P<viewport>{_WORD})\.$"),
    "add-with-reference": re.compile(rf"^Add the (?P<class>.+?) on my (?P<viewport>{_WORD}) beside the (?P<ref>.+)\.$"),
    "add": re.compile(rf"^Add the (?P<class>.+?) on my (?P<viewport>{_WORD})\.$"),
}
_CLAUSE = re.compile(rf"^(?P<class>.+?)(?: beside the (?P<ref>.+?))? on my (?P<viewport>{_WORD})$")


def placeholders(template_id: str) -> list[str]:
    return [name for _, name, _, _ in string.Formatter().parse(_template(template_id)) if name]


def _template(template_id: str) -> str:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}") from None


def render_clause(obj: dict) -> str:
    for key in ("class", "viewport"):
        if not obj.get(key):
            raise TemplateError(f"multi-object clause is missing field {key!r}")
    if obj.get("ref"):
        return f"{obj['class']} beside the {obj['ref']} on my {obj['viewport']}"
    return f"{obj['class']} on my {obj['viewport']}"


def render_instruction(template_id: str, fields: dict) -> str:
    """Substitute ``fields`` into a registered template.

    The ``multi`` template takes ``verb`` and ``objects`` (a list of dicts with
    ``class``, ``viewport`` and optional ``ref``) instead of raw clauses.
    """
    template = _template(template_id)
    if template_id == "multi":
        verb = fields.get("verb")
        if verb not in MULTI_VERBS:
            raise TemplateError(f"multi template needs verb in {MULTI_VERBS}, got {verb!r}")
        objects = fields.get("objects")
        if not objects or len(objects) < 2:
            raise TemplateError("multi template needs at least two objects")
        return template.format_map({"verb": verb, "clauses": " and ".join(render_clause(o) for o in objects)})
    for name in placeholders(template_id):
        if name not in fields or fields[name] in (None, ""):
            raise TemplateError(f"template {template_id!r} is missing field {name!r}")
    return template.format_map(fields)


def parse_instruction(text: str, task: str | None = None) -> tuple[str, dict]:
    """Recover (template_id, fields) from a rendered instruction."""
    candidates = TASK_TEMPLATES.get(task, tuple(TEMPLATES)) if task else tuple(TEMPLATES)
    for tid in ("remove-with-reference", "remove", "add-with-reference", "add"):
        if tid in candidates:
            m = _SINGLE_PATTERNS[tid].match(text)
            if m:
                return tid, {k: v for k, v in m.groupdict().items()}
    if "multi" in candidates:
        parsed = _parse_multi(text)
        if parsed is not None:
            return "multi", parsed
    if "freeform" in candidates and text:
        return "freeform", {"text": text}
    raise TemplateError(f"instruction does not match any template: {text!r}")


def _parse_multi(text: str) -> dict | None:
    for verb in MULTI_VERBS:
        prefix = f"{verb} the "
        if text.startswith(prefix) and text.endswith("."):
            body = text[len(prefix) : -1]
            objects = []
            for part in body.split(" and "):
                m = _CLAUSE.match(part)
                if not m:
                    return None
                obj = {"class": m["class"], "viewport": m["viewport"]}
                if m["ref"]:
                    obj["ref"] = m["ref"]
                objects.append(obj)
            if len(objects) >= 2:
                return {"verb": verb, "objects": objects}
    return None
