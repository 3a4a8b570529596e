import re
import string

_WS = re.compile(r"\s+")
_STRIP = string.punctuation + string.whitespace


def normalize_entity(surface: str) -> str:
    """Corpus-global entity key: case-folded, whitespace-collapsed, outer punctuation stripped.

    Returns an empty string when nothing survives; callers drop such entities.
    """
    return _WS.sub(" ", surface.casefold()).strip(_STRIP)


def entity_id(surface: str) -> str:
    return "e:" + normalize_entity(surface)
