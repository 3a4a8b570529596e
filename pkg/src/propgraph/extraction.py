"""Offline knowledge extraction: prompts, response parsing and corpus ingestion.

Extraction runs in two LLM calls per passage: entities first, then
propositions restricted to those entities. Pre-extracted records can be
loaded from a JSONL fixture instead, so nothing downstream needs an LLM.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Optional, Protocol, Sequence

import httpx

from .errors import (
    AllPassagesFailedError,
    ConfigError,
    DataError,
    EmptyEntitiesError,
    EmptyInputError,
    EndpointUnreachableError,
    MalformedResponseError,
)
from .normalize import normalize_entity

logger = logging.getLogger(__name__)

MAX_RESPONSE_CHARS = 20_000

ENTITY_PROMPT = Template(
    """Instruction:
Your task is to extract entities from the given paragraph.
Respond with a JSON dictionary only, with a "entities" key that maps to an non-empty list of entities.
All named entities and dates must be included in the list.
All generic entities important to the theme of the passage must be included in the list.
All entities that is involved in a predicate relation to the above entities must be included in the list.
All dates must be included in the list.

Demonstration:
Example Paragraph:
Radio City
Radio City is India's first private FM radio station and was started on 3 July 2001.
It plays Hindi, English and regional songs.
Radio City recently forayed into New Media in May 2008 with the launch of a music portal
- PlanetRadiocity.com that offers music related news, videos, songs, and other
music-related features.

Example Output:
{"entities":
    ["Radio City", "India", "private FM radio station", "3 July 2001", "Hindi",
     "English", "New Media", "May 2008", "PlanetRadiocity.com", "music portal",
     "news", "videos", "songs"]
}

Passage: ${passage}"""
)

PROPOSITION_PROMPT = Template(
    """Instruction:
Your task is to analyze text passages and break them down into precise, atomic propositions using a specified list of named entities. A proposition is a fully contextualized statement that expresses a single unit of meaning with complete specificity about the relationships described.
For each proposition:
1. Extract a complete, standalone statement that preserves the full context
2. Use ONLY the entities provided in the named_entities list - do not introduce new entities
3. Ensure each proposition contains only ONE claim or relationship
4. Be extremely specific about which entities are involved in each relationship
5. Maintain clear causal connections between related statements
Respond with a JSON object containing a list of propositions, where each proposition is an object with:
- "text": The full proposition text as a complete, contextualized statement
- "entities": An array of entities from the named_entities list that appear in that proposition
Critical Guidelines:
- ONLY use entities from the provided named_entities list
- Make relationships explicit and specific - clarify exactly which entities relate to which other entities
- Clarify precisely which entity a modifier applies to (e.g., specify which product had "80% improvement")
- Establish clear connections between related facts (e.g., "Adobe optimized their applications FOR THE M1 CHIP")
- Connect comparative statements to their specific reference points (e.g., "Adobe's applications on the M1 chip improved by 80% compared to Intel-based Macs")
- Preserve temporal information and causal relationships between events
- Make each proposition stand alone with all necessary context
- Include ALL relevant entities from the named_entities list in both the proposition text and entities array
- Ensure the collection of propositions captures ALL meaningful information in the passage

Demonstration:
Passage: In 2020, after Apple launched the M1 chip, major software companies like Adobe optimized their applications, improving performance by up to 80% compared to Intel-based Macs.
Named entities:
["Apple", "M1 chip", "2020", "Adobe", "Adobe's applications", "Intel-based Macs", "80%"]
{
  "propositions": [
    {
      "text": "Apple launched the M1 chip in 2020.",
      "entities": ["Apple", "M1 chip", "2020"]
    },
    {
      "text": "Adobe optimized their applications specifically for the M1 chip after its launch.",
      "entities": ["Adobe", "Adobe's applications", "M1 chip"]
    },
    {
      "text": "Adobe's applications running on the M1 chip improved performance by up to 80% compared to Intel-based Macs.",
      "entities": ["Adobe", "Adobe's applications", "M1 chip", "80%", "Intel-based Macs"]
    }
  ]
}

Passage: ${passage}
Named entities: ${entities_json_list}"""
)


def render_entity_prompt(passage: str) -> str:
    if not passage or not passage.strip():
        raise EmptyInputError("passage is empty")
    return ENTITY_PROMPT.substitute(passage=passage)


def render_proposition_prompt(passage: str, entities: Sequence[str]) -> str:
    if not entities:
        raise EmptyInputError("entity list is empty")
    if not passage or not passage.strip():
        raise EmptyInputError("passage is empty")
    return PROPOSITION_PROMPT.substitute(
        passage=passage, entities_json_list=json.dumps(list(entities), ensure_ascii=False)
    )


def _first_object(raw: str, max_length: int) -> dict:
    if len(raw) > max_length:
        raise MalformedResponseError(f"response longer than {max_length} characters", raw)
    decoder = json.JSONDecoder()
    pos = raw.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(raw, pos)
        except json.JSONDecodeError:
            pos = raw.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = raw.find("{", pos + 1)
    raise MalformedResponseError("no JSON object found in response", raw)


def dedupe_entities(entities: Sequence[str]) -> list[str]:
    """Drop entities whose normalized key is empty or already seen; keep first surface form."""
    seen: set[str] = set()
    out: list[str] = []
    for ent in entities:
        key = normalize_entity(ent)
        if key and key not in seen:
            seen.add(key)
            out.append(ent.strip())
    return out


def parse_entity_response(raw: str, max_length: int = MAX_RESPONSE_CHARS) -> list[str]:
    """Entities from the first JSON object in ``raw``, deduplicated by normalized key."""
    obj = _first_object(raw, max_length)
    ents = obj.get("entities")
    if not isinstance(ents, list) or not all(isinstance(e, str) for e in ents):
        raise MalformedResponseError('"entities" must be a list of strings', raw)
    out = dedupe_entities(ents)
    if not out:
        raise EmptyEntitiesError("response lists no entities", raw)
    return out


@dataclass(frozen=True)
class ExtractedProposition:
    text: str
    entities: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"text": self.text, "entities": list(self.entities)}


def parse_proposition_response(
    raw: str,
    allowed_entities: Sequence[str],
    diagnostics: Optional[Counter] = None,
    max_length: int = MAX_RESPONSE_CHARS,
) -> list[ExtractedProposition]:
    """Propositions from ``raw`` with entity lists filtered to ``allowed_entities``.

    Unlisted entities are removed (``diagnostics["removed_entities"]``) and
    propositions left without entities are dropped
    (``diagnostics["dropped_propositions"]``).
    """
    if not allowed_entities:
        raise EmptyInputError("allowed entity list is empty")
    tally = diagnostics if diagnostics is not None else Counter()
    allowed = {}
    for ent in allowed_entities:
        allowed.setdefault(normalize_entity(ent), ent.strip())
    obj = _first_object(raw, max_length)
    items = obj.get("propositions")
    if not isinstance(items, list):
        raise MalformedResponseError('"propositions" must be a list', raw)
    out = []
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            raise MalformedResponseError("each proposition needs a string \"text\"", raw)
        ents = item.get("entities", [])
        if not isinstance(ents, list) or not all(isinstance(e, str) for e in ents):
            raise MalformedResponseError('proposition "entities" must be a list of strings', raw)
        text = item["text"].strip()
        kept: list[str] = []
        for ent in ents:
            surface = allowed.get(normalize_entity(ent))
            if surface is None:
                tally["removed_entities"] += 1
            elif surface not in kept:
                kept.append(surface)
        if not text or not kept:
            tally["dropped_propositions"] += 1
            logger.debug("dropping proposition %r", text)
            continue
        out.append(ExtractedProposition(text, tuple(kept)))
    return out


@dataclass
class ExtractionRecord:
    passage_id: str
    entities: list[str]
    propositions: list[ExtractedProposition]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        keys = [normalize_entity(e) for e in self.entities]
        if len(set(keys)) != len(keys):
            raise DataError(f"record {self.passage_id!r}: duplicate entities after normalization")
        keyset = set(keys)
        for prop in self.propositions:
            if not prop.entities:
                raise DataError(f"record {self.passage_id!r}: proposition without entities")
            if any(normalize_entity(e) not in keyset for e in prop.entities):
                raise DataError(f"record {self.passage_id!r}: proposition entity outside the record's entity list")

    def to_dict(self) -> dict:
        return {
            "passage_id": self.passage_id,
            "entities": list(self.entities),
            "propositions": [p.to_dict() for p in self.propositions],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExtractionRecord":
        return cls(
            passage_id=data["passage_id"],
            entities=list(data["entities"]),
            propositions=[ExtractedProposition(p["text"], tuple(p["entities"])) for p in data["propositions"]],
            provenance=dict(data.get("provenance", {})),
        )


def dump_records(records: Sequence[ExtractionRecord], path: str | os.PathLike) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_records(path: str | os.PathLike) -> list[ExtractionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(ExtractionRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad extraction record: {exc}") from None
    return records


@dataclass(frozen=True)
class CorpusPassage:
    id: str
    text: str
    title: Optional[str] = None

    @property
    def full_text(self) -> str:
        return f"{self.title}\n{self.text}" if self.title else self.text


def read_corpus(path: str | os.PathLike) -> tuple[list[CorpusPassage], list[dict]]:
    """Read ``{id, title?, text}`` lines; bad lines become failure diagnostics."""
    passages: list[CorpusPassage] = []
    failures: list[dict] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pid, text = str(rec["id"]), rec["text"]
                if not isinstance(text, str) or not text.strip():
                    raise ValueError("empty text")
                if pid in seen:
                    raise ValueError(f"duplicate id {pid!r}")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                failures.append({"line": lineno, "error": f"{type(exc).__name__}: {exc}"})
                continue
            seen.add(pid)
            passages.append(CorpusPassage(pid, text, rec.get("title") or None))
    return passages, failures


class LLMClient(Protocol):
    model: str

    def complete(self, messages: list[dict]) -> str: ...


class ChatCompletionClient:
    """Chat-completion style HTTP client (``model``, ``messages``, ``temperature: 0``)."""

    def __init__(
        self,
        model: str,
        url: Optional[str] = None,
        token: Optional[str] = None,
        timeout: float = 120.0,
        client: Optional[httpx.Client] = None,
    ):
        self.url = url or os.environ.get("PROPRAG_LLM_URL")
        if not self.url:
            raise ConfigError("LLM client needs a URL (argument or PROPRAG_LLM_URL)")
        self.token = token or os.environ.get("PROPRAG_LLM_TOKEN")
        self.model = model
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, messages: list[dict]) -> str:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        payload = {"model": self.model, "messages": messages, "temperature": 0}
        try:
            resp = self._client.post(self.url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise EndpointUnreachableError(f"LLM endpoint unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise EndpointUnreachableError(f"LLM endpoint returned {resp.status_code}")
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


@dataclass
class IngestResult:
    records: list[ExtractionRecord]
    failures: list[dict]
    diagnostics: dict[str, dict]


def _extract_one(passage: CorpusPassage, client: LLMClient, tally: Counter) -> ExtractionRecord:
    text = passage.full_text
    raw_entities = client.complete([{"role": "user", "content": render_entity_prompt(text)}])
    entities = parse_entity_response(raw_entities)
    folded = text.casefold()
    tally["entities_not_in_passage"] += sum(1 for e in entities if e.casefold() not in folded)
    raw_props = client.complete([{"role": "user", "content": render_proposition_prompt(text, entities)}])
    props = parse_proposition_response(raw_props, entities, diagnostics=tally)
    return ExtractionRecord(
        passage.id,
        entities,
        props,
        {"model": client.model, "timestamp": int(time.time())},
    )


def _cache_path(cache_dir: Path, model: str, text: str) -> Path:
    digest = hashlib.sha256(f"{model}\x00{text}".encode("utf-8")).hexdigest()
    return cache_dir / f"{digest}.json"


def ingest_corpus(
    passages: Sequence[CorpusPassage],
    llm_client: Optional[LLMClient] = None,
    fixture_path: Optional[str | os.PathLike] = None,
    retries: int = 2,
    parallelism: int = 4,
    cache_dir: Optional[str | os.PathLike] = None,
) -> IngestResult:
    """One extraction record per passage, from an LLM client or a fixture file.

    A passage whose extraction keeps failing after ``retries`` extra attempts
    is reported in ``failures`` and left out. Records come back in corpus
    order. With ``cache_dir`` set, finished LLM records are stored per
    (model, passage text) and replayed on later runs.
    """
    if not passages:
        raise EmptyInputError("no passages to ingest")
    if (llm_client is None) == (fixture_path is None):
        raise ValueError("pass exactly one of llm_client or fixture_path")

    if fixture_path is not None:
        by_id = {r.passage_id: r for r in load_records(fixture_path)}
        records, failures = [], []
        for p in passages:
            if p.id in by_id:
                rec = by_id[p.id]
                records.append(ExtractionRecord(rec.passage_id, rec.entities, rec.propositions, dict(rec.provenance)))
                records[-1].provenance.setdefault("fixture", str(fixture_path))
            else:
                failures.append({"passage_id": p.id, "error": "no fixture record"})
        if not records:
            raise AllPassagesFailedError("no passage had a fixture record")
        return IngestResult(records, failures, {})

    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)

    def work(p: CorpusPassage):
        tally: Counter = Counter()
        cpath = _cache_path(cache, llm_client.model, p.full_text) if cache else None
        if cpath is not None and cpath.exists():
            rec = ExtractionRecord.from_dict(json.loads(cpath.read_text(encoding="utf-8")))
            return ExtractionRecord(p.id, rec.entities, rec.propositions, rec.provenance), tally, None
        last: Optional[Exception] = None
        for attempt in range(retries + 1):
            tally = Counter()
            try:
                rec = _extract_one(p, llm_client, tally)
            except (MalformedResponseError, EndpointUnreachableError, httpx.HTTPError, KeyError) as exc:
                last = exc
                logger.warning("extraction failed for %s (attempt %d): %s", p.id, attempt + 1, exc)
                continue
            if cpath is not None:
                cpath.write_text(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False), encoding="utf-8")
            return rec, tally, None
        return None, tally, f"{type(last).__name__}: {last}"

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(work, passages))

    records, failures, diagnostics = [], [], {}
    for p, (rec, tally, err) in zip(passages, results):
        if tally:
            diagnostics[p.id] = dict(sorted(tally.items()))
        if rec is None:
            failures.append({"passage_id": p.id, "error": err})
        else:
            records.append(rec)
    if not records:
        raise AllPassagesFailedError(f"all {len(passages)} passages failed extraction")
    return IngestResult(records, failures, diagnostics)
