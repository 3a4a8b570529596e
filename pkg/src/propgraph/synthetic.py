"""Generated corpora with a planted three-hop chain.

Each instance has a query whose answer needs three passages: a product
passage naming the maker, a bridge passage linking the maker to its founder,
and a founder passage. The bridge shares no content words with the query, so
it can only be surfaced by following entity links from the other two.
Distractor passages repeat the query's wording with unrelated entities, and
some form chains of their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import mock_tokens, token_projection
from .evaluation import QueryCase
from .extraction import CorpusPassage, ExtractedProposition, ExtractionRecord

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "tr", "st"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "l", "s", "x", "th"]


@dataclass
class PlantedChain:
    passages: list[CorpusPassage]
    records: list[ExtractionRecord]
    case: QueryCase
    bridge_id: str
    synonym_bridge: bool


class _Names:
    """Pseudo-words that never repeat within one instance.

    Each new word must also land in a mock-embedding bucket no other word of
    the instance uses, so similarities come only from genuinely shared tokens.
    """

    def __init__(self, rng: np.random.Generator, dimension: int, reserved_text: str):
        self.rng = rng
        self.dimension = dimension
        self.used: set[str] = set()
        self.buckets: set[int] = set()
        for tok in mock_tokens(reserved_text):
            self.buckets.add(token_projection(tok, dimension)[0])

    def _claim(self, word: str) -> bool:
        bucket = token_projection(word.casefold(), self.dimension)[0]
        if word in self.used or bucket in self.buckets:
            return False
        self.used.add(word)
        self.buckets.add(bucket)
        return True

    def word(self) -> str:
        while True:
            parts = [
                str(self.rng.choice(_ONSETS)) + str(self.rng.choice(_VOWELS)) + str(self.rng.choice(_CODAS))
                for _ in range(int(self.rng.integers(2, 4)))
            ]
            w = "".join(parts).capitalize()
            if self._claim(w):
                return w

    def firm(self) -> str:
        # two words, so adding a suffix word keeps the cosine at 2/sqrt(6) > 0.8
        return f"{self.word()} {self.word()}"

    def year(self) -> str:
        while True:
            y = str(int(self.rng.integers(1800, 2000)))
            if self._claim(y):
                return y


def _record(pid: str, props: list[tuple[str, list[str]]]) -> ExtractionRecord:
    entities: list[str] = []
    for _, ents in props:
        for e in ents:
            if e not in entities:
                entities.append(e)
    return ExtractionRecord(
        pid,
        entities,
        [ExtractedProposition(text, tuple(ents)) for text, ents in props],
        {"source": "planted-chain"},
    )


QUERY_TEMPLATE = "When did the man who set up the firm that makes {product} die?"
TEMPLATES = {
    "product": "{maker} is a firm that makes {product}.",
    "bridge": "{founder} set up {maker}.",
    "founder": "{founder}, the man, did die in {year}.",
    "other_founder": "{founder} did die in {year}.",
    "product_fact": "{product} is sold alongside {other}.",
}


def planted_chain(
    seed: int,
    n_passages: int = 20,
    synonym_bridge: bool | None = None,
    n_product_facts: int = 4,
    dimension: int = 256,
) -> PlantedChain:
    """One corpus of ``n_passages`` passages with a planted chain and its query.

    With ``synonym_bridge`` the bridge passage names the maker with an extra
    suffix word, so the chain crosses a synonymy edge instead of a shared
    entity. The synonym variant is the default; with an exact shared entity
    the bridge is reachable in a single hop and the chain is less demanding.
    """
    if n_passages < 12:
        raise ValueError("need at least 12 passages")
    rng = np.random.default_rng(seed)
    names = _Names(rng, dimension, " ".join([QUERY_TEMPLATE, *TEMPLATES.values(), "Group"]))
    if synonym_bridge is None:
        synonym_bridge = True

    product, maker, founder, year = names.word(), names.firm(), names.word(), names.year()
    maker_alias = f"{maker} Group" if synonym_bridge else maker
    query = QUERY_TEMPLATE.format(product=product)

    gold_product = (product, [(TEMPLATES["product"].format(maker=maker, product=product), [maker, product])])
    bridge = (maker_alias, [(TEMPLATES["bridge"].format(maker=maker_alias, founder=founder), [maker_alias, founder])])
    gold_founder = (founder, [(TEMPLATES["founder"].format(founder=founder, year=year), [founder, year])])

    distractors = []
    # passages hanging off the product entity, which the query names directly
    for _ in range(n_product_facts):
        other = names.word()
        distractors.append((f"{product} {other}", [(TEMPLATES["product_fact"].format(product=product, other=other), [product, other])]))
    while len(distractors) < n_passages - 3:
        d_product, d_maker, d_founder, d_year = names.word(), names.firm(), names.word(), names.year()
        for title, props in (
            (d_product, [(TEMPLATES["product"].format(maker=d_maker, product=d_product), [d_maker, d_product])]),
            (d_founder, [(TEMPLATES["other_founder"].format(founder=d_founder, year=d_year), [d_founder, d_year])]),
            (d_maker, [(TEMPLATES["bridge"].format(maker=d_maker, founder=d_founder), [d_maker, d_founder])]),
        ):
            if len(distractors) < n_passages - 3:
                distractors.append((title, props))

    rng.shuffle(distractors)
    slots = sorted(rng.choice(n_passages, size=3, replace=False).tolist())
    chain = iter([gold_product, bridge, gold_founder])
    dist = iter(distractors)
    ordered = [next(chain) if i in slots else next(dist) for i in range(n_passages)]

    passages, records = [], []
    gold_ids: list[str] = []
    bridge_id = ""
    for i, (title, props) in enumerate(ordered):
        pid = f"s{seed}-p{i:02d}"
        passages.append(CorpusPassage(pid, " ".join(text for text, _ in props), title))
        records.append(_record(pid, props))
        if (title, props) in (gold_product, bridge, gold_founder):
            gold_ids.append(pid)
            if (title, props) == bridge:
                bridge_id = pid
    case = QueryCase(f"q{seed:03d}", query, tuple(gold_ids), (year,))
    return PlantedChain(passages, records, case, bridge_id, synonym_bridge)
