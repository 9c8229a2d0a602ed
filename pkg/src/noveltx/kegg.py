"""KEGG REST client with an on-disk cache, flat-file parser and token expansion.

Only ``get/<entry>`` is used. Every fetched body is stored verbatim as
``<cache_dir>/<code>`` so later runs (and the test-suite) work offline.
Network access needs both ``allow_network=True`` and the environment
variable ``NOVELTX_ALLOW_NETWORK=1``.
"""
from __future__ import annotations

import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import requests

logger = logging.getLogger(__name__)

KEGG_REST_URL = "https://rest.kegg.jp"
NETWORK_ENV = "NOVELTX_ALLOW_NETWORK"
DRUG_CODE_RE = re.compile(r"^D\d{5}$")
ENTRY_CODE_RE = re.compile(r"^[DH]\d{5}$")

_BRACKET_RE = re.compile(r"\[([A-Z]+):([^\]]+)\]")
_PATHWAY_RE = re.compile(r"^(?:hsa|map|ko)\d{5}")
_CLASS_RE = re.compile(r"\bDG\d{5}\b")


class KeggError(Exception):
    pass


class OfflineMiss(KeggError):
    """Entry not cached and network access is disabled."""


class FetchError(KeggError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class KeggParseError(KeggError, ValueError):
    pass


def network_enabled_by_env() -> bool:
    return os.environ.get(NETWORK_ENV, "") == "1"


class KeggFetcher:
    """Serialised fetcher: one request at a time, at least ``min_interval`` apart."""

    def __init__(self, cache_dir, base_url: str = KEGG_REST_URL, min_interval: float = 0.35,
                 timeout: float = 30.0, session: requests.Session | None = None):
        self.cache_dir = Path(cache_dir)
        self.base_url = base_url.rstrip("/")
        self.min_interval = min_interval
        self.timeout = timeout
        self.session = session or requests.Session()
        self.n_requests = 0
        self._lock = threading.Lock()
        self._last = 0.0

    def cache_path(self, code: str) -> Path:
        return self.cache_dir / code

    def fetch(self, code: str, allow_network: bool = False) -> str:
        if not ENTRY_CODE_RE.match(code):
            raise ValueError(f"not a KEGG drug/disease code: {code!r}")
        path = self.cache_path(code)
        if path.exists():
            return path.read_bytes().decode("utf-8")
        if not allow_network:
            raise OfflineMiss(f"{code} not in cache {self.cache_dir} and network access is off")
        with self._lock:
            # another caller may have filled the cache while we waited
            if path.exists():
                return path.read_bytes().decode("utf-8")
            wait = self._last + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            url = f"{self.base_url}/get/{code}"
            logger.info("GET %s", url)
            try:
                resp = self.session.get(url, timeout=self.timeout)
            finally:
                self._last = time.monotonic()
            self.n_requests += 1
            if resp.status_code != 200:
                raise FetchError(f"GET {url} returned HTTP {resp.status_code}", resp.status_code)
            body = resp.content
            if not body.strip():
                raise FetchError(f"GET {url} returned an empty body", resp.status_code)
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".part")
            tmp.write_bytes(body)
            tmp.replace(path)
            return body.decode("utf-8")


def fetch_entry(code: str, cache_dir, allow_network: bool = False,
                fetcher: KeggFetcher | None = None) -> str:
    fetcher = fetcher or KeggFetcher(cache_dir)
    return fetcher.fetch(code, allow_network)


# ---------------------------------------------------------------- parsing

@dataclass(frozen=True)
class KeggRecord:
    code: str
    name: str = ""
    diseases: tuple[str, ...] = ()
    targets_pathways: tuple[str, ...] = ()
    efficacy: tuple[str, ...] = ()
    drug_class: tuple[str, ...] = ()


@dataclass(frozen=True)
class KeggDisease:
    code: str
    name: str = ""
    drugs: tuple[str, ...] = ()


def _sections(raw: str) -> tuple[dict[str, list[str]], str]:
    """Split a flat file into {keyword: [lines]}; sub-keywords become 'PARENT/SUB'."""
    lines = raw.splitlines()
    if not any(line.strip() == "///" for line in lines):
        raise KeggParseError("missing '///' terminator")
    out: dict[str, list[str]] = {}
    current = None
    parent = None
    for line in lines:
        if line.strip() == "///":
            break
        if not line.strip():
            continue
        head = line[:12]
        body = line[12:].strip()
        key = head.strip()
        if key and not line.startswith(" "):
            parent = current = key
        elif key and line.startswith("  ") and not line.startswith("   "):
            current = f"{parent}/{key}"
        elif key:
            # deeper indentation without a keyword column: continuation text
            body = line.strip()
        if current is None:
            raise KeggParseError("content before the first keyword")
        out.setdefault(current, []).append(body)
    entry = out.get("ENTRY")
    if not entry:
        raise KeggParseError("missing ENTRY line")
    return out, entry[0].split()[0]


def _split_snippets(lines: Iterable[str]) -> tuple[str, ...]:
    text = " ".join(lines)
    parts = re.split(r"[;,]", text)
    return tuple(p.strip().lower() for p in parts if p.strip())


def _bracket_codes(lines: Iterable[str], kinds: Iterable[str]) -> list[str]:
    kinds = set(kinds)
    out = []
    for line in lines:
        for kind, codes in _BRACKET_RE.findall(line):
            if kind in kinds:
                out.extend(f"{kind}:{c}" for c in codes.split())
    return out


def parse_entry(raw: str) -> KeggRecord:
    """Parse a KEGG DRUG flat-file entry.

    Reads EFFICACY (and its DISEASE sub-block), TARGET (and its PATHWAY
    sub-block), top-level PATHWAY and DISEASE blocks, and CLASS. Other
    sections are ignored.
    """
    sec, code = _sections(raw)
    if not DRUG_CODE_RE.match(code):
        raise KeggParseError(f"ENTRY {code!r} is not a drug D-number")
    name = sec.get("NAME", [""])[0].rstrip(";").strip()

    disease_lines = sec.get("EFFICACY/DISEASE", []) + sec.get("DISEASE", [])
    diseases = [c.split(":", 1)[1] for c in _bracket_codes(disease_lines, ["DS"])]

    target_lines = sec.get("TARGET", [])
    targets = _bracket_codes(target_lines, ["HSA", "KO"])
    pathway_lines = sec.get("TARGET/PATHWAY", []) + sec.get("PATHWAY", [])
    for line in pathway_lines:
        m = _PATHWAY_RE.match(line)
        if m:
            targets.append(f"PATH:{m.group(0)}")

    class_codes = []
    for line in sec.get("CLASS", []):
        class_codes.extend(_CLASS_RE.findall(line))

    return KeggRecord(
        code=code,
        name=name,
        diseases=tuple(dict.fromkeys(diseases)),
        targets_pathways=tuple(dict.fromkeys(targets)),
        efficacy=_split_snippets(sec.get("EFFICACY", [])),
        drug_class=tuple(dict.fromkeys(class_codes)),
    )


def parse_disease(raw: str) -> KeggDisease:
    sec, code = _sections(raw)
    if not code.startswith("H"):
        raise KeggParseError(f"ENTRY {code!r} is not a disease H-number")
    drugs = [c.split(":", 1)[1] for c in _bracket_codes(sec.get("DRUG", []), ["DR"])]
    name = sec.get("NAME", [""])[0].rstrip(";").strip()
    return KeggDisease(code, name, tuple(dict.fromkeys(drugs)))


def expand_linked_drugs(record: KeggRecord, disease_index: Mapping[str, Iterable[str]]) -> list[str]:
    """Token list for one drug: diseases, co-linked drugs, targets/pathways, efficacy, class.

    A drug reachable through several diseases appears once per disease. A
    disease absent from the index contributes only its own code.
    """
    tokens = []
    for h in record.diseases:
        tokens.append(f"DS:{h}")
        linked = disease_index.get(h)
        if linked is None:
            logger.info("disease %s not in index; linked drugs skipped", h)
            continue
        tokens.extend(f"DR:{d}" for d in sorted(set(linked)))
    tokens.extend(record.targets_pathways)
    tokens.extend(f"EFF:{s}" for s in record.efficacy)
    tokens.extend(f"DG:{c}" for c in record.drug_class)
    return tokens


@dataclass
class KeggCorpus:
    drugs: dict[str, KeggRecord] = field(default_factory=dict)
    diseases: dict[str, KeggDisease] = field(default_factory=dict)

    @property
    def disease_index(self) -> dict[str, tuple[str, ...]]:
        return {h: d.drugs for h, d in self.diseases.items()}

    def tokens(self) -> dict[str, list[str]]:
        index = self.disease_index
        return {code: expand_linked_drugs(rec, index) for code, rec in sorted(self.drugs.items())}


def load_corpus(drug_codes: Iterable[str], cache_dir, allow_network: bool = False,
                include_linked: bool = True, fetcher: KeggFetcher | None = None) -> KeggCorpus:
    """Fetch (or read from cache) the drugs, their diseases and optionally the linked drugs."""
    fetcher = fetcher or KeggFetcher(cache_dir)
    corpus = KeggCorpus()
    pending = list(dict.fromkeys(drug_codes))
    for code in pending:
        corpus.drugs[code] = parse_entry(fetcher.fetch(code, allow_network))
    for rec in list(corpus.drugs.values()):
        for h in rec.diseases:
            if h in corpus.diseases:
                continue
            try:
                corpus.diseases[h] = parse_disease(fetcher.fetch(h, allow_network))
            except OfflineMiss:
                logger.info("disease %s not cached; treated as unlinked", h)
    if include_linked:
        linked = sorted({d for dis in corpus.diseases.values() for d in dis.drugs} - set(corpus.drugs))
        for code in linked:
            try:
                corpus.drugs[code] = parse_entry(fetcher.fetch(code, allow_network))
            except OfflineMiss:
                logger.info("linked drug %s not cached; skipped", code)
    return corpus


def cached_token_counts(corpus: KeggCorpus) -> dict[str, Counter]:
    return {code: Counter(toks) for code, toks in corpus.tokens().items()}
