"""Local symptom/condition knowledge base.

Loads a structured YAML file of symptoms, weighted conditions, and info
documents, matches free-text intents with keyword/synonym rules, and ranks
candidate conditions from reported symptoms. This is a repo-shipped stand-in
for an external medical API; the seam for swapping one in is the three
lookup operations at the bottom.

Intent note: AskInfo is never produced from free text — info documents are
reached through the explicit ``/info <topic>`` command and quick replies.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import yaml


class KbError(Exception):
    pass


class KbParseError(KbError):
    pass


@dataclass(frozen=True)
class KbIssue:
    path: str
    reason: str


class KbValidationError(KbError):
    def __init__(self, issues: list[KbIssue]):
        self.issues = issues
        super().__init__("; ".join(f"{i.path}: {i.reason}" for i in issues))


class UnknownSymptom(KbError):
    pass


class InfoNotFound(KbError):
    pass


@dataclass(frozen=True)
class Symptom:
    symptom_id: str
    name: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class Condition:
    condition_id: str
    name: str
    symptom_weights: Mapping[str, float]
    info_doc_id: str


@dataclass(frozen=True)
class InfoDocument:
    doc_id: str
    title: str
    body: str


@dataclass(frozen=True)
class KnowledgeBase:
    symptoms: Mapping[str, Symptom]
    conditions: Mapping[str, Condition]
    info_docs: Mapping[str, InfoDocument]


def load_kb(text: str) -> KnowledgeBase:
    """Parse and fully validate a knowledge file.

    Raises KbParseError for unreadable/empty input and KbValidationError
    carrying every referential-integrity issue found, with paths.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise KbParseError(f"knowledge file is not valid YAML: {exc}") from exc
    if raw is None:
        raise KbParseError("knowledge file is empty")
    if not isinstance(raw, dict):
        raise KbParseError("knowledge file must be a mapping with symptoms/conditions/info_docs")

    issues: list[KbIssue] = []
    symptoms: dict[str, Symptom] = {}
    conditions: dict[str, Condition] = {}
    info_docs: dict[str, InfoDocument] = {}

    for sid, entry in (raw.get("symptoms") or {}).items():
        path = f"symptoms.{sid}"
        if not isinstance(entry, dict) or not str(entry.get("name", "")).strip():
            issues.append(KbIssue(path, "needs a non-empty name"))
            continue
        synonyms = entry.get("synonyms") or []
        if not isinstance(synonyms, list) or any(not isinstance(s, str) for s in synonyms):
            issues.append(KbIssue(f"{path}.synonyms", "must be a list of phrases"))
            continue
        symptoms[str(sid)] = Symptom(str(sid), str(entry["name"]), tuple(synonyms))

    for did, entry in (raw.get("info_docs") or {}).items():
        path = f"info_docs.{did}"
        if not isinstance(entry, dict):
            issues.append(KbIssue(path, "must be a mapping with title and body"))
            continue
        title = str(entry.get("title", "")).strip()
        body = str(entry.get("body", "") or "")
        if not title:
            issues.append(KbIssue(f"{path}.title", "must be non-empty"))
        if not body.strip():
            issues.append(KbIssue(f"{path}.body", "must be non-empty"))
        if title and body.strip():
            info_docs[str(did)] = InfoDocument(str(did), title, body)

    for cid, entry in (raw.get("conditions") or {}).items():
        path = f"conditions.{cid}"
        if not isinstance(entry, dict) or not str(entry.get("name", "")).strip():
            issues.append(KbIssue(path, "needs a non-empty name"))
            continue
        weights_raw = entry.get("symptoms")
        if not isinstance(weights_raw, dict) or not weights_raw:
            issues.append(KbIssue(f"{path}.symptoms", "must be a non-empty symptom->weight mapping"))
            continue
        weights: dict[str, float] = {}
        ok = True
        for sid, w in weights_raw.items():
            if str(sid) not in symptoms:
                issues.append(KbIssue(f"{path}.symptoms.{sid}", "references an unknown symptom id"))
                ok = False
            elif not isinstance(w, (int, float)) or not 0 < float(w) <= 1:
                issues.append(KbIssue(f"{path}.symptoms.{sid}", "weight must be in (0, 1]"))
                ok = False
            else:
                weights[str(sid)] = float(w)
        doc_id = str(entry.get("info_doc", ""))
        if doc_id not in info_docs:
            issues.append(KbIssue(f"{path}.info_doc", "references an unknown info document"))
            ok = False
        if ok:
            conditions[str(cid)] = Condition(str(cid), str(entry["name"]), weights, doc_id)

    if issues:
        raise KbValidationError(issues)
    if not symptoms or not conditions:
        raise KbParseError("knowledge file must declare symptoms and conditions")
    return KnowledgeBase(symptoms=symptoms, conditions=conditions, info_docs=info_docs)


# ---------------------------------------------------------------------------
# intent matching

class IntentKind(str, Enum):
    SYMPTOM_REPORT = "symptom_report"
    ASK_INFO = "ask_info"
    ADD_MEDICATION = "add_medication"
    CHECKIN_REQUEST = "checkin_request"
    TALK_TO_PROVIDER = "talk_to_provider"
    BOOK_APPOINTMENT = "book_appointment"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Intent:
    kind: IntentKind
    confidence: float
    symptom_ids: frozenset[str] = frozenset()
    topic: str | None = None

    def __post_init__(self) -> None:
        if self.kind is IntentKind.UNKNOWN and self.confidence != 0:
            raise ValueError("unknown intents carry zero confidence")


_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})

STOPWORDS = frozenset(
    "a an and are am be been being but did do does for from had has have having "
    "he her his i if in is it its me my no not now of on or our she so that the "
    "their them they this to today us very was we were will with you your".split()
)

# Routing vocabulary; phrases are matched on whole-word boundaries after
# lowercasing and punctuation stripping. Symptom names/synonyms take
# precedence over these.
INTENT_KEYWORDS: tuple[tuple[IntentKind, tuple[str, ...]], ...] = (
    (
        IntentKind.ADD_MEDICATION,
        (
            "add medication",
            "add a medication",
            "add my medication",
            "add medicine",
            "add a medicine",
            "new medication",
            "new medicine",
            "register medication",
            "add med",
            "add pill",
            "new prescription",
        ),
    ),
    (
        IntentKind.CHECKIN_REQUEST,
        (
            "check in",
            "checkin",
            "daily check",
            "log my day",
            "record my day",
            "log how i feel",
        ),
    ),
    (
        IntentKind.TALK_TO_PROVIDER,
        (
            "talk to my doctor",
            "talk to the doctor",
            "talk to my provider",
            "message my doctor",
            "message my provider",
            "contact my doctor",
            "speak to my doctor",
            "write to my doctor",
            "tell my doctor",
            "talk to my nurse",
        ),
    ),
    (
        IntentKind.BOOK_APPOINTMENT,
        (
            "book appointment",
            "book an appointment",
            "make an appointment",
            "schedule an appointment",
            "schedule a visit",
            "book a visit",
            "appointment",
        ),
    ),
)


def _normalize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT_TABLE).split()


def _phrase_in(phrase: str, padded: str) -> bool:
    return f" {phrase} " in padded


def match_intent(text: str, kb: KnowledgeBase) -> Intent:
    """Rule-based intent extraction.

    Lowercased keyword/synonym matching; any symptom name or synonym present
    wins and yields SymptomReport with every matched id. Confidence is the
    matched-token count over the utterance's content (non-stopword) tokens,
    capped at 1. Anything unmatched is Unknown with confidence 0.
    """
    tokens = _normalize(text)
    if not tokens:
        return Intent(IntentKind.UNKNOWN, 0.0)
    padded = " " + " ".join(tokens) + " "
    content_tokens = [t for t in tokens if t not in STOPWORDS]
    denom = max(len(content_tokens), 1)

    matched_ids: set[str] = set()
    matched_tokens = 0
    for symptom in kb.symptoms.values():
        phrases = (symptom.name, *symptom.synonyms)
        hits = [p for p in phrases if _phrase_in(" ".join(_normalize(p)), padded)]
        if hits:
            matched_ids.add(symptom.symptom_id)
            matched_tokens += max(len(_normalize(p)) for p in hits)
    if matched_ids:
        return Intent(
            IntentKind.SYMPTOM_REPORT,
            confidence=min(matched_tokens / denom, 1.0),
            symptom_ids=frozenset(matched_ids),
        )

    for kind, phrases in INTENT_KEYWORDS:
        hits = [p for p in phrases if _phrase_in(p, padded)]
        if hits:
            count = max(len(_normalize(p)) for p in hits)
            return Intent(kind, confidence=min(count / denom, 1.0))

    return Intent(IntentKind.UNKNOWN, 0.0)


# ---------------------------------------------------------------------------
# condition ranking and info lookup

MAX_RANKED_CONDITIONS = 5


def check_symptoms(
    reported: Iterable[str], kb: KnowledgeBase
) -> list[tuple[Condition, float]]:
    """Rank candidate conditions for a set of reported symptom ids.

    score = sum of the condition's weights for reported symptoms divided by
    the sum of all its weights, both accumulated in sorted symptom-id order
    so scores are bit-reproducible. Zero-score conditions are omitted; ties
    break on condition id; at most MAX_RANKED_CONDITIONS results.
    """
    reported = set(reported)
    unknown = reported - set(kb.symptoms)
    if unknown:
        raise UnknownSymptom(", ".join(sorted(unknown)))
    scored: list[tuple[Condition, float]] = []
    for condition in kb.conditions.values():
        ordered = sorted(condition.symptom_weights)
        total = sum(condition.symptom_weights[s] for s in ordered)
        hit = sum(condition.symptom_weights[s] for s in ordered if s in reported)
        if hit > 0:
            scored.append((condition, hit / total))
    scored.sort(key=lambda pair: (-pair[1], pair[0].condition_id))
    return scored[:MAX_RANKED_CONDITIONS]


def get_info(topic: str, kb: KnowledgeBase) -> InfoDocument:
    """Exact doc-id hit, else case-insensitive title match, else InfoNotFound."""
    doc = kb.info_docs.get(topic)
    if doc is not None:
        return doc
    wanted = topic.strip().casefold()
    for doc in kb.info_docs.values():
        if doc.title.casefold() == wanted:
            return doc
    raise InfoNotFound(topic)
