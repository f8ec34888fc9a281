"""Invertible caption grammar: attribute vectors <-> template captions.

Every caption is a sequence of sentences. The first sentence is a fixed
neutral subject sentence; each set attribute contributes exactly one
clause, with two interchangeable paraphrases selected by the template
seed. Parsing is exact-match over normalized sentences, so the grammar is
unambiguous and round-trips by construction.
"""

import re
from dataclasses import dataclass, field

from .attributes import (
    DEFAULT_SCHEMA,
    EXCLUSIVE_PAIRS,
    AttributeVector,
    check_constraints,
)

NEUTRAL_SENTENCE = "The person has a face."

# attribute -> (paraphrase 0, paraphrase 1)
CLAUSES = {
    "face_oval": ("The person has oval face.", "The face is oval."),
    "skin_dark": ("The person has dark skin.", "The skin is dark."),
    "hair_black": ("The person has black hair.", "The hair is black in colour."),
    "hair_blond": ("The person has blond hair.", "The hair is blond in colour."),
    "hair_wavy": ("The person has wavy hair.", "The hair is wavy."),
    "bald": ("The person is bald.", "The head is bald."),
    "smiling": ("The person is smiling.", "The person wears a smile."),
    "big_nose": ("The person has big nose.", "The nose is big."),
    "arched_eyebrows": ("The person has arched eyebrows.", "The eyebrows are arched."),
    "eyeglasses": ("The person is wearing eyeglasses.", "The person wears glasses."),
    "beard_shadow": (
        "The person sports a 5 o'clock shadow.",
        "The face shows a beard shadow.",
    ),
    "lipstick": ("The person is wearing lipstick.", "The lips have lipstick."),
}

N_PARAPHRASES = 2

_WORD_RE = re.compile(r"[a-z0-9']+|[.,!?]")


def word_tokenize(text: str):
    """Lowercased word/punctuation tokens; apostrophes stay word-internal."""
    return _WORD_RE.findall(text.lower())


def _normalize(sentence: str) -> str:
    return " ".join(word_tokenize(sentence))


# normalized sentence -> attribute name (None for the neutral sentence)
_PARSE_TABLE = {_normalize(NEUTRAL_SENTENCE): None}
for _name, _variants in CLAUSES.items():
    for _v in _variants:
        key = _normalize(_v)
        assert key not in _PARSE_TABLE, f"ambiguous clause: {_v}"
        _PARSE_TABLE[key] = _name


@dataclass(frozen=True)
class Caption:
    text: str
    tokens: tuple = None
    source_attributes: AttributeVector = None
    template_seed: int = 0

    def __post_init__(self):
        if self.tokens is None:
            object.__setattr__(self, "tokens", tuple(word_tokenize(self.text)))


def caption_from_attributes(attrs: AttributeVector, template_seed: int) -> Caption:
    """Render a multi-sentence caption; the seed picks the paraphrase."""
    check_constraints(attrs)
    variant = template_seed % N_PARAPHRASES
    sentences = [NEUTRAL_SENTENCE]
    for name in DEFAULT_SCHEMA.names:
        if attrs.get(name):
            sentences.append(CLAUSES[name][variant])
    text = " ".join(sentences)
    return Caption(text=text, source_attributes=attrs, template_seed=template_seed)


def attributes_from_caption(caption) -> tuple:
    """Best-effort parse of arbitrary text.

    Returns (AttributeVector, recognized_clause_count); unrecognized
    sentences are ignored.
    """
    text = caption.text if isinstance(caption, Caption) else str(caption)
    found = set()
    recognized = 0
    for raw in re.split(r"(?<=[.!?])\s+|\n", text):
        raw = raw.strip()
        if not raw:
            continue
        key = _normalize(raw)
        if key in _PARSE_TABLE:
            recognized += 1
            name = _PARSE_TABLE[key]
            if name is not None:
                found.add(name)
    return AttributeVector.from_names(found), recognized


def clause_phrasings():
    """Schema + clause surface forms, as served to UI clients."""
    return {
        "neutral": NEUTRAL_SENTENCE,
        "attributes": [
            {"name": n, "phrasings": list(CLAUSES[n])} for n in DEFAULT_SCHEMA.names
        ],
        "exclusive_pairs": [list(p) for p in EXCLUSIVE_PAIRS],
    }
