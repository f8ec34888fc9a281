"""Boolean facial-attribute schema, validation, and constrained sampling."""

from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

ATTRIBUTE_NAMES = (
    "face_oval",
    "skin_dark",
    "hair_black",
    "hair_blond",
    "hair_wavy",
    "bald",
    "smiling",
    "big_nose",
    "arched_eyebrows",
    "eyeglasses",
    "beard_shadow",
    "lipstick",
)

# Pairs that may not be set together.
EXCLUSIVE_PAIRS = (
    ("hair_black", "hair_blond"),
    ("bald", "hair_black"),
    ("bald", "hair_blond"),
    ("bald", "hair_wavy"),
)


class ConstraintViolation(ValueError):
    """Attribute vector breaks an exclusivity constraint."""


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple = ATTRIBUTE_NAMES
    version: int = SCHEMA_VERSION

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("attribute names must be unique")

    def index(self, name):
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


DEFAULT_SCHEMA = AttributeSchema()


@dataclass(frozen=True)
class AttributeVector:
    bits: tuple
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if len(self.bits) != len(DEFAULT_SCHEMA):
            raise ValueError(
                f"expected {len(DEFAULT_SCHEMA)} bits, got {len(self.bits)}"
            )
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @classmethod
    def from_names(cls, names):
        bits = [n in set(names) for n in DEFAULT_SCHEMA.names]
        unknown = set(names) - set(DEFAULT_SCHEMA.names)
        if unknown:
            raise ValueError(f"unknown attributes: {sorted(unknown)}")
        return cls(tuple(bits))

    @classmethod
    def all_false(cls):
        return cls((False,) * len(DEFAULT_SCHEMA))

    def get(self, name):
        return self.bits[DEFAULT_SCHEMA.index(name)]

    def set_names(self):
        return [n for n, b in zip(DEFAULT_SCHEMA.names, self.bits) if b]

    def as_array(self):
        return np.array(self.bits, dtype=np.float32)


def check_constraints(attrs: AttributeVector):
    """Raise ConstraintViolation naming the first violated exclusivity pair."""
    for a, b in EXCLUSIVE_PAIRS:
        if attrs.get(a) and attrs.get(b):
            raise ConstraintViolation(f"attributes {a!r} and {b!r} are mutually exclusive")


def is_valid(attrs: AttributeVector) -> bool:
    try:
        check_constraints(attrs)
        return True
    except ConstraintViolation:
        return False


def enumerate_valid():
    """All attribute vectors satisfying the exclusivity constraints, in a
    fixed order (binary counting over the schema)."""
    n = len(DEFAULT_SCHEMA)
    out = []
    for code in range(2 ** n):
        bits = tuple(bool((code >> (n - 1 - i)) & 1) for i in range(n))
        v = AttributeVector(bits)
        if is_valid(v):
            out.append(v)
    return out


_VALID_CACHE = None


def valid_space():
    global _VALID_CACHE
    if _VALID_CACHE is None:
        _VALID_CACHE = enumerate_valid()
    return _VALID_CACHE


def sample_valid(rng: np.random.Generator) -> AttributeVector:
    """Uniform draw over the constraint-satisfying attribute space."""
    space = valid_space()
    return space[int(rng.integers(len(space)))]


def sanitize(bits) -> AttributeVector:
    """Resolve constraint violations in externally sourced bits.

    bald wins over hair attributes; hair_black wins over hair_blond.
    """
    d = dict(zip(DEFAULT_SCHEMA.names, (bool(b) for b in bits)))
    if d["bald"]:
        d["hair_black"] = d["hair_blond"] = d["hair_wavy"] = False
    if d["hair_black"] and d["hair_blond"]:
        d["hair_blond"] = False
    return AttributeVector(tuple(d[n] for n in DEFAULT_SCHEMA.names))
