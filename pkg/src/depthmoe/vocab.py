"""Token vocabulary shared by the generators, the complexity scorer and the
models.

Every token id has a fixed surface form and a fixed structural marker class
(open-nest / close-nest / connective / content / function); generators emit
token ids and the matching marker sequence. The content/function partition
used by the semantic-density feature is therefore static and versioned here.

Entity ids split into two disjoint bands:

* ``E0..E7``  — "cached knowledge" entities. Each has a fixed value given by
  ``FIXED_FACTS`` (a constant of the task universe); shallow lookup tasks
  query these with no supporting context.
* ``E8..E15`` — context entities. Their values exist only in-context via
  ``E is V`` facts; long-context tasks track these.

Answer labels live in a 16-way space: labels 0..7 are values/numeric
results, labels 8..15 are entities E0..E7.
"""

from __future__ import annotations

import zlib

VOCAB_VERSION = 1

# marker classes
OPEN_NEST = 0
CLOSE_NEST = 1
CONNECTIVE = 2
CONTENT = 3
FUNCTION = 4

MARKER_NAMES = {
    OPEN_NEST: "open",
    CLOSE_NEST: "close",
    CONNECTIVE: "connective",
    CONTENT: "content",
    FUNCTION: "function",
}

_SPECIALS = [
    ("SEP", ",", FUNCTION),
    ("QUERY", "?", FUNCTION),
    ("IS", "is", FUNCTION),
    ("OPEN", "(", OPEN_NEST),
    ("CLOSE", ")", CLOSE_NEST),
    ("GT", ">", CONNECTIVE),
    ("LT", "<", CONNECTIVE),
    ("PLUS", "+", CONNECTIVE),
    ("TIMES", "*", CONNECTIVE),
    ("MINUS", "-", CONNECTIVE),
    ("Q_MIN", "min?", FUNCTION),
    ("Q_MAX", "max?", FUNCTION),
    ("BREAK", "|", FUNCTION),
    ("THEN", "then", CONNECTIVE),
    ("ARROW", "->", CONNECTIVE),
    ("X", "x", CONTENT),
]

N_ENTITIES = 16
N_VALUES = 8
N_NUMBERS = 8

_names: list[str] = []
_texts: list[str] = []
_markers: list[int] = []

for name, text, marker in _SPECIALS:
    _names.append(name)
    _texts.append(text)
    _markers.append(marker)

ENTITY_BASE = len(_names)
for i in range(N_ENTITIES):
    _names.append(f"E{i}")
    _texts.append(f"e{i}")
    _markers.append(CONTENT)

VALUE_BASE = len(_names)
for i in range(N_VALUES):
    _names.append(f"V{i}")
    _texts.append(f"v{i}")
    _markers.append(CONTENT)

NUMBER_BASE = len(_names)
for i in range(N_NUMBERS):
    _names.append(f"N{i}")
    _texts.append(f"n{i}")
    _markers.append(CONTENT)

# composed record tokens over the context band E8..E15: "e=v" fact pairs
# (content) and "a->b" pointer links (connective, they encode reasoning steps)
N_CONTEXT = 8
PAIR_BASE = len(_names)
for e in range(N_CONTEXT):
    for v in range(N_VALUES):
        _names.append(f"P{e}_{v}")
        _texts.append(f"e{8 + e}=v{v}")
        _markers.append(CONTENT)

LINK_BASE = len(_names)
for a in range(N_CONTEXT):
    for b in range(N_CONTEXT):
        _names.append(f"L{a}_{b}")
        _texts.append(f"e{8 + a}->e{8 + b}")
        _markers.append(CONNECTIVE)

VOCAB_SIZE = len(_names)
ATOMIC_SIZE = PAIR_BASE  # rows actually stored in the embedding table

# Composed records embed as masked sums of their two component embeddings
# (left/right), so entity-record similarity exists at initialization and
# retrieval circuits need not first align independent random vectors.
LEFT_COMPONENT = list(range(VOCAB_SIZE))
RIGHT_COMPONENT = list(range(VOCAB_SIZE))
for e in range(N_CONTEXT):
    for v in range(N_VALUES):
        t = PAIR_BASE + e * N_VALUES + v
        LEFT_COMPONENT[t] = ENTITY_BASE + 8 + e
        RIGHT_COMPONENT[t] = VALUE_BASE + v
for a in range(N_CONTEXT):
    for b in range(N_CONTEXT):
        t = LINK_BASE + a * N_CONTEXT + b
        LEFT_COMPONENT[t] = ENTITY_BASE + 8 + a
        RIGHT_COMPONENT[t] = ENTITY_BASE + 8 + b
TOKEN_ID = {name: i for i, name in enumerate(_names)}
TOKEN_TEXT = list(_texts)
TOKEN_MARKER = list(_markers)

SEP = TOKEN_ID["SEP"]
QUERY = TOKEN_ID["QUERY"]
IS = TOKEN_ID["IS"]
OPEN = TOKEN_ID["OPEN"]
CLOSE = TOKEN_ID["CLOSE"]
GT = TOKEN_ID["GT"]
LT = TOKEN_ID["LT"]
PLUS = TOKEN_ID["PLUS"]
TIMES = TOKEN_ID["TIMES"]
MINUS = TOKEN_ID["MINUS"]
Q_MIN = TOKEN_ID["Q_MIN"]
Q_MAX = TOKEN_ID["Q_MAX"]
BREAK = TOKEN_ID["BREAK"]
THEN = TOKEN_ID["THEN"]
ARROW = TOKEN_ID["ARROW"]
VAR_X = TOKEN_ID["X"]

OP_TOKENS = (PLUS, TIMES, MINUS)

N_ANSWER_CLASSES = 16

# Fixed entity -> value table for the cached-knowledge band E0..E7.
# A constant of the task universe (like "capital of France"), deliberately a
# non-affine scramble so it cannot be read off the entity index.
FIXED_FACTS = (5, 2, 7, 0, 3, 6, 1, 4)

MODULUS = 8  # all synthetic arithmetic is mod 8, so results are answer classes 0..7


def entity(i: int) -> int:
    return ENTITY_BASE + i


def value(i: int) -> int:
    return VALUE_BASE + i


def number(i: int) -> int:
    return NUMBER_BASE + i


def entity_index(token: int) -> int:
    return token - ENTITY_BASE


def value_index(token: int) -> int:
    return token - VALUE_BASE


def number_index(token: int) -> int:
    return token - NUMBER_BASE


def is_entity(token: int) -> bool:
    return ENTITY_BASE <= token < ENTITY_BASE + N_ENTITIES


def is_value(token: int) -> bool:
    return VALUE_BASE <= token < VALUE_BASE + N_VALUES


def is_number(token: int) -> bool:
    return NUMBER_BASE <= token < NUMBER_BASE + N_NUMBERS


def pair_token(ctx_entity: int, value_idx: int) -> int:
    """Fact record 'e{8+ctx_entity} = v{value_idx}' as one token."""
    return PAIR_BASE + ctx_entity * N_VALUES + value_idx


def link_token(src: int, dst: int) -> int:
    """Pointer record 'e{8+src} -> e{8+dst}' as one token."""
    return LINK_BASE + src * N_CONTEXT + dst


def is_pair(token: int) -> bool:
    return PAIR_BASE <= token < PAIR_BASE + N_CONTEXT * N_VALUES


def is_link(token: int) -> bool:
    return LINK_BASE <= token < LINK_BASE + N_CONTEXT * N_CONTEXT


def pair_parts(token: int) -> tuple[int, int]:
    """(ctx_entity, value_idx) of a pair token."""
    rel = token - PAIR_BASE
    return rel // N_VALUES, rel % N_VALUES


def link_parts(token: int) -> tuple[int, int]:
    """(src, dst) context-entity indices of a link token."""
    rel = token - LINK_BASE
    return rel // N_CONTEXT, rel % N_CONTEXT


def markers_for(tokens: list[int]) -> list[int]:
    return [TOKEN_MARKER[t] for t in tokens]


def render(tokens: list[int]) -> str:
    return " ".join(TOKEN_TEXT[t] for t in tokens)


_FREE_TEXT_CONNECTIVES = {
    "and", "then", "therefore", "because", "if", "implies", "so", "hence",
    "while", "although", "since", "unless",
}
_FREE_TEXT_FUNCTION = {
    "a", "an", "the", "is", "are", "was", "were", "of", "to", "in", "on",
    "it", "this", "that", "be", "as", "by", "with", "at", "or", "not",
}


def mark_free_text(text: str) -> tuple[list[int], list[int]]:
    """Bracket/subordinator heuristic for free text outside the generators.

    Maps words onto vocabulary ids (content words hash into the entity band)
    so hand-typed inputs can be scored; only the markers matter for scoring.
    """
    tokens: list[int] = []
    markers: list[int] = []
    for word in text.split():
        w = word.lower().strip(".!")
        if w in ("(", "["):
            tokens.append(OPEN)
            markers.append(OPEN_NEST)
        elif w in (")", "]"):
            tokens.append(CLOSE)
            markers.append(CLOSE_NEST)
        elif w in (",", ";"):
            tokens.append(SEP)
            markers.append(FUNCTION)
        elif w in _FREE_TEXT_CONNECTIVES:
            tokens.append(THEN)
            markers.append(CONNECTIVE)
        elif w in _FREE_TEXT_FUNCTION:
            tokens.append(IS)
            markers.append(FUNCTION)
        else:
            tokens.append(entity(zlib.crc32(w.encode("utf-8")) % N_ENTITIES))
            markers.append(CONTENT)
    return tokens, markers
