"""Seeded synthetic task tiers.

Five generators produce classification tasks whose solution mechanically
requires increasing reasoning depth; each carries a tier label, a routing
hint (the expert family pre-trained on that tier), and an answer derivable
by a bundled reference solver:

* tier 0 — cached-knowledge lookup: the queried entity's value is a global
  constant (``vocab.FIXED_FACTS``), never stated in context.
* tier 1 — transitive order chains ("a > b, b > c, min?"), answer entity.
* tier 2 — sequential mod-8 derivation chains over a variable with
  parenthesized updates; answer is the final value.
* tier 3 — long-context entity tracking across BREAK-separated segments
  with distractor facts; the deciding fact usually sits in an early segment.
* tier 4 — heterogeneous hard stream (deeper derivations, longer contexts,
  and composite lookup+arithmetic), requiring per-input depth variation.

All generation is driven by ``random.Random(seed)`` streams so identical
seeds give bit-identical corpora.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import vocab
from .errors import ConfigError, DataError

SCHEMA_VERSION = 1

TIER_HINT = {0: "SPE", 1: "CRE", 2: "LIE", 3: "MIE", 4: "MCE"}

# the 40/35/20/5 corpus mix; the last bucket is shared by tiers 3 and 4
PAPER_MIX = (0.40, 0.35, 0.20, 0.05)
DEFAULT_TIER34_SPLIT = 0.5


@dataclass
class TierSpec:
    tier: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tier not in TIER_HINT:
            raise ConfigError(f"unknown tier {self.tier}")

    @property
    def hint(self) -> str:
        return TIER_HINT[self.tier]


@dataclass
class SampleRecord:
    uid: str
    tier: int
    tokens: list[int]
    markers: list[int]
    answer: int
    hint: str
    seed: int
    version: int = SCHEMA_VERSION

    @property
    def text(self) -> str:
        return vocab.render(self.tokens)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "id": self.uid,
                "tier": self.tier,
                "tokens": self.tokens,
                "markers": self.markers,
                "answer": self.answer,
                "hint": self.hint,
                "seed": self.seed,
                "text": self.text,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        obj = json.loads(line)
        for key in ("version", "id", "tier", "tokens", "markers", "answer", "hint", "seed"):
            if key not in obj:
                raise DataError(f"corpus record missing field {key!r}")
        if obj["version"] != SCHEMA_VERSION:
            raise DataError(f"unsupported corpus schema version {obj['version']}")
        return cls(
            uid=obj["id"], tier=obj["tier"], tokens=obj["tokens"], markers=obj["markers"],
            answer=obj["answer"], hint=obj["hint"], seed=obj["seed"],
        )


# ---------------------------------------------------------------------------
# tier generators
# ---------------------------------------------------------------------------


def _gen_tier0(rng: random.Random, params: dict) -> tuple[list[int], int]:
    """Cached lookup: mention a few entities, then query one of E0..E7."""
    n_mentions = rng.randint(params.get("min_mentions", 1), params.get("max_mentions", 3))
    tokens: list[int] = []
    for _ in range(n_mentions):
        tokens += [vocab.entity(rng.randrange(vocab.N_ENTITIES)), vocab.SEP]
    target = rng.randrange(8)
    tokens += [vocab.QUERY, vocab.entity(target)]
    return tokens, vocab.FIXED_FACTS[target]


def _gen_tier1(rng: random.Random, params: dict) -> tuple[list[int], int]:
    """Transitive chain over distinct entities; query min or max."""
    length = rng.randint(params.get("min_len", 3), params.get("max_len", 4))
    order = rng.sample(range(8), length)  # strongest -> weakest
    tokens: list[int] = []
    for hi, lo in zip(order, order[1:]):
        if rng.random() < 0.5:
            tokens += [vocab.entity(hi), vocab.GT, vocab.entity(lo), vocab.SEP]
        else:
            tokens += [vocab.entity(lo), vocab.LT, vocab.entity(hi), vocab.SEP]
    if rng.random() < 0.5:
        tokens.append(vocab.Q_MIN)
        answer_entity = order[-1]
    else:
        tokens.append(vocab.Q_MAX)
        answer_entity = order[0]
    return tokens, 8 + answer_entity


def _apply_ops(x: int, ops: list[tuple[int, int]]) -> int:
    for op, operand in ops:
        if op == vocab.PLUS:
            x = x + operand
        elif op == vocab.TIMES:
            x = x * operand
        else:
            x = x - operand
    return x % vocab.MODULUS


def _gen_tier2(rng: random.Random, params: dict, *, separator: int | None = None,
               min_hops: int | None = None, max_hops: int | None = None,
               offset_prob: float | None = None) -> tuple[list[int], int]:
    """Shuffled pointer-derivation chain over context-entity records.

    Link records a0->a1->...->a_h end in a fact record a_h=v; a distractor
    chain provides a second value so the answer cannot be read off without
    following the hops (one attention hop per link). An optional
    parenthesized "+ n" makes the answer (v + n) mod 8. A SEP lands after
    every third record unless an explicit separator is given.
    """
    lo = min_hops if min_hops is not None else params.get("min_hops", 2)
    hi = max_hops if max_hops is not None else params.get("max_hops", 3)
    p_offset = offset_prob if offset_prob is not None else params.get("offset_prob", 0.5)
    hops = rng.randint(lo, hi)
    if hops > 5:
        raise ConfigError("pointer chains support at most 5 hops (8 context entities)")

    entities = rng.sample(range(vocab.N_CONTEXT), hops + 3)
    chain = entities[: hops + 1]
    d1, d2 = entities[hops + 1], entities[hops + 2]

    value = rng.randrange(8)
    d_value = rng.randrange(8)
    facts: list[int] = []
    for a, b in zip(chain, chain[1:]):
        facts.append(vocab.link_token(a, b))
    facts.append(vocab.pair_token(chain[-1], value))
    facts.append(vocab.link_token(d1, d2))
    facts.append(vocab.pair_token(d2, d_value))
    rng.shuffle(facts)

    tokens: list[int] = []
    for i, fact in enumerate(facts):
        tokens.append(fact)
        if separator is not None:
            tokens.append(separator)
        elif i % 3 == 2:
            tokens.append(vocab.SEP)  # three records per sentence
    if rng.random() < p_offset:
        off = rng.randrange(8)
        tokens += [vocab.OPEN, vocab.entity(8 + chain[0]), vocab.PLUS,
                   vocab.number(off), vocab.CLOSE, vocab.QUERY]
        answer = (value + off) % vocab.MODULUS
    else:
        tokens += [vocab.QUERY, vocab.entity(8 + chain[0])]
        answer = value
    return tokens, answer


def _gen_tier3(rng: random.Random, params: dict, *, min_segments: int | None = None,
               max_segments: int | None = None) -> tuple[list[int], int]:
    """Long-context tracking: one fact record per BREAK-separated segment.

    The tracked entity is re-assigned across segments; with probability
    p_early its deciding (latest) assignment sits well before the final
    stretch, out of windowed-attention reach of the query.
    """
    lo = min_segments if min_segments is not None else params.get("min_segments", 12)
    hi = max_segments if max_segments is not None else params.get("max_segments", 15)
    n_segments = rng.randint(lo, hi)
    p_early = params.get("p_early", 0.75)

    tracked = rng.randrange(vocab.N_CONTEXT)
    distractors = [i for i in range(vocab.N_CONTEXT) if i != tracked]

    if rng.random() < p_early:
        last_seg = rng.randrange(max(1, n_segments - 7))
    else:
        last_seg = rng.randrange(n_segments - 3, n_segments)
    occ_segments = {last_seg}
    extra = rng.randint(params.get("extra_min", 1), params.get("extra_max", 2))
    candidates = [s for s in range(last_seg)]
    rng.shuffle(candidates)
    occ_segments.update(candidates[:extra])

    answer_value = None
    tokens: list[int] = []
    for seg in range(n_segments):
        if seg > 0:
            tokens.append(vocab.BREAK)
        if seg in occ_segments:
            v = rng.randrange(8)
            if seg == last_seg:
                answer_value = v
            tokens.append(vocab.pair_token(tracked, v))
        else:
            tokens.append(vocab.pair_token(rng.choice(distractors), rng.randrange(8)))
    tokens += [vocab.BREAK, vocab.QUERY, vocab.entity(8 + tracked)]
    assert answer_value is not None
    return tokens, answer_value


def _gen_tier4(rng: random.Random, params: dict) -> tuple[list[int], int]:
    """Mixed hard stream: deep derivations, longer contexts, composites."""
    roll = rng.random()
    if roll < params.get("p_deep", 0.3):
        # deeper pointer chain, THEN-linked (single sentence), always offset
        return _gen_tier2(
            rng, params, separator=vocab.THEN,
            min_hops=4, max_hops=5, offset_prob=1.0,
        )
    if roll < params.get("p_deep", 0.3) + params.get("p_longctx", 0.4):
        return _gen_tier3(rng, params, min_segments=15, max_segments=15)
    return _gen_composite(rng, params)


def _gen_composite(rng: random.Random, params: dict) -> tuple[list[int], int]:
    """Context records (one per segment) for two entities, then arithmetic."""
    n_segments = rng.randint(10, 12)
    ea, eb = rng.sample(range(vocab.N_CONTEXT), 2)
    values: dict[int, int] = {}
    tokens: list[int] = []
    for seg in range(n_segments):
        if seg > 0:
            tokens.append(vocab.BREAK)
        e = rng.randrange(vocab.N_CONTEXT)
        v = rng.randrange(8)
        values[e] = v
        tokens.append(vocab.pair_token(e, v))
    # make sure both operands are defined; append records if a sample missed one
    for e in (ea, eb):
        if e not in values:
            v = rng.randrange(8)
            values[e] = v
            tokens += [vocab.BREAK, vocab.pair_token(e, v)]
    nc = rng.randrange(8)
    op1 = rng.choice(vocab.OP_TOKENS)
    op2 = rng.choice(vocab.OP_TOKENS)
    tokens.append(vocab.BREAK)
    tokens += [vocab.OPEN, vocab.OPEN, vocab.entity(8 + ea), op1, vocab.entity(8 + eb),
               vocab.CLOSE, op2, vocab.number(nc), vocab.CLOSE, vocab.QUERY]
    inner = _apply_ops(values[ea], [(op1, values[eb])])
    answer = _apply_ops(inner, [(op2, nc)])
    return tokens, answer


_GENERATORS = {0: _gen_tier0, 1: _gen_tier1, 2: _gen_tier2, 3: _gen_tier3, 4: _gen_tier4}


def generate(spec: TierSpec, count: int) -> list[SampleRecord]:
    """Generate `count` samples for a tier; deterministic per spec.seed."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    gen = _GENERATORS[spec.tier]
    rng = random.Random(spec.seed)
    records = []
    for i in range(count):
        tokens, answer = gen(rng, spec.params)
        records.append(
            SampleRecord(
                uid=f"t{spec.tier}-s{spec.seed}-{i:05d}",
                tier=spec.tier,
                tokens=tokens,
                markers=vocab.markers_for(tokens),
                answer=answer,
                hint=spec.hint,
                seed=spec.seed,
            )
        )
    return records


# ---------------------------------------------------------------------------
# reference solvers (the oracle: answers must be derivable from tokens alone)
# ---------------------------------------------------------------------------


def _solve_lookup(tokens: list[int]) -> int:
    q = tokens.index(vocab.QUERY)
    return vocab.FIXED_FACTS[vocab.entity_index(tokens[q + 1])]


def _solve_order(tokens: list[int]) -> int:
    his: set[int] = set()
    los: set[int] = set()
    seen: set[int] = set()
    for i, t in enumerate(tokens):
        if t == vocab.GT:
            hi, lo = tokens[i - 1], tokens[i + 1]
        elif t == vocab.LT:
            lo, hi = tokens[i - 1], tokens[i + 1]
        else:
            continue
        his.add(hi)
        los.add(lo)
        seen.update((hi, lo))
    if tokens[-1] == vocab.Q_MIN:
        (answer,) = seen - his  # never above anyone
    else:
        (answer,) = seen - los  # never below anyone
    return 8 + vocab.entity_index(answer)


def _parse_expr(tokens: list[int], pos: int, resolve) -> tuple[int, int]:
    """Recursive parse of `( expr op atom )` spans; returns (value, next_pos)."""
    t = tokens[pos]
    if t == vocab.OPEN:
        val, pos = _parse_expr(tokens, pos + 1, resolve)
        op = tokens[pos]
        operand, pos = _parse_expr(tokens, pos + 1, resolve)
        val = _apply_ops_raw(val, op, operand)
        return val, pos + 1  # skip CLOSE
    return resolve(t), pos + 1


def _apply_ops_raw(a: int, op: int, b: int) -> int:
    if op == vocab.PLUS:
        return a + b
    if op == vocab.TIMES:
        return a * b
    return a - b


def _scan_records(tokens: list[int]) -> tuple[dict[int, int], dict[int, int]]:
    """(links, values) keyed by context-entity index; later records win."""
    links: dict[int, int] = {}
    values: dict[int, int] = {}
    for t in tokens:
        if vocab.is_link(t):
            src, dst = vocab.link_parts(t)
            links[src] = dst
        elif vocab.is_pair(t):
            e, v = vocab.pair_parts(t)
            values[e] = v
    return links, values


def _solve_pointer_chain(tokens: list[int]) -> int:
    """Follow link records to the terminal value; apply the optional offset."""
    links, values = _scan_records(tokens)

    def resolve_entity(ctx: int) -> int:
        seen = set()
        while ctx in links:
            if ctx in seen:
                raise DataError("pointer chain has a cycle")
            seen.add(ctx)
            ctx = links[ctx]
        return values[ctx]

    if vocab.OPEN in tokens:
        start = tokens.index(vocab.OPEN)

        def resolve(t: int) -> int:
            if vocab.is_entity(t):
                return resolve_entity(vocab.entity_index(t) - 8)
            return vocab.number_index(t)

        val, _ = _parse_expr(tokens, start, resolve)
        return val % vocab.MODULUS
    q = tokens.index(vocab.QUERY)
    return resolve_entity(vocab.entity_index(tokens[q + 1]) - 8)


def _solve_tracking(tokens: list[int]) -> int:
    _, values = _scan_records(tokens)
    q = tokens.index(vocab.QUERY)
    return values[vocab.entity_index(tokens[q + 1]) - 8]


def _solve_composite(tokens: list[int]) -> int:
    _, values = _scan_records(tokens)

    def resolve(t: int) -> int:
        if vocab.is_entity(t):
            return values[vocab.entity_index(t) - 8]
        return vocab.number_index(t)

    start = tokens.index(vocab.OPEN)
    val, _ = _parse_expr(tokens, start, resolve)
    return val % vocab.MODULUS


def solve(tier: int, tokens: list[int]) -> int:
    """Reference solver: ground-truth answer for a generated sequence."""
    if tier == 0:
        return _solve_lookup(tokens)
    if tier == 1:
        return _solve_order(tokens)
    if tier == 2:
        return _solve_pointer_chain(tokens)
    if tier == 4:
        if any(vocab.is_link(t) for t in tokens):
            return _solve_pointer_chain(tokens)
        if vocab.OPEN in tokens:
            return _solve_composite(tokens)
    if tier in (3, 4):
        return _solve_tracking(tokens)
    raise ConfigError(f"unknown tier {tier}")


# ---------------------------------------------------------------------------
# corpus mixing and I/O
# ---------------------------------------------------------------------------


def largest_remainder_counts(ratios: list[float], total: int) -> list[int]:
    """Integer counts summing to total; floor then distribute by remainder,
    ties broken toward lower index."""
    raw = [r * total for r in ratios]
    counts = [int(x) for x in raw]
    short = total - sum(counts)
    remainders = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[:short]:
        counts[i] += 1
    return counts


def mix_corpus(specs: list[TierSpec], ratios: list[float], total: int, seed: int = 0
               ) -> list[SampleRecord]:
    """Mix per-spec generations at the given ratios (largest remainder),
    then shuffle deterministically."""
    if len(specs) != len(ratios):
        raise ConfigError(f"{len(specs)} specs but {len(ratios)} ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios sum to {sum(ratios)!r}, expected 1.0")
    counts = largest_remainder_counts(ratios, total)
    records: list[SampleRecord] = []
    for spec, count in zip(specs, counts):
        if count > 0:
            records.extend(generate(spec, count))
    random.Random(seed).shuffle(records)
    return records


def paper_mix_specs(seed: int, tier34_split: float = DEFAULT_TIER34_SPLIT,
                    params: dict | None = None) -> tuple[list[TierSpec], list[float]]:
    """The 40/35/20/5 mix with the 5% bucket split across tiers 3 and 4."""
    if not 0.0 <= tier34_split <= 1.0:
        raise ConfigError("tier34_split must be in [0, 1]")
    params = params or {}
    specs = [TierSpec(tier=t, seed=seed * 10 + t, params=dict(params.get(t, {}))) for t in range(5)]
    r0, r1, r2, r34 = PAPER_MIX
    ratios = [r0, r1, r2, r34 * tier34_split, r34 * (1.0 - tier34_split)]
    return specs, ratios


def write_corpus(records: list[SampleRecord], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_corpus(path) -> list[SampleRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json(line))
    return records
