"""Independent oracles and random-instance generators.

Everything here re-derives expected behavior with a *different* algorithm
than the implementation under test: full-matrix edit distance, a
split-on-operator rule parser, and a verdicts-first tree fold. Keep it that
way; these files must never import the implementation's internals beyond
the public data types.
"""

from __future__ import annotations

import re
import string
from datetime import datetime, timezone
from random import Random

from sbo.crml import BlockListRecord, CRMLDocument
from sbo.identifiers import ContactRecord, IdentifierKind, ImageHash, Profile, Strictness
from sbo.rules import And, MatchThresholds, Operator, Or, Predicate, RuleNode, render_rule


# --- edit distance: full DP matrix, no row compaction ---

def levenshtein_matrix(a: str, b: str) -> int:
    rows = len(a) + 1
    cols = len(b) + 1
    d = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        d[i][0] = i
    for j in range(cols):
        d[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost)
    return d[-1][-1]


def similarity_oracle(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_matrix(a, b) / longest


# --- normalization, re-stated from the contract rather than the code ---

def normalize_oracle(kind: IdentifierKind, raw: str) -> str:
    if kind in (IdentifierKind.EMAIL_ID, IdentifierKind.USERNAME, IdentifierKind.GENDER):
        return raw.strip().lower()
    if kind is IdentifierKind.PHONE_NUMBER:
        return "".join(ch for ch in raw if ch.isdigit())
    if kind is IdentifierKind.AGE:
        return raw.strip()
    return " ".join(raw.split()).lower()


# --- evaluation: enumerate predicate verdicts first, then fold the tree ---

def _predicate_verdict(pred: Predicate, contact: ContactRecord, profile: Profile,
                       strictness: Strictness, thresholds: MatchThresholds) -> bool:
    cv = contact.identifiers.get(pred.kind)
    pv = profile.identifiers.get(pred.kind)
    if cv is None or pv is None:
        return False
    if pred.op is Operator.GREATERTHAN:
        return int(pv.strip()) > pred.literal
    if isinstance(cv, ImageHash):
        distance = bin(cv.bits ^ pv.bits).count("1")
        if pred.op is Operator.EQUALS:
            return distance == 0
        level = Strictness.LENIENT if pred.op is Operator.FUZZYMATCHES else strictness
        return distance <= thresholds.image_for(level)
    nc = normalize_oracle(pred.kind, cv)
    np_ = normalize_oracle(pred.kind, pv)
    if pred.op is Operator.EQUALS:
        return nc == np_
    level = Strictness.LENIENT if pred.op is Operator.FUZZYMATCHES else strictness
    return similarity_oracle(nc, np_) >= thresholds.text_for(level)


def fold_evaluate(ast: RuleNode, contact: ContactRecord, profile: Profile,
                  strictness: Strictness,
                  thresholds: MatchThresholds = MatchThresholds()) -> bool:
    verdicts: dict[int, bool] = {}

    def collect(node: RuleNode) -> None:
        if isinstance(node, Predicate):
            verdicts[id(node)] = _predicate_verdict(node, contact, profile,
                                                    strictness, thresholds)
        else:
            for child in node.children:
                collect(child)

    collect(ast)

    def fold(node: RuleNode) -> bool:
        if isinstance(node, Predicate):
            return verdicts[id(node)]
        child_values = [fold(child) for child in node.children]
        return all(child_values) if isinstance(node, And) else any(child_values)

    return fold(ast)


# --- parsing: split on OR at depth zero, then AND, recursing into parens ---

_ORACLE_TOKEN = re.compile(r"[A-Za-z]+|\d+|[()]")

_ORACLE_KINDS = {kind.value.lower(): kind for kind in IdentifierKind}
_ORACLE_KINDS.update({
    "full name": IdentifierKind.FULL_NAME,
    "email id": IdentifierKind.EMAIL_ID,
    "phone number": IdentifierKind.PHONE_NUMBER,
    "profile image": IdentifierKind.PROFILE_IMAGE,
    "photograph": IdentifierKind.PROFILE_IMAGE,
    "bio": IdentifierKind.BIODATA,
})


def split_parse(text: str) -> RuleNode:
    return _parse_tokens(_ORACLE_TOKEN.findall(text))


def _split_depth0(tokens: list[str], word: str) -> list[list[str]]:
    segments: list[list[str]] = [[]]
    depth = 0
    for token in tokens:
        if token == "(":
            depth += 1
        elif token == ")":
            depth -= 1
        if token == word and depth == 0:
            segments.append([])
        else:
            segments[-1].append(token)
    return segments


def _parse_tokens(tokens: list[str]) -> RuleNode:
    or_parts = _split_depth0(tokens, "OR")
    if len(or_parts) > 1:
        return Or(tuple(_parse_tokens(part) for part in or_parts))
    and_parts = _split_depth0(tokens, "AND")
    if len(and_parts) > 1:
        return And(tuple(_parse_tokens(part) for part in and_parts))
    if tokens[0] == "(" and tokens[-1] == ")":
        return _parse_tokens(tokens[1:-1])
    return _parse_predicate(tokens)


def _parse_predicate(tokens: list[str]) -> Predicate:
    words = list(tokens)
    if words[-1].isdigit():
        literal = int(words.pop())
        if words[-2:] == ["GREATER", "THAN"]:
            words = words[:-2]
        elif words[-1] == "GREATERTHAN":
            words = words[:-1]
        kind = _ORACLE_KINDS[" ".join(words).lower()]
        return Predicate(kind, Operator.GREATERTHAN, literal)
    op = Operator(words.pop())
    kind = _ORACLE_KINDS[" ".join(words).lower()]
    return Predicate(kind, op)


# --- generators ---

_TEXT_KINDS = [k for k in IdentifierKind if k is not IdentifierKind.PROFILE_IMAGE]
_NAME_CHARS = string.ascii_letters + string.digits + " .-_@+'&<>é中"


def random_word(rng: Random, min_len: int = 1, max_len: int = 12) -> str:
    return "".join(rng.choice(string.ascii_lowercase)
                   for _ in range(rng.randint(min_len, max_len)))


def random_text(rng: Random, max_len: int = 16) -> str:
    return "".join(rng.choice(_NAME_CHARS) for _ in range(rng.randint(0, max_len)))


_BASE_WORDS = ["johnsmith", "mallory", "jsmith", "grace", "bell"]


def near_word(rng: Random, base: str | None = None) -> str:
    """A word a few random edits away from a common base, to land near thresholds."""
    word = list(base or rng.choice(_BASE_WORDS))
    for _ in range(rng.randint(0, 3)):
        op = rng.randrange(3)
        pos = rng.randrange(len(word)) if word else 0
        if op == 0 and word:
            word[pos] = rng.choice(string.ascii_lowercase)
        elif op == 1:
            word.insert(pos, rng.choice(string.ascii_lowercase))
        elif word:
            del word[pos]
    return "".join(word) or "x"


def near_hash(rng: Random, base: int = 0x0123456789ABCDEF) -> ImageHash:
    bits = base
    for _ in range(rng.randint(0, 20)):
        bits ^= 1 << rng.randrange(64)
    return ImageHash(bits)


def random_value(rng: Random, kind: IdentifierKind):
    if kind is IdentifierKind.PROFILE_IMAGE:
        return near_hash(rng)
    if kind is IdentifierKind.AGE:
        return str(rng.randint(0, 120))
    return near_word(rng)


def random_bag(rng: Random, kinds: list[IdentifierKind],
               present_p: float = 0.7) -> dict:
    bag = {}
    for kind in kinds:
        if rng.random() < present_p:
            bag[kind] = random_value(rng, kind)
    if not bag:
        kind = rng.choice(kinds)
        bag[kind] = random_value(rng, kind)
    return bag


def random_ast(rng: Random, depth: int, kinds: list[IdentifierKind]) -> RuleNode:
    if depth <= 0 or rng.random() < 0.35:
        kind = rng.choice(kinds)
        if kind is IdentifierKind.AGE and rng.random() < 0.4:
            return Predicate(kind, Operator.GREATERTHAN, rng.randint(0, 120))
        if kind is IdentifierKind.PROFILE_IMAGE:
            op = rng.choice([Operator.MATCHES, Operator.EQUALS, Operator.FUZZYMATCHES])
        else:
            op = rng.choice([Operator.MATCHES, Operator.EQUALS, Operator.FUZZYMATCHES])
        return Predicate(kind, op)
    node_cls = rng.choice([And, Or])
    count = rng.randint(2, 3)
    return node_cls(tuple(random_ast(rng, depth - 1, kinds) for _ in range(count)))


def random_document(rng: Random) -> CRMLDocument:
    all_kinds = list(IdentifierKind)
    lists = []
    used_names: set[str] = set()
    for i in range(rng.randint(0, 3)):
        name = f"{random_word(rng, 3, 8)} {i}"
        if name in used_names:
            continue
        used_names.add(name)
        contacts = []
        for j in range(rng.randint(0, 3)):
            kinds = rng.sample(all_kinds, rng.randint(1, 3))
            identifiers = {}
            for kind in kinds:
                if kind is IdentifierKind.PROFILE_IMAGE:
                    identifiers[kind] = ImageHash(rng.getrandbits(64))
                else:
                    identifiers[kind] = random_text(rng)
            contacts.append(ContactRecord(f"c-{j + 1:03d}", identifiers))
        lists.append(BlockListRecord(
            name=name,
            strictness=rng.choice(list(Strictness)),
            rule_text=render_rule(random_ast(rng, rng.randint(0, 3), all_kinds)),
            contacts=tuple(contacts),
        ))
    issued = datetime(rng.randint(1990, 2090), rng.randint(1, 12), rng.randint(1, 28),
                      rng.randint(0, 23), rng.randint(0, 59), rng.randint(0, 59),
                      tzinfo=timezone.utc)
    return CRMLDocument(
        crml_version="1.0",
        provider=f"sbo.{random_word(rng, 2, 8)}.com",
        account=random_word(rng, 3, 14) + rng.choice(["", " jr.", "é"]),
        issued_at=issued,
        block_lists=tuple(lists),
    )
