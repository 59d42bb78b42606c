"""The SBO provider: accounts, block lists, CRML export, reverse lookup.

State is guarded by one lock (single writer, readers always see a committed
snapshot). Durability is a single append-only JSONL file of mutation records
with periodic snapshot compaction; boot replays the log over the latest
snapshot. Contact identifiers are stored post-normalization.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from random import Random
from typing import Callable, Iterable

from .crml import (
    BlockListRecord,
    CRMLDocument,
    CRML_VERSION,
    parse_identifier_map,
)
from .errors import (
    ConflictError,
    EvalError,
    NormalizeError,
    NotFoundError,
    ParseError,
    RuleError,
    SchemaError,
    UnauthorizedError,
    ValidationError,
)
from .identifiers import (
    ContactRecord,
    IdentifierKind,
    IdentifierValue,
    ImageHash,
    Profile,
    Strictness,
    normalize_value,
)
from .rules import (
    DEFAULT_THRESHOLDS,
    MatchThresholds,
    cached_parse_rule,
    default_rule,
    evaluate_rule,
    render_rule,
)

Clock = Callable[[], datetime]


def system_clock() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class TokenGrant:
    token: str
    account_name: str
    expires_at: datetime


@dataclass
class _StoredList:
    name: str
    strictness: Strictness
    rule_text: str
    updated_at: datetime
    contacts: list[ContactRecord] = field(default_factory=list)
    revision: int = 1
    next_contact_seq: int = 1


@dataclass
class _Account:
    name: str
    salt: bytes
    credential_hash: bytes
    iterations: int
    lists: dict[str, _StoredList] = field(default_factory=dict)


def _value_key(value: IdentifierValue) -> str:
    return value.to_hex() if isinstance(value, ImageHash) else value


def _wire_identifiers(identifiers: dict[IdentifierKind, IdentifierValue]) -> dict:
    return {
        kind.value: ({"phash64": v.to_hex()} if isinstance(v, ImageHash) else v)
        for kind, v in identifiers.items()
    }


class ProviderService:
    """One SBO provider instance; thread-safe."""

    def __init__(
        self,
        provider_name: str,
        data_path: str | Path | None = None,
        *,
        clock: Clock = system_clock,
        token_rng: Random | None = None,
        token_ttl_seconds: int = 3600,
        thresholds: MatchThresholds = DEFAULT_THRESHOLDS,
        snapshot_every: int = 500,
        pbkdf2_iterations: int = 20_000,
    ):
        self.provider_name = provider_name
        self.thresholds = thresholds
        self.token_ttl_seconds = token_ttl_seconds
        self._clock = clock
        self._token_rng = token_rng
        self._iterations = pbkdf2_iterations
        self._snapshot_every = snapshot_every
        self._lock = threading.RLock()
        self._accounts: dict[str, _Account] = {}
        self._tokens: dict[str, tuple[str, datetime]] = {}
        self._reverse: dict[tuple[str, str], set[tuple[str, str]]] = {}
        self._data_path = Path(data_path) if data_path is not None else None
        self._log_file = None
        self._mutations_since_snapshot = 0
        if self._data_path is not None:
            self._load()
            self._log_file = open(self._data_path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    # --- accounts and tokens ---

    def create_account(self, account_name: str, secret: str) -> str:
        if not account_name:
            raise ValidationError("account_name must be non-empty")
        if not secret:
            raise ValidationError("secret must be non-empty")
        with self._lock:
            if account_name in self._accounts:
                raise ConflictError(f"account {account_name!r} already exists")
            salt = self._random_bytes(16)
            digest = self._hash_secret(secret, salt, self._iterations)
            self._apply_create_account(account_name, salt, digest, self._iterations)
            self._append({
                "kind": "create_account",
                "at": self._now_iso(),
                "account": account_name,
                "salt": salt.hex(),
                "credential_hash": digest.hex(),
                "iterations": self._iterations,
            })
            return account_name

    def issue_token(self, account_name: str, secret: str) -> TokenGrant:
        with self._lock:
            account = self._accounts.get(account_name)
            if account is None:
                raise UnauthorizedError("unknown account or bad secret")
            candidate = self._hash_secret(secret, account.salt, account.iterations)
            if not hmac.compare_digest(candidate, account.credential_hash):
                raise UnauthorizedError("unknown account or bad secret")
            token = self._random_token()
            expires_at = self._clock() + timedelta(seconds=self.token_ttl_seconds)
            self._tokens[token] = (account_name, expires_at)
            return TokenGrant(token, account_name, expires_at)

    def authorize(self, token: str, account_name: str | None = None) -> str:
        """Resolve a bearer token to its account name, enforcing scope and expiry."""
        with self._lock:
            return self._authorize(token, account_name).name

    def _authorize(self, token: str, account_name: str | None = None) -> _Account:
        entry = self._tokens.get(token)
        if entry is None:
            raise UnauthorizedError("unknown token")
        name, expires_at = entry
        if self._clock() >= expires_at:
            del self._tokens[token]
            raise UnauthorizedError("token expired")
        if account_name is not None and account_name != name:
            raise UnauthorizedError("token is not scoped to this account")
        return self._accounts[name]

    # --- block list management ---

    def create_block_list(self, token: str, name: str, strictness: Strictness,
                          rule_text: str | None = None,
                          account_name: str | None = None) -> BlockListRecord:
        with self._lock:
            account = self._authorize(token, account_name)
            if not name:
                raise ValidationError("list name must be non-empty")
            if name in account.lists:
                raise ConflictError(f"block list {name!r} already exists")
            if rule_text is None:
                rule_text = render_rule(default_rule())
            else:
                self._check_rule(rule_text, name)
            at = self._now_iso()
            self._apply_create_list(account.name, name, strictness.value, rule_text, at)
            self._append({
                "kind": "create_block_list", "at": at, "account": account.name,
                "name": name, "strictness": strictness.value, "rule_text": rule_text,
            })
            return self._wire_list(account.lists[name])

    def add_contact(self, token: str, list_name: str, identifiers: dict,
                    account_name: str | None = None) -> ContactRecord:
        with self._lock:
            account = self._authorize(token, account_name)
            stored = self._find_list(account, list_name)
            normalized = self._normalize_bag(identifiers)
            if not normalized:
                raise ValidationError("at least one identifier is required",
                                      path="identifiers")
            contact_id = f"c-{stored.next_contact_seq:03d}"
            at = self._now_iso()
            self._apply_add_contact(account.name, list_name, contact_id, normalized, at)
            self._append({
                "kind": "add_contact", "at": at, "account": account.name,
                "list": list_name, "contact_id": contact_id,
                "identifiers": _wire_identifiers(normalized),
            })
            return ContactRecord(contact_id, normalized)

    def remove_contact(self, token: str, list_name: str, contact_id: str,
                       account_name: str | None = None) -> None:
        with self._lock:
            account = self._authorize(token, account_name)
            stored = self._find_list(account, list_name)
            if all(c.contact_id != contact_id for c in stored.contacts):
                raise NotFoundError(f"no contact {contact_id!r} in {list_name!r}")
            at = self._now_iso()
            self._apply_remove_contact(account.name, list_name, contact_id, at)
            self._append({
                "kind": "remove_contact", "at": at, "account": account.name,
                "list": list_name, "contact_id": contact_id,
            })

    def set_rule(self, token: str, list_name: str, rule_text: str,
                 account_name: str | None = None) -> None:
        with self._lock:
            account = self._authorize(token, account_name)
            self._find_list(account, list_name)
            self._check_rule(rule_text, list_name)
            at = self._now_iso()
            self._apply_set_rule(account.name, list_name, rule_text, at)
            self._append({
                "kind": "set_rule", "at": at, "account": account.name,
                "list": list_name, "rule_text": rule_text,
            })

    # --- export and lookup ---

    def export_crml(self, token: str, list_names: Iterable[str] | None = None,
                    account_name: str | None = None) -> CRMLDocument:
        with self._lock:
            account = self._authorize(token, account_name)
            selected = self._select_lists(account, list_names)
            return CRMLDocument(
                crml_version=CRML_VERSION,
                provider=self.provider_name,
                account=account.name,
                issued_at=self._clock(),
                block_lists=tuple(self._wire_list(s) for s in selected),
            )

    def export_with_digest(self, token: str, list_names: Iterable[str] | None = None,
                           account_name: str | None = None) -> tuple[CRMLDocument, str]:
        """Document plus its entity version, computed atomically for conditional GET."""
        with self._lock:
            doc = self.export_crml(token, list_names, account_name)
            return doc, self.export_digest(doc.account, list_names)

    def export_digest(self, account_name: str,
                      list_names: Iterable[str] | None = None) -> str:
        """Content digest for conditional refresh; excludes issued_at, covers revisions."""
        with self._lock:
            account = self._accounts.get(account_name)
            if account is None:
                raise NotFoundError(f"unknown account {account_name!r}")
            selected = self._select_lists(account, list_names)
            payload = json.dumps({
                "provider": self.provider_name,
                "account": account.name,
                "lists": [
                    {
                        "name": s.name, "strictness": s.strictness.value,
                        "rule_text": s.rule_text, "revision": s.revision,
                        "contacts": [
                            {"contact_id": c.contact_id,
                             "identifiers": _wire_identifiers(c.identifiers)}
                            for c in s.contacts
                        ],
                    }
                    for s in selected
                ],
            }, separators=(",", ":"), sort_keys=True)
            return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def blocked_by(self, identifiers: dict) -> list[tuple[str, str]]:
        """All (account, list) pairs whose rule matches the submitted identifiers.

        Unauthenticated by design; returns names only, never identifier contents.
        """
        try:
            parsed = parse_identifier_map(identifiers)
        except SchemaError as exc:
            raise ValidationError(str(exc)) from exc
        profile = Profile("query", parsed)
        blockers: list[tuple[str, str]] = []
        with self._lock:
            for account in self._accounts.values():
                for stored in account.lists.values():
                    ast = cached_parse_rule(stored.rule_text)
                    for contact in stored.contacts:
                        try:
                            result = evaluate_rule(ast, contact, profile,
                                                   stored.strictness, self.thresholds)
                        except EvalError:
                            continue
                        if result.matched:
                            blockers.append((account.name, stored.name))
                            break
        return blockers

    # --- reverse index ---

    def reverse_index(self) -> dict[tuple[str, str], set[tuple[str, str]]]:
        """Copy of the maintained (kind, value) -> {(account, list)} index."""
        with self._lock:
            return {key: set(pairs) for key, pairs in self._reverse.items()}

    def rebuild_reverse_index(self) -> dict[tuple[str, str], set[tuple[str, str]]]:
        """From-scratch recomputation over all stored lists (consistency oracle)."""
        with self._lock:
            index: dict[tuple[str, str], set[tuple[str, str]]] = {}
            for account in self._accounts.values():
                for stored in account.lists.values():
                    for contact in stored.contacts:
                        for kind, value in contact.identifiers.items():
                            key = (kind.value, _value_key(value))
                            index.setdefault(key, set()).add((account.name, stored.name))
            return index

    # --- state transitions (shared by live calls and log replay) ---

    def _apply_create_account(self, name: str, salt: bytes, digest: bytes,
                              iterations: int) -> None:
        self._accounts[name] = _Account(name, salt, digest, iterations)

    def _apply_create_list(self, account: str, name: str, strictness: str,
                           rule_text: str, at: str) -> None:
        self._accounts[account].lists[name] = _StoredList(
            name=name, strictness=Strictness(strictness), rule_text=rule_text,
            updated_at=_parse_iso(at))

    def _apply_add_contact(self, account: str, list_name: str, contact_id: str,
                           identifiers: dict[IdentifierKind, IdentifierValue],
                           at: str) -> None:
        stored = self._accounts[account].lists[list_name]
        stored.contacts.append(ContactRecord(contact_id, identifiers))
        seq = int(contact_id.split("-", 1)[1])
        stored.next_contact_seq = max(stored.next_contact_seq, seq) + 1
        self._touch(stored, at)
        pair = (account, list_name)
        for kind, value in identifiers.items():
            self._reverse.setdefault((kind.value, _value_key(value)), set()).add(pair)

    def _apply_remove_contact(self, account: str, list_name: str, contact_id: str,
                              at: str) -> None:
        stored = self._accounts[account].lists[list_name]
        removed = next(c for c in stored.contacts if c.contact_id == contact_id)
        stored.contacts = [c for c in stored.contacts if c.contact_id != contact_id]
        self._touch(stored, at)
        pair = (account, list_name)
        for kind, value in removed.identifiers.items():
            key = (kind.value, _value_key(value))
            still_present = any(
                c.identifiers.get(kind) == value for c in stored.contacts
            )
            if not still_present and key in self._reverse:
                self._reverse[key].discard(pair)
                if not self._reverse[key]:
                    del self._reverse[key]

    def _apply_set_rule(self, account: str, list_name: str, rule_text: str,
                        at: str) -> None:
        stored = self._accounts[account].lists[list_name]
        stored.rule_text = rule_text
        self._touch(stored, at)

    @staticmethod
    def _touch(stored: _StoredList, at: str) -> None:
        stored.revision += 1
        stored.updated_at = _parse_iso(at)

    # --- persistence ---

    def _append(self, record: dict) -> None:
        if self._log_file is None:
            return
        self._log_file.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._log_file.flush()
        os.fsync(self._log_file.fileno())
        self._mutations_since_snapshot += 1
        if self._mutations_since_snapshot >= self._snapshot_every:
            self._compact()

    def _compact(self) -> None:
        assert self._data_path is not None
        if self._log_file is not None:
            self._log_file.close()
        tmp_path = self._data_path.with_suffix(self._data_path.suffix + ".tmp")
        with open(tmp_path, "w", encoding="utf-8") as tmp:
            tmp.write(json.dumps(
                {"kind": "snapshot", "state": self._state_snapshot()},
                separators=(",", ":")) + "\n")
            tmp.flush()
            os.fsync(tmp.fileno())
        os.replace(tmp_path, self._data_path)
        self._log_file = open(self._data_path, "a", encoding="utf-8")
        self._mutations_since_snapshot = 0

    def _state_snapshot(self) -> dict:
        return {
            "accounts": [
                {
                    "account_name": a.name,
                    "salt": a.salt.hex(),
                    "credential_hash": a.credential_hash.hex(),
                    "iterations": a.iterations,
                    "lists": [
                        {
                            "name": s.name,
                            "strictness": s.strictness.value,
                            "rule_text": s.rule_text,
                            "updated_at": s.updated_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
                            "revision": s.revision,
                            "next_contact_seq": s.next_contact_seq,
                            "contacts": [
                                {"contact_id": c.contact_id,
                                 "identifiers": _wire_identifiers(c.identifiers)}
                                for c in s.contacts
                            ],
                        }
                        for s in a.lists.values()
                    ],
                }
                for a in self._accounts.values()
            ],
        }

    def _restore_snapshot(self, state: dict) -> None:
        for raw_account in state["accounts"]:
            account = _Account(
                name=raw_account["account_name"],
                salt=bytes.fromhex(raw_account["salt"]),
                credential_hash=bytes.fromhex(raw_account["credential_hash"]),
                iterations=raw_account["iterations"],
            )
            self._accounts[account.name] = account
            for raw_list in raw_account["lists"]:
                stored = _StoredList(
                    name=raw_list["name"],
                    strictness=Strictness(raw_list["strictness"]),
                    rule_text=raw_list["rule_text"],
                    updated_at=_parse_iso(raw_list["updated_at"]),
                    revision=raw_list["revision"],
                    next_contact_seq=raw_list["next_contact_seq"],
                )
                account.lists[stored.name] = stored
                pair = (account.name, stored.name)
                for raw_contact in raw_list["contacts"]:
                    identifiers = parse_identifier_map(raw_contact["identifiers"])
                    stored.contacts.append(
                        ContactRecord(raw_contact["contact_id"], identifiers))
                    for kind, value in identifiers.items():
                        self._reverse.setdefault(
                            (kind.value, _value_key(value)), set()).add(pair)

    def _replay(self, record: dict) -> None:
        kind = record["kind"]
        if kind == "create_account":
            self._apply_create_account(
                record["account"], bytes.fromhex(record["salt"]),
                bytes.fromhex(record["credential_hash"]), record["iterations"])
        elif kind == "create_block_list":
            self._apply_create_list(record["account"], record["name"],
                                    record["strictness"], record["rule_text"],
                                    record["at"])
        elif kind == "add_contact":
            self._apply_add_contact(record["account"], record["list"],
                                    record["contact_id"],
                                    parse_identifier_map(record["identifiers"]),
                                    record["at"])
        elif kind == "remove_contact":
            self._apply_remove_contact(record["account"], record["list"],
                                       record["contact_id"], record["at"])
        elif kind == "set_rule":
            self._apply_set_rule(record["account"], record["list"],
                                 record["rule_text"], record["at"])
        else:
            raise ValueError(f"unknown log record kind {kind!r}")

    def _load(self) -> None:
        assert self._data_path is not None
        if not self._data_path.exists():
            return
        lines = self._data_path.read_text(encoding="utf-8").splitlines()
        records: list[dict] = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break  # torn final write; the mutation never committed
                raise
        start = 0
        for i, record in enumerate(records):
            if record.get("kind") == "snapshot":
                start = i
        self._accounts.clear()
        self._reverse.clear()
        for record in records[start:]:
            if record.get("kind") == "snapshot":
                self._accounts.clear()
                self._reverse.clear()
                self._restore_snapshot(record["state"])
            else:
                self._replay(record)

    # --- helpers ---

    def _normalize_bag(self, identifiers: dict) -> dict[IdentifierKind, IdentifierValue]:
        try:
            parsed = parse_identifier_map(identifiers)
        except SchemaError as exc:
            raise ValidationError(str(exc)) from exc
        try:
            return {kind: normalize_value(kind, value) for kind, value in parsed.items()}
        except NormalizeError as exc:
            raise ValidationError(str(exc)) from exc

    def _check_rule(self, rule_text: str, list_name: str) -> None:
        try:
            cached_parse_rule(rule_text)
        except ParseError as exc:
            raise RuleError(f"list {list_name!r}: {exc}", list_name=list_name) from exc

    @staticmethod
    def _find_list(account: _Account, list_name: str) -> _StoredList:
        stored = account.lists.get(list_name)
        if stored is None:
            raise NotFoundError(f"unknown block list {list_name!r}")
        return stored

    @staticmethod
    def _select_lists(account: _Account,
                      list_names: Iterable[str] | None) -> list[_StoredList]:
        if list_names is None:
            return list(account.lists.values())
        wanted = list(list_names)
        for name in wanted:
            if name not in account.lists:
                raise NotFoundError(f"unknown block list {name!r}")
        return [s for s in account.lists.values() if s.name in set(wanted)]

    @staticmethod
    def _wire_list(stored: _StoredList) -> BlockListRecord:
        return BlockListRecord(
            name=stored.name,
            strictness=stored.strictness,
            rule_text=stored.rule_text,
            # fresh identifier dicts so exported documents never alias store state
            contacts=tuple(ContactRecord(c.contact_id, dict(c.identifiers))
                           for c in stored.contacts),
        )

    @staticmethod
    def _hash_secret(secret: str, salt: bytes, iterations: int) -> bytes:
        return hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, iterations)

    def _random_bytes(self, n: int) -> bytes:
        if self._token_rng is not None:
            return self._token_rng.randbytes(n)
        return secrets.token_bytes(n)

    def _random_token(self) -> str:
        return self._random_bytes(16).hex()

    def _now_iso(self) -> str:
        return self._clock().strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
