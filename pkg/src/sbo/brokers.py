"""Stub credential brokers standing in for SSO/LDAP delegation.

A broker holds the user's authorization (provider account + secret) and
exchanges it for a provider bearer token over the ordinary token endpoint,
so delegated integrations fetch exactly like direct ones. Real OAuth/LDAP
stacks would slot in behind the same interface.
"""

from __future__ import annotations

from typing import Mapping, Protocol

from .errors import BrokerUnavailable, RestApiError
from .restclient import IssuedToken, ProviderRestClient
from .transport import Transport


class CredentialBroker(Protocol):
    enabled: bool

    def issue_provider_token(self, provider_host: str, account_name: str) -> IssuedToken: ...


class StubBroker:
    """Token-issuing fixture for one delegation flavor (SSO or LDAP)."""

    def __init__(self, name: str, transports: Mapping[str, Transport],
                 enabled: bool = True):
        self.name = name
        self.enabled = enabled
        self._transports = transports
        self._authorizations: dict[tuple[str, str], str] = {}

    def authorize(self, provider_host: str, account_name: str, secret: str) -> None:
        """Record the user's grant letting this broker authenticate to the provider."""
        self._authorizations[(provider_host, account_name)] = secret

    def issue_provider_token(self, provider_host: str, account_name: str) -> IssuedToken:
        if not self.enabled:
            raise BrokerUnavailable(f"{self.name} broker is disabled")
        secret = self._authorizations.get((provider_host, account_name))
        if secret is None:
            raise BrokerUnavailable(
                f"{self.name} broker holds no authorization for "
                f"{account_name}@{provider_host}")
        transport = self._transports.get(provider_host)
        if transport is None:
            raise BrokerUnavailable(f"{self.name} broker cannot reach {provider_host}")
        try:
            return ProviderRestClient(transport).issue_token(account_name, secret)
        except RestApiError as exc:
            raise BrokerUnavailable(f"{self.name} broker token exchange failed: {exc}") from exc
