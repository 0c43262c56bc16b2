"""Minimal HTTP client for template generation against an OpenAI-compatible endpoint."""

from __future__ import annotations

import json
import logging
import os
import time

import requests

from .errors import ConfigError, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "SNAP_LLM_API_KEY"
REDACTED = "***"


class LLMClient:
    """Single-prompt completion client.

    ``api_style`` is ``"completions"`` (``{"prompt": ...}``, answer in
    ``choices[0].text``) or ``"chat"`` (``{"messages": [...]}``, answer in
    ``choices[0].message.content``). The credential is read from
    ``SNAP_LLM_API_KEY`` and never written to logs.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_style: str = "completions",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 2,
        backoff: float = 1.0,
        max_tokens: int = 400,
        session: requests.Session | None = None,
    ):
        if not endpoint:
            raise ConfigError("LLM endpoint is not configured")
        if api_style not in ("completions", "chat"):
            raise ConfigError(f"unknown api_style {api_style!r}")
        self.endpoint = endpoint
        self.model = model
        self.api_style = api_style
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_tokens = max_tokens
        self.session = session or requests.Session()

    def _body(self, prompt: str) -> dict:
        body = {"model": self.model, "max_tokens": self.max_tokens, "temperature": 0}
        if self.api_style == "chat":
            body["messages"] = [{"role": "user", "content": prompt}]
        else:
            body["prompt"] = prompt
        return body

    def _headers(self, redact: bool = False) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {REDACTED if redact else self.api_key}"
        return headers

    def _extract(self, payload: dict) -> str:
        try:
            choice = payload["choices"][0]
            if self.api_style == "chat":
                return choice["message"]["content"]
            return choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape from {self.endpoint}") from exc

    def complete(self, prompt: str) -> str:
        body = self._body(prompt)
        log.info("LLM request to %s headers=%s body=%s", self.endpoint, self._headers(redact=True), json.dumps(body))
        attempts = 0
        last_error = None
        while attempts <= self.max_retries:
            attempts += 1
            try:
                resp = self.session.post(self.endpoint, json=body, headers=self._headers(), timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"{type(exc).__name__}: {exc}".replace(self.api_key or REDACTED, REDACTED)
                log.warning("LLM attempt %d failed: %s", attempts, last_error)
            else:
                if resp.status_code in (401, 403):
                    raise TransportError(f"authentication rejected by {self.endpoint} (HTTP {resp.status_code})", attempts)
                if resp.status_code >= 400:
                    last_error = f"HTTP {resp.status_code}"
                    log.warning("LLM attempt %d failed: %s", attempts, last_error)
                else:
                    payload = resp.json()
                    log.info("LLM response: %s", json.dumps(payload))
                    return self._extract(payload)
            if attempts <= self.max_retries and self.backoff:
                time.sleep(self.backoff * attempts)
        raise TransportError(f"LLM request to {self.endpoint} failed: {last_error}", attempts)
