"""
Knowledge clients

This module provides the clients that answer knowledge prompts: an offline
store backed by the JSON documents shipped with the package, and an HTTP
client for an OpenAI-compatible chat completions endpoint.
"""

import logging
import os
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Protocol, Tuple, Union

import requests

from .errors import AuthError, NetworkError, ValidationError
from .utils import fixture_filename

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o-mini"
DEFAULT_TIMEOUT = 60.0


class KnowledgeClient(Protocol):
    """Anything that can answer a registered knowledge prompt."""

    def complete(self, prompt_key: str, prompt: str) -> str:
        ...


class FixtureKnowledgeClient:
    """
    Offline client serving stored knowledge documents.

    Documents are looked up as ``<prompt_key>.json`` (characters unsafe in
    file names replaced by ``_``), either in a directory
    given at construction or in the fixtures bundled with pgrules.
    """

    def __init__(self, fixture_dir: Optional[Union[str, Path]] = None):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None

    def complete(self, prompt_key: str, prompt: str) -> str:
        filename = fixture_filename(prompt_key)
        if self.fixture_dir is not None:
            path = self.fixture_dir / filename
            if not path.exists():
                raise ValidationError(
                    f"No stored knowledge document for '{prompt_key}' in {self.fixture_dir}"
                )
            return path.read_text(encoding="utf-8")

        resource = resources.files("pgrules").joinpath("fixtures", filename)
        if not resource.is_file():
            raise ValidationError(f"No stored knowledge document for '{prompt_key}'")
        logger.debug(f"Serving bundled knowledge document {filename}")
        return resource.read_text(encoding="utf-8")


class LiveKnowledgeClient:
    """Client for an OpenAI-compatible chat completions API."""

    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str = DEFAULT_MODEL,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        """
        Initialize the client.

        Args:
            base_url: Base URL of the API (e.g. https://api.openai.com)
            api_key: Bearer token
            model: Model name sent with each request
            timeout: Request timeout in seconds
        """
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.session = requests.Session()

        self.session.headers.update(
            {
                "Authorization": f"Bearer {self.api_key}",
                "Accept": "application/json",
                "Content-Type": "application/json",
            }
        )

    @classmethod
    def from_env(cls, environ: Optional[Dict[str, str]] = None) -> "LiveKnowledgeClient":
        """
        Build a client from PGRULES_LLM_* environment variables.

        Raises:
            ValueError: If the endpoint or the API key is missing, or the
                timeout is not a positive number
        """
        env = os.environ if environ is None else environ
        endpoint = env.get("PGRULES_LLM_ENDPOINT")
        api_key = env.get("PGRULES_LLM_API_KEY")
        if not endpoint:
            raise ValueError("PGRULES_LLM_ENDPOINT is required for live knowledge fetches")
        if not api_key:
            raise ValueError("PGRULES_LLM_API_KEY is required for live knowledge fetches")

        raw_timeout = env.get("PGRULES_LLM_TIMEOUT", str(DEFAULT_TIMEOUT))
        try:
            timeout = float(raw_timeout)
        except ValueError:
            raise ValueError(f"PGRULES_LLM_TIMEOUT must be a number, got {raw_timeout!r}")
        if timeout <= 0:
            raise ValueError(f"PGRULES_LLM_TIMEOUT must be positive, got {timeout}")

        return cls(
            base_url=endpoint,
            api_key=api_key,
            model=env.get("PGRULES_LLM_MODEL", DEFAULT_MODEL),
            timeout=timeout,
        )

    @property
    def completions_url(self) -> str:
        if self.base_url.endswith("/chat/completions"):
            return self.base_url
        if self.base_url.endswith("/v1"):
            return f"{self.base_url}/chat/completions"
        return f"{self.base_url}/v1/chat/completions"

    @property
    def models_url(self) -> str:
        root = self.completions_url[: -len("/chat/completions")]
        return f"{root}/models"

    def check_endpoint(self) -> Tuple[bool, str]:
        """
        Check that the endpoint answers, accepts the key and serves the model.

        An endpoint that answers but lists no models is accepted.

        Returns:
            Tuple of (usable: bool, message: str)
        """
        logger.info(f"Checking LLM endpoint {self.models_url}...")
        try:
            response = self.session.get(self.models_url, timeout=self.timeout)
        except requests.exceptions.Timeout:
            return False, f"No answer from {self.base_url} within {self.timeout:g}s"
        except requests.exceptions.RequestException as e:
            return False, f"Cannot reach {self.base_url}: {e}"

        if response.status_code in (401, 403):
            return False, f"Endpoint rejected the API key (HTTP {response.status_code})"
        if response.status_code != 200:
            return False, (
                f"Unexpected response from {self.models_url}: HTTP {response.status_code}"
            )

        try:
            listed = {m.get("id") for m in (response.json() or {}).get("data", [])}
        except (ValueError, AttributeError, TypeError):
            listed = set()
        if listed and self.model not in listed:
            return False, f"Model '{self.model}' is not served by {self.base_url}"
        return True, f"Endpoint {self.base_url} is usable with model '{self.model}'"

    def complete(self, prompt_key: str, prompt: str) -> str:
        """
        Send a prompt and return the raw text of the first choice.

        Raises:
            AuthError: On HTTP 401/403
            NetworkError: On connection failures, timeouts and other HTTP errors
            ValidationError: If the response body has no message content
        """
        payload = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {
                    "role": "system",
                    "content": "Answer with a single JSON document and nothing else.",
                },
                {"role": "user", "content": prompt},
            ],
        }

        try:
            logger.info(f"Requesting '{prompt_key}' from {self.completions_url}")
            response = self.session.post(
                self.completions_url, json=payload, timeout=self.timeout
            )
        except requests.exceptions.Timeout as e:
            raise NetworkError(f"Request for '{prompt_key}' timed out") from e
        except requests.exceptions.RequestException as e:
            raise NetworkError(f"Request for '{prompt_key}' failed: {e}") from e

        if response.status_code in (401, 403):
            raise AuthError(
                f"LLM endpoint rejected credentials (HTTP {response.status_code})",
                status_code=response.status_code,
            )
        try:
            response.raise_for_status()
        except requests.exceptions.HTTPError as e:
            raise NetworkError(
                f"LLM endpoint returned HTTP {response.status_code}",
                status_code=response.status_code,
            ) from e

        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ValidationError(
                f"Unexpected response shape for '{prompt_key}'"
            ) from e
        if not isinstance(content, str):
            raise ValidationError(f"Response content for '{prompt_key}' is not text")
        return content


__all__ = [
    "KnowledgeClient",
    "FixtureKnowledgeClient",
    "LiveKnowledgeClient",
]
