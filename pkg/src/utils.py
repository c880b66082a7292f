import os
import time
from datetime import datetime

import requests


class TransportError(RuntimeError):
    """A request to an external endpoint failed before a usable response arrived."""

    def __init__(self, message, retryable=True):
        super().__init__(message)
        self.retryable = retryable


def resolve_credential(env_name):
    """Read an API key from the named environment variable. The value is never printed."""
    if not env_name:
        return None
    value = os.environ.get(env_name)
    if not value:
        print(f"⚠️  Credential variable {env_name} is not set; sending unauthenticated requests")
        return None
    return value


def auth_headers(env_name):
    headers = {"Content-Type": "application/json"}
    key = resolve_credential(env_name)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def post_json(url, payload, headers=None, timeout=60.0):
    """
    POST a JSON payload and return the decoded JSON response.

    Timeouts, connection errors, 5xx responses and undecodable bodies raise a
    retryable TransportError; 4xx responses raise a terminal one.
    """
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.exceptions.Timeout as e:
        raise TransportError(f"timeout after {timeout}s: {e}") from e
    except requests.exceptions.ConnectionError as e:
        raise TransportError(f"connection error: {e}") from e
    except requests.exceptions.RequestException as e:
        raise TransportError(f"request failed: {e}") from e

    if response.status_code >= 500:
        raise TransportError(f"HTTP {response.status_code} from {url}")
    if response.status_code >= 400:
        raise TransportError(f"HTTP {response.status_code} from {url}: {response.text[:200]}", retryable=False)
    try:
        return response.json()
    except ValueError as e:
        raise TransportError(f"invalid JSON response from {url}") from e


def call_with_retries(fn, max_retries, backoff_s=0.0):
    """
    Call fn() until it succeeds, retrying only on retryable TransportError.

    Args:
        fn (callable): Zero-argument callable
        max_retries (int): Retries allowed after the first attempt
        backoff_s (float): Linear backoff step between attempts

    Returns:
        tuple: (result, retries used)
    """
    retries = 0
    while True:
        try:
            return fn(), retries
        except TransportError as e:
            if not e.retryable or retries >= max_retries:
                e.retries = retries
                raise
            retries += 1
            if backoff_s > 0:
                time.sleep(backoff_s * retries)


def write_metadata(path, title, fields):
    """Write a key: value metadata text file describing one pipeline stage run."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{title}\n")
        f.write("=" * len(title) + "\n")
        f.write(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n")
        for key, value in fields.items():
            f.write(f"{key}: {value}\n")
    return path


def metadata_path(output_path):
    return f"{output_path}.meta.txt"
