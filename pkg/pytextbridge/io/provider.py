import os
import json
import time
import socket
import urllib.request
import urllib.error
import concurrent.futures
from typing import List
import numpy as np
from . import iobase
from .embeddings import TextEmbeddingMatrix, read_embedding_matrix, write_embedding_matrix
from .prompts import PromptSet
from .. import utils


class ProviderError(utils.TextBridgeError):
    code = "PROVIDER_ERROR"


class TransientProviderError(ProviderError):
    """Failure that may go away on retry (timeouts, connection problems, HTTP 5xx/429)"""
    code = "PROVIDER_UNAVAILABLE"


class ProviderSettings:
    """Endpoint descriptor of an embedding provider"""

    def __init__(self, url: str, token="", batch_size=32, max_retries=5, backoff=1.0, timeout=30.0, workers=1):
        if batch_size < 1:
            raise ProviderError("Batch size must be at least 1", code="CONFIG_ERROR")
        self.url = url
        self.token = token
        self.batch_size = int(batch_size)
        self.max_retries = int(max_retries)
        self.backoff = float(backoff)
        self.timeout = float(timeout)
        self.workers = max(1, int(workers))


class HttpTransport:
    """POSTs {"inputs": [...]} as JSON and expects {"embeddings": [[...], ...]} back"""

    def __init__(self, settings: ProviderSettings):
        if not settings.url:
            raise ProviderError("No embedding provider URL configured (set provider.url or TBG_EMBED_URL)",
                                code="CONFIG_ERROR")
        self.settings = settings
        self.request_count = 0

    def post(self, inputs: List[str]) -> List[List[float]]:
        self.request_count += 1
        body = json.dumps({"inputs": inputs}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.settings.token:
            headers["Authorization"] = "Bearer " + self.settings.token
        request = urllib.request.Request(self.settings.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=self.settings.timeout) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            if e.code == 429 or e.code >= 500:
                raise TransientProviderError("Provider returned HTTP " + str(e.code))
            raise ProviderError("Provider returned HTTP " + str(e.code))
        except (urllib.error.URLError, socket.timeout, ConnectionError) as e:
            raise TransientProviderError("Provider not reachable: " + str(e))
        except ValueError:
            raise ProviderError("Provider response is not valid JSON")
        if not isinstance(payload, dict) or "embeddings" not in payload:
            raise ProviderError("Provider response lacks the 'embeddings' field")
        return payload["embeddings"]


class EmbeddingFetcher(iobase.IOClient):
    """Turns prompts into text embeddings through a provider, with batching, retries and a content-hash cache"""

    def __init__(self, settings: ProviderSettings, transport=None, cache_file="", verbose=False, sleep=time.sleep):
        """Constructor"""
        super().__init__(verbose)
        self.settings = settings
        self.transport = transport
        self.cache_file = cache_file
        self.sleep = sleep
        self.cache = {}                                             # type: dict
        self.dim = None
        if cache_file and os.path.exists(cache_file):
            self._load_cache()

    def _load_cache(self) -> None:
        cached = read_embedding_matrix(self.cache_file, source_tag="cache")
        self.cache = {key: cached.rows[position] for position, key in enumerate(cached.keys)}
        self.dim = cached.dim if len(cached) else None
        self.printer.print("Loaded " + str(len(cached)) + " cached embedding(s) from '" + self.cache_file + "'")

    def _save_cache(self) -> None:
        if not self.cache_file or not self.cache:
            return
        keys = sorted(self.cache)
        write_embedding_matrix(self.cache_file, TextEmbeddingMatrix(keys, np.stack([self.cache[k] for k in keys])))

    def _request(self, batch: List[str]) -> np.ndarray:
        """Sends one batch, retrying transient failures with exponential backoff"""
        attempt = 0
        while True:
            try:
                vectors = self.transport.post(batch)
                break
            except TransientProviderError as e:
                if attempt >= self.settings.max_retries:
                    raise ProviderError("Giving up after " + str(attempt + 1) + " attempt(s): " + str(e))
                delay = self.settings.backoff * (2 ** attempt)
                self.printer.warn(str(e) + "; retrying in " + str(delay) + " s")
                self.sleep(delay)
                attempt += 1
        if len(vectors) != len(batch):
            raise ProviderError("Provider returned " + str(len(vectors)) + " vectors for " + str(len(batch))
                                + " inputs")
        try:
            rows = np.asarray(vectors, dtype=np.float32)
        except (ValueError, TypeError):
            raise ProviderError("Provider returned vectors of unequal length", code="DIMENSION_DRIFT")
        if rows.ndim != 2:
            raise ProviderError("Provider returned vectors of unequal length", code="DIMENSION_DRIFT")
        if not np.all(np.isfinite(rows)):
            raise ProviderError("Provider returned non-finite values")
        return rows

    def fetch(self, prompts: PromptSet) -> TextEmbeddingMatrix:
        """Returns one vector per prompt; prompts already in the cache cause no request"""
        hashes = [utils.sha256_hex(prompt) for prompt in prompts.prompts]
        missing = []
        texts = {}
        for digest, prompt in zip(hashes, prompts.prompts):
            if digest not in self.cache and digest not in texts:
                texts[digest] = prompt
                missing.append(digest)

        if missing:
            if self.transport is None:
                self.transport = HttpTransport(self.settings)
            size = self.settings.batch_size
            batches = [missing[start:start + size] for start in range(0, len(missing), size)]
            self.printer.print("Requesting " + str(len(missing)) + " embedding(s) in " + str(len(batches))
                               + " batch(es)")
            inputs = [[texts[digest] for digest in batch] for batch in batches]
            if self.settings.workers > 1 and len(batches) > 1:
                with concurrent.futures.ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
                    results = list(pool.map(self._request, inputs))
            else:
                results = [self._request(batch) for batch in inputs]
            for batch, rows in zip(batches, results):
                if self.dim is None:
                    self.dim = rows.shape[1]
                if rows.shape[1] != self.dim:
                    raise ProviderError("Embedding dimension changed from " + str(self.dim) + " to "
                                        + str(rows.shape[1]), code="DIMENSION_DRIFT")
                for digest, row in zip(batch, rows):
                    self.cache[digest] = row
            self._save_cache()

        if not hashes:
            raise ProviderError("No prompts to embed", code="EMPTY_INPUT")
        return TextEmbeddingMatrix(prompts.keys, np.stack([self.cache[digest] for digest in hashes]),
                                   "provider:" + self.settings.url)


def fetch_embeddings(provider: ProviderSettings, prompts: PromptSet, cache_file="", transport=None,
                     verbose=False) -> TextEmbeddingMatrix:
    """Fetches text embeddings for a prompt set"""
    return EmbeddingFetcher(provider, transport, cache_file, verbose).fetch(prompts)
