import os
import unittest
import unittest.mock
import tempfile
import urllib.error
import numpy as np
from ..io import provider, embeddings
from ..io.prompts import PromptSet
from .fixtures import StubTransport


def sample_prompts(count=5) -> PromptSet:
    keys = ["A/u/u" + str(n) for n in range(count)]
    texts = ["prompt number " + str(n) for n in range(count)]
    return PromptSet(keys, texts, 1.0, 10, 20)


class TestEmbeddingFetcher(unittest.TestCase):
    """Tests batching, retries and caching of the embedding provider client"""

    def setUp(self):
        self.settings = provider.ProviderSettings("http://localhost:9/embed", batch_size=2, max_retries=3,
                                                  backoff=0.5)
        self.sleep = unittest.mock.Mock()

    def test_batches(self):
        # Splits the distinct prompts into batches and returns rows in prompt order
        transport = StubTransport()
        prompt_set = sample_prompts()
        prompt_set.prompts[4] = prompt_set.prompts[0]
        fetcher = provider.EmbeddingFetcher(self.settings, transport, sleep=self.sleep)
        matrix = fetcher.fetch(prompt_set)
        self.assertEqual([len(batch) for batch in transport.requests], [2, 2])
        self.assertEqual(matrix.keys, prompt_set.keys)
        self.assertEqual(matrix.rows.dtype, np.float32)
        self.assertEqual(matrix.rows[1].tolist(), [15.0, 2.0, float(ord("p"))])
        self.assertTrue(np.array_equal(matrix.rows[4], matrix.rows[0]))
        self.sleep.assert_not_called()

    def test_retries(self):
        # Transient failures are retried with exponential backoff
        transport = StubTransport(failures=2)
        fetcher = provider.EmbeddingFetcher(self.settings, transport, sleep=self.sleep)
        fetcher.fetch(sample_prompts(2))
        self.assertEqual(len(transport.requests), 3)
        self.assertEqual([c[0][0] for c in self.sleep.call_args_list], [0.5, 1.0])
        self.assertEqual(fetcher.printer.warnings, 2)

    def test_giving_up(self):
        # Gives up after max_retries + 1 attempts
        transport = StubTransport(failures=10)
        fetcher = provider.EmbeddingFetcher(self.settings, transport, sleep=self.sleep)
        with self.assertRaises(provider.ProviderError) as context:
            fetcher.fetch(sample_prompts(2))
        self.assertIn("4 attempt(s)", str(context.exception))
        self.assertEqual(len(transport.requests), 4)

    def test_dimension_drift(self):
        # A change of the vector dimension between batches is fatal
        transport = StubTransport()
        fetcher = provider.EmbeddingFetcher(self.settings, transport, sleep=self.sleep)
        fetcher.fetch(sample_prompts(2))
        transport.dim = 2
        with self.assertRaises(provider.ProviderError) as context:
            fetcher.fetch(PromptSet(["A/i/x"], ["another text"], 1.0, 10, 20))
        self.assertEqual(context.exception.code, "DIMENSION_DRIFT")

    def test_bad_responses(self):
        # Wrong vector counts and non-finite values are rejected
        transport = unittest.mock.Mock()
        transport.post.return_value = [[1.0, 2.0]]
        fetcher = provider.EmbeddingFetcher(self.settings, transport, sleep=self.sleep)
        with self.assertRaises(provider.ProviderError):
            fetcher.fetch(sample_prompts(2))
        transport.post.return_value = [[1.0, float("nan")], [1.0, 2.0]]
        with self.assertRaises(provider.ProviderError):
            fetcher.fetch(sample_prompts(2))
        transport.post.return_value = [[1.0], [1.0, 2.0]]
        with self.assertRaises(provider.ProviderError) as context:
            fetcher.fetch(sample_prompts(2))
        self.assertEqual(context.exception.code, "DIMENSION_DRIFT")
        with self.assertRaises(provider.ProviderError) as context:
            fetcher.fetch(PromptSet([], [], 1.0, 10, 0))
        self.assertEqual(context.exception.code, "EMPTY_INPUT")

    def test_cache(self):
        # Cached prompts cause no request, also across fetcher instances
        cache_file = tempfile.mkstemp(suffix=".tbge")[1]
        os.remove(cache_file)
        transport = StubTransport()
        first = provider.fetch_embeddings(self.settings, sample_prompts(3), cache_file, transport)
        self.assertEqual(len(transport.requests), 2)
        self.assertEqual(len(embeddings.read_embedding_matrix(cache_file)), 3)

        transport = StubTransport()
        second = provider.fetch_embeddings(self.settings, sample_prompts(4), cache_file, transport)
        self.assertEqual(transport.requests, [["prompt number 3"]])
        self.assertTrue(np.array_equal(second.rows[:3], first.rows))
        os.remove(cache_file)

    def test_settings(self):
        # Validates the batch size and requires a URL for HTTP requests
        with self.assertRaises(provider.ProviderError):
            provider.ProviderSettings("http://x", batch_size=0)
        with self.assertRaises(provider.ProviderError) as context:
            provider.HttpTransport(provider.ProviderSettings(""))
        self.assertEqual(context.exception.code, "CONFIG_ERROR")


class TestHttpTransport(unittest.TestCase):
    """Tests the HTTP transport with a mocked connection"""

    def setUp(self):
        self.transport = provider.HttpTransport(provider.ProviderSettings("http://localhost:9/embed", token="secret"))

    @unittest.mock.patch('urllib.request.urlopen')
    def test_post(self, mock_urlopen):
        # Sends the inputs with the bearer token and parses the embeddings
        self.assertIs(mock_urlopen, provider.urllib.request.urlopen)
        response = mock_urlopen.return_value.__enter__.return_value
        response.read.return_value = b'{"embeddings": [[0.5, 1.5]]}'
        self.assertEqual(self.transport.post(["text"]), [[0.5, 1.5]])
        request = mock_urlopen.call_args[0][0]
        self.assertEqual(request.get_header("Authorization"), "Bearer secret")
        self.assertEqual(request.data, b'{"inputs": ["text"]}')

        response.read.return_value = b'{"vectors": []}'
        with self.assertRaises(provider.ProviderError):
            self.transport.post(["text"])

    @unittest.mock.patch('urllib.request.urlopen')
    def test_errors(self, mock_urlopen):
        # Server errors and connection problems are transient, client errors are not
        self.assertIs(mock_urlopen, provider.urllib.request.urlopen)
        mock_urlopen.side_effect = urllib.error.HTTPError("http://localhost:9/embed", 503, "busy", {}, None)
        with self.assertRaises(provider.TransientProviderError):
            self.transport.post(["text"])
        mock_urlopen.side_effect = urllib.error.URLError("refused")
        with self.assertRaises(provider.TransientProviderError):
            self.transport.post(["text"])
        mock_urlopen.side_effect = urllib.error.HTTPError("http://localhost:9/embed", 400, "bad", {}, None)
        with self.assertRaises(provider.ProviderError) as context:
            self.transport.post(["text"])
        self.assertNotIsInstance(context.exception, provider.TransientProviderError)


if __name__ == '__main__':
    unittest.main(verbosity=2)
