"""JSON-over-HTTP estimator protocol: client, and a loopback test double.

Request (POST ``/v1/estimate``)::

    {"dt": 0.002, "dim": 1, "pairs": [[[x], [x_next]], ...], "queries": [[q], ...]}

Response::

    {"drift": [[f], ...], "diff_sq": [[g], ...], "flags": [false, ...]}

Remote estimators never return query-jacobians; they are only usable with
the detached-gradient training policy.
"""
import json
import socket
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import estimator as est
from .errors import ConfigError, MalformedResponseError, RemoteDimensionMismatchError, TransportError

ESTIMATE_PATH = "/v1/estimate"


def encode_request(ctx, queries):
    q = np.asarray(queries, dtype=np.float64).reshape(-1, ctx.dim)
    return {
        "dt": ctx.dt,
        "dim": ctx.dim,
        "pairs": [[a.tolist(), b.tolist()] for a, b in zip(ctx.x, ctx.x_next)],
        "queries": q.tolist(),
    }


def decode_response(payload, n_queries, dim):
    """Validate a response body and turn it into a FieldEstimate."""
    if not isinstance(payload, dict) or "drift" not in payload or "diff_sq" not in payload:
        raise MalformedResponseError("malformed response: need 'drift' and 'diff_sq'")
    try:
        drift = np.asarray(payload["drift"], dtype=np.float64)
        diff = np.asarray(payload["diff_sq"], dtype=np.float64)
        flags = np.asarray(payload.get("flags", [False] * n_queries), dtype=bool)
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"malformed response: {exc}") from exc
    if drift.ndim == 1 and dim == 1:
        drift = drift[:, None]
    if diff.ndim == 1 and dim == 1:
        diff = diff[:, None]
    if drift.shape != (n_queries, dim) or diff.shape != (n_queries, dim) or flags.shape != (n_queries,):
        raise RemoteDimensionMismatchError(
            f"dimension mismatch: expected ({n_queries}, {dim}), got drift {drift.shape}, "
            f"diff_sq {diff.shape}, flags {flags.shape}")
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diff))):
        raise MalformedResponseError("malformed response: non-finite values")
    # remote estimators may return exact zeros; keep sqrt(dt g) well defined
    diff = np.maximum(diff, est.DIFFUSION_FLOOR)
    return est.FieldEstimate(drift=drift, diff_sq=diff, flags=flags)


def post_json(url, body, timeout):
    data = json.dumps(body).encode("utf-8")
    req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise TransportError(f"transport failure: HTTP {exc.code} from {url}") from exc
    except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
        raise TransportError(f"transport failure: {url}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponseError(f"malformed response: {exc}") from exc


def _url(endpoint):
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith(ESTIMATE_PATH) else endpoint + ESTIMATE_PATH


def estimate_remote(endpoint, ctx, queries, timeout=30.0):
    q = np.asarray(queries, dtype=np.float64).reshape(-1, ctx.dim)
    payload = post_json(_url(endpoint), encode_request(ctx, q), timeout)
    return decode_response(payload, len(q), ctx.dim)


class RemoteEstimator:
    supports_grad = False
    kind = "remote"

    def __init__(self, endpoint, timeout=30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def estimate(self, ctx, queries, with_grad=False):
        if with_grad:
            raise ConfigError("remote estimators do not provide query gradients")
        return estimate_remote(self.endpoint, ctx, queries, self.timeout)


# -- loopback test double -----------------------------------------------------

def echo_fields(request):
    """Canned fields for the echo double: drift = query, diff_sq = 1."""
    q = request["queries"]
    return {"drift": q, "diff_sq": [[1.0] * len(row) for row in q], "flags": [False] * len(q)}


def kernel_fields(request):
    """Answer with the local kernel estimator (a stand-in for a real model server)."""
    x = np.array([p[0] for p in request["pairs"]], dtype=np.float64)
    x_next = np.array([p[1] for p in request["pairs"]], dtype=np.float64)
    ctx = est.context_from_pairs(x, x_next, request["dt"])
    fe = est.estimate(ctx, np.asarray(request["queries"], dtype=np.float64))
    return {"drift": fe.drift.tolist(), "diff_sq": fe.diff_sq.tolist(), "flags": fe.flags.tolist()}


class EstimatorServer:
    """Threaded HTTP server implementing the protocol with a response function.

    ``responder`` maps the decoded request to the response dict, or to raw
    bytes (used by tests to send malformed bodies).
    """

    def __init__(self, responder=echo_fields, host="127.0.0.1", port=0):
        self.responder = responder
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                if self.path != ESTIMATE_PATH:
                    self.send_error(404)
                    return
                n = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(n))
                except json.JSONDecodeError:
                    self.send_error(400, "bad json")
                    return
                outer.requests.append(body)
                try:
                    out = outer.responder(body)
                except Exception as exc:  # report, don't kill the server thread
                    self.send_error(500, str(exc))
                    return
                raw = out if isinstance(out, bytes) else json.dumps(out).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.thread = None

    @property
    def endpoint(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def serve_forever(self):
        self.httpd.serve_forever()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def protocol_check(endpoint=None, timeout=5.0):
    """Handshake: send a small fixed context and validate the reply.

    Without an endpoint, runs against a bundled echo double and also checks
    the echoed values. Returns ``(ok, message)``.
    """
    x = np.linspace(-1.0, 1.0, 8)[:, None]
    ctx = est.context_from_pairs(x[:-1], x[1:], 0.002)
    queries = np.array([[-0.5], [0.0], [0.5]])
    if endpoint is None:
        with EstimatorServer(echo_fields) as server:
            fe = estimate_remote(server.endpoint, ctx, queries, timeout)
        ok = np.array_equal(fe.drift, queries) and np.all(fe.diff_sq == 1.0)
        return bool(ok), "echo double: " + ("pass" if ok else "echoed values differ")
    fe = estimate_remote(endpoint, ctx, queries, timeout)
    return True, f"{endpoint}: pass ({len(fe.drift)} fields, dim {fe.drift.shape[1]})"
