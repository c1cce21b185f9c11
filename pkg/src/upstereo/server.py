"""Local HTTP service for interactive balloon-initialization tuning.

A single worker computes balloon previews; when slider bursts arrive, only
the newest requested volume ratio is computed and superseded requests are
answered with the newest available result.
"""

import base64
import json
import logging
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import cv2
import numpy as np

from upstereo.balloon import balloon, init_depth_balloon, orthographic_normals
from upstereo.geometry import build_gradient_operator

logger = logging.getLogger(__name__)


def shaded_preview_png(domain, z_ortho):
    """Frontal-light Lambertian shading of the orthographic normals, as PNG bytes."""
    grad_op = build_gradient_operator(domain)
    normals = orthographic_normals(z_ortho, grad_op)
    shade = np.clip(-normals.n[:, 2], 0.0, 1.0)
    grid = domain.to_grid((shade * 255).astype(np.uint8))
    ok, buf = cv2.imencode(".png", grid)
    if not ok:
        raise RuntimeError("failed to encode preview")
    return buf.tobytes()


class BalloonService:
    """Coalescing compute queue: only the latest kappa is ever computed."""

    def __init__(self, domain, intrinsics, balloon_iters=400, tol=1e-6):
        self.domain = domain
        self.intrinsics = intrinsics
        self.balloon_iters = balloon_iters
        self.tol = tol
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._pending = None  # (ticket, kappa)
        self._ticket = 0
        self._result = None  # (ticket, payload)
        self._stop = False
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def close(self):
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        self._worker.join(timeout=5)

    def request(self, kappa):
        """Block until a result at least as new as this request is available.

        A request superseded before its computation started is answered with
        the newest published result instead.
        """
        with self._cond:
            self._ticket += 1
            ticket = self._ticket
            self._pending = (ticket, float(kappa))
            self._cond.notify_all()
            while self._result is None or self._result[0] < ticket:
                self._cond.wait(timeout=0.05)
                if self._stop:
                    raise RuntimeError("service stopped")
            return self._result[1]

    def _run(self):
        while True:
            with self._cond:
                while self._pending is None and not self._stop:
                    self._cond.wait(timeout=0.1)
                if self._stop:
                    return
                ticket, kappa = self._pending
                self._pending = None
            payload = self._compute(kappa)
            with self._cond:
                self._result = (ticket, payload)
                self._cond.notify_all()

    def _compute(self, kappa):
        depth, _ = init_depth_balloon(
            self.domain, self.intrinsics, kappa, tol=self.tol, max_iters=self.balloon_iters
        )
        volume = kappa * self.domain.num_pixels
        z_ortho, _ = balloon(self.domain, volume, tol=self.tol, max_iters=self.balloon_iters)
        png = shaded_preview_png(self.domain, z_ortho.values)
        grid = self.domain.to_grid(depth.values)
        masked = depth.values
        return {
            "kappa": kappa,
            "width": self.domain.width,
            "height": self.domain.height,
            "depth": grid.ravel().tolist(),
            "mask": self.domain.mask.astype(int).ravel().tolist(),
            "depth_min": float(masked.min()),
            "depth_max": float(masked.max()),
            "shaded_preview": base64.b64encode(png).decode("ascii"),
        }


FALLBACK_PAGE = """<!doctype html>
<html><head><title>balloon tuner</title></head>
<body><h1>Balloon tuner API</h1>
<p>Frontend assets not built. The API is live:
GET /api/balloon?kappa=2.0 and POST /api/accept.</p>
<p>Build the frontend with <code>npm run build</code> in frontend/ and restart
with --assets pointing at it.</p></body></html>"""

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
}


def make_handler(service, accept_path, assets_dir=None):
    class TunerHandler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            logger.debug("http: " + fmt, *args)

        def _send_json(self, obj, status=200):
            body = json.dumps(obj).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/api/balloon":
                params = parse_qs(parsed.query)
                try:
                    kappa = float(params.get("kappa", ["nan"])[0])
                except ValueError:
                    kappa = float("nan")
                if not np.isfinite(kappa) or kappa <= 0:
                    self._send_json({"error": "kappa must be a positive number"}, status=400)
                    return
                try:
                    self._send_json(service.request(kappa))
                except RuntimeError as exc:
                    self._send_json({"error": str(exc)}, status=503)
                return
            self._serve_static(parsed.path)

        def do_POST(self):
            parsed = urlparse(self.path)
            if parsed.path != "/api/accept":
                self._send_json({"error": "not found"}, status=404)
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
                kappa = float(body["kappa"])
            except (ValueError, KeyError, json.JSONDecodeError):
                self._send_json({"error": "body must be JSON with a numeric kappa"}, status=400)
                return
            if not np.isfinite(kappa) or kappa <= 0:
                self._send_json({"error": "kappa must be a positive number"}, status=400)
                return
            with open(accept_path, "w") as fh:
                json.dump({"kappa": kappa}, fh)
            self._send_json({"status": "ok", "kappa": kappa})

        def _serve_static(self, path):
            if path == "/":
                path = "/index.html"
            if assets_dir is not None:
                candidate = os.path.realpath(os.path.join(assets_dir, path.lstrip("/")))
                if candidate.startswith(os.path.realpath(assets_dir)) and os.path.isfile(candidate):
                    ext = os.path.splitext(candidate)[1]
                    with open(candidate, "rb") as fh:
                        body = fh.read()
                    self.send_response(200)
                    self.send_header("Content-Type", _CONTENT_TYPES.get(ext, "application/octet-stream"))
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                    return
            if path == "/index.html":
                body = FALLBACK_PAGE.encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/html; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
                return
            self.send_response(404)
            self.end_headers()

    return TunerHandler


def run_server(domain, intrinsics, port, accept_path="kappa.json", assets_dir=None, balloon_iters=400):
    """Serve the tuner until interrupted; raises OSError if the port is taken."""
    service = BalloonService(domain, intrinsics, balloon_iters=balloon_iters)
    handler = make_handler(service, accept_path, assets_dir)
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    logger.info("tuner listening on http://127.0.0.1:%d", port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        logger.info("shutting down")
    finally:
        server.server_close()
        service.close()
