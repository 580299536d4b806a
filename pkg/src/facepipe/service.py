"""HTTP service for interactive appearance-map exploration.

Endpoints (all responses carry ``Access-Control-Allow-Origin: *``):

* ``GET /health``  liveness probe, reports whether a map is loaded.
* ``GET /map``     appearance map geometry as JSON.
* ``GET /view?yaw=..&pitch=..[&roll=..]``  rendered PNG for the pose,
  with ``X-Triangle-Id`` and ``X-Weights`` headers describing the blend.

Bad or out-of-range queries return 400 with a JSON error body; map
endpoints return 503 until a map is loaded.  Rendering is cached per
(view, anchor) pair and lock-guarded, so concurrent identical queries
return byte-identical bodies.
"""

from __future__ import annotations

import json
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .appearance import AppearanceMap
from .core import PoseAngles, encode_png
from .pipeline import PoseViewRenderer
from .render import Renderer


class MapService:
    """Owns the map payload and a shared pose renderer."""

    def __init__(self, amap: AppearanceMap, renderer: Renderer,
                 extent: tuple[int, int]) -> None:
        self.payload = json.dumps(amap.to_payload()).encode()
        self.viewer = PoseViewRenderer(amap, renderer, extent)
        self._lock = threading.Lock()

    def render_view(self, yaw: float, pitch: float, roll: float) -> tuple[bytes, int, str]:
        """PNG bytes, triangle id, and the X-Weights header value."""
        image, _, answer = self.viewer.render(PoseAngles(yaw, pitch, roll))
        weights = json.dumps([[vid, w] for vid, w in sorted(answer.entries)])
        return encode_png(image), answer.triangle_id, weights


class ServiceServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: MapService | None,
                 ui_dir: Path | None = None) -> None:
        super().__init__(address, _Handler)
        self.service = service
        self.ui_dir = ui_dir


class _Handler(BaseHTTPRequestHandler):
    server: ServiceServer

    # Keep test output quiet; http.server logs to stderr by default.
    def log_message(self, fmt: str, *args) -> None:
        pass

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Expose-Headers", "X-Triangle-Id, X-Weights")

    def _reply(self, status: int, body: bytes, content_type: str,
               extra: dict[str, str] | None = None) -> None:
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, doc: dict) -> None:
        self._reply(status, json.dumps(doc).encode(), "application/json")

    def do_OPTIONS(self) -> None:  # noqa: N802 (http.server naming)
        self.send_response(204)
        self._cors()
        self.send_header("Access-Control-Allow-Methods", "GET, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path == "/health":
            self._json(200, {"status": "ok",
                             "map_loaded": self.server.service is not None})
        elif url.path == "/map":
            self._map()
        elif url.path == "/view":
            self._view(url.query)
        else:
            self._static(url.path)

    def _map(self) -> None:
        svc = self.server.service
        if svc is None:
            self._json(503, {"error": "no appearance map loaded"})
            return
        self._reply(200, svc.payload, "application/json")

    def _view(self, query: str) -> None:
        svc = self.server.service
        if svc is None:
            self._json(503, {"error": "no appearance map loaded"})
            return
        params = parse_qs(query)
        try:
            yaw = float(params["yaw"][0])
            pitch = float(params["pitch"][0])
            roll = float(params.get("roll", ["0"])[0])
        except (KeyError, ValueError):
            self._json(400, {"error": "yaw and pitch (and optional roll) "
                                      "must be numeric query parameters"})
            return
        try:
            png, tri, weights = svc.render_view(yaw, pitch, roll)
        except ValueError as e:
            self._json(400, {"error": str(e)})
            return
        self._reply(200, png, "image/png",
                    {"X-Triangle-Id": str(tri), "X-Weights": weights})

    def _static(self, path: str) -> None:
        root = self.server.ui_dir
        if root is None:
            self._json(404, {"error": f"unknown path {path}"})
            return
        rel = path.lstrip("/") or "index.html"
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            self._json(404, {"error": f"unknown path {path}"})
            return
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._reply(200, target.read_bytes(), ctype)


def create_server(service: MapService | None, host: str = "127.0.0.1", port: int = 0,
                  ui_dir: str | Path | None = None) -> ServiceServer:
    """Bind a server (port 0 picks a free port); caller runs serve_forever."""
    return ServiceServer((host, port), service,
                         Path(ui_dir) if ui_dir is not None else None)
