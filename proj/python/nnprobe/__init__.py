"""Python access to the nnprobe log store, transforms and query service."""

import json

from ._core import (
    Catalog,
    Error,
    FormatError,
    InvalidArgument,
    NotFoundError,
    TransformError,
    load_catalog,
    generate_fixture,
    read_tensor,
    write_tensor,
    moments,
)
from . import _core


def _dump(doc):
    return doc if isinstance(doc, str) else json.dumps(doc)


def canonical_transform(spec):
    return json.loads(_core.canonical_transform(_dump(spec)))


def apply_transform(array, spec, labels=None):
    return json.loads(_core.apply_transform(array, _dump(spec), labels))


def resolve_dimensions(partial):
    return json.loads(_core.resolve_dimensions(_dump(partial)))


class Service:
    """In-process request handler; same routes and bodies as nnprobe-server."""

    def __init__(self, root, cache_mb=256):
        self._svc = _core.Service(str(root), cache_mb)

    def request(self, method, path, query=None, body=None):
        if body is not None and not isinstance(body, (str, bytes)):
            body = json.dumps(body)
        if isinstance(body, bytes):
            body = body.decode()
        status, headers, raw = self._svc.handle(method, path, dict(query or {}), body or "")
        return status, headers, raw

    def get(self, path, **query):
        status, _, raw = self.request("GET", path, {k: str(v) for k, v in query.items()})
        return status, json.loads(raw)

    def post(self, path, body):
        status, _, raw = self.request("POST", path, body=body)
        return status, json.loads(raw)

    def reload(self):
        return self._svc.reload()

    @property
    def version(self):
        return self._svc.version


__version__ = "0.3.0"
__all__ = [
    "Catalog", "Error", "FormatError", "InvalidArgument", "NotFoundError", "TransformError",
    "Service", "load_catalog", "generate_fixture", "read_tensor", "write_tensor", "moments",
    "canonical_transform", "apply_transform", "resolve_dimensions",
]
