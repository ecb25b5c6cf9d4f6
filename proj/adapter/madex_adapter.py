#!/usr/bin/env python3
"""Reference black-box adapter speaking the madex NDJSON protocol on stdio.

Usage:
    madex_adapter.py F1|F2|F3|F4
    madex_adapter.py path/to/model.pkl [p]

A pickled model must expose predict(X) over a (rows, p) array. Its arity is
taken from n_features_in_ when present, otherwise from the optional p argument.
"""

import json
import math
import pickle
import sys


def _tail(x, start):
    return math.fsum(x[start:])


SYNTHETIC = {
    "F1": lambda x: 10.0 * x[0] * x[1] + _tail(x, 2),
    "F2": lambda x: x[0] * x[1] + _tail(x, 2),
    "F3": lambda x: math.exp(abs(x[0] + x[1])) + _tail(x, 2),
    "F4": lambda x: 10.0 * x[0] * x[1] * x[2] + _tail(x, 3),
}


class SyntheticModel:
    def __init__(self, name):
        self.name = name
        self.p = 10
        self._f = SYNTHETIC[name]

    def predict(self, rows):
        return [self._f(row) for row in rows]


class PickledModel:
    def __init__(self, path, p=None):
        with open(path, "rb") as fh:
            self._model = pickle.load(fh)
        self.name = path
        self.p = int(getattr(self._model, "n_features_in_", p or 0))
        if self.p <= 0:
            raise ValueError("cannot determine arity of %s; pass p explicitly" % path)

    def predict(self, rows):
        import numpy as np

        out = np.asarray(self._model.predict(np.asarray(rows, dtype=float)), dtype=float)
        return out.reshape(len(rows)).tolist()


def load(argv):
    if not argv:
        raise ValueError("usage: madex_adapter.py F1|F2|F3|F4|model.pkl [p]")
    if argv[0] in SYNTHETIC:
        return SyntheticModel(argv[0])
    return PickledModel(argv[0], int(argv[1]) if len(argv) > 1 else None)


def reply(obj):
    sys.stdout.write(json.dumps(obj, allow_nan=False) + "\n")
    sys.stdout.flush()


def error(message, request_id=None):
    msg = {"type": "error", "message": message}
    if request_id is not None:
        msg["id"] = request_id
    reply(msg)


def handle_predict(model, msg):
    request_id = msg.get("id")
    rows = msg.get("inputs")
    if not isinstance(request_id, int) or not isinstance(rows, list):
        error("predict needs an integer id and an inputs array", request_id)
        return
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != model.p:
            error("row %d does not have %d values" % (i, model.p), request_id)
            return
    try:
        outputs = [float(y) for y in model.predict(rows)]
    except Exception as exc:  # model failures are reported, not fatal
        error("predict failed: %s" % exc, request_id)
        return
    if len(outputs) != len(rows) or not all(math.isfinite(y) for y in outputs):
        error("model returned non-finite or misshapen outputs", request_id)
        return
    reply({"type": "outputs", "id": request_id, "outputs": outputs})


def serve(model, stdin=sys.stdin):
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            error("malformed request")
            continue
        kind = msg.get("type") if isinstance(msg, dict) else None
        if kind == "hello":
            reply({"type": "ready", "p": model.p, "name": model.name})
        elif kind == "predict":
            handle_predict(model, msg)
        elif kind == "bye":
            return 0
        else:
            error("unknown request type %r" % (kind,))
    return 0


def main(argv):
    try:
        model = load(argv)
    except Exception as exc:
        sys.stderr.write("madex_adapter: %s\n" % exc)
        return 2
    return serve(model)


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
