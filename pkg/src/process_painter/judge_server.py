# process_painter/judge_server.py

from flask import Flask, jsonify, request  # type: ignore
from werkzeug.exceptions import BadRequest, HTTPException  # type: ignore

from . import __version__
from .errors import ProcessPainterError
from .judge import REQUEST_FIELDS, ExactJudge, verdict_to_wire
from .logger import log


# --- App factory ---
def create_judge_app(judge=None):
    """
    Serves a judge over HTTP.

    POST /judge takes a judge request record and answers with {status, analysis, corrective_ins}.
    GET /health reports liveness. Used as a stand-in for non-exact judges and in tests.
    """
    app = Flask(__name__)
    app.config["JUDGE"] = judge or ExactJudge()

    @app.errorhandler(HTTPException)
    def http_error(e):
        return jsonify(error=e.name, message=e.description), e.code

    @app.route("/health")
    def health():
        return jsonify({"status": "ok", "version": __version__})

    @app.route("/judge", methods=["POST"])
    def judge_route():
        payload = request.get_json(silent=True)
        if not isinstance(payload, dict):
            raise BadRequest("Invalid data format")
        missing = [name for name in REQUEST_FIELDS if name not in payload]
        if missing:
            raise BadRequest(f"Missing fields: {', '.join(missing)}")
        try:
            verdict = app.config["JUDGE"].judge(payload)
        except ProcessPainterError as e:
            log.warning(f"JUDGE_SERVER: Rejected request: {e}")
            return jsonify(e.to_record()), 422
        return jsonify(verdict_to_wire(verdict))

    return app


def serve_judge(host="127.0.0.1", port=8765):
    log.info(f"JUDGE_SERVER: Listening on http://{host}:{port}")
    create_judge_app().run(host=host, port=port)
