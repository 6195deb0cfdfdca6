# vrsense/pipeline/routes.py

import logging

from flask import Blueprint, current_app, jsonify, request

monitor_bp = Blueprint("monitor", __name__)
logger = logging.getLogger(__name__)

ENGINE_KEY = "vrsense_engine"


def _engine():
    return current_app.extensions.get(ENGINE_KEY)


def _no_engine():
    return jsonify({"error": "No engine attached to this app"}), 503


@monitor_bp.route("/metrics", methods=["GET"])
def get_metrics():
    engine = _engine()
    if engine is None:
        return _no_engine()
    try:
        return jsonify(engine.snapshot_metrics().to_dict()), 200
    except Exception as e:
        logger.error(f"Error reading engine metrics: {e}", exc_info=True)
        return jsonify({"error": str(e)}), 500


@monitor_bp.route("/sessions", methods=["GET"])
def get_sessions():
    """
    Active sessions with their current state.
    """
    engine = _engine()
    if engine is None:
        return _no_engine()
    try:
        sessions = engine.active_sessions()
        app_name = request.args.get("app")
        if app_name:
            sessions = [s for s in sessions if s["app"] == app_name]
        return jsonify({"sessions": sessions, "count": len(sessions)}), 200
    except Exception as e:
        logger.error(f"Error listing sessions: {e}", exc_info=True)
        return jsonify({"error": str(e)}), 500


@monitor_bp.route("/reports", methods=["GET"])
def get_reports():
    engine = _engine()
    if engine is None:
        return _no_engine()
    try:
        limit = request.args.get("limit", type=int)
        reports = [r.to_dict() for r in engine.results()]
        if limit is not None:
            reports = reports[-limit:] if limit > 0 else []
        return jsonify({"reports": reports, "count": len(reports)}), 200
    except Exception as e:
        logger.error(f"Error listing reports: {e}", exc_info=True)
        return jsonify({"error": str(e)}), 500
