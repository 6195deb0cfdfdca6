# vrsense/__init__.py

import logging
import os
import urllib.parse
from logging.handlers import RotatingFileHandler

from flask import Flask, jsonify, request

from .config import DevelopmentConfig, ProductionConfig, TestingConfig
from .errors import VrsenseError

CONFIGS = {
    "development": DevelopmentConfig,
    "production": ProductionConfig,
    "testing": TestingConfig,
}


def create_app(config_name=None, engine=None):
    app = Flask(__name__)

    # Load configuration based on FLASK_ENV
    env = config_name or os.getenv("FLASK_ENV", "development")
    app.config.from_object(CONFIGS.get(env, DevelopmentConfig))

    logging.basicConfig(
        level=app.config["LOG_LEVEL"],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    from vrsense.pipeline.commands import cli_bp
    from vrsense.pipeline.routes import ENGINE_KEY, monitor_bp

    app.register_blueprint(monitor_bp, url_prefix="/engine")
    app.register_blueprint(cli_bp)
    if engine is not None:
        app.extensions[ENGINE_KEY] = engine

    if not app.debug and not app.testing:
        handler = RotatingFileHandler(app.config["LOG_FILE"], maxBytes=10000, backupCount=10)
        handler.setLevel(logging.INFO)
        handler.setFormatter(logging.Formatter(
            "%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]"
        ))
        logging.getLogger("vrsense").addHandler(handler)

    # Simple route to list endpoints (for debugging)
    @app.route("/routes")
    def list_routes():
        output = []
        for rule in app.url_map.iter_rules():
            methods = ",".join(sorted(rule.methods))
            output.append(urllib.parse.unquote(f"{rule.endpoint} {methods} {rule.rule}"))
        return "<br>".join(output)

    @app.errorhandler(VrsenseError)
    def engine_error(error):
        app.logger.warning(f"Engine error on {request.path}: {error}")
        return jsonify(error.to_dict()), 400

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({"error": "Not Found"}), 404

    @app.errorhandler(500)
    def internal_error(error):
        app.logger.error(f"Server Error: {error}, Path: {request.path}")
        return jsonify({"error": "Internal Server Error"}), 500

    return app
