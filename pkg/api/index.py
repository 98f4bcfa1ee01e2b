"""Read-only HTTP endpoint for the lab's reports.

Serves the exact hypothesis-class reports and the summary of a finished
run so a static results page can display them.
"""

import json
import os
from datetime import datetime
from pathlib import Path

import numpy as np
from flask import Flask, jsonify, request

from src.hypothesis_lab import HypothesisError, counterexample_report, extended_report, tabular_report
from src.result_cache import get_cache

app = Flask(__name__)

OPTIONS = ("theorem", "extended", "tabular", "summary")

# Random datasets checked by the tabular report
TABULAR_DATASETS = 20


@app.after_request
def add_cors_headers(response):
    """Add CORS headers so a static page can call the endpoint."""
    response.headers['Access-Control-Allow-Origin'] = '*'
    response.headers['Access-Control-Allow-Methods'] = 'GET, OPTIONS'
    response.headers['Access-Control-Allow-Headers'] = 'Content-Type'
    return response


def build_report(option: str, run_hash: str = None) -> dict:
    """
    Compute the report for an option.

    Args:
        option: One of "theorem", "extended", "tabular", "summary"
        run_hash: Run directory for "summary" (default: the most recent one)

    Raises:
        ValueError: If option is invalid
        FileNotFoundError: If no run summary exists
    """
    if option == "theorem":
        return counterexample_report()
    elif option == "extended":
        return extended_report()
    elif option == "tabular":
        return tabular_report(TABULAR_DATASETS, np.random.default_rng(0))
    elif option == "summary":
        results = Path(os.environ.get('MODELGEN_RESULTS_DIR', 'results'))
        if run_hash:
            path = results / run_hash / "summary.json"
        else:
            found = sorted(results.glob("*/summary.json"), key=lambda p: p.stat().st_mtime)
            path = found[-1] if found else results / "summary.json"
        if not path.is_file():
            raise FileNotFoundError(f"No run summary at {path}")
        return json.loads(path.read_text())
    else:
        raise ValueError(f"Invalid option: {option}. Must be one of: {', '.join(OPTIONS)}")


@app.route('/api/index', methods=['GET'])
def get_report():
    """
    Fetch one report.

    Query Parameters:
        option: "theorem", "extended", "tabular" or "summary"
        run: Run hash for "summary" (optional)

    Response Format (success):
        {"success": true, "option": "theorem", "report": {...}}

    Response Format (error):
        {"success": false, "error": "Error message"}
    """
    try:
        option = request.args.get('option')
        if not option:
            return jsonify({
                'success': False,
                'error': 'Missing required parameter: option'
            }), 400

        now = datetime.now()
        cache = get_cache()
        cached_data = cache.get(option, now)
        if cached_data is not None:
            return jsonify(cached_data)

        try:
            report = build_report(option, request.args.get('run'))
        except ValueError as e:
            return jsonify({'success': False, 'error': str(e)}), 400
        except FileNotFoundError as e:
            return jsonify({'success': False, 'error': str(e)}), 404

        response_data = {'success': True, 'option': option, 'report': report}
        cache.set(option, response_data, now)
        return jsonify(response_data)

    except HypothesisError as e:
        return jsonify({
            'success': False,
            'error': f'Report failed: {str(e)}'
        }), 500
    except Exception as e:
        return jsonify({
            'success': False,
            'error': f'Internal server error: {str(e)}'
        }), 500


# For local testing
if __name__ == '__main__':
    app.run(debug=True, port=5001)
