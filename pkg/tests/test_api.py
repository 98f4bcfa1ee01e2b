"""Tests for the report endpoint."""

import json
import os
import time

import pytest

from api.index import app
from src.hypothesis_lab import EnumerationLimitError
from src.result_cache import get_cache


@pytest.fixture
def client():
    """Flask test client with an empty report cache."""
    get_cache().clear()
    app.config['TESTING'] = True
    with app.test_client() as client:
        yield client
    get_cache().clear()


@pytest.fixture
def results_dir(tmp_path, monkeypatch):
    """Results directory with two finished runs, 'newer' written last."""
    for name, mean in (("older", 0.1), ("newer", 0.3)):
        run_dir = tmp_path / name
        run_dir.mkdir()
        (run_dir / "summary.json").write_text(json.dumps({"config_hash": name, "final_mean": mean}))
    os.utime(tmp_path / "older" / "summary.json", (time.time() - 60, time.time() - 60))
    monkeypatch.setenv('MODELGEN_RESULTS_DIR', str(tmp_path))
    return tmp_path


class TestAPIValidation:
    """Tests for request validation."""

    def test_api_requires_option_parameter(self, client):
        """Test that API returns error when option parameter is missing."""
        response = client.get('/api/index')
        assert response.status_code == 400
        data = response.get_json()
        assert data['success'] is False
        assert 'option' in data['error'].lower()

    def test_api_rejects_invalid_option(self, client):
        """Test that API returns error for invalid option values."""
        response = client.get('/api/index?option=one_week')
        assert response.status_code == 400
        assert 'invalid' in response.get_json()['error'].lower()

    def test_cors_headers(self, client):
        """Test that responses allow cross-origin requests."""
        response = client.get('/api/index')
        assert response.headers['Access-Control-Allow-Origin'] == '*'


class TestTheoremReports:
    """Tests for the cached hypothesis-class reports."""

    def test_theorem_report_cached(self, client, mocker):
        """Test that the second request is served from the cache."""
        report = mocker.patch('api.index.counterexample_report', return_value={'H_M': 1, 'strict': True})
        first = client.get('/api/index?option=theorem')
        second = client.get('/api/index?option=theorem')
        assert first.status_code == 200
        assert first.get_json() == {'success': True, 'option': 'theorem', 'report': {'H_M': 1, 'strict': True}}
        assert second.get_json() == first.get_json()
        assert report.call_count == 1

    def test_report_failure(self, client, mocker):
        """Test that enumeration failures become a 500."""
        mocker.patch('api.index.extended_report', side_effect=EnumerationLimitError(10**9))
        response = client.get('/api/index?option=extended')
        assert response.status_code == 500
        assert "refusing to enumerate" in response.get_json()['error']

    def test_tabular_report(self, client, mocker):
        """Test that the tabular report uses a fixed seed and dataset count."""
        report = mocker.patch('api.index.tabular_report', return_value={'all_equal': True})
        assert client.get('/api/index?option=tabular').get_json()['report'] == {'all_equal': True}
        assert report.call_args.args[0] == 20


class TestSummary:
    """Tests for run summaries read from disk."""

    def test_latest_summary(self, client, results_dir):
        """Test that the most recently written summary is returned."""
        data = client.get('/api/index?option=summary').get_json()
        assert data['report']['config_hash'] == 'newer'

    def test_summary_by_run(self, client, results_dir):
        """Test choosing a run by hash."""
        data = client.get('/api/index?option=summary&run=older').get_json()
        assert data['report']['final_mean'] == 0.1

    def test_summary_not_cached(self, client, results_dir):
        """Test that a rewritten summary is served fresh."""
        client.get('/api/index?option=summary&run=older')
        (results_dir / "older" / "summary.json").write_text(json.dumps({"final_mean": 0.9}))
        data = client.get('/api/index?option=summary&run=older').get_json()
        assert data['report']['final_mean'] == 0.9

    def test_missing_summary(self, client, tmp_path, monkeypatch):
        """Test 404 when no run has finished."""
        monkeypatch.setenv('MODELGEN_RESULTS_DIR', str(tmp_path / "empty"))
        response = client.get('/api/index?option=summary')
        assert response.status_code == 404
        assert response.get_json()['success'] is False
