"""Scenario runner, metrics and reports."""

from .metrics import TrialReport, compute_report, read_csv
from .report import compare, export, load_reports, save_reports
from .runner import run_scenario, run_trial
from .scenario import Scenario, bundled_scenarios, load_scenario, scenario_from_dict
