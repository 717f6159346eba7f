"""Scenario configuration, runner and command line."""
