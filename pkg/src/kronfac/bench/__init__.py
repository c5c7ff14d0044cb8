"""Experiment harness: datasets, baseline, diagnostics and the ``bench`` CLI."""
