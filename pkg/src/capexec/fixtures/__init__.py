"""Workload fixtures used by tests, the benchmark harness and examples.

Each fixture works both as an in-process workload callable (simulation
backend) and as a standalone program (``python -m capexec.fixtures.cat
FILE...``) that discovers channels from the environment and falls back
to ambient access when none were inherited.
"""
