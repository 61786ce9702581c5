"""Workloads, metrics, named scenarios and the command line."""
