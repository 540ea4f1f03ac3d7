"""Offline feature exporter writing CFMF/CFMP/CFMX interchange files."""

from .export import ExportJob, run_export

__all__ = ["ExportJob", "run_export"]
