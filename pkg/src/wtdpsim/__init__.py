"""Simulation and analysis of wireless train backbone topology discovery."""

from importlib.metadata import version

from .cli import main as main

__version__ = version("wtdpsim")
