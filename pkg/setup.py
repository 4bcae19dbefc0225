#!/usr/bin/env python3
"""
Setup script for CLE Triage

This file provides backward compatibility and additional setup functionality
beyond what pyproject.toml can provide.
"""

from setuptools import setup, find_packages

setup(
    name="cle-triage",
    packages=find_packages(include=["cle_triage*"]),
    entry_points={
        'console_scripts': [
            'cle-triage=cle_triage.cli:main',
        ],
    },
    include_package_data=True,
    zip_safe=False,
    python_requires='>=3.10',
)
