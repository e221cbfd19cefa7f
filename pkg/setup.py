"""
Resolved-sideband cooling simulations for trapped ions
"""
import ast
import re

from setuptools import find_packages, setup

_version_re = re.compile(r"__version__\s+=\s+(.*)")

with open("sbc_forge/version.py", "rb") as f:
    version = str(ast.literal_eval(_version_re.search(f.read().decode("utf-8")).group(1)))

setup(
    name="sbc-forge",
    version=version,
    license="MIT",
    description="Pulse schedules, optical Bloch simulation and sweeps for resolved-sideband cooling.",
    long_description=__doc__,
    packages=find_packages(include=("sbc_forge", "sbc_forge.*")),
    include_package_data=True,
    python_requires=">=3.9",
    install_requires=[
        "cachetools>=4.1.1",
        "python-json-logger>=2.0.1",
        "ordered-set>=4.1.0",
        "statsd>=3.3.0",
        "pyyaml>=5.3.1",
        "click>=8.0.0",
        "numpy>=1.22",
        "scipy>=1.8",
    ],
    entry_points={
        "console_scripts": [
            "sbc-forge = sbc_forge.cli:main",
        ],
    },
)
