"""Builds the optional compiled digit-extraction kernel.

The package is fully functional without the extension: spacefarm.agents.bbp
falls back to the pure-Python kernel when the compiled module is absent.
Set SPACEFARM_PURE=1 to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPACEFARM_PURE") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "spacefarm.agents._bbp",
                    ["src/spacefarm/agents/_bbp.pyx"],
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
