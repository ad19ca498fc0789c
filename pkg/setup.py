"""Build script: compiles the optional Cython kernel, falling back to pure Python.

Set NNSD_SKIP_EXTENSION=1 to skip the extension entirely (the package then runs on
the pure-Python kernel selected at import time).
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("NNSD_SKIP_EXTENSION") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/nnsd/_kernels/_core.pyx"],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
        for ext in ext_modules:
            ext.include_dirs.append(numpy.get_include())
            ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
    except Exception as exc:  # pragma: no cover - build-env dependent
        sys.stderr.write(f"nnsd: building without compiled kernel ({exc})\n")
        ext_modules = []

setup(ext_modules=ext_modules)
