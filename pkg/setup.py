"""Build the optional Cython rollout kernel.

The package works without it (a numpy implementation is picked at import
time), so a missing compiler or Cython only produces a warning.
"""
import os
import sys

from setuptools import setup

ext_modules = []
portable = os.environ.get("MPPI_PID_PORTABLE") == "1"
if os.environ.get("MPPI_PID_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mppi_pid._kernels",
                    ["src/mppi_pid/_kernels.pyx"],
                    include_dirs=[np.get_include(), "src/mppi_pid"],
                    extra_compile_args=["-O3"] + ([] if portable else ["-march=native"]),
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError as exc:  # pragma: no cover
        print(f"warning: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
